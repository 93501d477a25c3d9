#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace crfd {

/// Every configurable constant of the pipeline. Loaded from a flat
/// key=value text file ('#' comments); unknown keys are rejected. Defaults
/// are the desk-scale configuration; paper_scale() mirrors the published
/// architecture tables.
struct RunConfig {
  // run
  std::uint64_t seed = 1;
  int threads = 1;

  // model
  int z_dim = 32;
  int f_loc = 8;
  int grid_d = 8;
  int l_pos = 6;
  int l_view = 4;
  int enc_h = 128;
  int enc_w = 64;
  std::vector<int> enc_channels = {16, 32, 32, 64, 64};
  int enc_fc = 128;
  int dec_fc = 256;
  std::vector<int> dec_channels = {128, 64};  // intermediate widths; last layer emits outputs
  std::vector<int> kps_conv = {16, 32, 64};
  std::vector<int> kps_fc = {64, 64, 32};  // last entry must equal z_dim
  int mlp_width = 64;
  int mlp_trunk_layers = 3;
  int mlp_color_layers = 1;
  int mlp_width_global = 0;  // 0 = auto-match scene_mlp parameter count

  // renderer
  int n_coarse = 32;
  int n_fine = 8;
  int k_range_divisor = 10;
  std::vector<double> background = {0.08, 0.08, 0.12};
  double fov_deg = 50.0;
  std::string sampling = "ss";  // ss | hs | coarse

  // dataset
  int n_train_cams = 12;
  int n_test_cams = 3;
  int n_frames = 16;
  int img_w = 64;
  int img_h = 64;
  double cam_radius = 1.0;
  int n_blobs = 3;
  std::uint64_t scene_seed = 7;
  int oracle_samples = 512;

  // training
  int rays_per_batch = 64 * 64;
  int max_iters = 2000;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_f = 0.1;
  double lambda_c = 0.1;
  double lambda_kl = 0.001;
  double beta_prior_eps = 1e-5;
  int eval_every = 250;
  int ckpt_every = 1000;
  std::string conditioning = "local";  // local | global
  int distill_iters = 800;
  double distill_lr = 1e-3;
  std::string data;  // dataset directory, echoed into checkpoints

  static RunConfig paper_scale();

  /// Parses a config file; missing keys keep their defaults.
  static RunConfig load_file(const std::string& path);
  static RunConfig from_text(const std::string& text);
  /// key=value overrides (e.g. from CLI flags); applied after the file.
  void apply(const std::vector<std::pair<std::string, std::string>>& overrides);
  void set(const std::string& key, const std::string& value);

  void validate() const;

  /// Fully-resolved echo, one key=value per line, sorted by key.
  std::string to_text() const;
  void write_echo(const std::string& path) const;
};

}  // namespace crfd
