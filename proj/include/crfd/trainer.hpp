#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crfd/losses.hpp"
#include "crfd/renderer.hpp"
#include "crfd/synthetic.hpp"

namespace crfd {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;  // first moments, keyed by parameter name
  std::map<std::string, Tensor> v;  // second moments

  static AdamState from_config(const RunConfig& cfg) {
    AdamState s;
    s.lr = cfg.lr;
    s.beta1 = cfg.beta1;
    s.beta2 = cfg.beta2;
    s.eps = cfg.adam_eps;
    return s;
  }
};

/// Bias-corrected Adam update. When `only` is given, parameters outside the
/// set keep their exact bytes (freeze contract).
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const std::set<std::string>* only = nullptr);

struct Checkpoint {
  ParamStore params;
  AdamState adam;
  RunConfig config;
  std::int64_t iteration = 0;
  std::vector<std::string> conditioning_cams;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

/// The three training cameras nearest the +x, +y and +z axes condition the
/// image encoder; the choice is recorded in every checkpoint.
std::vector<std::string> pick_conditioning_cameras(const Dataset& ds);

/// [9, enc_h, enc_w] tensor: the frame's conditioning views, bilinearly
/// resized to the encoder resolution and stacked along channels.
Tensor conditioning_views(const Dataset& ds, const std::vector<std::string>& cam_ids, int frame,
                          int enc_h, int enc_w);

/// Noise-free global code (the posterior mean) for evaluation renders.
Tensor frame_code(const Model& model, const Dataset& ds,
                  const std::vector<std::string>& cond_cams, int frame);

/// Full evaluation render of one (frame, camera) pair from a trained model.
ImageRender render_eval(const Model& model, const Dataset& ds,
                        const std::vector<std::string>& cond_cams, int frame, const Camera& cam,
                        const RenderSettings& settings, int threads = 1,
                        RenderStats* stats = nullptr);

/// One (frame, camera, pixels) group of a training batch; the voxel field is
/// decoded exactly once per group.
struct BatchGroup {
  int frame = 0;
  int cam_index = 0;               // into ds.cameras
  std::vector<int> pixel_indices;  // y*w + x
};

struct TrainStepResult {
  LossBreakdown loss;
  int decoder_invocations = 0;
  RenderStats render_stats;
};

class Trainer {
 public:
  Trainer(const Dataset& ds, const RunConfig& cfg);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  AdamState& adam() { return adam_; }
  const std::vector<std::string>& cond_cams() const { return cond_cams_; }

  /// Restrict training to frames [0, limit); 0 means all frames.
  void set_frame_limit(int limit) { frame_limit_ = limit; }
  /// Restrict optimizer updates to parameters with one of these prefixes.
  void set_trainable_prefixes(std::vector<std::string> prefixes);

  /// Encode + reparameterize + decode once per group, render every ray,
  /// assemble the five-term loss, backward, Adam. Aborts with NumericError
  /// naming the first NaN tensor.
  TrainStepResult train_step(const std::vector<BatchGroup>& groups, std::uint64_t iter);

  /// Uniform random (frame, camera, pixels) batch for an iteration.
  std::vector<BatchGroup> sample_batch(std::uint64_t iter) const;

  /// Runs train_step to cfg.max_iters, logging metrics and checkpointing.
  /// Deterministic given (seed, single thread). Returns the metrics CSV.
  std::string train(const std::string& out_dir, const Checkpoint* resume = nullptr);

  Checkpoint make_checkpoint(std::int64_t iteration) const;
  void restore(const Checkpoint& ckpt);

  double eval_psnr(int frame) const;  // aggregate over held-out cameras

 private:
  [[noreturn]] void throw_nan(const Tape& tape, std::uint64_t iter) const;

  const Dataset& ds_;
  RunConfig cfg_;
  Model model_;
  AdamState adam_;
  std::vector<std::string> cond_cams_;
  int frame_limit_ = 0;
  std::vector<std::string> trainable_prefixes_;
  std::set<std::string> trainable_set_;  // empty = all
};

/// Keypoints of one frame as a [2,K] tensor in [-1,1].
Tensor keypoints_tensor(const Dataset& ds, int frame);

struct DistillResult {
  double initial_latent_mse = 0;
  double final_latent_mse = 0;
  std::vector<double> history;
};

/// Trains the keypoint encoder to regress the image encoder's posterior
/// mean; everything else is frozen bit-exactly.
DistillResult distill_keypoint_encoder(Trainer& trainer, const Dataset& ds);

/// Linear interpolation in latent space, endpoints included.
std::vector<Tensor> latent_interpolate(const Tensor& z_a, const Tensor& z_b, int steps);
/// Draws from the standard normal prior.
std::vector<Tensor> latent_sample(Rng& rng, int n, int z_dim);

}  // namespace crfd
