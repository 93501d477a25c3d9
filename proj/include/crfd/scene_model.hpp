#pragma once

#include <string>
#include <vector>

#include "crfd/camera.hpp"
#include "crfd/config.hpp"
#include "crfd/param_store.hpp"
#include "crfd/rng.hpp"
#include "crfd/tape.hpp"

namespace crfd {

/// Diagonal Gaussian over the global animation code. Sigma is stored as the
/// raw pre-activation and exponentiated on read.
struct LatentDistribution {
  Tensor mu;         // [Z]
  Tensor log_sigma;  // [Z]
  Tensor sigma(Tape& t) const { return t.exp(log_sigma); }
};

/// z = mu + sigma * noise; differentiable w.r.t. mu and log_sigma.
Tensor reparameterize(Tape& t, const LatentDistribution& dist, const Tensor& noise);

/// Coarse voxel field decoded from the global code. Channel layout:
/// [0..3) coarse color, [3] raw log-opacity, [4..4+F_loc) view-independent
/// code f, remainder view-dependent code f^v.
struct VoxelField {
  Tensor grid;  // [F, D, D, D]
  Box3 world_extent;
  int f_loc = 0;

  int channels() const { return grid.dim(0); }
  int resolution() const { return grid.dim(1); }
  static constexpr int kColor = 0;
  static constexpr int kOpacity = 3;
  static constexpr int kFeat = 4;
  int feat_view_offset() const { return kFeat + f_loc; }
};

struct MlpOutput {
  Tensor color;      // [M,3], >= 0 (ReLU head)
  Tensor sigma_raw;  // [M,1], log differential opacity (no nonlinearity)
};

struct LayerTrace {
  std::string name;
  Shape in;
  Shape out;
};

/// All learnable components behind one ParamStore: variational image
/// encoder, keypoint encoder, two-branch volume decoder and the fine-level
/// scene MLP (local-code or global-code conditioning).
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  // Uniform +-1/sqrt(fan_in) init; each parameter draws from an RNG stream
  // derived from its name, so adding parameters never shifts other draws.
  void init_params(const Rng& rng);

  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  int feature_channels() const { return 4 + 2 * cfg_.f_loc; }
  int mlp_width_global() const { return width_global_; }
  bool global_conditioning() const { return cfg_.conditioning == "global"; }

  /// views: [9, enc_h, enc_w] (three RGB views stacked along channels).
  LatentDistribution encode(Tape& t, const Tensor& views) const;

  /// points: [2, K] in [-1,1]; PointNet-style encoder to a global code.
  Tensor keypoint_encode(Tape& t, const Tensor& points) const;

  /// view must be unit length within 1e-6.
  VoxelField decode(Tape& t, const Tensor& z, const Vec3& view) const;

  /// Fine scene function under local-code conditioning.
  MlpOutput scene_mlp(Tape& t, const Tensor& p_enc, const Tensor& v_enc, const Tensor& f_local,
                      const Tensor& f_view) const;
  /// Ablation variant conditioned on the global code instead of (f, f^v).
  MlpOutput scene_mlp_global(Tape& t, const Tensor& p_enc, const Tensor& v_enc,
                             const Tensor& z_rows) const;

  /// Per-point feature count after positional encoding.
  int p_enc_width() const { return 2 * cfg_.l_pos * 3; }
  int v_enc_width() const { return 2 * cfg_.l_view * 3; }

  std::int64_t count_params(const std::string& prefix) const;

  // Architecture descriptors (symbolic shape traces; no compute).
  std::vector<LayerTrace> encoder_trace() const;
  std::vector<LayerTrace> decoder_trace(bool color_branch) const;
  std::vector<LayerTrace> keypoint_trace() const;

  static Box3 default_scene_bounds() {
    return Box3{{-0.25, -0.25, -0.25}, {0.25, 0.25, 0.25}};
  }

 private:
  Tensor dense(Tape& t, const Tensor& x, const std::string& name) const;
  Tensor conv_stack3d(Tape& t, const Tensor& h0, const std::string& prefix, int out_ch) const;
  MlpOutput mlp_common(Tape& t, const Tensor& p_enc, const Tensor& v_enc, const Tensor& cond_trunk,
                       const Tensor& cond_color, const std::string& prefix, int width) const;
  void declare_params();
  void declare_dense(const std::string& name, int out_dim, int in_dim);
  void declare_conv3d(const std::string& name, int cin, int cout);

  RunConfig cfg_;
  int width_global_ = 0;
  ParamStore params_;
  std::vector<std::pair<std::string, Shape>> shapes_;  // declaration order
};

}  // namespace crfd
