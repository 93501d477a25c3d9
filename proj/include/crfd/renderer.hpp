#pragma once

#include <optional>
#include <vector>

#include "crfd/camera.hpp"
#include "crfd/image.hpp"
#include "crfd/rng.hpp"
#include "crfd/scene_model.hpp"
#include "crfd/tape.hpp"

namespace crfd {

/// Quadrature depths along a ray: strictly ascending, inside [d_min, d_max].
/// delta_i = d_{i+1} - d_i with the terminal delta_N = d_max - d_N.
struct DepthSamples {
  std::vector<double> depths;
  std::vector<double> deltas;
  double d_min = 0;
  double d_max = 0;

  DepthSamples() = default;
  DepthSamples(std::vector<double> depth_values, double dmin, double dmax);
  int count() const { return static_cast<int>(depths.size()); }
};

/// One uniform sample per equal-width bin; deterministic bin midpoints when
/// rng is null (evaluation mode).
DepthSamples stratified_depths(const Ray& ray, int n, Rng* rng);

struct RadianceSample {
  Vec3 color;    // >= 0
  double sigma;  // >= 0
};

/// Transmittance-weighted accumulation of one ray:
///   T_i = exp(-sum_{j<i} sigma_j delta_j), alpha_i = 1 - exp(-sigma_i delta_i),
///   A = sum T_i alpha_i, I' = sum T_i alpha_i c_i.
struct MarchResult {
  Tensor weights;     // [N] = T_i alpha_i
  Tensor accum_rgb;   // [3]
  Tensor alpha;       // scalar
  Tensor composited;  // [3]; filled by composite_background
  double expected_depth = 0;
};

/// Differentiable w.r.t. sigma and color.
MarchResult accumulate(Tape& t, const std::vector<RadianceSample>& samples,
                       const DepthSamples& depths);
MarchResult accumulate(Tape& t, const Tensor& sigma /*[N]*/, const Tensor& color /*[N,3]*/,
                       const DepthSamples& depths);

/// I = I' + (1 - A) * I_bg.
Tensor composite_background(Tape& t, const Tensor& accum_rgb, const Tensor& alpha,
                            const Tensor& background);

/// Opacity-weighted mean depth over the same uniform coarse samples; falls
/// back to the interval midpoint when A < 1e-6.
double expected_depth(const std::vector<double>& weights, const DepthSamples& depths);
double expected_depth(const MarchResult& result, const DepthSamples& depths);

enum class SamplingMode { SS, HS, CoarseOnly };
SamplingMode parse_sampling_mode(const std::string& s);

struct RenderSettings {
  int n_coarse = 32;
  int n_fine = 8;
  int k_range_divisor = 10;
  Vec3 background{0, 0, 0};
  SamplingMode mode = SamplingMode::SS;

  void validate() const;
  static RenderSettings from_config(const RunConfig& cfg);
};

struct RenderStats {
  std::int64_t rays = 0;
  std::int64_t fine_mlp_points = 0;
  std::int64_t feature_channel_samples = 0;  // f / f^v reads from the grid
  double fine_pass_seconds = 0;
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<std::uint64_t> ids;  // per-ray RNG stream ids (stable across tiling)
};

/// Both passes over a batch of rays sharing one camera. The coarse pass
/// samples color/opacity from the voxel field; the fine pass evaluates the
/// scene MLP at depths chosen per settings.mode. All rays must intersect the
/// scene bounds (background-only rays are the caller's short-circuit).
struct BatchRender {
  Tensor coarse_rgb;    // [R,3] composited
  Tensor coarse_alpha;  // [R]
  Tensor fine_rgb;      // [R,3]
  Tensor fine_alpha;    // [R]
  std::vector<double> expected_depths;    // [R]
  std::vector<DepthSamples> fine_depths;  // [R]
};

BatchRender render_batch(Tape& t, const RayBatch& batch, const Model& model,
                         const VoxelField& field, const Tensor* z_global, const Vec3& cam_view,
                         const RenderSettings& settings, const Rng* rng,
                         RenderStats* stats = nullptr,
                         const std::vector<DepthSamples>* fixed_fine = nullptr,
                         const std::vector<Vec3>* bg_per_ray = nullptr);

struct RayRender {
  Vec3 coarse;
  Vec3 fine;
  double coarse_alpha = 0;
  double fine_alpha = 0;
  double depth = 0;
};

/// Single-ray convenience wrapper over render_batch (evaluation-style).
RayRender render_ray(Tape& t, const Ray& ray, std::uint64_t ray_id, const Model& model,
                     const VoxelField& field, const Tensor* z_global, const Vec3& cam_view,
                     const RenderSettings& settings, const Rng* rng, RenderStats* stats = nullptr);

struct ImageRender {
  Image8 fine;
  Image8 coarse;
  ImageF alpha;  // 1 channel
  ImageF depth;  // 1 channel; interval midpoint on background-only pixels
};

/// Deterministic evaluation render: midpoint depths, noise-free, tiled.
/// Output is independent of tile_size and thread count.
ImageRender render_image(const Model& model, const Tensor& z, const Camera& cam,
                         const RenderSettings& settings, int tile_size = 0, int threads = 1,
                         RenderStats* stats = nullptr);

}  // namespace crfd
