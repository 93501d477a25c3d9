#pragma once

#include <string>
#include <vector>

#include "crfd/renderer.hpp"

namespace crfd {

struct FineSamplingRequest {
  Ray ray;
  std::vector<double> coarse_weights;  // per coarse sample, T_i alpha_i
  DepthSamples coarse_depths;
  double expected_depth = 0;  // from the same uniform coarse samples
  int n_fine = 1;
  int k_range_divisor = 10;

  void validate() const;
};

/// Expected-depth simple sampling: n_fine i.i.d. uniform draws over
/// [d~ - delta, d~ + delta] clamped to [d_min, d_max], delta = range / k,
/// sorted ascending.
DepthSamples simple_sampling(const FineSamplingRequest& req, Rng& rng);

/// NeRF-style hierarchical sampling: inverse-CDF draws proportional to the
/// floored coarse weights, merged with the coarse depths.
DepthSamples hierarchical_sampling(const FineSamplingRequest& req, Rng& rng);

struct BenchRow {
  std::string mode;
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
  double wall_ms = 0;
  double evals_per_ray = 0;
  double fine_wall_ms = 0;  // fine-pass share of wall time (not in the CSV)
};

/// Renders the same views under each mode against ground truth, recording
/// quality, wall time and exact fine-MLP evaluation counts.
std::vector<BenchRow> benchmark_strategies(const Model& model, const Tensor& z,
                                           const std::vector<Camera>& views,
                                           const std::vector<Image8>& ground_truth,
                                           const RenderSettings& base_settings,
                                           const std::vector<SamplingMode>& modes, int threads = 1);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace crfd
