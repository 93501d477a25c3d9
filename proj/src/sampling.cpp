#include "crfd/sampling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "crfd/metrics.hpp"

namespace crfd {

namespace {

// Restore strict ascending order after clamping/merging: duplicates are
// nudged up by 1e-9 * range, then pulled below d_max from the top.
std::vector<double> strictify(std::vector<double> d, double d_min, double d_max) {
  std::sort(d.begin(), d.end());
  double eps = 1e-9 * (d_max - d_min);
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i] < d_min) d[i] = d_min;
    if (i > 0 && d[i] <= d[i - 1]) d[i] = d[i - 1] + eps;
  }
  double top = d_max - eps;
  for (size_t i = d.size(); i-- > 0;) {
    if (d[i] > top) d[i] = top;
    top = d[i] - eps;
  }
  return d;
}

}  // namespace

void FineSamplingRequest::validate() const {
  if (n_fine < 1) throw std::invalid_argument("FineSamplingRequest: n_fine must be >= 1");
  if (k_range_divisor < 1)
    throw std::invalid_argument("FineSamplingRequest: k_range_divisor must be >= 1");
  if (coarse_weights.size() != coarse_depths.depths.size())
    throw std::invalid_argument("FineSamplingRequest: weight count " +
                                std::to_string(coarse_weights.size()) +
                                " does not match coarse depth count " +
                                std::to_string(coarse_depths.depths.size()));
}

DepthSamples simple_sampling(const FineSamplingRequest& req, Rng& rng) {
  req.validate();
  double range = req.ray.d_max - req.ray.d_min;
  double delta = range / req.k_range_divisor;
  double lo = std::max(req.ray.d_min, req.expected_depth - delta);
  double hi = std::min(req.ray.d_max, req.expected_depth + delta);
  std::vector<double> d(static_cast<size_t>(req.n_fine));
  for (double& v : d) v = rng.uniform(lo, hi);
  return DepthSamples(strictify(std::move(d), req.ray.d_min, req.ray.d_max), req.ray.d_min,
                      req.ray.d_max);
}

DepthSamples hierarchical_sampling(const FineSamplingRequest& req, Rng& rng) {
  req.validate();
  int n = static_cast<int>(req.coarse_weights.size());
  double h = (req.ray.d_max - req.ray.d_min) / n;
  // Piecewise-constant PDF over the coarse bins with a 1e-5 floor.
  std::vector<double> cdf(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i)
    cdf[static_cast<size_t>(i) + 1] =
        cdf[static_cast<size_t>(i)] + req.coarse_weights[static_cast<size_t>(i)] + 1e-5;
  double total = cdf.back();

  std::vector<double> d;
  d.reserve(static_cast<size_t>(req.n_fine) + req.coarse_depths.depths.size());
  for (int s = 0; s < req.n_fine; ++s) {
    double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    int bin = std::min(n - 1, static_cast<int>(it - cdf.begin()) - 1);
    if (bin < 0) bin = 0;
    double mass = cdf[static_cast<size_t>(bin) + 1] - cdf[static_cast<size_t>(bin)];
    double frac = mass > 0 ? (u - cdf[static_cast<size_t>(bin)]) / mass : 0.5;
    d.push_back(req.ray.d_min + (bin + frac) * h);
  }
  // Merge with the coarse depths; the fine pass evaluates the union.
  d.insert(d.end(), req.coarse_depths.depths.begin(), req.coarse_depths.depths.end());
  return DepthSamples(strictify(std::move(d), req.ray.d_min, req.ray.d_max), req.ray.d_min,
                      req.ray.d_max);
}

std::vector<BenchRow> benchmark_strategies(const Model& model, const Tensor& z,
                                           const std::vector<Camera>& views,
                                           const std::vector<Image8>& ground_truth,
                                           const RenderSettings& base_settings,
                                           const std::vector<SamplingMode>& modes, int threads) {
  if (views.empty() || views.size() != ground_truth.size())
    throw std::invalid_argument("benchmark_strategies: views and ground truth must align");
  std::vector<BenchRow> rows;
  for (SamplingMode mode : modes) {
    RenderSettings settings = base_settings;
    settings.mode = mode;
    BenchRow row;
    row.mode = mode == SamplingMode::SS ? "ss" : (mode == SamplingMode::HS ? "hs" : "coarse");
    RenderStats stats;
    double sq_sum = 0;
    std::int64_t sq_count = 0;
    double ssim_sum = 0;
    auto t0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < views.size(); ++i) {
      ImageRender render = render_image(model, z, views[i], settings, 0, threads, &stats);
      sq_sum += mse_8bit(render.fine, ground_truth[i]) *
                static_cast<double>(render.fine.rgb.size());
      sq_count += static_cast<std::int64_t>(render.fine.rgb.size());
      ssim_sum += ssim(render.fine, ground_truth[i]);
    }
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    row.fine_wall_ms = stats.fine_pass_seconds * 1000.0;
    row.mse = sq_sum / static_cast<double>(sq_count);
    row.psnr = psnr(row.mse);
    row.ssim = ssim_sum / static_cast<double>(views.size());
    row.evals_per_ray =
        stats.rays > 0 ? static_cast<double>(stats.fine_mlp_points) / static_cast<double>(stats.rays)
                       : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "mode,mse,psnr,ssim,wall_ms,evals_per_ray\n";
  char buf[256];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.mode.c_str(), r.mse,
                  r.psnr, r.ssim, r.wall_ms, r.evals_per_ray);
    os << buf;
  }
  return os.str();
}

}  // namespace crfd
