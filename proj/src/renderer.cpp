#include "crfd/renderer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "crfd/sampling.hpp"

namespace crfd {

DepthSamples::DepthSamples(std::vector<double> depth_values, double dmin, double dmax)
    : depths(std::move(depth_values)), d_min(dmin), d_max(dmax) {
  if (depths.empty()) throw std::invalid_argument("DepthSamples requires at least one depth");
  if (!(d_min > 0) || !(d_max > d_min))
    throw std::invalid_argument("DepthSamples requires 0 < d_min < d_max");
  deltas.resize(depths.size());
  for (size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < d_min || depths[i] > d_max)
      throw std::invalid_argument("depth sample " + std::to_string(depths[i]) + " outside [" +
                                  std::to_string(d_min) + ", " + std::to_string(d_max) + "]");
    if (i + 1 < depths.size()) {
      if (!(depths[i + 1] > depths[i]))
        throw std::invalid_argument("depth samples must be strictly ascending");
      deltas[i] = depths[i + 1] - depths[i];
    } else {
      deltas[i] = d_max - depths[i];
    }
    if (!(deltas[i] > 0))
      throw std::invalid_argument("depth deltas must be positive (sample at d_max?)");
  }
}

DepthSamples stratified_depths(const Ray& ray, int n, Rng* rng) {
  if (n < 2) throw std::invalid_argument("stratified_depths requires N >= 2");
  double h = (ray.d_max - ray.d_min) / n;
  std::vector<double> d(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double u = rng ? rng->uniform() : 0.5;
    d[static_cast<size_t>(i)] = ray.d_min + (i + u) * h;
  }
  return DepthSamples(std::move(d), ray.d_min, ray.d_max);
}

namespace {

struct RowMarch {
  Tensor weights;    // [R,N]
  Tensor accum_rgb;  // [R,3]
  Tensor alpha;      // [R]
};

RowMarch accumulate_rows(Tape& t, const Tensor& sigma, const Tensor& color, const Tensor& delta) {
  int r = sigma.dim(0), n = sigma.dim(1);
  Tensor sd = t.mul(sigma, delta);
  Tensor transmittance = t.exp(t.mul_scalar(t.cumsum_exclusive_last(sd), -1.0));
  Tensor alpha_i = t.add_scalar(t.mul_scalar(t.exp(t.mul_scalar(sd, -1.0)), -1.0), 1.0);
  Tensor w = t.mul(transmittance, alpha_i);
  Tensor a = t.reduce_sum(w, {1});
  Tensor rgb = t.reduce_sum(t.mul(t.reshape(w, {r, n, 1}), color), {1});
  return {w, rgb, a};
}

Tensor composite_rows(Tape& t, const Tensor& rgb, const Tensor& alpha, const Tensor& bg) {
  int r = rgb.dim(0);
  Tensor one_minus = t.add_scalar(t.mul_scalar(t.reshape(alpha, {r, 1}), -1.0), 1.0);
  return t.add(rgb, t.mul(one_minus, bg));
}

}  // namespace

MarchResult accumulate(Tape& t, const Tensor& sigma, const Tensor& color,
                       const DepthSamples& depths) {
  if (sigma.rank() != 1 || color.rank() != 2 || color.dim(1) != 3)
    throw std::invalid_argument("accumulate expects sigma [N] and color [N,3]");
  int n = sigma.dim(0);
  if (color.dim(0) != n || depths.count() != n)
    throw std::invalid_argument("accumulate: sample count mismatch (sigma " + std::to_string(n) +
                                ", color " + std::to_string(color.dim(0)) + ", depths " +
                                std::to_string(depths.count()) + ")");
  Tensor delta = Tensor::from({1, n}, depths.deltas);
  RowMarch rows = accumulate_rows(t, t.reshape(sigma, {1, n}), t.reshape(color, {1, n, 3}), delta);
  MarchResult out;
  out.weights = t.reshape(rows.weights, {n});
  out.accum_rgb = t.reshape(rows.accum_rgb, {3});
  out.alpha = t.reshape(rows.alpha, Shape{});
  out.expected_depth = expected_depth(out.weights.values(), depths);
  return out;
}

MarchResult accumulate(Tape& t, const std::vector<RadianceSample>& samples,
                       const DepthSamples& depths) {
  int n = static_cast<int>(samples.size());
  std::vector<double> sv(static_cast<size_t>(n)), cv(static_cast<size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    if (samples[static_cast<size_t>(i)].sigma < 0)
      throw std::invalid_argument("RadianceSample sigma must be >= 0");
    sv[static_cast<size_t>(i)] = samples[static_cast<size_t>(i)].sigma;
    cv[static_cast<size_t>(i) * 3 + 0] = samples[static_cast<size_t>(i)].color.x;
    cv[static_cast<size_t>(i) * 3 + 1] = samples[static_cast<size_t>(i)].color.y;
    cv[static_cast<size_t>(i) * 3 + 2] = samples[static_cast<size_t>(i)].color.z;
  }
  return accumulate(t, Tensor::from({n}, std::move(sv)), Tensor::from({n, 3}, std::move(cv)), depths);
}

Tensor composite_background(Tape& t, const Tensor& accum_rgb, const Tensor& alpha,
                            const Tensor& background) {
  for (double a : alpha.values())
    if (a < -1e-9 || a > 1.0 + 1e-9)
      throw std::invalid_argument("composite_background: alpha " + std::to_string(a) +
                                  " outside [0,1]");
  Tensor one_minus = t.add_scalar(t.mul_scalar(alpha, -1.0), 1.0);
  return t.add(accum_rgb, t.mul(one_minus, background));
}

double expected_depth(const std::vector<double>& weights, const DepthSamples& depths) {
  if (weights.size() != depths.depths.size())
    throw std::invalid_argument("expected_depth: weight/depth count mismatch");
  double a = 0, s = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    a += weights[i];
    s += weights[i] * depths.depths[i];
  }
  if (a < 1e-6) return 0.5 * (depths.d_min + depths.d_max);  // empty ray fallback
  return s / a;
}

double expected_depth(const MarchResult& result, const DepthSamples& depths) {
  return expected_depth(result.weights.values(), depths);
}

SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "ss") return SamplingMode::SS;
  if (s == "hs") return SamplingMode::HS;
  if (s == "coarse") return SamplingMode::CoarseOnly;
  throw std::invalid_argument("unknown sampling mode '" + s + "' (want ss|hs|coarse)");
}

void RenderSettings::validate() const {
  if (n_coarse < 2) throw std::invalid_argument("RenderSettings: n_coarse must be >= 2");
  if (n_fine < 1) throw std::invalid_argument("RenderSettings: n_fine must be >= 1");
  if (k_range_divisor < 1) throw std::invalid_argument("RenderSettings: k_range_divisor must be >= 1");
}

RenderSettings RenderSettings::from_config(const RunConfig& cfg) {
  RenderSettings s;
  s.n_coarse = cfg.n_coarse;
  s.n_fine = cfg.n_fine;
  s.k_range_divisor = cfg.k_range_divisor;
  s.background = Vec3{cfg.background[0], cfg.background[1], cfg.background[2]};
  s.mode = parse_sampling_mode(cfg.sampling);
  s.validate();
  return s;
}

BatchRender render_batch(Tape& t, const RayBatch& batch, const Model& model,
                         const VoxelField& field, const Tensor* z_global, const Vec3& cam_view,
                         const RenderSettings& settings, const Rng* rng, RenderStats* stats,
                         const std::vector<DepthSamples>* fixed_fine,
                         const std::vector<Vec3>* bg_per_ray) {
  settings.validate();
  int r = static_cast<int>(batch.rays.size());
  if (r == 0) throw std::invalid_argument("render_batch: empty ray batch");
  if (batch.ids.size() != batch.rays.size())
    throw std::invalid_argument("render_batch: ids/rays size mismatch");
  if (std::fabs(cam_view.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("render_batch: camera view vector must be unit length");
  bool global = model.global_conditioning();
  if (global && z_global == nullptr)
    throw std::invalid_argument("render_batch: global conditioning requires the global code");
  if (bg_per_ray && static_cast<int>(bg_per_ray->size()) != r)
    throw std::invalid_argument("render_batch: per-ray background size mismatch");

  const Vec3 mid = field.world_extent.center();
  const Vec3 half = field.world_extent.half_extent();
  auto normalized = [&](const Vec3& p) {
    return Vec3{(p.x - mid.x) / half.x, (p.y - mid.y) / half.y, (p.z - mid.z) / half.z};
  };

  BatchRender out;
  out.expected_depths.resize(static_cast<size_t>(r));

  Tensor bg;
  if (bg_per_ray) {
    std::vector<double> bv(static_cast<size_t>(r) * 3);
    for (int i = 0; i < r; ++i) {
      bv[static_cast<size_t>(i) * 3 + 0] = (*bg_per_ray)[static_cast<size_t>(i)].x;
      bv[static_cast<size_t>(i) * 3 + 1] = (*bg_per_ray)[static_cast<size_t>(i)].y;
      bv[static_cast<size_t>(i) * 3 + 2] = (*bg_per_ray)[static_cast<size_t>(i)].z;
    }
    bg = Tensor::from({r, 3}, std::move(bv));
  } else {
    bg = Tensor::from({3}, {settings.background.x, settings.background.y, settings.background.z});
  }

  // Coarse pass: trilinear field samples over stratified depths.
  int nc = settings.n_coarse;
  std::vector<DepthSamples> coarse;
  coarse.reserve(static_cast<size_t>(r));
  std::vector<double> pts(static_cast<size_t>(r) * nc * 3);
  std::vector<double> deltas(static_cast<size_t>(r) * nc);
  for (int i = 0; i < r; ++i) {
    const Ray& ray = batch.rays[static_cast<size_t>(i)];
    if (rng) {
      Rng rs = rng->derive(batch.ids[static_cast<size_t>(i)]).derive(1);
      coarse.push_back(stratified_depths(ray, nc, &rs));
    } else {
      coarse.push_back(stratified_depths(ray, nc, nullptr));
    }
    const DepthSamples& ds = coarse.back();
    for (int j = 0; j < nc; ++j) {
      Vec3 p = normalized(ray.at(ds.depths[static_cast<size_t>(j)]));
      size_t base = (static_cast<size_t>(i) * nc + j) * 3;
      pts[base] = p.x;
      pts[base + 1] = p.y;
      pts[base + 2] = p.z;
      deltas[static_cast<size_t>(i) * nc + j] = ds.deltas[static_cast<size_t>(j)];
    }
  }
  Tensor points = Tensor::from({r * nc, 3}, std::move(pts));
  Tensor coarse_samp = t.grid_sample_trilinear(field.grid, points, 0, 4);
  Tensor coarse_color = t.reshape(t.slice(coarse_samp, 1, VoxelField::kColor, 3), {r, nc, 3});
  Tensor coarse_sigma =
      t.reshape(t.exp(t.slice(coarse_samp, 1, VoxelField::kOpacity, 1)), {r, nc});
  Tensor delta_t = Tensor::from({r, nc}, std::move(deltas));
  RowMarch cm = accumulate_rows(t, coarse_sigma, coarse_color, delta_t);
  out.coarse_rgb = composite_rows(t, cm.accum_rgb, cm.alpha, bg);
  out.coarse_alpha = cm.alpha;

  const std::vector<double>& wv = cm.weights.values();
  for (int i = 0; i < r; ++i) {
    std::vector<double> row(wv.begin() + static_cast<std::ptrdiff_t>(i) * nc,
                            wv.begin() + static_cast<std::ptrdiff_t>(i + 1) * nc);
    out.expected_depths[static_cast<size_t>(i)] =
        expected_depth(row, coarse[static_cast<size_t>(i)]);
  }

  if (stats) stats->rays += r;

  if (settings.mode == SamplingMode::CoarseOnly && !fixed_fine) {
    out.fine_rgb = out.coarse_rgb;
    out.fine_alpha = out.coarse_alpha;
    out.fine_depths = coarse;
    return out;
  }

  // Fine pass.
  auto t0 = std::chrono::steady_clock::now();
  out.fine_depths.reserve(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (fixed_fine) {
      out.fine_depths.push_back((*fixed_fine)[static_cast<size_t>(i)]);
      continue;
    }
    FineSamplingRequest req;
    req.ray = batch.rays[static_cast<size_t>(i)];
    req.coarse_weights.assign(wv.begin() + static_cast<std::ptrdiff_t>(i) * nc,
                              wv.begin() + static_cast<std::ptrdiff_t>(i + 1) * nc);
    req.coarse_depths = coarse[static_cast<size_t>(i)];
    req.expected_depth = out.expected_depths[static_cast<size_t>(i)];
    req.n_fine = settings.n_fine;
    req.k_range_divisor = settings.k_range_divisor;
    Rng rs = (rng ? *rng : Rng(batch.ids[static_cast<size_t>(i)]))
                 .derive(batch.ids[static_cast<size_t>(i)])
                 .derive(2);
    out.fine_depths.push_back(settings.mode == SamplingMode::SS ? simple_sampling(req, rs)
                                                                : hierarchical_sampling(req, rs));
  }
  int nf = out.fine_depths[0].count();
  for (const DepthSamples& ds : out.fine_depths)
    if (ds.count() != nf)
      throw std::logic_error("fine sample counts differ across rays of one batch");

  std::vector<double> fpts(static_cast<size_t>(r) * nf * 3);
  std::vector<double> fdeltas(static_cast<size_t>(r) * nf);
  for (int i = 0; i < r; ++i) {
    const Ray& ray = batch.rays[static_cast<size_t>(i)];
    const DepthSamples& ds = out.fine_depths[static_cast<size_t>(i)];
    for (int j = 0; j < nf; ++j) {
      Vec3 p = normalized(ray.at(ds.depths[static_cast<size_t>(j)]));
      size_t base = (static_cast<size_t>(i) * nf + j) * 3;
      fpts[base] = p.x;
      fpts[base + 1] = p.y;
      fpts[base + 2] = p.z;
      fdeltas[static_cast<size_t>(i) * nf + j] = ds.deltas[static_cast<size_t>(j)];
    }
  }
  int m = r * nf;
  Tensor fine_points = Tensor::from({m, 3}, std::move(fpts));
  Tensor p_enc = t.positional_encoding(fine_points, model.config().l_pos);
  Tensor view_row = t.positional_encoding(
      Tensor::from({1, 3}, {cam_view.x, cam_view.y, cam_view.z}), model.config().l_view);
  Tensor v_enc = t.expand_rows(t.reshape(view_row, {view_row.dim(1)}), m);

  MlpOutput mlp;
  if (global) {
    Tensor z_rows = t.expand_rows(*z_global, m);
    mlp = model.scene_mlp_global(t, p_enc, v_enc, z_rows);
  } else {
    int f = model.feature_channels();
    Tensor feats = t.grid_sample_trilinear(field.grid, fine_points, VoxelField::kFeat, f);
    if (stats) stats->feature_channel_samples += static_cast<std::int64_t>(m) * (f - VoxelField::kFeat);
    Tensor f_local = t.slice(feats, 1, 0, model.config().f_loc);
    Tensor f_view = t.slice(feats, 1, model.config().f_loc, model.config().f_loc);
    mlp = model.scene_mlp(t, p_enc, v_enc, f_local, f_view);
  }
  if (stats) stats->fine_mlp_points += m;

  Tensor fine_sigma = t.reshape(t.exp(mlp.sigma_raw), {r, nf});
  Tensor fine_color = t.reshape(mlp.color, {r, nf, 3});
  Tensor fdelta_t = Tensor::from({r, nf}, std::move(fdeltas));
  RowMarch fm = accumulate_rows(t, fine_sigma, fine_color, fdelta_t);
  out.fine_rgb = composite_rows(t, fm.accum_rgb, fm.alpha, bg);
  out.fine_alpha = fm.alpha;

  if (stats)
    stats->fine_pass_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

RayRender render_ray(Tape& t, const Ray& ray, std::uint64_t ray_id, const Model& model,
                     const VoxelField& field, const Tensor* z_global, const Vec3& cam_view,
                     const RenderSettings& settings, const Rng* rng, RenderStats* stats) {
  RayBatch batch;
  batch.rays.push_back(ray);
  batch.ids.push_back(ray_id);
  BatchRender br =
      render_batch(t, batch, model, field, z_global, cam_view, settings, rng, stats);
  RayRender out;
  out.coarse = {br.coarse_rgb.at(0), br.coarse_rgb.at(1), br.coarse_rgb.at(2)};
  out.fine = {br.fine_rgb.at(0), br.fine_rgb.at(1), br.fine_rgb.at(2)};
  out.coarse_alpha = br.coarse_alpha.at(0);
  out.fine_alpha = br.fine_alpha.at(0);
  out.depth = br.expected_depths[0];
  return out;
}

ImageRender render_image(const Model& model, const Tensor& z, const Camera& cam,
                         const RenderSettings& settings, int tile_size, int threads,
                         RenderStats* stats) {
  cam.validate();
  settings.validate();
  const Box3 bounds = Model::default_scene_bounds();
  Vec3 view = (cam.center - bounds.center()).normalized();

  Tape decode_tape(false);
  VoxelField field = model.decode(decode_tape, z, view);
  bool global = model.global_conditioning();

  int w = cam.width, h = cam.height;
  ImageRender out;
  out.fine.width = out.coarse.width = w;
  out.fine.height = out.coarse.height = h;
  out.fine.rgb.assign(static_cast<size_t>(w) * h * 3, 0);
  out.coarse.rgb.assign(static_cast<size_t>(w) * h * 3, 0);
  out.alpha = ImageF{w, h, 1, std::vector<float>(static_cast<size_t>(w) * h, 0.f)};
  out.depth = ImageF{w, h, 1, std::vector<float>(static_cast<size_t>(w) * h, 0.f)};

  if (tile_size <= 0) tile_size = std::max(w, h);
  struct Tile {
    int x0, y0, x1, y1;
  };
  std::vector<Tile> tiles;
  for (int y = 0; y < h; y += tile_size)
    for (int x = 0; x < w; x += tile_size)
      tiles.push_back({x, y, std::min(x + tile_size, w), std::min(y + tile_size, h)});

  std::atomic<size_t> next{0};
  std::mutex stats_mutex;
  auto worker = [&]() {
    RenderStats local;
    for (;;) {
      size_t ti = next.fetch_add(1);
      if (ti >= tiles.size()) break;
      const Tile& tile = tiles[ti];
      RayBatch batch;
      std::vector<size_t> pixel_of_ray;
      for (int y = tile.y0; y < tile.y1; ++y)
        for (int x = tile.x0; x < tile.x1; ++x) {
          size_t px = static_cast<size_t>(y) * w + x;
          auto ray = generate_ray(cam, x, y, bounds);
          if (!ray) {
            for (int c = 0; c < 3; ++c)
              out.fine.rgb[px * 3 + c] = out.coarse.rgb[px * 3 + c] =
                  quantize8(settings.background[c]);
            out.alpha.data[px] = 0.f;
            out.depth.data[px] = 0.f;
            continue;
          }
          batch.rays.push_back(*ray);
          batch.ids.push_back(px);
          pixel_of_ray.push_back(px);
        }
      if (!batch.rays.empty()) {
        Tape t(false);
        BatchRender br = render_batch(t, batch, model, field, global ? &z : nullptr, view,
                                      settings, nullptr, &local);
        for (size_t i = 0; i < pixel_of_ray.size(); ++i) {
          size_t px = pixel_of_ray[i];
          for (int c = 0; c < 3; ++c) {
            out.fine.rgb[px * 3 + c] = quantize8(br.fine_rgb.at(static_cast<std::int64_t>(i) * 3 + c));
            out.coarse.rgb[px * 3 + c] =
                quantize8(br.coarse_rgb.at(static_cast<std::int64_t>(i) * 3 + c));
          }
          out.alpha.data[px] = static_cast<float>(br.fine_alpha.at(static_cast<std::int64_t>(i)));
          out.depth.data[px] = static_cast<float>(br.expected_depths[i]);
        }
      }
    }
    if (stats) {
      std::lock_guard<std::mutex> lock(stats_mutex);
      stats->rays += local.rays;
      stats->fine_mlp_points += local.fine_mlp_points;
      stats->feature_channel_samples += local.feature_channel_samples;
      stats->fine_pass_seconds += local.fine_pass_seconds;
    }
  };

  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace crfd
