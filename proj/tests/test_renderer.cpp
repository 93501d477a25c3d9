#include <doctest.h>

#include <cmath>

#include "crfd/grad_check.hpp"
#include "crfd/losses.hpp"
#include "crfd/renderer.hpp"
#include "test_util.hpp"

using namespace crfd;
using crfd_test::tiny_config;

namespace {

Ray unit_ray(double d_min = 0.2, double d_max = 1.2) {
  return Ray(Vec3{-1, 0, 0}, Vec3{1, 0, 0}, d_min, d_max);
}

VoxelField random_field(const RunConfig& cfg, Rng rng, double sigma_bias = 0.0) {
  int f = 4 + 2 * cfg.f_loc;
  int d = cfg.grid_d;
  std::vector<double> v(static_cast<size_t>(f) * d * d * d);
  for (double& x : v) x = rng.uniform(-0.5, 0.5);
  // Shift the raw log-opacity channel.
  std::int64_t vox = static_cast<std::int64_t>(d) * d * d;
  for (std::int64_t i = 3 * vox; i < 4 * vox; ++i) v[static_cast<size_t>(i)] += sigma_bias;
  VoxelField field;
  field.grid = Tensor::from({f, d, d, d}, std::move(v), true);
  field.world_extent = Model::default_scene_bounds();
  field.f_loc = cfg.f_loc;
  return field;
}

}  // namespace

TEST_SUITE_BEGIN("renderer");

TEST_CASE("stratified depths: midpoints, bins and delta sum") {
  Ray ray(Vec3{0, 0, 0}, Vec3{0, 0, 1}, 1e-9 + 0.0, 1.0);
  // d_min must be > 0; use [0.5, 1.5] shifted instead for exactness checks.
  Ray r2(Vec3{0, 0, 0}, Vec3{0, 0, 1}, 0.5, 1.5);
  DepthSamples mid = stratified_depths(r2, 4, nullptr);
  CHECK(mid.depths[0] == doctest::Approx(0.625));
  CHECK(mid.depths[1] == doctest::Approx(0.875));
  CHECK(mid.depths[2] == doctest::Approx(1.125));
  CHECK(mid.depths[3] == doctest::Approx(1.375));
  // With the terminal convention delta_N = d_max - d_N the deltas telescope
  // to d_max - d_1 (= range - h/2 in midpoint mode).
  double sum = 0;
  for (double d : mid.deltas) sum += d;
  CHECK(sum == doctest::Approx(mid.d_max - mid.depths[0]).epsilon(1e-12));
  CHECK(sum == doctest::Approx(1.0 - 0.125).epsilon(1e-12));

  // Every jittered sample falls inside its own bin.
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    DepthSamples s = stratified_depths(r2, 8, &rng);
    for (int i = 0; i < 8; ++i) {
      CHECK(s.depths[static_cast<size_t>(i)] >= 0.5 + i * 0.125);
      CHECK(s.depths[static_cast<size_t>(i)] < 0.5 + (i + 1) * 0.125);
    }
  }
  CHECK_THROWS_AS(stratified_depths(r2, 1, nullptr), std::invalid_argument);
}

TEST_CASE("depth samples validate their invariants") {
  CHECK_THROWS_AS(DepthSamples({0.5, 0.4}, 0.1, 1.0), std::invalid_argument);  // not ascending
  CHECK_THROWS_AS(DepthSamples({0.05}, 0.1, 1.0), std::invalid_argument);      // below d_min
  CHECK_THROWS_AS(DepthSamples({1.0}, 0.1, 1.0), std::invalid_argument);       // delta_N = 0
}

TEST_CASE("accumulate: trivial opacity cases") {
  Tape t;
  DepthSamples ds({0.25, 0.5, 0.75}, 0.1, 1.0);
  // All sigma = 0: nothing accumulates.
  {
    std::vector<RadianceSample> s(3, RadianceSample{{1, 1, 1}, 0.0});
    MarchResult r = accumulate(t, s, ds);
    CHECK(r.alpha.item() == 0.0);
    for (int i = 0; i < 3; ++i) CHECK(r.accum_rgb.at(i) == 0.0);
  }
  // One nearly opaque sample.
  {
    DepthSamples one({0.5}, 0.1, 1.0);
    std::vector<RadianceSample> s{{{0.2, 0.4, 0.8}, 1e6 / 0.5}};  // sigma*delta = 1e6
    MarchResult r = accumulate(t, s, one);
    CHECK(r.alpha.item() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.accum_rgb.at(0) == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(r.accum_rgb.at(2) == doctest::Approx(0.8).epsilon(1e-6));
  }
  // Two samples with sigma*delta = ln 2 each: alpha1 = 0.5, T2 = 0.5, A = 0.75.
  {
    DepthSamples two({0.3, 0.6}, 0.1, 0.9);  // deltas 0.3, 0.3
    double sig = std::log(2.0) / 0.3;
    std::vector<RadianceSample> s{{{1, 0, 0}, sig}, {{0, 1, 0}, sig}};
    MarchResult r = accumulate(t, s, two);
    CHECK(r.weights.at(0) == doctest::Approx(0.5));
    CHECK(r.weights.at(1) == doctest::Approx(0.25));
    CHECK(r.alpha.item() == doctest::Approx(0.75));
  }
  CHECK_THROWS_AS(accumulate(t, std::vector<RadianceSample>(2, RadianceSample{{0, 0, 0}, 0.0}), ds),
                  std::invalid_argument);
}

TEST_CASE("telescoping identity over 1000 random rays") {
  Rng rng(7);
  Tape t(false);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.next_below(63));
    std::vector<double> depths(static_cast<size_t>(n));
    double d = 0.1;
    for (int i = 0; i < n; ++i) {
      d += rng.uniform(1e-4, 0.05);
      depths[static_cast<size_t>(i)] = d;
    }
    DepthSamples ds(depths, 0.1, d + rng.uniform(1e-4, 0.05));
    std::vector<double> sig(static_cast<size_t>(n)), col(static_cast<size_t>(n) * 3);
    double sum_sd = 0;
    for (int i = 0; i < n; ++i) {
      sig[static_cast<size_t>(i)] = rng.uniform(0.0, 30.0);
      sum_sd += sig[static_cast<size_t>(i)] * ds.deltas[static_cast<size_t>(i)];
    }
    for (double& c : col) c = rng.uniform(0.0, 1.0);
    MarchResult r = accumulate(t, Tensor::from({n}, sig), Tensor::from({n, 3}, col), ds);
    double a = r.alpha.item();
    CHECK(std::fabs(a - (1.0 - std::exp(-sum_sd))) < 1e-10);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    // A equals the weight sum.
    double wsum = 0;
    for (double w : r.weights.values()) {
      CHECK(w >= 0.0);
      wsum += w;
    }
    CHECK(std::fabs(a - wsum) < 1e-10);
  }
}

TEST_CASE("transmittance is monotone non-increasing") {
  Rng rng(11);
  Tape t(false);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 16;
    DepthSamples ds = stratified_depths(unit_ray(), n, nullptr);
    std::vector<double> sig(static_cast<size_t>(n));
    for (double& s : sig) s = rng.uniform(0.0, 20.0);
    MarchResult r = accumulate(t, Tensor::from({n}, sig),
                               Tensor::full({n, 3}, 0.5), ds);
    // T_i = w_i / alpha_i; check the cumulative-product form directly.
    double transmittance = 1.0;
    for (int i = 0; i < n; ++i) {
      double alpha_i = 1.0 - std::exp(-sig[static_cast<size_t>(i)] * ds.deltas[static_cast<size_t>(i)]);
      double w = r.weights.at(i);
      if (alpha_i > 1e-12) {
        double ti = w / alpha_i;
        CHECK(ti <= transmittance + 1e-12);
        transmittance = ti;
      }
    }
    CHECK(transmittance >= -1e-12);
  }
}

TEST_CASE("refinement consistency: split accumulation composes via transmittance") {
  // accumulate(N) == accumulate(front) ⊕ T_front * accumulate(back).
  Rng rng(13);
  Tape t(false);
  int n = 12, split = 5;
  DepthSamples ds = stratified_depths(unit_ray(), n, nullptr);
  std::vector<double> sig(static_cast<size_t>(n)), col(static_cast<size_t>(n) * 3);
  for (double& s : sig) s = rng.uniform(0.0, 15.0);
  for (double& c : col) c = rng.uniform(0.0, 1.0);
  MarchResult whole = accumulate(t, Tensor::from({n}, sig), Tensor::from({n, 3}, col), ds);

  auto subrange = [&](int lo, int hi, double dmin, double dmax) {
    std::vector<double> d(ds.depths.begin() + lo, ds.depths.begin() + hi);
    std::vector<double> s(sig.begin() + lo, sig.begin() + hi);
    std::vector<double> c(col.begin() + lo * 3, col.begin() + hi * 3);
    DepthSamples part(d, dmin, dmax);
    return accumulate(t, Tensor::from({hi - lo}, s), Tensor::from({hi - lo, 3}, c), part);
  };
  // Front covers [d_min, d_split); back covers [d_split, d_max) so the
  // terminal-delta convention reproduces the same per-sample deltas.
  double d_split = ds.depths[static_cast<size_t>(split)];
  MarchResult front = subrange(0, split, ds.d_min, d_split);
  MarchResult back = subrange(split, n, d_split, ds.d_max);
  double t_front = 1.0;
  for (int i = 0; i < split; ++i)
    t_front *= std::exp(-sig[static_cast<size_t>(i)] * ds.deltas[static_cast<size_t>(i)]);
  double a_combined = front.alpha.item() + t_front * back.alpha.item();
  CHECK(std::fabs(a_combined - whole.alpha.item()) < 1e-10);
  for (int c = 0; c < 3; ++c) {
    double rgb = front.accum_rgb.at(c) + t_front * back.accum_rgb.at(c);
    CHECK(std::fabs(rgb - whole.accum_rgb.at(c)) < 1e-10);
  }
}

TEST_CASE("color linearity: scaling sample colors scales accumulated color") {
  Rng rng(17);
  Tape t(false);
  int n = 10;
  DepthSamples ds = stratified_depths(unit_ray(), n, nullptr);
  std::vector<double> sig(static_cast<size_t>(n)), col(static_cast<size_t>(n) * 3);
  for (double& s : sig) s = rng.uniform(0.0, 10.0);
  for (double& c : col) c = rng.uniform(0.0, 1.0);
  MarchResult base = accumulate(t, Tensor::from({n}, sig), Tensor::from({n, 3}, col), ds);
  double scale = 2.75;
  std::vector<double> col2(col);
  for (double& c : col2) c *= scale;
  MarchResult scaled = accumulate(t, Tensor::from({n}, sig), Tensor::from({n, 3}, col2), ds);
  for (int c = 0; c < 3; ++c)
    CHECK(scaled.accum_rgb.at(c) == doctest::Approx(scale * base.accum_rgb.at(c)).epsilon(1e-12));
}

TEST_CASE("composite_background endpoints and hand arithmetic") {
  Tape t;
  Tensor bg = Tensor::from({3}, {1, 1, 1});
  Tensor accum = Tensor::from({3}, {0.2, 0, 0});
  Tensor i0 = composite_background(t, accum, Tensor::scalar(0.0), bg);
  for (int c = 0; c < 3; ++c) CHECK(i0.at(c) == doctest::Approx(c == 0 ? 1.2 : 1.0));
  // A = 0 with zero accumulation: exactly the background.
  Tensor none = composite_background(t, Tensor::zeros({3}), Tensor::scalar(0.0), bg);
  for (int c = 0; c < 3; ++c) CHECK(none.at(c) == 1.0);
  Tensor i1 = composite_background(t, accum, Tensor::scalar(1.0), bg);
  CHECK(i1.at(0) == doctest::Approx(0.2));
  CHECK(i1.at(1) == doctest::Approx(0.0));
  Tensor ih = composite_background(t, accum, Tensor::scalar(0.5), bg);
  CHECK(ih.at(0) == doctest::Approx(0.7));
  CHECK(ih.at(1) == doctest::Approx(0.5));
  CHECK(ih.at(2) == doctest::Approx(0.5));
  CHECK_THROWS_AS(composite_background(t, accum, Tensor::scalar(1.5), bg), std::invalid_argument);
}

TEST_CASE("expected depth: opaque point, mean, and empty fallback") {
  Tape t(false);
  {
    DepthSamples ds({0.3}, 0.1, 1.0);
    std::vector<RadianceSample> s{{{1, 1, 1}, 1e7}};
    MarchResult r = accumulate(t, s, ds);
    CHECK(expected_depth(r, ds) == doctest::Approx(0.3));
  }
  {
    DepthSamples ds({0.2, 0.6}, 0.1, 1.0);
    std::vector<double> w{0.3, 0.3};
    CHECK(expected_depth(w, ds) == doctest::Approx(0.4));
  }
  {
    DepthSamples ds({0.2, 0.6}, 0.1, 1.0);
    std::vector<double> w{0.0, 0.0};
    double d = expected_depth(w, ds);
    CHECK(d == doctest::Approx(0.55));  // (0.1 + 1.0) / 2
    CHECK(d >= ds.d_min);
    CHECK(d <= ds.d_max);
  }
}

TEST_CASE("expected depth stays inside [d_min, d_max] when A >= 1e-6") {
  Rng rng(23);
  Tape t(false);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 8;
    DepthSamples ds = stratified_depths(unit_ray(), n, nullptr);
    std::vector<double> w(static_cast<size_t>(n));
    for (double& x : w) x = rng.uniform(0.0, 0.2);
    double a = 0;
    for (double x : w) a += x;
    if (a < 1e-6) continue;
    double d = expected_depth(w, ds);
    CHECK(d >= ds.d_min);
    CHECK(d <= ds.d_max);
  }
}

TEST_CASE("render_batch: transparent field gives exactly the background") {
  RunConfig cfg = tiny_config();
  Model model(cfg);
  model.init_params(Rng(31));
  VoxelField field = random_field(cfg, Rng(32), -1e3);  // effectively vacuum
  RenderSettings settings;
  settings.n_coarse = cfg.n_coarse;
  settings.n_fine = cfg.n_fine;
  settings.background = {0.25, 0.5, 0.75};
  settings.mode = SamplingMode::SS;
  Tape t(false);
  RayBatch batch;
  batch.rays.push_back(unit_ray(0.3, 1.6));
  batch.ids.push_back(0);
  BatchRender br = render_batch(t, batch, model, field, nullptr, Vec3{1, 0, 0}, settings, nullptr);
  CHECK(br.coarse_rgb.at(0) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(br.coarse_rgb.at(1) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(br.coarse_alpha.at(0) == doctest::Approx(0.0));
  // The scene MLP's exp head gives sigma near 1, so the fine pass is only
  // near-transparent over short deltas; coarse-only must be exact though.
  RenderSettings coarse_only = settings;
  coarse_only.mode = SamplingMode::CoarseOnly;
  BatchRender bc = render_batch(t, batch, model, field, nullptr, Vec3{1, 0, 0}, coarse_only, nullptr);
  for (int c = 0; c < 3; ++c) CHECK(bc.fine_rgb.at(c) == bc.coarse_rgb.at(c));
}

TEST_CASE("COARSE_ONLY returns fine identical to coarse") {
  RunConfig cfg = tiny_config();
  Model model(cfg);
  model.init_params(Rng(41));
  VoxelField field = random_field(cfg, Rng(42), 2.0);
  RenderSettings settings = RenderSettings::from_config(cfg);
  settings.mode = SamplingMode::CoarseOnly;
  Tape t(false);
  RayBatch batch;
  batch.rays.push_back(unit_ray(0.2, 1.4));
  batch.ids.push_back(7);
  RenderStats stats;
  BatchRender br = render_batch(t, batch, model, field, nullptr, Vec3{1, 0, 0}, settings, nullptr, &stats);
  for (int c = 0; c < 3; ++c) CHECK(br.fine_rgb.at(c) == br.coarse_rgb.at(c));
  CHECK(stats.fine_mlp_points == 0);
}

TEST_CASE("full coarse+fine render loss gradient vs finite differences") {
  // 4^3 field and a 2-layer MLP, loss on two rays; fine depths frozen so the
  // differentiated function matches what finite differences see.
  RunConfig cfg = tiny_config();
  cfg.mlp_trunk_layers = 2;
  cfg.mlp_width = 8;
  cfg.n_coarse = 6;
  cfg.n_fine = 3;
  Model model(cfg);
  model.init_params(Rng(51));

  RenderSettings settings = RenderSettings::from_config(cfg);
  settings.background = {0.3, 0.3, 0.3};
  RayBatch batch;
  batch.rays.push_back(unit_ray(0.8, 1.2));
  batch.rays.push_back(Ray(Vec3{0, -1, 0.1}, Vec3{0, 1, 0}, 0.8, 1.2));
  batch.ids = {0, 1};
  Tensor gt = Tensor::from({2, 3}, {0.4, 0.5, 0.6, 0.1, 0.2, 0.3});

  ParamStore ps;
  {
    VoxelField field = random_field(cfg, Rng(52), 1.0);
    ps.add("grid", field.grid);
    for (const auto& [name, p] : model.params())
      if (name.rfind("mlp.", 0) == 0) ps.add(name, p);
  }

  // Freeze the fine sampling plan from an initial pass.
  std::vector<DepthSamples> fixed;
  {
    Tape t0(false);
    VoxelField field;
    field.grid = ps.get("grid");
    field.world_extent = Model::default_scene_bounds();
    field.f_loc = cfg.f_loc;
    Rng rng(99);
    BatchRender br =
        render_batch(t0, batch, model, field, nullptr, Vec3{1, 0, 0}, settings, &rng);
    fixed = br.fine_depths;
  }

  Model* mp = &model;
  auto f = [&, mp](Tape& t, const ParamStore& p) {
    for (const auto& [name, tensor] : p)
      if (name != "grid") mp->params().set(name, tensor);
    VoxelField field;
    field.grid = p.get("grid");
    field.world_extent = Model::default_scene_bounds();
    field.f_loc = cfg.f_loc;
    BatchRender br = render_batch(t, batch, *mp, field, nullptr, Vec3{1, 0, 0}, settings, nullptr,
                                  nullptr, &fixed);
    Tensor lf = reconstruction_loss(t, br.fine_rgb, gt);
    Tensor lc = reconstruction_loss(t, br.coarse_rgb, gt);
    Tensor bf = beta_prior(t, br.fine_alpha, 1e-5);
    Tensor bc = beta_prior(t, br.coarse_alpha, 1e-5);
    Tensor total = t.add(t.add(lf, lc), t.add(t.mul_scalar(bf, 0.1), t.mul_scalar(bc, 0.1)));
    return total;
  };
  auto report = grad_check(f, ps, 1e-5, 1e-4);
  INFO("worst: " << report.worst_param << "[" << report.worst_index
                 << "] rel=" << report.max_rel_err);
  CHECK(report.passed);
}

TEST_CASE("render_image: transparent field, determinism, tile invariance") {
  RunConfig cfg = tiny_config();
  cfg.conditioning = "local";
  Model model(cfg);
  model.init_params(Rng(61));
  Camera cam = make_look_at_camera("c", Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 55, 8, 8);
  RenderSettings settings = RenderSettings::from_config(cfg);
  settings.background = {0.1, 0.2, 0.3};
  Tensor z = Tensor::zeros({cfg.z_dim});

  ImageRender a = render_image(model, z, cam, settings, 0, 1);
  ImageRender b = render_image(model, z, cam, settings, 0, 1);
  CHECK(a.fine == b.fine);  // bit-identical repeat

  ImageRender tiled = render_image(model, z, cam, settings, 3, 1);
  CHECK(a.fine == tiled.fine);
  CHECK(a.coarse == tiled.coarse);

  ImageRender threaded = render_image(model, z, cam, settings, 3, 4);
  CHECK(a.fine == threaded.fine);
}

TEST_SUITE_END();
