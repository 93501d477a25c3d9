#include <doctest.h>

#include <cmath>

#include "crfd/grad_check.hpp"
#include "crfd/scene_model.hpp"
#include "test_util.hpp"

using namespace crfd;
using crfd_test::tiny_config;

TEST_SUITE_BEGIN("scene_model");

TEST_CASE("paper-scale encoder matches the published table") {
  Model model(RunConfig::paper_scale());
  auto rows = model.encoder_trace();
  // Conv2d rows: (9,32),(32,64),(64,128),(128,128),(128,256),(256,256),(256,256).
  const int chans[8] = {9, 32, 64, 128, 128, 256, 256, 256};
  REQUIRE(rows.size() == 10);
  int h = 512, w = 256;
  for (int i = 0; i < 7; ++i) {
    CHECK(rows[static_cast<size_t>(i)].in == Shape{chans[i], h, w});
    CHECK(rows[static_cast<size_t>(i)].out == Shape{chans[i + 1], h / 2, w / 2});
    h /= 2;
    w /= 2;
  }
  CHECK(rows[7].name == "Flatten()");
  CHECK(rows[7].out == Shape{256 * 4 * 2});
  CHECK(rows[8].in == Shape{2048});
  CHECK(rows[8].out == Shape{512});
  CHECK(rows[9].out == Shape{256});  // both heads
}

TEST_CASE("paper-scale encoder forward produces 256-dim statistics") {
  Model model(RunConfig::paper_scale());
  Tape t(false);
  LatentDistribution dist = model.encode(t, Tensor::zeros({9, 512, 256}));
  CHECK(dist.mu.shape() == Shape{256});
  CHECK(dist.log_sigma.shape() == Shape{256});
  // Zero input through zero weights gives a zero mean.
  for (int i = 0; i < 256; ++i) CHECK(dist.mu.at(i) == 0.0);
}

TEST_CASE("paper-scale decoder matches the published table") {
  Model model(RunConfig::paper_scale());
  // Color branch: input 256+3, six transposed convs from 1^3 to 64^3.
  auto rows = model.decoder_trace(true);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].in == Shape{259});  // N_in = 256 + 3
  CHECK(rows[0].out == Shape{1024});
  CHECK(rows[1].out == Shape{1024, 1, 1, 1});
  const int widths[7] = {1024, 512, 512, 256, 256, 128, 3};
  int d = 1;
  for (int i = 0; i < 6; ++i) {
    CHECK(rows[static_cast<size_t>(i + 2)].in == Shape{widths[i], d, d, d});
    CHECK(rows[static_cast<size_t>(i + 2)].out[0] == widths[i + 1]);
    CHECK(rows[static_cast<size_t>(i + 2)].out[1] == 2 * d);
    d *= 2;
  }
  CHECK(d == 64);
  // Feature stacks end at 32 channels; opacity branch input is plain z.
  CHECK(rows[7].name == "ConvTrans3d(128, 3) | ConvTrans3d(128, 32)");
  auto op_rows = model.decoder_trace(false);
  CHECK(op_rows[0].in == Shape{256});
  CHECK(op_rows[7].name == "ConvTrans3d(128, 1) | ConvTrans3d(128, 32)");
}

TEST_CASE("paper-scale keypoint encoder matches the published table") {
  Model model(RunConfig::paper_scale());
  auto rows = model.keypoint_trace();
  REQUIRE(rows.size() == 10);
  CHECK(rows[0].name == "Conv1d(2, 64)");
  CHECK(rows[1].name == "Conv1d(64, 128)");
  CHECK(rows[2].name == "Conv1d(128, 256)");
  CHECK(rows[3].name == "Conv1d(256, 512)");
  CHECK(rows[4].name == "Conv1d(512, 1024)");
  CHECK(rows[5].name == "MaxPool1d()");
  CHECK(rows[6].name == "Flatten()");
  CHECK(rows[7].name == "Linear(1024, 512)");
  CHECK(rows[8].name == "Linear(512, 512)");
  CHECK(rows[9].name == "Linear(512, 256)");
}

TEST_CASE("desk-scale decoder emits the configured grid") {
  RunConfig cfg;  // desk defaults: Z=32, D=8, F_loc=8 -> 20 channels
  Model model(cfg);
  model.init_params(Rng(3));
  Tape t(false);
  Tensor z = Tensor::zeros({32});
  VoxelField field = model.decode(t, z, Vec3{1, 0, 0});
  CHECK(field.grid.shape() == Shape{20, 8, 8, 8});
  CHECK(field.f_loc == 8);
  CHECK_THROWS_AS(model.decode(t, z, Vec3{2, 0, 0}), std::invalid_argument);  // unnormalized view
  CHECK_THROWS_AS(model.decode(t, Tensor::zeros({7}), Vec3{1, 0, 0}), std::invalid_argument);
}

TEST_CASE("decoded opacity is positive and coarse color non-negative") {
  Model model(tiny_config());
  model.init_params(Rng(11));
  Tape t(false);
  Tensor z = Tensor::from({8}, {0.3, -0.2, 0.5, 0.9, -0.8, 0.1, 0.0, 0.4});
  VoxelField field = model.decode(t, z, Vec3{0, 0, 1});
  int d = field.resolution();
  std::int64_t vox = static_cast<std::int64_t>(d) * d * d;
  for (std::int64_t i = 0; i < 3 * vox; ++i) CHECK(field.grid.at(i) >= 0.0);  // coarse color
  // Raw log-opacity exponentiates to something strictly positive.
  for (std::int64_t i = 3 * vox; i < 4 * vox; ++i)
    CHECK(std::exp(field.grid.at(i)) > 0.0);
}

TEST_CASE("opacity branch ignores the view; color branch uses it") {
  Model model(tiny_config());
  model.init_params(Rng(5));
  Tape t(false);
  Tensor z = Tensor::from({8}, {1, 2, 3, 4, 5, 6, 7, 8});
  VoxelField a = model.decode(t, z, Vec3{1, 0, 0});
  VoxelField b = model.decode(t, z, Vec3{0, 1, 0});
  int d = a.resolution();
  std::int64_t vox = static_cast<std::int64_t>(d) * d * d;
  // Channels [3, 4+f_loc): opacity + f, decoded from z only.
  for (std::int64_t i = 3 * vox; i < (4 + a.f_loc) * vox; ++i)
    CHECK(a.grid.at(i) == b.grid.at(i));
  // Coarse color differs for generic weights.
  double diff = 0;
  for (std::int64_t i = 0; i < 3 * vox; ++i) diff += std::fabs(a.grid.at(i) - b.grid.at(i));
  CHECK(diff > 1e-9);
}

TEST_CASE("reparameterize basics") {
  Tape t;
  LatentDistribution dist;
  dist.mu = Tensor::from({3}, {1, 2, 3}, true);
  dist.log_sigma = Tensor::zeros({3}, true);  // sigma = 1
  Tensor z0 = reparameterize(t, dist, Tensor::zeros({3}));
  for (int i = 0; i < 3; ++i) CHECK(z0.at(i) == doctest::Approx(dist.mu.at(i)));

  LatentDistribution std_dist;
  std_dist.mu = Tensor::zeros({3}, true);
  std_dist.log_sigma = Tensor::zeros({3}, true);
  Tensor n = Tensor::from({3}, {0.5, -1.5, 2.0});
  Tensor zn = reparameterize(t, std_dist, n);
  for (int i = 0; i < 3; ++i) CHECK(zn.at(i) == doctest::Approx(n.at(i)));

  // d sum(z) / d mu = ones; the Jacobian w.r.t. mu is the identity.
  Tape t2;
  Tensor z = reparameterize(t2, dist, Tensor::from({3}, {0.3, 0.1, -0.2}));
  t2.backward(t2.reduce_sum(z));
  Tensor g = t2.grad(dist.mu);
  for (int i = 0; i < 3; ++i) CHECK(g.at(i) == doctest::Approx(1.0));

  CHECK_THROWS_AS(reparameterize(t, dist, Tensor::zeros({4})), std::invalid_argument);
}

TEST_CASE("reparameterize noise-0 Jacobian w.r.t. mu passes grad_check") {
  ParamStore ps;
  ps.add("mu", Tensor::from({4}, {0.1, -0.3, 0.7, 0.2}, true));
  ps.add("ls", Tensor::from({4}, {0.0, 0.2, -0.1, 0.3}, true));
  auto f = [](Tape& t, const ParamStore& p) {
    LatentDistribution d{p.get("mu"), p.get("ls")};
    Tensor z = reparameterize(t, d, Tensor::from({4}, {0.4, -0.6, 1.2, 0.0}));
    return t.reduce_sum(t.mul(z, z));
  };
  CHECK(grad_check(f, ps, 1e-5, 1e-4).passed);
}

TEST_CASE("keypoint encoder is permutation and duplication invariant") {
  Model model(tiny_config());
  model.init_params(Rng(17));
  Tape t(false);
  // Distinct per-point features so maxpool has no ties.
  Tensor pts = Tensor::from({2, 3}, {0.1, -0.4, 0.8, 0.5, 0.2, -0.7});
  Tensor perm = Tensor::from({2, 3}, {0.8, 0.1, -0.4, -0.7, 0.5, 0.2});
  Tensor za = model.keypoint_encode(t, pts);
  Tensor zb = model.keypoint_encode(t, perm);
  CHECK(za.shape() == Shape{8});
  for (int i = 0; i < 8; ++i) CHECK(za.at(i) == doctest::Approx(zb.at(i)).epsilon(1e-12));

  Tensor single = Tensor::from({2, 1}, {0.3, -0.2});
  Tensor tripled = Tensor::from({2, 3}, {0.3, 0.3, 0.3, -0.2, -0.2, -0.2});
  Tensor zs = model.keypoint_encode(t, single);
  Tensor zt = model.keypoint_encode(t, tripled);
  for (int i = 0; i < 8; ++i) CHECK(zs.at(i) == doctest::Approx(zt.at(i)).epsilon(1e-12));

  CHECK_THROWS_AS(model.keypoint_encode(t, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("encoder rejects wrong input shapes") {
  Model model(tiny_config());
  Tape t(false);
  CHECK_THROWS_AS(model.encode(t, Tensor::zeros({3, 32, 16})), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(t, Tensor::zeros({9, 16, 16})), std::invalid_argument);
}

TEST_CASE("desk encoder produces z-dim statistics") {
  RunConfig cfg = tiny_config();
  Model model(cfg);
  model.init_params(Rng(23));
  Tape t(false);
  std::vector<double> v(static_cast<size_t>(9) * 32 * 16, 0.25);
  LatentDistribution dist = model.encode(t, Tensor::from({9, 32, 16}, std::move(v)));
  CHECK(dist.mu.shape() == Shape{8});
  CHECK(dist.log_sigma.shape() == Shape{8});
  Tensor sigma = dist.sigma(t);
  for (double s : sigma.values()) CHECK(s > 0.0);
}

TEST_CASE("scene MLP heads behave per contract") {
  RunConfig cfg = tiny_config();
  Model model(cfg);  // zero params
  Tape t;
  int m = 5;
  Tensor p_enc = Tensor::zeros({m, model.p_enc_width()});
  Tensor v_enc = Tensor::zeros({m, model.v_enc_width()});
  Tensor f = Tensor::zeros({m, cfg.f_loc});
  MlpOutput out = model.scene_mlp(t, p_enc, v_enc, f, f);
  CHECK(out.color.shape() == Shape{m, 3});
  CHECK(out.sigma_raw.shape() == Shape{m, 1});
  // Zero weights: color = relu(0) = 0, raw opacity 0 -> sigma = 1 after exp.
  for (std::int64_t i = 0; i < out.color.size(); ++i) CHECK(out.color.at(i) == 0.0);
  for (int i = 0; i < m; ++i) CHECK(std::exp(out.sigma_raw.at(i)) == doctest::Approx(1.0));

  model.init_params(Rng(31));
  MlpOutput r = model.scene_mlp(t, p_enc, v_enc, f, f);
  for (std::int64_t i = 0; i < r.color.size(); ++i) CHECK(r.color.at(i) >= 0.0);

  CHECK_THROWS_AS(model.scene_mlp(t, Tensor::zeros({m, 7}), v_enc, f, f), std::invalid_argument);
}

TEST_CASE("sigma gradient w.r.t. local features passes grad_check") {
  RunConfig cfg = tiny_config();
  Model model(cfg);
  model.init_params(Rng(41));
  ParamStore ps;
  ps.add("f", Tensor::from({2, cfg.f_loc}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8}, true));
  Rng rng(7);
  std::vector<double> pe(static_cast<size_t>(2) * model.p_enc_width());
  for (double& x : pe) x = rng.uniform(-1, 1);
  Tensor p_enc = Tensor::from({2, model.p_enc_width()}, std::move(pe));
  Tensor v_enc = Tensor::zeros({2, model.v_enc_width()});
  auto f = [&](Tape& t, const ParamStore& p) {
    MlpOutput out = model.scene_mlp(t, p_enc, v_enc, p.get("f"), p.get("f"));
    Tensor sig = t.exp(out.sigma_raw);
    return t.reduce_sum(sig);
  };
  CHECK(grad_check(f, ps, 1e-5, 1e-4).passed);
}

TEST_CASE("global MLP variant matches parameter count within 10%") {
  RunConfig local_cfg = tiny_config();
  RunConfig global_cfg = tiny_config();
  global_cfg.conditioning = "global";
  Model local(local_cfg);
  Model global(global_cfg);
  std::int64_t n_local = local.count_params("mlp.");
  std::int64_t n_global = global.count_params("gmlp.");
  CHECK(n_local > 0);
  CHECK(n_global > 0);
  CHECK(std::fabs(static_cast<double>(n_global - n_local)) <= 0.1 * static_cast<double>(n_local));

  // Same input/output arity as scene_mlp.
  global.init_params(Rng(51));
  Tape t;
  int m = 4;
  Tensor p_enc = Tensor::zeros({m, global.p_enc_width()});
  Tensor v_enc = Tensor::zeros({m, global.v_enc_width()});
  Tensor z_rows = t.expand_rows(Tensor::zeros({global_cfg.z_dim}), m);
  MlpOutput out = global.scene_mlp_global(t, p_enc, v_enc, z_rows);
  CHECK(out.color.shape() == Shape{m, 3});
  CHECK(out.sigma_raw.shape() == Shape{m, 1});

  // Zero-weight network behaves like scene_mlp's trivial case.
  Model zero(global_cfg);
  MlpOutput z_out = zero.scene_mlp_global(t, p_enc, v_enc, z_rows);
  for (std::int64_t i = 0; i < z_out.color.size(); ++i) CHECK(z_out.color.at(i) == 0.0);
}

TEST_CASE("positional encoding components stay in [-1,1]") {
  Tape t;
  Rng rng(61);
  std::vector<double> v(30);
  for (double& x : v) x = rng.uniform(-1, 1);
  Tensor enc = t.positional_encoding(Tensor::from({10, 3}, std::move(v)), 6);
  for (std::int64_t i = 0; i < enc.size(); ++i) {
    CHECK(enc.at(i) <= 1.0);
    CHECK(enc.at(i) >= -1.0);
  }
}

TEST_CASE("architecture tables drive the real desk-scale compute shapes") {
  // The symbolic trace and the actual tensors agree at desk scale.
  RunConfig cfg = tiny_config();
  Model model(cfg);
  model.init_params(Rng(71));
  auto rows = model.encoder_trace();
  Tape t(false);
  Tensor h = Tensor::zeros({9, cfg.enc_h, cfg.enc_w});
  for (size_t i = 0; i < cfg.enc_channels.size(); ++i) {
    h = t.conv2d_s2(h, model.params().get("enc.conv" + std::to_string(i) + ".w"),
                    model.params().get("enc.conv" + std::to_string(i) + ".b"));
    CHECK(h.shape() == rows[i].out);
  }
  CHECK(h.dim(1) == 4);
  CHECK(h.dim(2) == 2);
}

TEST_SUITE_END();
