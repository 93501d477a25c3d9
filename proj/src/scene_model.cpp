#include "crfd/scene_model.hpp"

#include <cmath>
#include <stdexcept>

namespace crfd {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Parameter counts of the refinement MLP as a function of conditioning
// width; used to match the global-code variant to the local one.
std::int64_t mlp_param_count(int width, int trunk_layers, int color_layers, int p_enc, int v_enc,
                             int cond) {
  std::int64_t w = width;
  std::int64_t n = 0;
  n += (p_enc + cond) * w + w;                      // trunk in
  n += static_cast<std::int64_t>(trunk_layers - 1) * (w * w + w);
  n += w + 1;                                       // sigma head
  n += (w + v_enc + cond) * w + w;                  // color in
  n += static_cast<std::int64_t>(color_layers - 1) * (w * w + w);
  n += w * 3 + 3;                                   // rgb head
  return n;
}

}  // namespace

Tensor reparameterize(Tape& t, const LatentDistribution& dist, const Tensor& noise) {
  if (noise.shape() != dist.mu.shape())
    throw std::invalid_argument("reparameterize: noise length " + shape_str(noise.shape()) +
                                " does not match mu " + shape_str(dist.mu.shape()));
  return t.add(dist.mu, t.mul(dist.sigma(t), noise));
}

Model::Model(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.mlp_trunk_layers < 1 || cfg_.mlp_color_layers < 1)
    throw std::invalid_argument("mlp needs at least one trunk and one color layer");
  // Match the global variant's parameter count to the local MLP.
  width_global_ = cfg_.mlp_width_global;
  if (width_global_ == 0) {
    std::int64_t target = mlp_param_count(cfg_.mlp_width, cfg_.mlp_trunk_layers,
                                          cfg_.mlp_color_layers, p_enc_width(), v_enc_width(),
                                          cfg_.f_loc);
    std::int64_t best_diff = -1;
    for (int w = 1; w <= 1024; ++w) {
      std::int64_t diff = std::llabs(mlp_param_count(w, cfg_.mlp_trunk_layers, cfg_.mlp_color_layers,
                                                     p_enc_width(), v_enc_width(), cfg_.z_dim) -
                                     target);
      if (best_diff < 0 || diff < best_diff) {
        best_diff = diff;
        width_global_ = w;
      }
    }
  }
  declare_params();
}

void Model::declare_dense(const std::string& name, int out_dim, int in_dim) {
  shapes_.emplace_back(name + ".w", Shape{out_dim, in_dim});
  shapes_.emplace_back(name + ".b", Shape{out_dim});
}

void Model::declare_conv3d(const std::string& name, int cin, int cout) {
  shapes_.emplace_back(name + ".w", Shape{cin, cout, 4, 4, 4});
  shapes_.emplace_back(name + ".b", Shape{cout});
}

void Model::declare_params() {
  // Image encoder.
  int c = 9;
  for (size_t i = 0; i < cfg_.enc_channels.size(); ++i) {
    std::string name = "enc.conv" + std::to_string(i);
    shapes_.emplace_back(name + ".w", Shape{cfg_.enc_channels[i], c, 4, 4});
    shapes_.emplace_back(name + ".b", Shape{cfg_.enc_channels[i]});
    c = cfg_.enc_channels[i];
  }
  declare_dense("enc.fc", cfg_.enc_fc, c * 4 * 2);
  declare_dense("enc.mu", cfg_.z_dim, cfg_.enc_fc);
  declare_dense("enc.logsigma", cfg_.z_dim, cfg_.enc_fc);

  // Volume decoder: opacity and color decoders, each with parallel
  // main/feature transposed-conv stacks off a shared reshaped input.
  auto declare_decoder = [this](const std::string& d, int n_in, int main_out) {
    declare_dense("dec." + d + ".fc", cfg_.dec_fc, n_in);
    for (const char* stack : {"main", "feat"}) {
      int cin = cfg_.dec_fc;
      int out_ch = std::string(stack) == "main" ? main_out : cfg_.f_loc;
      for (size_t i = 0; i < cfg_.dec_channels.size(); ++i) {
        declare_conv3d("dec." + d + "." + stack + ".conv" + std::to_string(i), cin,
                       cfg_.dec_channels[i]);
        cin = cfg_.dec_channels[i];
      }
      declare_conv3d("dec." + d + "." + stack + ".conv" + std::to_string(cfg_.dec_channels.size()),
                     cin, out_ch);
    }
  };
  declare_decoder("opacity", cfg_.z_dim, 1);
  declare_decoder("color", cfg_.z_dim + 3, 3);

  // Keypoint encoder.
  c = 2;
  for (size_t i = 0; i < cfg_.kps_conv.size(); ++i) {
    declare_dense("kps.conv" + std::to_string(i), cfg_.kps_conv[i], c);
    c = cfg_.kps_conv[i];
  }
  for (size_t i = 0; i < cfg_.kps_fc.size(); ++i) {
    declare_dense("kps.fc" + std::to_string(i), cfg_.kps_fc[i], c);
    c = cfg_.kps_fc[i];
  }

  // Refinement MLP for the active conditioning mode.
  bool global = global_conditioning();
  std::string prefix = global ? "gmlp" : "mlp";
  int width = global ? width_global_ : cfg_.mlp_width;
  int cond = global ? cfg_.z_dim : cfg_.f_loc;
  declare_dense(prefix + ".trunk0", width, p_enc_width() + cond);
  for (int i = 1; i < cfg_.mlp_trunk_layers; ++i)
    declare_dense(prefix + ".trunk" + std::to_string(i), width, width);
  declare_dense(prefix + ".sigma", 1, width);
  declare_dense(prefix + ".color0", width, width + v_enc_width() + cond);
  for (int i = 1; i < cfg_.mlp_color_layers; ++i)
    declare_dense(prefix + ".color" + std::to_string(i), width, width);
  declare_dense(prefix + ".rgb", 3, width);

  for (const auto& [name, shape] : shapes_) params_.add(name, Tensor::zeros(shape, true));
}

void Model::init_params(const Rng& rng) {
  for (const auto& [name, shape] : shapes_) {
    if (name.size() >= 2 && name.substr(name.size() - 2) == ".b") {
      params_.set(name, Tensor::zeros(shape, true));
      continue;
    }
    std::int64_t fan_in = 0;
    if (shape.size() == 2) fan_in = shape[1];                       // dense [out,in]
    else if (shape.size() == 4) fan_in = shape[1] * 16;             // conv2d [cout,cin,4,4]
    else if (shape.size() == 5) fan_in = shape[0] * 64;             // convT3d [cin,cout,4,4,4]
    else throw std::logic_error("unexpected parameter shape for " + name);
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng r = rng.derive(fnv1a(name));
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = r.uniform(-bound, bound);
    params_.set(name, Tensor::from(shape, std::move(v), true));
  }
}

std::int64_t Model::count_params(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_)
    if (name.rfind(prefix, 0) == 0) n += t.size();
  return n;
}

Tensor Model::dense(Tape& t, const Tensor& x, const std::string& name) const {
  return t.linear(x, params_.get(name + ".w"), params_.get(name + ".b"));
}

LatentDistribution Model::encode(Tape& t, const Tensor& views) const {
  if (views.rank() != 3 || views.dim(0) != 9 || views.dim(1) != cfg_.enc_h ||
      views.dim(2) != cfg_.enc_w)
    throw std::invalid_argument("encoder expects views [9," + std::to_string(cfg_.enc_h) + "," +
                                std::to_string(cfg_.enc_w) + "], got " + shape_str(views.shape()));
  Tensor h = views;
  for (size_t i = 0; i < cfg_.enc_channels.size(); ++i) {
    std::string name = "enc.conv" + std::to_string(i);
    h = t.leaky_relu(t.conv2d_s2(h, params_.get(name + ".w"), params_.get(name + ".b")), 0.2);
  }
  h = t.reshape(h, {1, h.dim(0) * h.dim(1) * h.dim(2)});
  h = t.leaky_relu(dense(t, h, "enc.fc"), 0.2);
  LatentDistribution dist;
  dist.mu = t.reshape(dense(t, h, "enc.mu"), {cfg_.z_dim});
  dist.log_sigma = t.reshape(dense(t, h, "enc.logsigma"), {cfg_.z_dim});
  return dist;
}

Tensor Model::keypoint_encode(Tape& t, const Tensor& points) const {
  if (points.rank() != 2 || points.dim(0) != 2)
    throw std::invalid_argument("keypoint encoder expects points [2,K], got " +
                                shape_str(points.shape()));
  if (points.dim(1) < 1) throw std::invalid_argument("keypoint encoder requires K >= 1 points");
  Tensor h = t.transpose2d(points);  // [K,2]; 1x1 convs act per point
  for (size_t i = 0; i < cfg_.kps_conv.size(); ++i)
    h = t.relu(dense(t, h, "kps.conv" + std::to_string(i)));
  Tensor pooled = t.maxpool_over_points(t.transpose2d(h));  // [C]
  Tensor z = pooled;
  for (size_t i = 0; i < cfg_.kps_fc.size(); ++i) {
    z = dense(t, z, "kps.fc" + std::to_string(i));
    if (i + 1 < cfg_.kps_fc.size()) z = t.relu(z);
  }
  return z;
}

Tensor Model::conv_stack3d(Tape& t, const Tensor& h0, const std::string& prefix, int) const {
  Tensor h = h0;
  size_t layers = cfg_.dec_channels.size() + 1;
  for (size_t i = 0; i < layers; ++i) {
    std::string name = prefix + ".conv" + std::to_string(i);
    h = t.conv_transpose3d_s2(h, params_.get(name + ".w"), params_.get(name + ".b"));
    if (i + 1 < layers) h = t.leaky_relu(h, 0.2);
  }
  return h;
}

VoxelField Model::decode(Tape& t, const Tensor& z, const Vec3& view) const {
  if (z.rank() != 1 || z.dim(0) != cfg_.z_dim)
    throw std::invalid_argument("decode expects z of length " + std::to_string(cfg_.z_dim) +
                                ", got " + shape_str(z.shape()));
  if (std::fabs(view.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("decode requires a unit view vector, |v| = " +
                                std::to_string(view.norm()));

  Tensor view_t = Tensor::from({3}, {view.x, view.y, view.z});
  Tensor color_in = t.concat({z, view_t}, 0);

  auto run_decoder = [&](const std::string& d, const Tensor& input, Tensor& main, Tensor& feat) {
    Tensor h = t.leaky_relu(dense(t, input, "dec." + d + ".fc"), 0.2);
    Tensor h0 = t.reshape(h, {cfg_.dec_fc, 1, 1, 1});
    main = conv_stack3d(t, h0, "dec." + d + ".main", 0);
    feat = conv_stack3d(t, h0, "dec." + d + ".feat", 0);
  };
  Tensor op_main, op_feat, col_main, col_feat;
  run_decoder("opacity", z, op_main, op_feat);
  run_decoder("color", color_in, col_main, col_feat);
  col_main = t.relu(col_main);  // coarse color is non-negative

  VoxelField field;
  field.grid = t.concat({col_main, op_main, op_feat, col_feat}, 0);
  field.world_extent = default_scene_bounds();
  field.f_loc = cfg_.f_loc;
  return field;
}

MlpOutput Model::mlp_common(Tape& t, const Tensor& p_enc, const Tensor& v_enc,
                            const Tensor& cond_trunk, const Tensor& cond_color,
                            const std::string& prefix, int) const {
  Tensor h = t.concat({p_enc, cond_trunk}, 1);
  for (int i = 0; i < cfg_.mlp_trunk_layers; ++i)
    h = t.relu(dense(t, h, prefix + ".trunk" + std::to_string(i)));
  MlpOutput out;
  out.sigma_raw = dense(t, h, prefix + ".sigma");  // no nonlinearity
  Tensor hc = t.concat({h, v_enc, cond_color}, 1);
  for (int i = 0; i < cfg_.mlp_color_layers; ++i)
    hc = t.relu(dense(t, hc, prefix + ".color" + std::to_string(i)));
  out.color = t.relu(dense(t, hc, prefix + ".rgb"));
  return out;
}

MlpOutput Model::scene_mlp(Tape& t, const Tensor& p_enc, const Tensor& v_enc,
                           const Tensor& f_local, const Tensor& f_view) const {
  return mlp_common(t, p_enc, v_enc, f_local, f_view, "mlp", cfg_.mlp_width);
}

MlpOutput Model::scene_mlp_global(Tape& t, const Tensor& p_enc, const Tensor& v_enc,
                                  const Tensor& z_rows) const {
  return mlp_common(t, p_enc, v_enc, z_rows, z_rows, "gmlp", width_global_);
}

std::vector<LayerTrace> Model::encoder_trace() const {
  std::vector<LayerTrace> rows;
  int c = 9, h = cfg_.enc_h, w = cfg_.enc_w;
  for (size_t i = 0; i < cfg_.enc_channels.size(); ++i) {
    rows.push_back({"Conv2d(" + std::to_string(c) + ", " + std::to_string(cfg_.enc_channels[i]) + ")",
                    {c, h, w},
                    {cfg_.enc_channels[i], h / 2, w / 2}});
    c = cfg_.enc_channels[i];
    h /= 2;
    w /= 2;
  }
  rows.push_back({"Flatten()", {c, h, w}, {c * h * w}});
  rows.push_back({"Linear(" + std::to_string(c * h * w) + ", " + std::to_string(cfg_.enc_fc) + ")",
                  {c * h * w},
                  {cfg_.enc_fc}});
  rows.push_back({"Linear(" + std::to_string(cfg_.enc_fc) + ", " + std::to_string(cfg_.z_dim) +
                      ") x2",
                  {cfg_.enc_fc},
                  {cfg_.z_dim}});
  return rows;
}

std::vector<LayerTrace> Model::decoder_trace(bool color_branch) const {
  std::vector<LayerTrace> rows;
  int n_in = color_branch ? cfg_.z_dim + 3 : cfg_.z_dim;
  int main_out = color_branch ? 3 : 1;
  rows.push_back({"Linear(" + std::to_string(n_in) + ", " + std::to_string(cfg_.dec_fc) + ")",
                  {n_in},
                  {cfg_.dec_fc}});
  rows.push_back({"Reshape(" + std::to_string(cfg_.dec_fc) + ", 1, 1, 1)",
                  {cfg_.dec_fc},
                  {cfg_.dec_fc, 1, 1, 1}});
  size_t layers = cfg_.dec_channels.size() + 1;
  int cin = cfg_.dec_fc, d = 1;
  for (size_t i = 0; i < layers; ++i) {
    int main_c = i + 1 < layers ? cfg_.dec_channels[i] : main_out;
    int feat_c = i + 1 < layers ? cfg_.dec_channels[i] : cfg_.f_loc;
    rows.push_back({"ConvTrans3d(" + std::to_string(cin) + ", " + std::to_string(main_c) + ") | " +
                        "ConvTrans3d(" + std::to_string(cin) + ", " + std::to_string(feat_c) + ")",
                    {cin, d, d, d},
                    {main_c, 2 * d, 2 * d, 2 * d}});
    cin = i + 1 < layers ? cfg_.dec_channels[i] : cin;
    d *= 2;
  }
  return rows;
}

std::vector<LayerTrace> Model::keypoint_trace() const {
  std::vector<LayerTrace> rows;
  int c = 2;
  for (int w : cfg_.kps_conv) {
    rows.push_back({"Conv1d(" + std::to_string(c) + ", " + std::to_string(w) + ")", {c, -1}, {w, -1}});
    c = w;
  }
  rows.push_back({"MaxPool1d()", {c, -1}, {c}});
  rows.push_back({"Flatten()", {c}, {c}});
  for (int w : cfg_.kps_fc) {
    rows.push_back({"Linear(" + std::to_string(c) + ", " + std::to_string(w) + ")", {c}, {w}});
    c = w;
  }
  return rows;
}

}  // namespace crfd
