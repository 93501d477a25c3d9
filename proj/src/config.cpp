#include "crfd/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace crfd {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_same_v<T, double>)
      os << fmt_double(v[i]);
    else
      os << v[i];
  }
  return os.str();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

long long parse_ll(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long long r;
  try {
    r = std::stoll(v, &pos);
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
  return r;
}

double parse_d(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double r;
  try {
    r = std::stod(v, &pos);
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  return r;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto add_int = [&f](const std::string& k, int RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string& key, const std::string& v) {
                c.*m = static_cast<int>(parse_ll(key, v));
              },
              [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto add_u64 = [&f](const std::string& k, std::uint64_t RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string& key, const std::string& v) {
                c.*m = static_cast<std::uint64_t>(parse_ll(key, v));
              },
              [m](const RunConfig& c) { return std::to_string(c.*m); }};
    };
    auto add_double = [&f](const std::string& k, double RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string& key, const std::string& v) {
                c.*m = parse_d(key, v);
              },
              [m](const RunConfig& c) { return fmt_double(c.*m); }};
    };
    auto add_str = [&f](const std::string& k, std::string RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
              [m](const RunConfig& c) { return c.*m; }};
    };
    auto add_ivec = [&f](const std::string& k, std::vector<int> RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string& key, const std::string& v) {
                std::vector<int> out;
                for (const auto& tok : split_csv(v)) out.push_back(static_cast<int>(parse_ll(key, tok)));
                c.*m = std::move(out);
              },
              [m](const RunConfig& c) { return join(c.*m); }};
    };
    auto add_dvec = [&f](const std::string& k, std::vector<double> RunConfig::* m) {
      f[k] = {[m](RunConfig& c, const std::string& key, const std::string& v) {
                std::vector<double> out;
                for (const auto& tok : split_csv(v)) out.push_back(parse_d(key, tok));
                c.*m = std::move(out);
              },
              [m](const RunConfig& c) { return join(c.*m); }};
    };

    add_u64("seed", &RunConfig::seed);
    add_int("threads", &RunConfig::threads);
    add_int("z_dim", &RunConfig::z_dim);
    add_int("f_loc", &RunConfig::f_loc);
    add_int("grid_d", &RunConfig::grid_d);
    add_int("l_pos", &RunConfig::l_pos);
    add_int("l_view", &RunConfig::l_view);
    add_int("enc_h", &RunConfig::enc_h);
    add_int("enc_w", &RunConfig::enc_w);
    add_ivec("enc_channels", &RunConfig::enc_channels);
    add_int("enc_fc", &RunConfig::enc_fc);
    add_int("dec_fc", &RunConfig::dec_fc);
    add_ivec("dec_channels", &RunConfig::dec_channels);
    add_ivec("kps_conv", &RunConfig::kps_conv);
    add_ivec("kps_fc", &RunConfig::kps_fc);
    add_int("mlp_width", &RunConfig::mlp_width);
    add_int("mlp_trunk_layers", &RunConfig::mlp_trunk_layers);
    add_int("mlp_color_layers", &RunConfig::mlp_color_layers);
    add_int("mlp_width_global", &RunConfig::mlp_width_global);
    add_int("n_coarse", &RunConfig::n_coarse);
    add_int("n_fine", &RunConfig::n_fine);
    add_int("k_range_divisor", &RunConfig::k_range_divisor);
    add_dvec("background", &RunConfig::background);
    add_double("fov_deg", &RunConfig::fov_deg);
    add_str("sampling", &RunConfig::sampling);
    add_int("n_train_cams", &RunConfig::n_train_cams);
    add_int("n_test_cams", &RunConfig::n_test_cams);
    add_int("n_frames", &RunConfig::n_frames);
    add_int("img_w", &RunConfig::img_w);
    add_int("img_h", &RunConfig::img_h);
    add_double("cam_radius", &RunConfig::cam_radius);
    add_int("n_blobs", &RunConfig::n_blobs);
    add_u64("scene_seed", &RunConfig::scene_seed);
    add_int("oracle_samples", &RunConfig::oracle_samples);
    add_int("rays_per_batch", &RunConfig::rays_per_batch);
    add_int("max_iters", &RunConfig::max_iters);
    add_double("lr", &RunConfig::lr);
    add_double("beta1", &RunConfig::beta1);
    add_double("beta2", &RunConfig::beta2);
    add_double("adam_eps", &RunConfig::adam_eps);
    add_double("lambda_f", &RunConfig::lambda_f);
    add_double("lambda_c", &RunConfig::lambda_c);
    add_double("lambda_kl", &RunConfig::lambda_kl);
    add_double("beta_prior_eps", &RunConfig::beta_prior_eps);
    add_int("eval_every", &RunConfig::eval_every);
    add_int("ckpt_every", &RunConfig::ckpt_every);
    add_str("conditioning", &RunConfig::conditioning);
    add_int("distill_iters", &RunConfig::distill_iters);
    add_double("distill_lr", &RunConfig::distill_lr);
    add_str("data", &RunConfig::data);
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::paper_scale() {
  RunConfig c;
  c.z_dim = 256;
  c.f_loc = 32;
  c.grid_d = 64;
  c.enc_h = 512;
  c.enc_w = 256;
  c.enc_channels = {32, 64, 128, 128, 256, 256, 256};
  c.enc_fc = 512;
  c.dec_fc = 1024;
  c.dec_channels = {512, 512, 256, 256, 128};
  c.kps_conv = {64, 128, 256, 512, 1024};
  c.kps_fc = {512, 512, 256};
  c.n_coarse = 128;
  c.n_fine = 32;
  c.rays_per_batch = 64 * 64;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                                  line + "'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

void RunConfig::apply(const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [k, v] : overrides) set(k, v);
}

void RunConfig::validate() const {
  auto req = [](bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument("config: " + msg);
  };
  req(z_dim >= 1, "z_dim must be >= 1");
  req(f_loc >= 1, "f_loc must be >= 1");
  req(l_pos >= 1 && l_view >= 1, "l_pos and l_view must be >= 1");
  req(n_coarse >= 2, "n_coarse must be >= 2");
  req(n_fine >= 1, "n_fine must be >= 1");
  req(k_range_divisor >= 1, "k_range_divisor must be >= 1");
  req(background.size() == 3, "background must have 3 components");
  req(sampling == "ss" || sampling == "hs" || sampling == "coarse",
      "sampling must be ss|hs|coarse, got '" + sampling + "'");
  req(conditioning == "local" || conditioning == "global",
      "conditioning must be local|global, got '" + conditioning + "'");
  req(n_train_cams >= 1 && n_test_cams >= 1 && n_frames >= 1, "dataset counts must be >= 1");
  req(img_w >= 1 && img_h >= 1, "image dims must be >= 1");
  req(rays_per_batch >= 1, "rays_per_batch must be >= 1");
  req(threads >= 1, "threads must be >= 1");
  req(!kps_fc.empty() && kps_fc.back() == z_dim, "kps_fc must end at z_dim");
  req(!kps_conv.empty(), "kps_conv must not be empty");
  req(!enc_channels.empty(), "enc_channels must not be empty");
  // Encoder convolutions halve spatial dims until they reach 4x2.
  int h = enc_h, w = enc_w;
  for (size_t i = 0; i < enc_channels.size(); ++i) {
    req(h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0,
        "encoder layer " + std::to_string(i) + " sees odd spatial dims " + std::to_string(h) + "x" +
            std::to_string(w));
    h /= 2;
    w /= 2;
  }
  req(h == 4 && w == 2, "encoder must reduce " + std::to_string(enc_h) + "x" + std::to_string(enc_w) +
                            " to 4x2; it reaches " + std::to_string(h) + "x" + std::to_string(w));
  // Decoder transposed convolutions double 1^3 up to grid_d^3.
  int layers = static_cast<int>(dec_channels.size()) + 1;
  req(grid_d == (1 << layers), "dec_channels implies grid resolution " +
                                   std::to_string(1 << layers) + " but grid_d is " +
                                   std::to_string(grid_d));
  req(n_blobs >= 1, "n_blobs must be >= 1");
  req(oracle_samples >= 64, "oracle_samples must be >= 64");
  req(lambda_f >= 0 && lambda_c >= 0 && lambda_kl >= 0, "loss weights must be >= 0");
  req(fov_deg > 1 && fov_deg < 179, "fov_deg out of range");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, fld] : fields()) os << k << " = " << fld.get(*this) << "\n";
  return os.str();
}

void RunConfig::write_echo(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config echo '" + path + "'");
  f << to_text();
}

}  // namespace crfd
