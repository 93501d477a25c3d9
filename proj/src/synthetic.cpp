#include "crfd/synthetic.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace crfd {

namespace {
constexpr double kTau = 2.0 * 3.14159265358979323846;

std::string cam_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "cam%03d", i);
  return buf;
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", i);
  return buf;
}
}  // namespace

Vec3 Blob::center(double t) const {
  return {base.x + amplitude.x * std::sin(kTau * (frequency.x * t + phase.x)),
          base.y + amplitude.y * std::sin(kTau * (frequency.y * t + phase.y)),
          base.z + amplitude.z * std::sin(kTau * (frequency.z * t + phase.z))};
}

Vec3 Blob::color(double t) const {
  double s = 0.5 + 0.5 * std::sin(kTau * (t + color_phase));
  return color_a * (1.0 - s) + color_b * s;
}

SyntheticScene SyntheticScene::make(int n_blobs, std::uint64_t scene_seed, const Vec3& background) {
  if (n_blobs < 1) throw std::invalid_argument("scene requires at least one blob");
  SyntheticScene scene;
  scene.background = background;
  Rng rng = Rng(scene_seed).derive(rng_tag::kScene);
  for (int b = 0; b < n_blobs; ++b) {
    Rng r = rng.derive(static_cast<std::uint64_t>(b));
    Blob blob;
    blob.radius = r.uniform(0.055, 0.085);
    blob.peak_density = r.uniform(35.0, 55.0);
    double margin = 0.25 - blob.radius - 0.01;
    for (int a = 0; a < 3; ++a) {
      double amp = r.uniform(0.04, 0.09);
      double base = r.uniform(-(margin - amp), margin - amp);
      double phase = r.uniform(0.0, 1.0);
      double freq = r.next_below(2) ? 1.0 : 0.5;
      if (a == 0) {
        blob.amplitude.x = amp; blob.base.x = base; blob.phase.x = phase; blob.frequency.x = freq;
      } else if (a == 1) {
        blob.amplitude.y = amp; blob.base.y = base; blob.phase.y = phase; blob.frequency.y = freq;
      } else {
        blob.amplitude.z = amp; blob.base.z = base; blob.phase.z = phase; blob.frequency.z = freq;
      }
    }
    blob.color_a = {r.uniform(0.15, 0.95), r.uniform(0.15, 0.95), r.uniform(0.15, 0.95)};
    blob.color_b = {r.uniform(0.15, 0.95), r.uniform(0.15, 0.95), r.uniform(0.15, 0.95)};
    blob.color_phase = r.uniform(0.0, 1.0);
    scene.blobs.push_back(blob);
  }
  scene.validate();
  return scene;
}

SyntheticScene SyntheticScene::from_config(const RunConfig& cfg) {
  return make(cfg.n_blobs, cfg.scene_seed,
              Vec3{cfg.background[0], cfg.background[1], cfg.background[2]});
}

void SyntheticScene::validate() const {
  for (size_t b = 0; b < blobs.size(); ++b) {
    const Blob& blob = blobs[b];
    // |base| + |amplitude| bounds the center for every t.
    Vec3 extreme{std::fabs(blob.base.x) + std::fabs(blob.amplitude.x),
                 std::fabs(blob.base.y) + std::fabs(blob.amplitude.y),
                 std::fabs(blob.base.z) + std::fabs(blob.amplitude.z)};
    if (!bounds.contains(extreme) || !bounds.contains(-extreme))
      throw std::invalid_argument("blob " + std::to_string(b) + " can leave the scene bounds");
    if (!(blob.radius > 0) || !(blob.peak_density >= 0))
      throw std::invalid_argument("blob " + std::to_string(b) + " has invalid radius/density");
  }
}

std::pair<double, Vec3> scene_density_color(const SyntheticScene& scene, const Vec3& p, double t) {
  if (t < 0.0 || t > 1.0)
    throw std::invalid_argument("scene time " + std::to_string(t) + " outside [0,1]");
  double total = 0;
  Vec3 color{0, 0, 0};
  for (const Blob& b : scene.blobs) {
    Vec3 d = p - b.center(t);
    double s = b.radius * 0.5;
    double sigma = b.peak_density * std::exp(-d.dot(d) / (2.0 * s * s));
    total += sigma;
    color = color + b.color(t) * sigma;
  }
  if (total < 1e-12) {
    Vec3 mean{0, 0, 0};
    for (const Blob& b : scene.blobs) mean = mean + b.color(t);
    return {total, mean * (1.0 / static_cast<double>(scene.blobs.size()))};
  }
  return {total, color * (1.0 / total)};
}

Image8 oracle_render(const SyntheticScene& scene, const Camera& cam, double t, int n_samples) {
  if (n_samples < 64) throw std::invalid_argument("oracle_render requires n_samples >= 64");
  cam.validate();
  Image8 img;
  img.width = cam.width;
  img.height = cam.height;
  img.rgb.resize(static_cast<size_t>(cam.width) * cam.height * 3);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      size_t px = static_cast<size_t>(y) * cam.width + x;
      Vec3 out = scene.background;
      auto ray = generate_ray(cam, x, y, scene.bounds);
      if (ray) {
        double h = (ray->d_max - ray->d_min) / n_samples;
        double transmittance = 1.0;
        Vec3 accum{0, 0, 0};
        double alpha_total = 0;
        for (int i = 0; i < n_samples; ++i) {
          double d = ray->d_min + (i + 0.5) * h;
          double delta = i + 1 < n_samples ? h : ray->d_max - d;  // terminal convention
          auto [sigma, color] = scene_density_color(scene, ray->at(d), t);
          double a = 1.0 - std::exp(-sigma * delta);
          accum = accum + color * (transmittance * a);
          alpha_total += transmittance * a;
          transmittance *= std::exp(-sigma * delta);
        }
        out = accum + scene.background * (1.0 - alpha_total);
      }
      img.rgb[px * 3 + 0] = quantize8(out.x);
      img.rgb[px * 3 + 1] = quantize8(out.y);
      img.rgb[px * 3 + 2] = quantize8(out.z);
    }
  return img;
}

CameraSplit place_cameras(const RunConfig& cfg) {
  int total = cfg.n_train_cams + cfg.n_test_cams;
  if (cfg.n_test_cams > 0 && cfg.n_test_cams > total)
    throw std::invalid_argument("place_cameras: inconsistent camera counts");
  CameraSplit split;
  const double golden = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < total; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / total;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = golden * i;
    Vec3 pos = Vec3{r * std::cos(a), r * std::sin(a), z} * cfg.cam_radius;
    split.cameras.push_back(make_look_at_camera(cam_name(i), pos, Vec3{0, 0, 0}, Vec3{0, 0, 1},
                                                cfg.fov_deg, cfg.img_w, cfg.img_h));
  }
  int stride = std::max(1, total / cfg.n_test_cams);
  std::vector<bool> is_test(static_cast<size_t>(total), false);
  for (int k = 0; k < cfg.n_test_cams; ++k) {
    int idx = (k + 1) * stride - 1;
    if (idx >= total) throw std::invalid_argument("place_cameras: test split does not fit");
    is_test[static_cast<size_t>(idx)] = true;
  }
  for (int i = 0; i < total; ++i)
    (is_test[static_cast<size_t>(i)] ? split.test_indices : split.train_indices).push_back(i);
  if (static_cast<int>(split.train_indices.size()) != cfg.n_train_cams)
    throw std::invalid_argument("place_cameras: split sizes do not match the config");
  return split;
}

const Camera& Dataset::camera_by_id(const std::string& id) const {
  for (const Camera& c : cameras)
    if (c.id == id) return c;
  throw std::invalid_argument("unknown camera id '" + id + "'");
}

std::vector<FrameRecord> Dataset::records() const {
  std::vector<FrameRecord> out;
  for (int f = 0; f < n_frames; ++f)
    for (const Camera& cam : cameras) {
      FrameRecord rec;
      rec.frame_index = f;
      rec.camera_id = cam.id;
      rec.image_path = "frames/" + cam.id + "/" + frame_name(f) + ".ppm";
      rec.keypoints = keypoints[static_cast<size_t>(f)];
      out.push_back(std::move(rec));
    }
  return out;
}

void generate_dataset(const SyntheticScene& scene, const RunConfig& cfg,
                      const std::string& out_dir, int threads) {
  cfg.validate();
  scene.validate();
  CameraSplit split = place_cameras(cfg);

  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "keypoints");
  for (const Camera& cam : split.cameras)
    fs::create_directories(fs::path(out_dir) / "frames" / cam.id);

  // cameras.txt: id, 9 intrinsics, 12 pose entries ([R|t] row-major), w, h.
  {
    std::ofstream f(fs::path(out_dir) / "cameras.txt");
    if (!f) throw std::runtime_error("cannot write cameras.txt in '" + out_dir + "'");
    char buf[64];
    for (const Camera& cam : split.cameras) {
      f << cam.id;
      for (int i = 0; i < 9; ++i) {
        std::snprintf(buf, sizeof(buf), " %.17g", cam.intrinsics.m[i]);
        f << buf;
      }
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) {
          std::snprintf(buf, sizeof(buf), " %.17g", cam.rotation.m[row * 3 + col]);
          f << buf;
        }
        std::snprintf(buf, sizeof(buf), " %.17g", row == 0 ? cam.center.x : (row == 1 ? cam.center.y : cam.center.z));
        f << buf;
      }
      f << " " << cam.width << " " << cam.height << "\n";
    }
  }

  // Keypoints: blob centers projected into the canonical (first train) camera.
  const Camera& kps_cam = split.cameras[static_cast<size_t>(split.train_indices[0])];
  for (int frame = 0; frame < cfg.n_frames; ++frame) {
    double t = cfg.n_frames <= 1 ? 0.0 : static_cast<double>(frame) / (cfg.n_frames - 1);
    std::ofstream f(fs::path(out_dir) / "keypoints" / (frame_name(frame) + ".txt"));
    if (!f) throw std::runtime_error("cannot write keypoints for frame " + std::to_string(frame));
    char buf[96];
    for (const Blob& b : scene.blobs) {
      double u = 0, v = 0;
      if (!kps_cam.project(b.center(t), u, v))
        throw std::runtime_error("blob center behind the keypoint camera at frame " +
                                 std::to_string(frame));
      double xn = 2.0 * u / cfg.img_w - 1.0;
      double yn = 2.0 * v / cfg.img_h - 1.0;
      std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", xn, yn);
      f << buf;
    }
  }

  // Images, parallel over (frame, camera) pairs; each file is independent.
  struct Job {
    int frame;
    int cam;
  };
  std::vector<Job> jobs;
  for (int frame = 0; frame < cfg.n_frames; ++frame)
    for (size_t c = 0; c < split.cameras.size(); ++c) jobs.push_back({frame, static_cast<int>(c)});
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t j = next.fetch_add(1);
      if (j >= jobs.size()) break;
      const Job& job = jobs[j];
      double t = cfg.n_frames <= 1 ? 0.0 : static_cast<double>(job.frame) / (cfg.n_frames - 1);
      const Camera& cam = split.cameras[static_cast<size_t>(job.cam)];
      Image8 img = oracle_render(scene, cam, t, cfg.oracle_samples);
      write_ppm((fs::path(out_dir) / "frames" / cam.id / (frame_name(job.frame) + ".ppm")).string(),
                img);
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Manifest: config echo plus the split; everything the loader needs.
  {
    std::ofstream f(fs::path(out_dir) / "manifest.txt");
    if (!f) throw std::runtime_error("cannot write manifest.txt in '" + out_dir + "'");
    f << "crfd-dataset-manifest\n[config]\n" << cfg.to_text() << "[split]\n";
    f << "train =";
    for (int i : split.train_indices) f << " " << split.cameras[static_cast<size_t>(i)].id;
    f << "\ntest =";
    for (int i : split.test_indices) f << " " << split.cameras[static_cast<size_t>(i)].id;
    f << "\nkps_camera = " << kps_cam.id << "\n[end]\n";
  }
}

namespace {
std::vector<std::string> manifest_section(const std::vector<std::string>& lines,
                                          const std::string& name) {
  std::vector<std::string> out;
  bool in = false;
  for (const auto& l : lines) {
    if (l == "[" + name + "]") {
      in = true;
      continue;
    }
    if (in && !l.empty() && l[0] == '[') break;
    if (in) out.push_back(l);
  }
  return out;
}
}  // namespace

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  // Manifest.
  {
    std::ifstream f(fs::path(dir) / "manifest.txt");
    if (!f) throw std::runtime_error("'" + dir + "/manifest.txt': cannot open");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    if (lines.empty() || lines[0] != "crfd-dataset-manifest")
      throw std::runtime_error("'" + dir + "/manifest.txt': bad header");
    std::string cfg_text;
    for (const auto& l : manifest_section(lines, "config")) cfg_text += l + "\n";
    ds.config = RunConfig::from_text(cfg_text);
    auto split_lines = manifest_section(lines, "split");
    std::vector<std::string> train_ids, test_ids;
    for (const auto& l : split_lines) {
      std::istringstream ls(l);
      std::string key, eq;
      ls >> key >> eq;
      if (eq != "=") throw std::runtime_error("'" + dir + "/manifest.txt': malformed split line '" + l + "'");
      std::string tok;
      if (key == "train")
        while (ls >> tok) train_ids.push_back(tok);
      else if (key == "test")
        while (ls >> tok) test_ids.push_back(tok);
      else if (key == "kps_camera")
        ls >> ds.kps_camera_id;
      else
        throw std::runtime_error("'" + dir + "/manifest.txt': unknown split key '" + key + "'");
    }
    if (ds.kps_camera_id.empty())
      throw std::runtime_error("'" + dir + "/manifest.txt': missing kps_camera");
    ds.n_frames = ds.config.n_frames;

    // Cameras.
    std::ifstream cf(fs::path(dir) / "cameras.txt");
    if (!cf) throw std::runtime_error("'" + dir + "/cameras.txt': cannot open");
    std::string cl;
    while (std::getline(cf, cl)) {
      if (cl.empty()) continue;
      std::istringstream ls(cl);
      Camera cam;
      if (!(ls >> cam.id)) throw std::runtime_error("'" + dir + "/cameras.txt': malformed id in '" + cl + "'");
      for (int i = 0; i < 9; ++i)
        if (!(ls >> cam.intrinsics.m[i]))
          throw std::runtime_error("'" + dir + "/cameras.txt': camera '" + cam.id +
                                   "': bad intrinsics entry " + std::to_string(i));
      double pose[12];
      for (int i = 0; i < 12; ++i)
        if (!(ls >> pose[i]))
          throw std::runtime_error("'" + dir + "/cameras.txt': camera '" + cam.id +
                                   "': bad pose entry " + std::to_string(i));
      for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) cam.rotation.m[row * 3 + col] = pose[row * 4 + col];
      cam.center = {pose[3], pose[7], pose[11]};
      if (!(ls >> cam.width >> cam.height))
        throw std::runtime_error("'" + dir + "/cameras.txt': camera '" + cam.id +
                                 "': bad width/height");
      cam.validate();  // re-validates orthonormality on load
      ds.cameras.push_back(cam);
    }
    auto index_of = [&](const std::string& id) {
      for (size_t i = 0; i < ds.cameras.size(); ++i)
        if (ds.cameras[i].id == id) return static_cast<int>(i);
      throw std::runtime_error("'" + dir + "/manifest.txt': split references unknown camera '" + id + "'");
    };
    for (const auto& id : train_ids) ds.train_indices.push_back(index_of(id));
    for (const auto& id : test_ids) ds.test_indices.push_back(index_of(id));
    for (int i : ds.train_indices)
      for (int j : ds.test_indices)
        if (i == j) throw std::runtime_error("'" + dir + "/manifest.txt': train/test overlap");
  }

  // Images and keypoints.
  ds.images.resize(static_cast<size_t>(ds.n_frames));
  ds.keypoints.resize(static_cast<size_t>(ds.n_frames));
  for (int frame = 0; frame < ds.n_frames; ++frame) {
    ds.images[static_cast<size_t>(frame)].resize(ds.cameras.size());
    for (size_t c = 0; c < ds.cameras.size(); ++c) {
      std::string path =
          (fs::path(dir) / "frames" / ds.cameras[c].id / (frame_name(frame) + ".ppm")).string();
      Image8 img = read_ppm(path);
      if (img.width != ds.config.img_w || img.height != ds.config.img_h)
        throw std::runtime_error("'" + path + "': image is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + " but the manifest says " +
                                 std::to_string(ds.config.img_w) + "x" +
                                 std::to_string(ds.config.img_h));
      ds.images[static_cast<size_t>(frame)][c] = std::move(img);
    }
    std::string kpath = (fs::path(dir) / "keypoints" / (frame_name(frame) + ".txt")).string();
    std::ifstream kf(kpath);
    if (!kf) throw std::runtime_error("'" + kpath + "': cannot open");
    double x, y;
    while (kf >> x >> y) {
      if (!std::isfinite(x) || !std::isfinite(y))
        throw std::runtime_error("'" + kpath + "': non-finite keypoint");
      ds.keypoints[static_cast<size_t>(frame)].push_back({x, y});
    }
    if (ds.keypoints[static_cast<size_t>(frame)].empty())
      throw std::runtime_error("'" + kpath + "': no keypoints");
  }
  return ds;
}

}  // namespace crfd
