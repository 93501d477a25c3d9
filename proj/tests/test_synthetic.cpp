#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crfd/metrics.hpp"
#include "crfd/synthetic.hpp"
#include "test_util.hpp"

using namespace crfd;
using crfd_test::tiny_config;
namespace fs = std::filesystem;

namespace {
std::string temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("crfd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}
}  // namespace

TEST_SUITE_BEGIN("synthetic");

TEST_CASE("density peaks at a blob center and decays far away") {
  SyntheticScene scene;
  Blob b;
  b.base = {0.05, 0, 0};
  b.amplitude = {0, 0, 0};
  b.radius = 0.08;
  b.peak_density = 42.0;
  b.color_a = b.color_b = {0.9, 0.1, 0.2};
  scene.blobs.push_back(b);
  auto [sigma, color] = scene_density_color(scene, {0.05, 0, 0}, 0.0);
  CHECK(sigma == doctest::Approx(42.0));
  CHECK(color.x == doctest::Approx(0.9));
  auto [far, far_color] = scene_density_color(scene, {10, 10, 10}, 0.0);
  CHECK(far < 1e-6 * 42.0);
  CHECK_THROWS_AS(scene_density_color(scene, {0, 0, 0}, 1.5), std::invalid_argument);
}

TEST_CASE("two equal overlapping blobs blend colors at the midpoint") {
  SyntheticScene scene;
  Blob a, b;
  a.base = {-0.05, 0, 0};
  b.base = {0.05, 0, 0};
  a.amplitude = b.amplitude = {0, 0, 0};
  a.radius = b.radius = 0.08;
  a.peak_density = b.peak_density = 40.0;
  a.color_a = a.color_b = {1.0, 0.0, 0.0};
  b.color_a = b.color_b = {0.0, 0.0, 1.0};
  scene.blobs = {a, b};
  auto [sigma, color] = scene_density_color(scene, {0, 0, 0}, 0.0);
  CHECK(color.x == doctest::Approx(0.5));
  CHECK(color.z == doctest::Approx(0.5));
  CHECK(sigma > 0.0);
}

TEST_CASE("default scene blobs stay inside the bounds") {
  SyntheticScene scene = SyntheticScene::make(5, 123, {0, 0, 0});
  for (int i = 0; i <= 100; ++i) {
    double t = i / 100.0;
    for (const Blob& b : scene.blobs) CHECK(scene.bounds.contains(b.center(t)));
  }
}

TEST_CASE("cameras sit on the sphere and look at the origin") {
  RunConfig cfg = tiny_config();
  CameraSplit split = place_cameras(cfg);
  REQUIRE(split.cameras.size() == 6);
  for (const Camera& cam : split.cameras) {
    CHECK(std::fabs(cam.center.norm() - 1.0) < 1e-12);
    // Optical axis points at the origin.
    Vec3 axis = cam.optical_axis();
    CHECK(axis.dot(-cam.center) == doctest::Approx(cam.center.norm()).epsilon(1e-9));
  }
  // Disjoint split covering all cameras.
  CHECK(split.train_indices.size() == 4);
  CHECK(split.test_indices.size() == 2);
  for (int i : split.train_indices)
    for (int j : split.test_indices) CHECK(i != j);
}

TEST_CASE("pixel at the principal point looks along the optical axis") {
  Camera cam = make_look_at_camera("c", Vec3{1, 0.2, 0.3}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 50, 9, 9);
  // Odd dimensions put a pixel center exactly on the principal point.
  Vec3 d = cam.pixel_direction(4, 4);
  Vec3 axis = cam.optical_axis();
  CHECK(d.dot(axis) == doctest::Approx(1.0).epsilon(1e-12));

  // A camera rotated 180 degrees has the negated axis.
  Camera flipped =
      make_look_at_camera("f", Vec3{-1, -0.2, -0.3}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 50, 9, 9);
  CHECK(flipped.optical_axis().dot(axis) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("slab depths match a bisection oracle on random rays") {
  Box3 bounds{{-0.25, -0.25, -0.25}, {0.25, 0.25, 0.25}};
  Camera cam = make_look_at_camera("c", Vec3{0.9, 0.3, 0.2}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 60, 32, 32);
  Rng rng(7);
  auto inside = [&](const Vec3& p) { return bounds.contains(p); };
  int tested = 0;
  for (int trial = 0; trial < 400 && tested < 100; ++trial) {
    double px = rng.uniform(0, 32), py = rng.uniform(0, 32);
    auto ray = generate_ray(cam, px, py, bounds);
    if (!ray) continue;
    ++tested;
    // Bisection oracle on the inside() predicate.
    Vec3 o = cam.center;
    Vec3 d = cam.pixel_direction(px, py);
    auto crossing = [&](double lo, double hi) {
      for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (inside(o + d * mid) != inside(o + d * lo))
          hi = mid;
        else
          lo = mid;
      }
      return 0.5 * (lo + hi);
    };
    // Scan for the inside interval.
    double t_in = -1, t_out = -1;
    bool was_inside = false;
    double prev = 1e-3;
    for (int i = 1; i <= 4096; ++i) {
      double t = 3.0 * i / 4096;
      bool now = inside(o + d * t);
      if (now && !was_inside) t_in = crossing(prev, t);
      if (!now && was_inside) t_out = crossing(prev, t);
      was_inside = now;
      prev = t;
    }
    REQUIRE(t_in >= 0);
    REQUIRE(t_out >= 0);
    CHECK(std::fabs(ray->d_min - std::max(t_in, kMinRayDepth)) < 1e-9);
    CHECK(std::fabs(ray->d_max - t_out) < 1e-9);
  }
  CHECK(tested == 100);
}

TEST_CASE("oracle: empty scene renders pure background") {
  SyntheticScene scene;
  scene.background = {0.3, 0.6, 0.9};
  Blob b;
  b.peak_density = 0.0;
  b.amplitude = {0, 0, 0};
  scene.blobs.push_back(b);
  Camera cam = make_look_at_camera("c", Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 50, 8, 8);
  Image8 img = oracle_render(scene, cam, 0.0, 64);
  for (size_t i = 0; i < img.rgb.size(); i += 3) {
    CHECK(img.rgb[i] == quantize8(0.3));
    CHECK(img.rgb[i + 1] == quantize8(0.6));
    CHECK(img.rgb[i + 2] == quantize8(0.9));
  }
  CHECK_THROWS_AS(oracle_render(scene, cam, 0.0, 32), std::invalid_argument);
}

TEST_CASE("oracle self-convergence when doubling the sample count") {
  RunConfig cfg = tiny_config();
  SyntheticScene scene = SyntheticScene::from_config(cfg);
  Camera cam = make_look_at_camera("c", Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 55, 24, 24);
  Image8 a = oracle_render(scene, cam, 0.5, 512);
  Image8 b = oracle_render(scene, cam, 0.5, 1024);
  int max_diff = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<int>(a.rgb[i]) - static_cast<int>(b.rgb[i])));
  CHECK(max_diff <= 1);  // < 0.5/255 before quantization allows 1 count of rounding

  // Convergence halves (within factor 3) as samples double.
  Image8 c128 = oracle_render(scene, cam, 0.5, 128);
  Image8 c256 = oracle_render(scene, cam, 0.5, 256);
  double d1 = 0, d2 = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    d1 = std::max(d1, std::fabs(static_cast<double>(c128.rgb[i]) - c256.rgb[i]));
    d2 = std::max(d2, std::fabs(static_cast<double>(c256.rgb[i]) - b.rgb[i]));
  }
  if (d2 > 1.0) CHECK(d1 >= d2 / 3.0);
}

TEST_CASE("oracle: centered opaque blob renders radially symmetric") {
  SyntheticScene scene;
  scene.background = {0, 0, 0};
  Blob b;
  b.base = {0, 0, 0};
  b.amplitude = {0, 0, 0};
  b.radius = 0.1;
  b.peak_density = 200.0;
  b.color_a = b.color_b = {0.8, 0.8, 0.8};
  scene.blobs.push_back(b);
  // Axis-aligned camera with odd resolution: principal point on a pixel.
  Camera cam = make_look_at_camera("c", Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 1}, 50, 25, 25);
  Image8 img = oracle_render(scene, cam, 0.0, 512);
  // Compare 4-fold reflections about the center.
  for (int y = 0; y < 25; ++y)
    for (int x = 0; x < 25; ++x) {
      int mx = 24 - x, my = 24 - y;
      for (int c = 0; c < 3; ++c) {
        int v = img.rgb[(static_cast<size_t>(y) * 25 + x) * 3 + c];
        int vm = img.rgb[(static_cast<size_t>(my) * 25 + mx) * 3 + c];
        CHECK(std::abs(v - vm) <= 1);
      }
    }
}

TEST_CASE("ppm round trip is bit-exact and rejects malformed files") {
  std::string dir = temp_dir("ppm");
  Image8 img;
  img.width = 7;
  img.height = 5;
  Rng rng(5);
  img.rgb.resize(7 * 5 * 3);
  for (auto& px : img.rgb) px = static_cast<unsigned char>(rng.next_below(256));
  std::string path = dir + "/img.ppm";
  write_ppm(path, img);
  Image8 back = read_ppm(path);
  CHECK(back == img);

  // Truncated file names the path.
  std::string bad = dir + "/bad.ppm";
  {
    std::ofstream f(bad, std::ios::binary);
    f << "P6\n7 5\n255\n";
    f.write("abc", 3);
  }
  try {
    read_ppm(bad);
    CHECK(false);
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("bad.ppm") != std::string::npos);
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }
}

TEST_CASE("float channel files round trip") {
  std::string dir = temp_dir("imgf");
  ImageF img{3, 2, 2, {1.5f, -2.25f, 0.f, 4.f, 5.f, 6.f, 7.f, 8.f, 9.f, 10.f, 11.f, 12.f}};
  write_float_channels(dir + "/x.bin", img);
  ImageF back = read_float_channels(dir + "/x.bin");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.channels == 2);
  CHECK(back.data == img.data);
}

TEST_CASE("dataset generate/load round trip") {
  RunConfig cfg = tiny_config();
  SyntheticScene scene = SyntheticScene::from_config(cfg);
  std::string dir = temp_dir("dataset");
  generate_dataset(scene, cfg, dir);

  Dataset ds = load_dataset(dir);
  CHECK(ds.n_frames == cfg.n_frames);
  CHECK(static_cast<int>(ds.cameras.size()) == cfg.n_train_cams + cfg.n_test_cams);
  CHECK(static_cast<int>(ds.train_indices.size()) == cfg.n_train_cams);
  CHECK(static_cast<int>(ds.test_indices.size()) == cfg.n_test_cams);
  CHECK(ds.config.img_w == cfg.img_w);

  // Images round trip bit-exactly against in-memory renders.
  Image8 direct = oracle_render(scene, ds.cameras[0], 0.0, cfg.oracle_samples);
  CHECK(ds.images[0][0] == direct);

  // Keypoints equal direct pinhole projection of blob centers.
  const Camera& kcam = ds.camera_by_id(ds.kps_camera_id);
  for (size_t b = 0; b < scene.blobs.size(); ++b) {
    double u, v;
    REQUIRE(kcam.project(scene.blobs[b].center(0.0), u, v));
    CHECK(ds.keypoints[0][b][0] == doctest::Approx(2.0 * u / cfg.img_w - 1.0).epsilon(1e-12));
    CHECK(ds.keypoints[0][b][1] == doctest::Approx(2.0 * v / cfg.img_h - 1.0).epsilon(1e-12));
    // Inside the image for the default scene.
    CHECK(std::fabs(ds.keypoints[0][b][0]) <= 1.0);
    CHECK(std::fabs(ds.keypoints[0][b][1]) <= 1.0);
  }

  // Frame records enumerate every (frame, camera) pair.
  auto records = ds.records();
  CHECK(records.size() == static_cast<size_t>(cfg.n_frames) * ds.cameras.size());

  // Regeneration is bit-identical.
  std::string dir2 = temp_dir("dataset2");
  generate_dataset(scene, cfg, dir2);
  for (const auto& rec : records) {
    std::ifstream a(fs::path(dir) / rec.image_path, std::ios::binary);
    std::ifstream b(fs::path(dir2) / rec.image_path, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }

  // Parallel generation produces the same bytes.
  std::string dir3 = temp_dir("dataset3");
  generate_dataset(scene, cfg, dir3, 4);
  Dataset ds3 = load_dataset(dir3);
  for (int f = 0; f < ds.n_frames; ++f)
    for (size_t c = 0; c < ds.cameras.size(); ++c) CHECK(ds3.images[f][c] == ds.images[f][c]);

  // Truncating an image makes the loader fail with the file name.
  {
    fs::path victim = fs::path(dir) / "frames" / ds.cameras[0].id / "000.ppm";
    fs::resize_file(victim, 10);
    try {
      load_dataset(dir);
      CHECK(false);
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("000.ppm") != std::string::npos);
    }
  }
}

TEST_SUITE_END();
