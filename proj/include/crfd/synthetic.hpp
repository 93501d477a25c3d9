#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "crfd/camera.hpp"
#include "crfd/config.hpp"
#include "crfd/image.hpp"
#include "crfd/rng.hpp"

namespace crfd {

/// One Gaussian density blob on a sinusoidal path. The center stays inside
/// the scene bounds for all t in [0,1] by construction.
struct Blob {
  Vec3 base;
  Vec3 amplitude;
  Vec3 phase;      // cycles
  Vec3 frequency;  // cycles over t in [0,1]
  double radius = 0.08;
  double peak_density = 40.0;
  Vec3 color_a{1, 0, 0};
  Vec3 color_b{0, 0, 1};
  double color_phase = 0;

  Vec3 center(double t) const;
  Vec3 color(double t) const;
};

/// Analytic time-varying density/color field: the ground-truth oracle that
/// stands in for a multi-camera capture.
struct SyntheticScene {
  std::vector<Blob> blobs;
  Box3 bounds{{-0.25, -0.25, -0.25}, {0.25, 0.25, 0.25}};
  Vec3 background{0.08, 0.08, 0.12};

  /// Deterministic scene derived from (n_blobs, scene_seed).
  static SyntheticScene make(int n_blobs, std::uint64_t scene_seed, const Vec3& background);
  static SyntheticScene from_config(const RunConfig& cfg);

  void validate() const;
};

/// sigma(p,t) = sum_b peak_b * exp(-|p - c_b(t)|^2 / (2 (r_b/2)^2)); color is
/// the density-weighted blend of blob colors (uniform blend when total
/// density < 1e-12).
std::pair<double, Vec3> scene_density_color(const SyntheticScene& scene, const Vec3& p, double t);

/// Dense midpoint-rule march of the analytic field with the same quadrature
/// conventions as the renderer; ground truth for training images.
Image8 oracle_render(const SyntheticScene& scene, const Camera& cam, double t,
                     int n_samples = 512);

/// Fibonacci-sphere cameras at cfg.cam_radius looking at the origin;
/// train/test interleaved deterministically (every (total/n_test)-th camera
/// is a test camera).
struct CameraSplit {
  std::vector<Camera> cameras;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};
CameraSplit place_cameras(const RunConfig& cfg);

struct FrameRecord {
  int frame_index = 0;
  std::string camera_id;
  std::string image_path;
  std::vector<std::array<double, 2>> keypoints;  // shared per frame
};

struct Dataset {
  RunConfig config;
  std::vector<Camera> cameras;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  std::string kps_camera_id;
  int n_frames = 0;
  // images[frame][camera index into `cameras`]
  std::vector<std::vector<Image8>> images;
  // keypoints[frame][blob] normalized to [-1,1] in the kps camera
  std::vector<std::vector<std::array<double, 2>>> keypoints;

  double frame_time(int frame) const {
    return n_frames <= 1 ? 0.0 : static_cast<double>(frame) / (n_frames - 1);
  }
  const Camera& camera_by_id(const std::string& id) const;
  std::vector<FrameRecord> records() const;
};

/// Writes cameras.txt, frames/<cam>/<frame>.ppm, keypoints/<frame>.txt and
/// manifest.txt; bit-identical for identical config.
void generate_dataset(const SyntheticScene& scene, const RunConfig& cfg,
                      const std::string& out_dir, int threads = 1);

/// Round-trips everything generate_dataset wrote; malformed files are
/// rejected with the offending path and field.
Dataset load_dataset(const std::string& dir);

}  // namespace crfd
