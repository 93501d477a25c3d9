#pragma once

#include <cmath>
#include <optional>
#include <string>

namespace crfd {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Mat3 {
  // Row-major.
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 from_cols(const Vec3& a, const Vec3& b, const Vec3& c) {
    Mat3 r;
    r.m[0] = a.x; r.m[1] = b.x; r.m[2] = c.x;
    r.m[3] = a.y; r.m[4] = b.y; r.m[5] = c.y;
    r.m[6] = a.z; r.m[7] = b.z; r.m[8] = c.z;
    return r;
  }
  Vec3 col(int i) const { return {m[i], m[3 + i], m[6 + i]}; }
  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
    return r;
  }
};

struct Box3 {
  Vec3 lo, hi;
  Vec3 center() const { return (lo + hi) * 0.5; }
  Vec3 half_extent() const { return (hi - lo) * 0.5; }
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
};

/// Pinhole camera: intrinsics K, world-from-camera pose [R|t] where t is the
/// camera center. Camera space: x right, y down, z forward.
struct Camera {
  std::string id;
  Mat3 intrinsics;  // fx, 0, cx / 0, fy, cy / 0, 0, 1
  Mat3 rotation;    // world-from-camera
  Vec3 center;
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics.m[0]; }
  double fy() const { return intrinsics.m[4]; }
  double cx() const { return intrinsics.m[2]; }
  double cy() const { return intrinsics.m[5]; }

  Vec3 optical_axis() const { return rotation.col(2); }

  /// fx, fy positive; rotation orthonormal within 1e-9.
  void validate() const;

  /// Unit world direction through the pixel center of (px, py).
  Vec3 pixel_direction(double px, double py) const;

  /// Continuous pixel coordinates of a world point; false when behind camera.
  bool project(const Vec3& p, double& u, double& v) const;
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
  double d_min = 0;
  double d_max = 0;

  Ray() = default;
  Ray(const Vec3& o, const Vec3& d, double dmin, double dmax);
  Vec3 at(double t) const { return origin + dir * t; }
};

inline constexpr double kMinRayDepth = 0.05;  // near-plane floor, meters

/// Ray through a pixel, clipped against the scene bounds. Returns nullopt
/// for rays that miss the bounds entirely (background-only pixels).
std::optional<Ray> generate_ray(const Camera& cam, double px, double py, const Box3& bounds);

/// Camera at `eye` looking at `target`; vertical field of view in degrees.
Camera make_look_at_camera(const std::string& id, const Vec3& eye, const Vec3& target,
                           const Vec3& up, double fov_deg, int width, int height);

}  // namespace crfd
