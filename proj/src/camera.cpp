#include "crfd/camera.hpp"

#include <stdexcept>

namespace crfd {

void Camera::validate() const {
  if (!(fx() > 0) || !(fy() > 0))
    throw std::invalid_argument("camera '" + id + "': focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("camera '" + id + "': non-positive image dimensions");
  // R^T R = I within 1e-9.
  const Mat3 rt = rotation.transposed();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += rt.m[i * 3 + k] * rotation.m[k * 3 + j];
      double want = i == j ? 1.0 : 0.0;
      if (std::fabs(s - want) > 1e-9)
        throw std::invalid_argument("camera '" + id + "': rotation is not orthonormal");
    }
}

Vec3 Camera::pixel_direction(double px, double py) const {
  Vec3 d_cam{(px + 0.5 - cx()) / fx(), (py + 0.5 - cy()) / fy(), 1.0};
  return (rotation * d_cam).normalized();
}

bool Camera::project(const Vec3& p, double& u, double& v) const {
  Vec3 pc = rotation.transposed() * (p - center);
  if (pc.z <= 1e-12) return false;
  u = fx() * pc.x / pc.z + cx();
  v = fy() * pc.y / pc.z + cy();
  return true;
}

Ray::Ray(const Vec3& o, const Vec3& d, double dmin, double dmax)
    : origin(o), dir(d), d_min(dmin), d_max(dmax) {
  if (std::fabs(d.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("ray direction must be unit length");
  if (!(dmin > 0) || !(dmax > dmin))
    throw std::invalid_argument("ray requires 0 < d_min < d_max, got [" + std::to_string(dmin) +
                                ", " + std::to_string(dmax) + "]");
}

std::optional<Ray> generate_ray(const Camera& cam, double px, double py, const Box3& bounds) {
  if (px < 0 || py < 0 || px >= cam.width || py >= cam.height)
    throw std::invalid_argument("pixel (" + std::to_string(px) + "," + std::to_string(py) +
                                ") outside image bounds of camera '" + cam.id + "'");
  Vec3 o = cam.center;
  Vec3 d = cam.pixel_direction(px, py);
  // Slab intersection with the axis-aligned bounds.
  double t0 = -1e300, t1 = 1e300;
  for (int a = 0; a < 3; ++a) {
    double da = d[a];
    double oa = o[a];
    double lo = bounds.lo[a], hi = bounds.hi[a];
    if (std::fabs(da) < 1e-15) {
      if (oa < lo || oa > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - oa) / da;
    double tb = (hi - oa) / da;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  double dmin = std::max(t0, kMinRayDepth);
  if (t1 <= dmin) return std::nullopt;
  return Ray(o, d, dmin, t1);
}

Camera make_look_at_camera(const std::string& id, const Vec3& eye, const Vec3& target,
                           const Vec3& up, double fov_deg, int width, int height) {
  Vec3 forward = (target - eye).normalized();
  Vec3 u = up;
  if (std::fabs(forward.dot(u.normalized())) > 0.999) u = Vec3{0, 1, 0};  // near-pole fallback
  Vec3 right = forward.cross(u).normalized();
  Vec3 down = forward.cross(right).normalized();
  Camera cam;
  cam.id = id;
  cam.rotation = Mat3::from_cols(right, down, forward);
  cam.center = eye;
  cam.width = width;
  cam.height = height;
  double f = 0.5 * height / std::tan(fov_deg * 3.14159265358979323846 / 360.0);
  cam.intrinsics = Mat3{};
  cam.intrinsics.m[0] = f;
  cam.intrinsics.m[4] = f;
  cam.intrinsics.m[2] = width * 0.5;
  cam.intrinsics.m[5] = height * 0.5;
  cam.validate();
  return cam;
}

}  // namespace crfd
