#include "factormap/geometry.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "factormap/error.hpp"

namespace factormap {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidInput("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidInput("intrinsics: image size must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
    throw InvalidInput("intrinsics: principal point outside the image");
}

Pose Pose::from_rt(const Mat3& r, const Vec3& t) {
  Pose p;
  p.rotation = Eigen::Quaterniond(r).normalized();
  p.translation = t;
  return p;
}

Pose Pose::from_matrix(const Mat4& m) {
  return from_rt(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = R();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

std::string Pose::to_tum() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << translation.x() << ' '
     << translation.y() << ' ' << translation.z() << ' ' << rotation.x() << ' ' << rotation.y()
     << ' ' << rotation.z() << ' ' << rotation.w();
  return os.str();
}

Pose Pose::parse_tum(const std::string& text, bool* renormalized) {
  std::istringstream is(text);
  double v[7];
  for (double& x : v) {
    if (!(is >> x)) throw InvalidInput("pose: expected 'tx ty tz qx qy qz qw', got '" + text + "'");
  }
  std::string rest;
  if (is >> rest) throw InvalidInput("pose: trailing tokens in '" + text + "'");
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInput("pose: non-finite value in '" + text + "'");
  }
  Pose p;
  p.translation = {v[0], v[1], v[2]};
  Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  const double n = q.norm();
  if (n == 0.0) throw InvalidInput("pose: zero quaternion in '" + text + "'");
  const bool off = std::abs(n - 1.0) > 1e-6;
  if (renormalized) *renormalized = off;
  // Keep the file's values bit-exact when they are already unit length.
  p.rotation = off ? q.normalized() : q;
  return p;
}

Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, PixelCoord px) {
  if (!intr.contains(px.u, px.v)) throw InvalidInput("ray_for_pixel: pixel outside the image");
  Ray r;
  r.origin = pose.translation;
  r.direction = (pose.R() * intr.pixel_to_camera(px.u, px.v)).normalized();
  return r;
}

Vec3 unproject(const CameraIntrinsics& intr, const Pose& pose, PixelCoord px, double depth) {
  if (!(depth > 0.0)) throw InvalidInput("unproject: depth must be positive");
  return pose.transform(intr.pixel_to_camera(px.u, px.v) * depth);
}

Projection project(const CameraIntrinsics& intr, const Pose& pose, const Vec3& point) {
  Projection out;
  const Vec3 pc = pose.rotation.conjugate() * (point - pose.translation);
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) return out;
  out.px.u = intr.fx * pc.x() / pc.z() + intr.cx;
  out.px.v = intr.fy * pc.y() / pc.z() + intr.cy;
  out.valid = intr.contains(out.px.u, out.px.v);
  return out;
}

Pose pose_compose(const Pose& a, const Pose& b) {
  Pose p;
  p.rotation = (a.rotation * b.rotation).normalized();
  p.translation = a.rotation * b.translation + a.translation;
  return p;
}

Pose pose_inverse(const Pose& a) {
  Pose p;
  p.rotation = a.rotation.conjugate();
  p.translation = -(p.rotation * a.translation);
  return p;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-12) return Mat3::Identity() + k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega) {
  std::array<Mat3, 3> d;
  const double theta2 = omega.squaredNorm();
  if (theta2 < 1e-20) {
    for (int k = 0; k < 3; ++k) d[k] = skew(Vec3::Unit(k));
    return d;
  }
  // dR/dw_k = (w_k [w]x + [w x (I - R) e_k]x) R / |w|^2
  const Mat3 r = so3_exp(omega);
  const Mat3 w = skew(omega);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int k = 0; k < 3; ++k) {
    const Vec3 v = omega.cross(i_minus_r.col(k));
    d[k] = (omega[k] * w + skew(v)) * r / theta2;
  }
  return d;
}

bool intersect_aabb(const Ray& ray, const Vec3& box_min, const Vec3& box_max, double* t_enter,
                    double* t_exit) {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (d == 0.0) {
      if (o < box_min[a] || o > box_max[a]) return false;
      continue;
    }
    double t0 = (box_min[a] - o) / d;
    double t1 = (box_max[a] - o) / d;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  if (hi < lo || hi < 0.0) return false;
  *t_enter = lo;
  *t_exit = hi;
  return true;
}

}  // namespace factormap
