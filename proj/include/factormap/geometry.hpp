#pragma once

// Pinhole camera, rigid poses and rays.
//
// Conventions: right-handed camera frame with +z forward, u to the right and
// v down. Poses are camera-to-world. Continuous pixel coordinates place the
// center of integer pixel (i, j) at (i + 0.5, j + 0.5).

#include <array>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace factormap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  // Throws InvalidInput unless fx, fy > 0 and the principal point is inside the image.
  void validate() const;
  // Camera-frame direction with unit z for a continuous pixel coordinate.
  Vec3 pixel_to_camera(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
  bool contains(double u, double v) const {
    return u >= 0.0 && v >= 0.0 && u < width && v < height;
  }
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

inline PixelCoord pixel_center(int u, int v) { return {u + 0.5, v + 0.5}; }

struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);
  static Pose from_rt(const Mat3& r, const Vec3& t);

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Mat4 matrix() const;
  Vec3 transform(const Vec3& p) const { return rotation * p + translation; }

  // "tx ty tz qx qy qz qw"
  std::string to_tum() const;
  // Parses "tx ty tz qx qy qz qw". The quaternion is renormalized; `renormalized`
  // is set when its norm was off by more than 1e-6.
  static Pose parse_tum(const std::string& text, bool* renormalized = nullptr);
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

struct Projection {
  PixelCoord px;
  double depth = 0.0;
  bool valid = false;
};

Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, PixelCoord px);
Vec3 unproject(const CameraIntrinsics& intr, const Pose& pose, PixelCoord px, double depth);
// Never throws; `valid` is false behind the camera or outside the image.
Projection project(const CameraIntrinsics& intr, const Pose& pose, const Vec3& point);

Pose pose_compose(const Pose& a, const Pose& b);
Pose pose_inverse(const Pose& a);

// Rodrigues map from an axis-angle vector to a rotation matrix.
Mat3 so3_exp(const Vec3& omega);
// dExp(omega)/d omega_k for k = 0..2, exact for every omega.
std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega);
Mat3 skew(const Vec3& v);

// Slab intersection with an axis-aligned box; returns false when the ray misses.
bool intersect_aabb(const Ray& ray, const Vec3& box_min, const Vec3& box_max, double* t_enter,
                    double* t_exit);

}  // namespace factormap
