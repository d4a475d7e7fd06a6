#pragma once

#include <Eigen/Core>
#include <vector>

#include "factormap/geometry.hpp"

namespace factormap {

// Row-major RGB image with channel values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height) : width_(width), height_(height), data_(3ull * width * height, 0.f) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  Vec3 at(int u, int v) const {
    const float* p = &data_[3ull * (static_cast<std::size_t>(v) * width_ + u)];
    return {p[0], p[1], p[2]};
  }
  void set(int u, int v, const Vec3& c) {
    float* p = &data_[3ull * (static_cast<std::size_t>(v) * width_ + u)];
    p[0] = static_cast<float>(c.x());
    p[1] = static_cast<float>(c.y());
    p[2] = static_cast<float>(c.z());
  }

  // Bilinear lookup at a continuous pixel coordinate (pixel centers at +0.5).
  // Returns false unless all four taps are inside the image. `jacobian`
  // receives d(rgb)/d(u, v).
  bool bilinear(double u, double v, Vec3* value,
                Eigen::Matrix<double, 3, 2>* jacobian = nullptr) const;

  bool operator==(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && data_ == o.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Single-channel float image (depth maps).
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0) : width(w), height(h), values(std::size_t(w) * h, fill) {}
  double& at(int u, int v) { return values[std::size_t(v) * width + u]; }
  double at(int u, int v) const { return values[std::size_t(v) * width + u]; }
};

}  // namespace factormap
