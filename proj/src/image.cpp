#include "factormap/image.hpp"

#include <cmath>

namespace factormap {

bool Image::bilinear(double u, double v, Vec3* value, Eigen::Matrix<double, 3, 2>* jacobian) const {
  const double x = u - 0.5;
  const double y = v - 0.5;
  if (!(x >= 0.0 && y >= 0.0 && x <= width_ - 1 && y <= height_ - 1)) return false;
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  if (x0 > width_ - 2) x0 = width_ - 2;
  if (y0 > height_ - 2) y0 = height_ - 2;
  if (x0 < 0 || y0 < 0) return false;  // 1-pixel-wide images
  const double fx = x - x0;
  const double fy = y - y0;
  const Vec3 c00 = at(x0, y0), c10 = at(x0 + 1, y0);
  const Vec3 c01 = at(x0, y0 + 1), c11 = at(x0 + 1, y0 + 1);
  if (value) {
    *value = (1 - fx) * (1 - fy) * c00 + fx * (1 - fy) * c10 + (1 - fx) * fy * c01 + fx * fy * c11;
  }
  if (jacobian) {
    jacobian->col(0) = (1 - fy) * (c10 - c00) + fy * (c11 - c01);
    jacobian->col(1) = (1 - fx) * (c01 - c00) + fx * (c11 - c10);
  }
  return true;
}

}  // namespace factormap
