#pragma once

// Reconstruction metrics on point sets (accuracy, completion, completion
// ratio) and image metrics for the synthetic oracle (PSNR, depth MAE).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "factormap/data.hpp"
#include "factormap/geometry.hpp"
#include "factormap/image.hpp"

namespace factormap {

// Exact nearest-neighbour queries over a static point set.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }
  // Euclidean distance to the nearest point; index written to `index` if non-null.
  double nearest(const Vec3& q, std::size_t* index = nullptr) const;

 private:
  struct Node {
    int axis = 0;
    std::size_t point = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth);
  void search(int node, const Vec3& q, double& best_sq, std::size_t& best) const;

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

std::vector<Vec3> positions(const ColoredPointCloud& cloud);

// Per-query nearest distances from `queries` to `reference`, in meters.
std::vector<double> nn_distances(std::span<const Vec3> queries, std::span<const Vec3> reference,
                                 int threads = 1);

// Means in centimeters; threshold in meters, result in percent.
double accuracy_cm(std::span<const Vec3> pred, std::span<const Vec3> gt);
double completion_cm(std::span<const Vec3> pred, std::span<const Vec3> gt);
double completion_ratio(std::span<const Vec3> pred, std::span<const Vec3> gt,
                        double threshold = 0.05);

constexpr double kPsnrCap = 99.0;

// Over all pixels and channels with a peak of 1; identical inputs return kPsnrCap.
double psnr(const Image& rendered, const Image& reference);
double psnr_from_mse(double mse);
// Mean |rendered - gt| over pixels where `valid` is non-zero (all when empty).
double depth_mae(const DepthMap& rendered, const DepthMap& gt,
                 std::span<const unsigned char> valid = {});

struct ReconReport {
  double accuracy_cm = 0.0;
  double completion_cm = 0.0;
  double completion_ratio_pct = 0.0;
  std::optional<double> psnr_db;
  std::optional<double> depth_mae_m;

  static std::string csv_header();
  std::string csv_row() const;
};

ReconReport evaluate_clouds(std::span<const Vec3> pred, std::span<const Vec3> gt,
                            double threshold = 0.05);

}  // namespace factormap
