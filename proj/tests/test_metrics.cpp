#include <cmath>
#include <limits>

#include "doctest.h"
#include "factormap/error.hpp"
#include "factormap/metrics.hpp"
#include "support.hpp"

using namespace factormap;

namespace {

std::vector<Vec3> cloud(Rng& rng, int n, double scale = 1.0) {
  std::vector<Vec3> p(n);
  for (Vec3& x : p) x = Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
  return p;
}

double brute_nearest(const std::vector<Vec3>& ref, const Vec3& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& r : ref) best = std::min(best, (r - q).norm());
  return best;
}

}  // namespace

TEST_CASE("kd-tree agrees with brute force") {
  Rng rng(1);
  for (int n : {1, 2, 17, 500}) {
    const std::vector<Vec3> ref = cloud(rng, n);
    const KdTree tree(ref);
    for (int i = 0; i < 200; ++i) {
      const Vec3 q = Vec3(rng.normal(), rng.normal(), rng.normal()) * 1.5;
      std::size_t idx = 0;
      const double d = tree.nearest(q, &idx);
      CHECK(d == brute_nearest(ref, q));
      CHECK((ref[idx] - q).norm() == d);
    }
  }
  // Duplicates and collinear points.
  std::vector<Vec3> line;
  for (int i = 0; i < 50; ++i) line.push_back(Vec3(i % 5, 0, 0));
  const KdTree lt(line);
  CHECK(lt.nearest(Vec3(2.2, 1, 0)) == doctest::Approx(std::hypot(0.2, 1.0)));
}

TEST_CASE("threaded nearest distances equal the serial result") {
  Rng rng(2);
  const std::vector<Vec3> q = cloud(rng, 300), r = cloud(rng, 400);
  CHECK(nn_distances(q, r, 1) == nn_distances(q, r, 3));
}

TEST_CASE("accuracy, completion and ratio by hand") {
  const std::vector<Vec3> gt{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const std::vector<Vec3> pred{{0, 0.01, 0}, {1, 0.03, 0}};
  CHECK(accuracy_cm(pred, gt) == doctest::Approx(2.0));
  CHECK(completion_cm(pred, gt) == doctest::Approx((1.0 + 3.0 + std::hypot(100.0, 3.0)) / 3.0));
  CHECK(completion_ratio(pred, gt, 0.05) == doctest::Approx(200.0 / 3.0));
  CHECK(completion_ratio(pred, gt, 0.02) == doctest::Approx(100.0 / 3.0));
  CHECK(completion_ratio(gt, gt) == 100.0);
  CHECK(accuracy_cm(gt, gt) == 0.0);
}

TEST_CASE("metrics are permutation invariant and scale linearly") {
  Rng rng(3);
  std::vector<Vec3> a = cloud(rng, 200), b = cloud(rng, 150);
  const double acc = accuracy_cm(a, b), comp = completion_cm(a, b), ratio = completion_ratio(a, b, 0.3);
  std::vector<Vec3> a2(a.rbegin(), a.rend()), b2(b);
  std::rotate(b2.begin(), b2.begin() + 40, b2.end());
  CHECK(accuracy_cm(a2, b2) == acc);
  CHECK(completion_cm(a2, b2) == comp);
  CHECK(completion_ratio(a2, b2, 0.3) == ratio);
  for (Vec3& x : a2) x *= 2;
  for (Vec3& x : b2) x *= 2;
  CHECK(accuracy_cm(a2, b2) == doctest::Approx(2 * acc));
  CHECK(completion_ratio(a2, b2, 0.6) == doctest::Approx(ratio));
  // Growing the threshold never lowers the ratio.
  double prev = 0;
  for (double t : {0.01, 0.05, 0.1, 0.3, 1.0, 10.0}) {
    const double r = completion_ratio(a, b, t);
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(prev == 100.0);
}

TEST_CASE("empty point sets are rejected") {
  const std::vector<Vec3> some{{0, 0, 0}};
  CHECK_THROWS_AS(accuracy_cm({}, some), InvalidInput);
  CHECK_THROWS_AS(completion_cm(some, {}), InvalidInput);
  CHECK_THROWS_AS(completion_ratio(some, some, -1.0), InvalidInput);
}

TEST_CASE("psnr and depth error") {
  Image a(2, 2), b(2, 2);
  CHECK(psnr(a, b) == kPsnrCap);
  b.set(0, 0, Vec3(0.1, 0.1, 0.1));
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(12.0 / 0.03)).epsilon(1e-6));
  CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0));
  CHECK_THROWS_AS(psnr(a, Image(3, 2)), InvalidInput);

  DepthMap r(2, 1), g(2, 1);
  r.values = {1.0, 3.0};
  g.values = {1.5, 1.0};
  CHECK(depth_mae(r, g) == doctest::Approx(1.25));
  const std::vector<unsigned char> mask{1, 0};
  CHECK(depth_mae(r, g, mask) == doctest::Approx(0.5));
}

TEST_CASE("report csv formatting") {
  ReconReport rep;
  rep.accuracy_cm = 1.5;
  rep.completion_cm = 2.25;
  rep.completion_ratio_pct = 90;
  CHECK(ReconReport::csv_header() == "accuracy_cm,completion_cm,completion_ratio_pct,psnr_db,depth_mae_m");
  CHECK(rep.csv_row() == "1.500000,2.250000,90.000000,,");
  rep.psnr_db = 20.0;
  rep.depth_mae_m = 0.1;
  CHECK(rep.csv_row() == "1.500000,2.250000,90.000000,20.000000,0.100000");
  const std::vector<Vec3> gt{{0, 0, 0}, {1, 0, 0}};
  const ReconReport e = evaluate_clouds(gt, gt, 0.05);
  CHECK(e.completion_ratio_pct == 100.0);
  CHECK_FALSE(e.psnr_db);
}
