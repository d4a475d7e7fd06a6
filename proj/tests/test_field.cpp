#include <cmath>

#include "doctest.h"
#include "factormap/error.hpp"
#include "factormap/field.hpp"
#include "support.hpp"

using namespace factormap;
using fmtest::rel_err;

namespace {

const SceneBounds kBounds{{-1.0, 0.5, -2.0}, {2.0, 2.0, 1.0}};

Vec3 random_point(Rng& rng, const SceneBounds& b) {
  return {rng.uniform(b.min.x(), b.max.x()), rng.uniform(b.min.y(), b.max.y()),
          rng.uniform(b.min.z(), b.max.z())};
}

FactorizedField make_field(int res, std::uint64_t seed, int cd = 3, int ca = 4, int hidden = 8) {
  FieldShape s;
  s.res = res;
  s.density_channels = cd;
  s.appearance_channels = ca;
  s.hidden = hidden;
  FactorizedField f(s, kBounds);
  Rng rng(seed);
  f.initialize(rng, 0.5);
  return f;
}

}  // namespace

TEST_CASE("factored queries equal trilinear interpolation of the dense tensor") {
  for (int res : {2, 5, 9, 16}) {
    FactorizedField f = make_field(res, 10 + res);
    const fmtest::DenseTensor dd = fmtest::densify(f, true);
    const fmtest::DenseTensor da = fmtest::densify(f, false);
    Rng rng(res);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p = random_point(rng, kBounds);
      CHECK(rel_err(f.query_density(p), fmtest::trilinear(dd, kBounds, p)[0], 1e-12) < 1e-10);
      const std::vector<double> feat = f.query_appearance(p);
      const std::vector<double> ref = fmtest::trilinear(da, kBounds, p);
      for (std::size_t k = 0; k < feat.size(); ++k) CHECK(rel_err(feat[k], ref[k], 1e-12) < 1e-10);
    }
  }
}

TEST_CASE("queries at grid nodes return the dense node values") {
  FactorizedField f = make_field(6, 3);
  const fmtest::DenseTensor dd = fmtest::densify(f, true);
  for (int i = 0; i < 6; ++i) {
    const Vec3 p = kBounds.min + kBounds.extent().cwiseProduct(Vec3(i, 5 - i, (2 * i) % 6) / 5.0);
    CHECK(std::abs(f.query_density(p) - dd.at(i, 5 - i, (2 * i) % 6, 0)) < 1e-12);
  }
}

TEST_CASE("density bias shifts the raw density only") {
  FactorizedField f = make_field(4, 1);
  const Vec3 p(0.1, 1.2, -0.3);
  const double before = f.query_density(p);
  f.set_density_bias(-3.0);
  CHECK(f.query_density(p) == doctest::Approx(before - 3.0).epsilon(1e-14));
}

TEST_CASE("out-of-box points clamp to the boundary and get no gradient") {
  FactorizedField f = make_field(5, 2);
  const Vec3 inside(2.0, 1.0, 0.3);
  const Vec3 outside(3.5, 1.0, 0.3);
  CHECK(f.query_density(outside) == f.query_density(inside));
  const GridLookup lk = f.lookup(outside);
  CHECK(lk.clamped);
  std::vector<double> g(f.params().size(), 0.0);
  Vec3 dx(1, 1, 1);
  f.density_backward(lk, 1.0, g, &dx);
  CHECK(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
  CHECK(dx == Vec3(1, 1, 1));  // accumulates, nothing added
  CHECK_THROWS_AS(f.query_density(Vec3(NAN, 0, 0)), InvalidInput);
}

TEST_CASE("grid backward passes match finite differences") {
  FactorizedField f = make_field(5, 4);
  Rng rng(6);
  const double h = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 p = random_point(rng, kBounds);
    const GridLookup lk = f.lookup(p);
    // Density: linear in each parameter, so differences are exact up to round-off.
    std::vector<double> g(f.params().size(), 0.0);
    Vec3 dx = Vec3::Zero();
    f.density_backward(lk, 1.7, g, &dx);
    std::span<double> P = f.params();
    for (std::size_t i = 0; i < f.layout().grid_size(); i += 7) {
      const double keep = P[i];
      P[i] = keep + h;
      const double fp = f.density_at(lk);
      P[i] = keep - h;
      const double fm = f.density_at(lk);
      P[i] = keep;
      CHECK(std::abs(g[i] - 1.7 * (fp - fm) / (2 * h)) < 1e-7);
    }
    for (int a = 0; a < 3; ++a) {
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      CHECK(rel_err(dx[a], 1.7 * (f.query_density(pp) - f.query_density(pm)) / (2 * h), 1e-6) < 1e-5);
    }
    // Appearance with a random upstream gradient.
    const int fd = f.shape().feature_dim();
    std::vector<double> up(fd);
    for (double& u : up) u = rng.normal();
    auto dot = [&](const std::vector<double>& feat) {
      double s = 0;
      for (int k = 0; k < fd; ++k) s += up[k] * feat[k];
      return s;
    };
    std::vector<double> ga(f.params().size(), 0.0);
    Vec3 dxa = Vec3::Zero();
    f.appearance_backward(lk, up, ga, &dxa);
    for (std::size_t i = f.layout().appearance_plane(0); i < f.layout().grid_size(); i += 5) {
      const double keep = P[i];
      P[i] = keep + h;
      const double fp = dot(f.query_appearance(p));
      P[i] = keep - h;
      const double fm = dot(f.query_appearance(p));
      P[i] = keep;
      CHECK(std::abs(ga[i] - (fp - fm) / (2 * h)) < 1e-7);
    }
    for (int a = 0; a < 3; ++a) {
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      CHECK(rel_err(dxa[a], (dot(f.query_appearance(pp)) - dot(f.query_appearance(pm))) / (2 * h), 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("decoder matches a hand-written MLP and its backward pass") {
  FactorizedField f = make_field(3, 7, 2, 3, 6);
  Rng rng(8);
  const int fd = f.shape().feature_dim();
  const int in = f.shape().decoder_input_dim();
  const int hid = f.shape().hidden;
  std::vector<double> feat(fd);
  for (double& x : feat) x = rng.normal();
  const Vec3 dir = Vec3(0.3, -0.4, 0.866).normalized();

  auto reference = [&](const std::vector<double>& x, const Vec3& d) {
    std::span<const double> P = std::as_const(f).params();
    std::vector<double> input(x);
    input.push_back(d.x());
    input.push_back(d.y());
    input.push_back(d.z());
    std::vector<double> hidden(hid);
    for (int j = 0; j < hid; ++j) {
      double s = P[f.layout().b1() + j];
      for (int k = 0; k < in; ++k) s += P[f.layout().w1() + j * in + k] * input[k];
      hidden[j] = s > 0 ? s : 0;
    }
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
      double s = P[f.layout().b2() + c];
      for (int j = 0; j < hid; ++j) s += P[f.layout().w2() + c * hid + j] * hidden[j];
      out[c] = 1.0 / (1.0 + std::exp(-s));
    }
    return out;
  };
  const Vec3 rgb = f.decode_color(feat, dir);
  CHECK((rgb - reference(feat, dir)).norm() < 1e-14);
  CHECK((rgb.array() > 0.0).all());
  CHECK((rgb.array() < 1.0).all());

  const Vec3 up(0.5, -1.0, 2.0);
  DecoderCache cache;
  f.decode_forward(feat, dir, cache);
  std::vector<double> g(f.params().size(), 0.0);
  std::vector<double> gf(fd, 0.0);
  Vec3 gd = Vec3::Zero();
  f.decode_backward(cache, up, g, gf, &gd);
  const double h = 1e-6;
  std::span<double> P = f.params();
  for (std::size_t i = f.layout().w1(); i < f.layout().total(); ++i) {
    const double keep = P[i];
    P[i] = keep + h;
    const double fp = up.dot(reference(feat, dir));
    P[i] = keep - h;
    const double fm = up.dot(reference(feat, dir));
    P[i] = keep;
    CHECK(std::abs(g[i] - (fp - fm) / (2 * h)) < 1e-7);
  }
  for (int k = 0; k < fd; ++k) {
    std::vector<double> xp = feat, xm = feat;
    xp[k] += h;
    xm[k] -= h;
    CHECK(std::abs(gf[k] - (up.dot(reference(xp, dir)) - up.dot(reference(xm, dir))) / (2 * h)) < 1e-7);
  }
  for (int k = 0; k < 3; ++k) {
    Vec3 dp = dir, dm = dir;
    dp[k] += h;
    dm[k] -= h;
    CHECK(std::abs(gd[k] - (up.dot(reference(feat, dp)) - up.dot(reference(feat, dm))) / (2 * h)) < 1e-7);
  }
  // Skipping weight gradients leaves feature gradients unchanged.
  std::vector<double> gf2(fd, 0.0);
  f.decode_backward(cache, up, {}, gf2, nullptr);
  CHECK(gf2 == gf);
  CHECK_THROWS_AS(f.decode_color(feat, Vec3(0, 0, 2)), InvalidInput);
  CHECK_THROWS_AS(f.decode_color(std::vector<double>(fd + 1), dir), InvalidInput);
}

TEST_CASE("occupancy is a numerically stable logistic") {
  CHECK(occupancy(0.0) == 0.5);
  CHECK(occupancy(1000.0) == 1.0);
  CHECK(occupancy(-1000.0) == 0.0);
  CHECK(std::isfinite(occupancy(-1000.0)));
  for (double x : {-5.0, -0.3, 0.7, 4.0}) CHECK(occupancy(x) + occupancy(-x) == doctest::Approx(1.0));
}

TEST_CASE("parameter count and per-point cost") {
  FieldShape s;
  CHECK(param_count(s, false) == 3LL * (128 * 128 + 128) * 40);
  CHECK(param_count(s, true) == 1985235);
  CHECK(flops_per_point(s) == 9168);
  FactorizedField f(s, kBounds);
  CHECK(static_cast<std::int64_t>(f.params().size()) == param_count(s, true));
  CHECK(static_cast<std::int64_t>(f.layout().grid_size()) == param_count(s, false));
}

TEST_CASE("initialization is deterministic per seed") {
  FactorizedField a = make_field(4, 99);
  FactorizedField b = make_field(4, 99);
  FactorizedField c = make_field(4, 100);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  CHECK_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST_CASE("invalid shapes and bounds are rejected") {
  FieldShape s;
  s.res = 1;
  CHECK_THROWS_AS(FactorizedField(s, kBounds), InvalidInput);
  CHECK_THROWS_AS(FactorizedField(FieldShape{}, SceneBounds{{0, 0, 0}, {1, 0, 1}}), InvalidInput);
}
