#include <cmath>

#include "doctest.h"
#include "factormap/error.hpp"
#include "factormap/render.hpp"
#include "support.hpp"

using namespace factormap;

namespace {

// Weights straight from the product formula.
std::vector<double> product_weights(const std::vector<double>& a) {
  std::vector<double> w(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double t = 1.0;
    for (std::size_t j = 0; j < i; ++j) t *= 1.0 - a[j];
    w[i] = a[i] * t;
  }
  return w;
}

FactorizedField small_field(std::uint64_t seed) {
  FieldShape s;
  s.res = 6;
  s.density_channels = 2;
  s.appearance_channels = 2;
  s.hidden = 8;
  FactorizedField f(s, SceneBounds{{-1, -1, -1}, {1, 1, 1}});
  Rng rng(seed);
  f.initialize(rng, 0.6);
  return f;
}

}  // namespace

TEST_CASE("composite weights match the product formula") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + rng.below(40));
    for (double& x : a) x = rng.uniform();
    const std::vector<double> w = composite_weights(a);
    const std::vector<double> ref = product_weights(a);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(w[i] - ref[i]) < 1e-14);
    const std::vector<double> T = transmittance(a);
    REQUIRE(T.size() == a.size() + 1);
    double sum = 0.0;
    for (double x : w) sum += x;
    CHECK(std::abs(sum + T.back() - 1.0) < 1e-12);
  }
}

TEST_CASE("compositing edge cases") {
  CHECK(composite_weights(std::vector<double>{}).empty());
  const std::vector<double> w = composite_weights(std::vector<double>{0.0, 1.0, 0.7});
  CHECK(w == std::vector<double>{0.0, 1.0, 0.0});
  CHECK_THROWS_AS(composite_weights(std::vector<double>{0.2, 1.2}), InvalidInput);
  CHECK_THROWS_AS(composite_weights(std::vector<double>{0.2, 0.3}, std::vector<double>{1.0, 1.0}),
                  InvalidInput);
}

TEST_CASE("color and depth composites") {
  const std::vector<double> w{0.2, 0.5, 0.1};
  const std::vector<Vec3> c{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  CHECK((render_color(w, c) - Vec3(0.2, 0.5, 0.1)).norm() < 1e-15);
  const std::vector<double> t{1.0, 2.0, 4.0};
  const DepthEstimate d = render_depth(w, t, 0.5);
  CHECK(d.depth == doctest::Approx(0.2 + 1.0 + 0.4));
  CHECK_FALSE(d.low_confidence);
  CHECK(render_depth(std::vector<double>{0.01, 0.02}, std::vector<double>{1, 2}, 0.1).low_confidence);
}

TEST_CASE("render_ray agrees with a hand composite over field queries") {
  FactorizedField f = small_field(2);
  const Ray ray{Vec3(-0.9, -0.2, 0.1), Vec3(1, 0.2, -0.1).normalized()};
  Rng rng(3);
  const RaySamples s = stratified(0.05, 1.6, 24, rng);
  const RenderResult r = render_ray(f, ray, s);
  std::vector<double> a;
  std::vector<Vec3> c;
  for (double t : s.t) {
    a.push_back(occupancy(f.query_density(ray.at(t))));
    c.push_back(f.decode_color(f.query_appearance(ray.at(t)), ray.direction));
  }
  const std::vector<double> w = product_weights(a);
  CHECK((r.color - render_color(w, c)).norm() < 1e-12);
  double depth = 0, op = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    depth += w[i] * s.t[i];
    op += w[i];
  }
  CHECK(r.depth == doctest::Approx(depth).epsilon(1e-12));
  CHECK(r.opacity == doctest::Approx(op).epsilon(1e-12));
  CHECK(r.normalized_depth == doctest::Approx(depth / op).epsilon(1e-12));
}

TEST_CASE("ray tape backward matches finite differences") {
  FactorizedField f = small_field(4);
  const Ray ray{Vec3(-0.8, 0.3, -0.5), Vec3(0.9, -0.1, 0.6).normalized()};
  Rng rng(5);
  const RaySamples s = stratified(0.0, 1.8, 16, rng);
  const Vec3 dc(0.7, -0.4, 1.1);
  const double dd = 0.3;
  auto loss = [&]() {
    const RenderResult r = render_ray(f, ray, s);
    return dc.dot(r.color) + dd * r.depth;
  };
  auto signature = [&]() {
    std::vector<int> sig;
    DecoderCache cache;
    for (double t : s.t) {
      const GridLookup lk = f.lookup(ray.at(t));
      sig.insert(sig.end(), lk.cell.begin(), lk.cell.end());
      f.decode_forward(f.query_appearance(ray.at(t)), ray.direction, cache);
      for (double p : cache.pre) sig.push_back(p > 0.0);
    }
    return sig;
  };
  RayTape tape;
  tape.forward(f, ray, s);
  std::vector<double> g(f.params().size(), 0.0);
  tape.backward(f, dc, dd, g, true);

  std::span<double> P = f.params();
  int checked = 0;
  for (std::size_t i = 0; i < P.size(); i += 3) {
    const double keep = P[i];
    auto at = [&](auto fn) {
      return [&, fn](double off) {
        P[i] = keep + off;
        auto v = fn();
        P[i] = keep;
        return v;
      };
    };
    const fmtest::FdEstimate e = fmtest::fd_derivative(at(loss), at(signature), 1e-6);
    REQUIRE(e.stencil != fmtest::Stencil::kNone);
    CHECK(std::abs(g[i] - e.value) < 2e-6 * std::max(1.0, std::abs(e.value)));
    ++checked;
  }
  CHECK(checked > 100);

  // Without decoder gradients the decoder block stays zero.
  std::vector<double> g2(f.params().size(), 0.0);
  tape.forward(f, ray, s);
  tape.backward(f, dc, dd, g2, false);
  for (std::size_t i = f.layout().w1(); i < f.layout().total(); ++i) CHECK(g2[i] == 0.0);
  for (std::size_t i = 0; i < f.layout().grid_size(); ++i) CHECK(g2[i] == g[i]);
}

TEST_CASE("ray span clips to the box and near_min") {
  const SceneBounds b{{0, 0, 0}, {2, 2, 2}};
  double near = 0, far = 0;
  REQUIRE(ray_span(b, Ray{Vec3(-1, 1, 1), Vec3(1, 0, 0)}, 0.1, &near, &far));
  CHECK(near == doctest::Approx(1.0));
  CHECK(far == doctest::Approx(3.0));
  REQUIRE(ray_span(b, Ray{Vec3(1, 1, 1), Vec3(0, 1, 0)}, 0.1, &near, &far));
  CHECK(near == doctest::Approx(0.1));
  CHECK(far == doctest::Approx(1.0));
  CHECK_FALSE(ray_span(b, Ray{Vec3(-1, 5, 1), Vec3(1, 0, 0)}, 0.1, &near, &far));
}

TEST_CASE("view rendering is reproducible per seed") {
  FactorizedField f = small_field(6);
  const CameraIntrinsics intr{10, 10, 6, 5, 12, 10};
  const Pose pose = look_at_pose(Vec3(0, -2.5, 0.2), Vec3::Zero(), Vec3(0, 0, 1));
  ViewRenderOptions opt;
  opt.coarse = 8;
  opt.fine = 8;
  opt.seed = 11;
  const ViewRender a = render_view(f, intr, pose, opt);
  const ViewRender b = render_view(f, intr, pose, opt);
  CHECK(a.rgb == b.rgb);
  CHECK(a.depth.values == b.depth.values);
  CHECK(a.rgb.width() == 12);
  CHECK(a.rgb.height() == 10);
  opt.seed = 12;
  const ViewRender c = render_view(f, intr, pose, opt);
  CHECK_FALSE(c.depth.values == a.depth.values);
}
