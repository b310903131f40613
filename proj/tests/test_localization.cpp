#include "doctest.h"

#include "snvkit/error.hpp"
#include "snvkit/localization.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace snvkit;
using namespace snvkit::localization;

namespace {

PLMap gaussian_map(std::size_t n, double scale, double x0, double y0, double sx, double sy, double amp, double off) {
  std::vector<double> px(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = scale * static_cast<double>(c), y = scale * static_cast<double>(r);
      px[r * n + c] = off + amp * std::exp(-0.5 * ((x - x0) * (x - x0) / (sx * sx) + (y - y0) * (y - y0) / (sy * sy)));
    }
  }
  return PLMap(n, n, std::move(px), scale);
}

std::vector<Point> lattice(double s, double theta, double dx, double dy, int n) {
  std::vector<Point> out;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double u = s * i, v = s * j;
      out.push_back({std::cos(theta) * u - std::sin(theta) * v + dx, std::sin(theta) * u + std::cos(theta) * v + dy});
    }
  }
  return out;
}

// Distance between two translations modulo the rotated lattice.
double lattice_gap(Point a, Point b, double s, double theta) {
  const double ex = a.x - b.x, ey = a.y - b.y;
  const double u = std::cos(theta) * ex + std::sin(theta) * ey, v = -std::sin(theta) * ex + std::cos(theta) * ey;
  return std::hypot(u - s * std::round(u / s), v - s * std::round(v / s));
}

}  // namespace

TEST_CASE("2D Gaussian fit recovers a noiseless spot") {
  const auto map = gaussian_map(40, 0.1, 2.03, 1.87, 0.25, 0.31, 500.0, 20.0);
  const auto f = fit_gaussian(map, 2.0, 1.9, 8);
  CHECK(f.x0 == doctest::Approx(2.03).epsilon(1e-6));
  CHECK(f.y0 == doctest::Approx(1.87).epsilon(1e-6));
  CHECK(f.sigma_x == doctest::Approx(0.25).epsilon(1e-5));
  CHECK(f.sigma_y == doctest::Approx(0.31).epsilon(1e-5));
  CHECK(f.amplitude == doctest::Approx(500.0).epsilon(1e-5));
  CHECK(f.fwhm_x() == doctest::Approx(0.25 * 2.0 * std::sqrt(2.0 * std::log(2.0))));
}

TEST_CASE("flat map does not fit") {
  PLMap flat(20, 20, std::vector<double>(400, 7.0), 0.1);
  CHECK_THROWS_AS(fit_gaussian(flat, 1.0, 1.0, 5), FitFailure);
}

TEST_CASE("emitter detection finds separated spots") {
  auto a = gaussian_map(60, 0.1, 1.5, 1.5, 0.2, 0.2, 300.0, 10.0);
  const auto b = gaussian_map(60, 0.1, 4.2, 3.9, 0.2, 0.2, 200.0, 0.0);
  std::vector<double> px = a.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] += b.pixels()[i];
  const PLMap both(60, 60, px, 0.1);
  const auto found = detect_emitters(both, 100.0);
  REQUIRE(found.size() == 2);
  bool saw_a = false, saw_b = false;
  for (const auto& f : found) {
    saw_a |= std::hypot(f.x0 - 1.5, f.y0 - 1.5) < 0.01;
    saw_b |= std::hypot(f.x0 - 4.2, f.y0 - 3.9) < 0.01;
  }
  CHECK(saw_a);
  CHECK(saw_b);
}

TEST_CASE("noiseless lattice registers with zero discrepancy") {
  const double s = 0.78, theta = 1.3 * std::numbers::pi / 180.0;
  const auto c = lattice(s, theta, 0.21, -0.13, 5);
  const auto reg = register_grid(c, s);
  CHECK(reg.total_discrepancy < 1e-6);
  CHECK(reg.theta == doctest::Approx(theta).epsilon(1e-6));
  CHECK(lattice_gap({reg.dx, reg.dy}, {0.21, -0.13}, s, theta) < 1e-6);
  CHECK(std::hypot(reg.dx, reg.dy) <= s / std::sqrt(2.0) + 1e-9);
  CHECK(reg.recompute_discrepancy() == doctest::Approx(reg.total_discrepancy).epsilon(1e-12));
}

TEST_CASE("registration is translation and rotation equivariant") {
  std::mt19937_64 eng(21);
  std::normal_distribution<double> jit(0.0, 0.06);
  const double s = 0.78;
  auto c = lattice(s, 0.01, 0.3, 0.1, 6);
  for (auto& p : c) {
    p.x += jit(eng);
    p.y += jit(eng);
  }
  const auto base = register_grid(c, s);

  // Shift by an arbitrary vector: D unchanged, translation follows.
  const Point shift{1.234, -0.567};
  auto moved = c;
  for (auto& p : moved) {
    p.x += shift.x;
    p.y += shift.y;
  }
  const auto rm = register_grid(moved, s);
  CHECK(rm.total_discrepancy == doctest::Approx(base.total_discrepancy).epsilon(1e-6));
  CHECK(lattice_gap({rm.dx, rm.dy}, {base.dx + shift.x, base.dy + shift.y}, s, rm.theta) < 1e-5);

  // Rotate about the origin by a small angle.
  const double phi = 0.02;
  auto turned = c;
  for (auto& p : turned) p = {std::cos(phi) * p.x - std::sin(phi) * p.y, std::sin(phi) * p.x + std::cos(phi) * p.y};
  const auto rt = register_grid(turned, s);
  CHECK(rt.total_discrepancy == doctest::Approx(base.total_discrepancy).epsilon(1e-5));
  CHECK(rt.theta == doctest::Approx(base.theta + phi).epsilon(1e-5));

  // Any nearby transform is no better than the reported one.
  for (double dth : {-2e-3, -5e-4, 5e-4, 2e-3}) {
    for (double dd : {-0.01, 0.0, 0.01}) {
      GridRegistration probe = base;
      probe.theta += dth;
      probe.dx += dd;
      probe.dy -= dd;
      CHECK(probe.recompute_discrepancy() >= base.total_discrepancy - 1e-9);
    }
  }
}

TEST_CASE("registration validation") {
  std::vector<Point> two{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(register_grid(two, 0.78), InvalidInput);
  std::vector<Point> same(4, Point{0.5, 0.5});
  CHECK_THROWS_AS(register_grid(same, 0.78), RegistrationFailure);
  std::vector<Point> three{{0, 0}, {0.78, 0}, {0, 0.78}};
  CHECK_THROWS_AS(register_grid(three, -1.0), InvalidInput);
  std::vector<double> bad_w{1.0, -1.0, 1.0};
  CHECK_THROWS_AS(register_grid(three, 0.78, bad_w), InvalidInput);
}

TEST_CASE("custom weights on a perfect lattice") {
  const auto c = lattice(0.78, 0.0, 0.0, 0.0, 3);
  std::vector<double> w(c.size(), 2.0);
  const auto r = register_grid(c, 0.78, w);
  CHECK(r.weighting == "custom");
  CHECK(r.total_discrepancy < 1e-6);
}

TEST_CASE("discrepancy statistics use the sample deviation") {
  const std::vector<double> r{0.1, 0.2, 0.3, 0.4};
  const auto st = discrepancy_stats(r, 4, 0.4);
  CHECK(st.mean == doctest::Approx(0.25));
  CHECK(st.std == doctest::Approx(std::sqrt(0.05 / 3.0)));
  REQUIRE(st.counts.size() == 4);
  REQUIRE(st.bin_edges.size() == 5);
  std::size_t total = 0;
  for (auto k : st.counts) total += k;
  CHECK(total == 4);
}

TEST_CASE("plateau fit") {
  std::vector<double> t, v;
  for (int i = 0; i < 60; ++i) {
    t.push_back(i);
    v.push_back(0.4 + 1.1 / (1.0 + std::exp(-(i - 20.0) / 3.0)));
  }
  const auto p = fit_plateau(t, v);
  CHECK(p.t0 == doctest::Approx(20.0).epsilon(1e-4));
  CHECK(p.width == doctest::Approx(3.0).epsilon(1e-4));
  CHECK(p.plateau_onset() == doctest::Approx(29.0).epsilon(1e-4));
}

TEST_CASE("activation spread records gaps for empty maps") {
  std::vector<PLMap> maps{gaussian_map(30, 0.1, 1.5, 1.5, 0.3, 0.3, 100.0, 5.0),
                          PLMap(30, 30, std::vector<double>(900, 5.0), 0.1)};
  const auto sp = activation_spread(maps, {1.5, 1.5});
  REQUIRE(sp.size() == 2);
  REQUIRE(sp[0].has_value());
  CHECK(sp[0]->mean_fwhm_um == doctest::Approx(0.3 * kFwhmPerSigma).epsilon(1e-4));
  CHECK_FALSE(sp[1].has_value());
}
