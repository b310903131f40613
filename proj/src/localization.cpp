#include "snvkit/localization.hpp"

#include "snvkit/error.hpp"
#include "snvkit/levenberg_marquardt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <tuple>

namespace snvkit::localization {

PLMap::PLMap(std::size_t rows, std::size_t cols, std::vector<double> pixels, double scale_um_per_px,
             double origin_x_um, double origin_y_um)
    : rows_(rows), cols_(cols), pixels_(std::move(pixels)), scale_(scale_um_per_px), origin_x_(origin_x_um),
      origin_y_(origin_y_um) {
  if (pixels_.size() != rows_ * cols_) throw InvalidInput("PL map is not rectangular");
  if (!(scale_ > 0.0)) throw InvalidInput("PL map scale must be positive");
  for (double v : pixels_) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("PL map pixels must be finite and non-negative");
  }
}

double Gaussian2DFit::evaluate(double x, double y) const {
  const double ux = (x - x0) / sigma_x, uy = (y - y0) / sigma_y;
  return offset + amplitude * std::exp(-0.5 * (ux * ux + uy * uy));
}

Gaussian2DFit fit_gaussian(const PLMap& map, double seed_x_um, double seed_y_um, std::size_t radius_px) {
  if (map.rows() == 0 || map.cols() == 0) throw InvalidInput("empty PL map");
  const double s = map.scale();
  const auto clampi = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(std::llround(v), 0LL, static_cast<long long>(n) - 1));
  };
  const std::size_t c0 = clampi((seed_x_um - map.origin_x()) / s, map.cols());
  const std::size_t r0 = clampi((seed_y_um - map.origin_y()) / s, map.rows());
  const std::size_t clo = c0 > radius_px ? c0 - radius_px : 0, chi = std::min(map.cols() - 1, c0 + radius_px);
  const std::size_t rlo = r0 > radius_px ? r0 - radius_px : 0, rhi = std::min(map.rows() - 1, r0 + radius_px);

  std::vector<double> xs, ys, vs;
  for (std::size_t r = rlo; r <= rhi; ++r) {
    for (std::size_t c = clo; c <= chi; ++c) {
      xs.push_back(map.x_of(static_cast<double>(c)));
      ys.push_back(map.y_of(static_cast<double>(r)));
      vs.push_back(map.at(r, c));
    }
  }
  if (vs.size() < 7) throw FitFailure("too few pixels for a 2D Gaussian fit");
  const double vmin = *std::min_element(vs.begin(), vs.end());
  const double vmax = *std::max_element(vs.begin(), vs.end());
  if (!(vmax > vmin)) throw FitFailure("flat region, no emitter to fit");

  // Moment seeds.
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const double w = vs[i] - vmin;
    sw += w;
    mx += w * xs[i];
    my += w * ys[i];
  }
  mx /= sw;
  my /= sw;
  double vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const double w = vs[i] - vmin;
    vx += w * (xs[i] - mx) * (xs[i] - mx);
    vy += w * (ys[i] - my) * (ys[i] - my);
  }
  const double smin = 0.3 * s, smax = std::max(1.0, static_cast<double>(radius_px)) * s;
  const double sx0 = std::clamp(std::sqrt(vx / sw), smin, smax);
  const double sy0 = std::clamp(std::sqrt(vy / sw), smin, smax);

  const auto m = static_cast<Eigen::Index>(vs.size());
  auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double ux = (xs[k] - p[1]) / p[3], uy = (ys[k] - p[2]) / p[4];
      r[i] = p[5] + p[0] * std::exp(-0.5 * (ux * ux + uy * uy)) - vs[k];
    }
  };
  auto jacobian = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& jac) {
    jac.resize(m, 6);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double dx = xs[k] - p[1], dy = ys[k] - p[2];
      const double ux = dx / p[3], uy = dy / p[4];
      const double e = std::exp(-0.5 * (ux * ux + uy * uy));
      jac(i, 0) = e;
      jac(i, 1) = p[0] * e * dx / (p[3] * p[3]);
      jac(i, 2) = p[0] * e * dy / (p[4] * p[4]);
      jac(i, 3) = p[0] * e * dx * dx / (p[3] * p[3] * p[3]);
      jac(i, 4) = p[0] * e * dy * dy / (p[4] * p[4] * p[4]);
      jac(i, 5) = 1.0;
    }
  };
  const double floor_sigma = 0.05 * s;
  auto project = [floor_sigma](Eigen::VectorXd& p) {
    p[3] = std::max(std::abs(p[3]), floor_sigma);
    p[4] = std::max(std::abs(p[4]), floor_sigma);
  };
  Eigen::VectorXd p0(6);
  p0 << vmax - vmin, map.x_of(static_cast<double>(c0)), map.y_of(static_cast<double>(r0)), sx0, sy0, vmin;
  fit::LmOptions lm;
  lm.step_tolerance = 1e-10;
  const auto res = fit::levenberg_marquardt(residual, p0, m, lm, jacobian, project);
  const auto& p = res.params;
  const std::vector<double> last(p.data(), p.data() + p.size());
  if (!p.allFinite() || !res.converged) throw FitFailure("2D Gaussian fit did not converge", last);
  if (!(p[0] > 0.0)) throw FitFailure("2D Gaussian fit has non-positive amplitude", last);
  const double xlo = map.x_of(static_cast<double>(clo)) - 0.5 * s, xhi = map.x_of(static_cast<double>(chi)) + 0.5 * s;
  const double ylo = map.y_of(static_cast<double>(rlo)) - 0.5 * s, yhi = map.y_of(static_cast<double>(rhi)) + 0.5 * s;
  if (p[1] < xlo || p[1] > xhi || p[2] < ylo || p[2] > yhi) throw FitFailure("2D Gaussian centre left the fit window", last);
  return {p[1], p[2], p[3], p[4], p[0], p[5]};
}

std::vector<Gaussian2DFit> detect_emitters(const PLMap& map, double threshold) {
  if (map.rows() < 7 || map.cols() < 7) throw InvalidInput("PL map must be at least 7x7 pixels");
  std::vector<Gaussian2DFit> found;
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t c = 0; c < map.cols(); ++c) {
      const double v = map.at(r, c);
      if (!(v > threshold)) continue;
      bool peak = true;
      for (int dr = -1; dr <= 1 && peak; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const auto rr = static_cast<long long>(r) + dr, cc = static_cast<long long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long long>(map.rows()) || cc >= static_cast<long long>(map.cols())) continue;
          const double n = map.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          // Ties go to the first pixel in raster order.
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          if (earlier ? n >= v : n > v) {
            peak = false;
            break;
          }
        }
      }
      if (!peak) continue;
      try {
        found.push_back(fit_gaussian(map, map.x_of(static_cast<double>(c)), map.y_of(static_cast<double>(r)), 3));
      } catch (const FitFailure&) {
      }
    }
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const Gaussian2DFit& a, const Gaussian2DFit& b) { return a.amplitude > b.amplitude; });
  std::vector<Gaussian2DFit> kept;
  for (const auto& f : found) {
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](const Gaussian2DFit& k) {
      return std::hypot(k.x0 - f.x0, k.y0 - f.y0) < map.scale();
    });
    if (!dup) kept.push_back(f);
  }
  std::sort(kept.begin(), kept.end(), [](const Gaussian2DFit& a, const Gaussian2DFit& b) {
    return a.y0 != b.y0 ? a.y0 < b.y0 : a.x0 < b.x0;
  });
  return kept;
}

// ---------------------------------------------------------------------------
// Registration

namespace {

double wrap(double v, double s) { return v - s * std::round(v / s); }

struct Frame {
  std::vector<Point> u;  // centers rotated into the grid frame
};

Frame rotate_into(std::span<const Point> c, double theta) {
  const double cs = std::cos(theta), sn = std::sin(theta);
  Frame f;
  f.u.reserve(c.size());
  for (const auto& p : c) f.u.push_back({cs * p.x + sn * p.y, -sn * p.x + cs * p.y});
  return f;
}

double discrepancy(const Frame& f, std::span<const double> w, Point t, double s) {
  double d = 0.0;
  for (std::size_t i = 0; i < f.u.size(); ++i) d += w[i] * std::hypot(wrap(f.u[i].x - t.x, s), wrap(f.u[i].y - t.y, s));
  return d;
}

Point coarse_translation(const Frame& f, std::span<const double> w, double s) {
  double cx = 0.0, sx = 0.0, cy = 0.0, sy = 0.0;
  const double k = 2.0 * std::numbers::pi / s;
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    cx += w[i] * std::cos(k * f.u[i].x);
    sx += w[i] * std::sin(k * f.u[i].x);
    cy += w[i] * std::cos(k * f.u[i].y);
    sy += w[i] * std::sin(k * f.u[i].y);
  }
  Point t{std::atan2(sx, cx) / k, std::atan2(sy, cy) / k};
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (int it = 0; it < 5; ++it) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      mx += w[i] * wrap(f.u[i].x - t.x, s);
      my += w[i] * wrap(f.u[i].y - t.y, s);
    }
    t.x += mx / wsum;
    t.y += my / wsum;
  }
  return t;
}

// Weighted geometric median of the node-relative residuals (Weiszfeld).
Point median_translation(const Frame& f, std::span<const double> w, Point t, double s, double tol) {
  for (int it = 0; it < 1000; ++it) {
    double nx = 0.0, ny = 0.0, den = 0.0;
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      const double rx = wrap(f.u[i].x - t.x, s), ry = wrap(f.u[i].y - t.y, s);
      const double d = std::max(std::hypot(rx, ry), 1e-13);
      nx += w[i] * rx / d;
      ny += w[i] * ry / d;
      den += w[i] / d;
    }
    const double stepx = nx / den, stepy = ny / den;
    t.x += stepx;
    t.y += stepy;
    if (std::hypot(stepx, stepy) < tol) break;
  }
  return t;
}

}  // namespace

double GridRegistration::distance_to_grid(Point p) const {
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double px = p.x - dx, py = p.y - dy;
  const double ux = cs * px + sn * py, uy = -sn * px + cs * py;
  return std::hypot(wrap(ux, spacing), wrap(uy, spacing));
}

double GridRegistration::recompute_discrepancy() const {
  double d = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) d += weights[i] * distance_to_grid(centers[i]);
  return d;
}

GridRegistration register_grid(std::span<const Point> centers, double spacing, std::span<const double> weights,
                               const RegistrationOptions& options) {
  if (centers.size() < 3) throw InvalidInput("registration needs at least 3 centers");
  if (!(spacing > 0.0)) throw InvalidInput("grid spacing must be positive");
  std::vector<double> w;
  if (weights.empty()) {
    w.assign(centers.size(), 1.0);
  } else {
    if (weights.size() != centers.size()) throw InvalidInput("weights and centers differ in length");
    w.assign(weights.begin(), weights.end());
    for (double v : w) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("weights must be finite and non-negative");
    }
    if (!(std::accumulate(w.begin(), w.end(), 0.0) > 0.0)) throw InvalidInput("weights sum to zero");
  }
  for (const auto& p : centers) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvalidInput("centers must be finite");
  }
  double spread = 0.0;
  for (const auto& p : centers) spread = std::max(spread, std::hypot(p.x - centers[0].x, p.y - centers[0].y));
  if (spread <= 1e-12 * std::max(1.0, spacing)) throw RegistrationFailure("all centers coincide");

  const double deg = std::numbers::pi / 180.0;
  const double range = options.theta_range_deg * deg, step = options.theta_step_deg * deg;
  const auto n_steps = static_cast<long>(std::llround(2.0 * range / step));

  double best_theta = 0.0, best_d = std::numeric_limits<double>::infinity();
  for (long k = 0; k <= n_steps; ++k) {
    const double theta = -range + static_cast<double>(k) * step;
    const auto f = rotate_into(centers, theta);
    const Point t = coarse_translation(f, w, spacing);
    const double d = discrepancy(f, w, t, spacing);
    if (d < best_d) {
      best_d = d;
      best_theta = theta;
    }
  }

  // Golden-section refinement on theta with the median translation inside.
  Point t_warm = coarse_translation(rotate_into(centers, best_theta), w, spacing);
  auto objective = [&](double theta, Point& t_out) {
    const auto f = rotate_into(centers, theta);
    t_out = median_translation(f, w, coarse_translation(f, w, spacing), spacing, options.tolerance_um);
    return discrepancy(f, w, t_out, spacing);
  };
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = best_theta - step, b = best_theta + step;
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  Point t1, t2;
  double f1 = objective(x1, t1), f2 = objective(x2, t2);
  while (b - a > 1e-11) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      t2 = t1;
      x1 = b - g * (b - a);
      f1 = objective(x1, t1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      t1 = t2;
      x2 = a + g * (b - a);
      f2 = objective(x2, t2);
    }
  }
  double theta = 0.5 * (a + b);
  double d_final = objective(theta, t_warm);
  for (const auto& [th, tt, ff] : {std::tuple{x1, t1, f1}, std::tuple{x2, t2, f2}}) {
    if (ff < d_final) {
      d_final = ff;
      theta = th;
      t_warm = tt;
    }
  }

  // Canonical translation: the grid node nearest the origin.
  const Point tc{wrap(t_warm.x, spacing), wrap(t_warm.y, spacing)};
  GridRegistration reg;
  reg.spacing = spacing;
  reg.theta = theta;
  reg.dx = std::cos(theta) * tc.x - std::sin(theta) * tc.y;
  reg.dy = std::sin(theta) * tc.x + std::cos(theta) * tc.y;
  reg.centers.assign(centers.begin(), centers.end());
  reg.weights = w;
  reg.weighting = weights.empty() ? "uniform" : "custom";
  for (const auto& p : centers) reg.radial.push_back(reg.distance_to_grid(p));
  reg.total_discrepancy = reg.recompute_discrepancy();
  return reg;
}

DiscrepancyStats discrepancy_stats(std::span<const double> radial, std::size_t bins, double max_um) {
  if (radial.empty()) throw InvalidInput("discrepancy statistics need at least one site");
  if (bins == 0) throw InvalidInput("histogram needs at least one bin");
  DiscrepancyStats st;
  const double n = static_cast<double>(radial.size());
  st.mean = std::accumulate(radial.begin(), radial.end(), 0.0) / n;
  if (radial.size() > 1) {
    double ss = 0.0;
    for (double v : radial) ss += (v - st.mean) * (v - st.mean);
    st.std = std::sqrt(ss / (n - 1.0));
  }
  double top = max_um > 0.0 ? max_um : *std::max_element(radial.begin(), radial.end());
  if (!(top > 0.0)) top = 1e-3;
  st.counts.assign(bins, 0);
  for (std::size_t k = 0; k <= bins; ++k) st.bin_edges.push_back(top * static_cast<double>(k) / static_cast<double>(bins));
  for (double v : radial) {
    if (v < 0.0 || v > top) continue;
    const auto k = std::min(bins - 1, static_cast<std::size_t>(v / top * static_cast<double>(bins)));
    ++st.counts[k];
  }
  return st;
}

DiscrepancyStats discrepancy_stats(const GridRegistration& reg, std::size_t bins, double max_um) {
  return discrepancy_stats(reg.radial, bins, max_um);
}

std::vector<std::optional<SpreadPoint>> activation_spread(std::span<const PLMap> maps, Point center_hint) {
  if (maps.empty()) throw InvalidInput("activation spread needs at least one map");
  std::vector<std::optional<SpreadPoint>> out;
  for (const auto& m : maps) {
    try {
      const auto f = fit_gaussian(m, center_hint.x, center_hint.y, std::max(m.rows(), m.cols()));
      out.push_back(SpreadPoint{f.mean_fwhm(), f.amplitude});
    } catch (const FitFailure&) {
      out.emplace_back(std::nullopt);
    } catch (const InvalidInput&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

double PlateauFit::evaluate(double t) const { return base + height / (1.0 + std::exp(-(t - t0) / width)); }

PlateauFit fit_plateau(std::span<const double> t, std::span<const double> values) {
  if (t.size() != values.size() || t.size() < 5) throw InvalidInput("plateau fit needs at least 5 paired samples");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double tspan = t.back() - t.front();
  if (!(tspan > 0.0)) throw InvalidInput("plateau fit needs increasing times");
  double t_half = t[t.size() / 2];
  const double half = 0.5 * (*lo + *hi);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (values[i] >= half) {
      t_half = t[i];
      break;
    }
  }
  const auto m = static_cast<Eigen::Index>(t.size());
  auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      r[i] = p[0] + p[1] / (1.0 + std::exp(-(t[k] - p[2]) / p[3])) - values[k];
    }
  };
  const double wmin = 1e-6 * tspan;
  auto project = [wmin](Eigen::VectorXd& p) { p[3] = std::max(std::abs(p[3]), wmin); };
  Eigen::VectorXd p0(4);
  p0 << *lo, *hi - *lo, t_half, tspan / 10.0;
  const auto res = fit::levenberg_marquardt(residual, p0, m, {}, {}, project);
  if (!res.params.allFinite()) throw FitFailure("plateau fit diverged");
  return {res.params[0], res.params[1], res.params[2], res.params[3]};
}

}  // namespace snvkit::localization
