#include "snvkit/spectra.hpp"

#include "snvkit/error.hpp"
#include "snvkit/levenberg_marquardt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace snvkit {

namespace {

constexpr double kFourLn2 = 4.0 * std::numbers::ln2;

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

std::vector<std::size_t> indices_in(const std::vector<double>& grid, double lo, double hi) {
  std::vector<std::size_t> idx;
  const auto first = std::lower_bound(grid.begin(), grid.end(), lo);
  const auto last = std::upper_bound(grid.begin(), grid.end(), hi);
  for (auto it = first; it < last; ++it) idx.push_back(static_cast<std::size_t>(it - grid.begin()));
  return idx;
}

// Width at half of (peak - base) around index `peak`, by linear interpolation
// of the crossings. Returns 0 when a crossing is not found inside [lo_i, hi_i].
double half_width_estimate(const std::vector<double>& x, const std::vector<double>& y,
                           std::size_t peak, double base, std::size_t lo_i, std::size_t hi_i) {
  const double half = base + 0.5 * (y[peak] - base);
  double left = 0.0, right = 0.0;
  bool found_left = false, found_right = false;
  for (std::size_t i = peak; i > lo_i; --i) {
    if (y[i - 1] <= half) {
      const double t = (y[i] - half) / (y[i] - y[i - 1]);
      left = x[i] - t * (x[i] - x[i - 1]);
      found_left = true;
      break;
    }
  }
  for (std::size_t i = peak; i < hi_i; ++i) {
    if (y[i + 1] <= half) {
      const double t = (y[i] - half) / (y[i] - y[i + 1]);
      right = x[i] + t * (x[i + 1] - x[i]);
      found_right = true;
      break;
    }
  }
  if (found_left && found_right) return right - left;
  if (found_left) return 2.0 * (x[peak] - left);
  if (found_right) return 2.0 * (right - x[peak]);
  return 0.0;
}

}  // namespace

Spectrum::Spectrum(std::vector<double> grid, std::vector<double> intensity, AcquisitionMeta meta,
                   GridUnit unit, bool baseline_subtracted)
    : grid_(std::move(grid)),
      intensity_(std::move(intensity)),
      meta_(meta),
      unit_(unit),
      baseline_subtracted_(baseline_subtracted) {
  if (grid_.size() != intensity_.size()) {
    throw InvalidInput("spectrum grid and intensity lengths differ");
  }
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (!std::isfinite(grid_[i]) || !std::isfinite(intensity_[i])) {
      throw InvalidInput("spectrum contains non-finite values");
    }
    if (i > 0 && !(grid_[i] > grid_[i - 1])) {
      throw InvalidInput("spectrum grid must be strictly increasing");
    }
    if (!baseline_subtracted_ && intensity_[i] < 0.0) {
      throw InvalidInput("negative intensity in a spectrum not marked baseline_subtracted");
    }
  }
}

double Spectrum::interpolate(double x) const {
  if (grid_.empty() || x < grid_.front() || x > grid_.back()) return 0.0;
  const auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
  if (it == grid_.end()) return intensity_.back();
  const auto i = static_cast<std::size_t>(it - grid_.begin());
  const double t = (x - grid_[i - 1]) / (grid_[i] - grid_[i - 1]);
  return intensity_[i - 1] + t * (intensity_[i] - intensity_[i - 1]);
}

SpectralWindow::SpectralWindow(WindowLabel label_, double lo_, double hi_, std::string name_)
    : label(label_), lo(lo_), hi(hi_), name(std::move(name_)) {
  if (!(lo < hi)) throw InvalidInput("spectral window requires lo < hi");
}

std::optional<SpectralWindow> SpectralWindow::by_name(const std::string& name) {
  if (name == "TypeIISn" || name == "TypeII") return type_ii_sn();
  if (name == "SnV") return snv();
  if (name == "GR1") return gr1();
  if (name == "gamma") return snv_gamma();
  if (name == "delta") return snv_delta();
  return std::nullopt;
}

double peak_area(PeakModel model, double height, double fwhm) {
  if (model == PeakModel::Lorentzian) return std::numbers::pi * height * fwhm / 2.0;
  return height * fwhm * std::sqrt(std::numbers::pi / kFourLn2);
}

double peak_profile(PeakModel model, double x, double center, double fwhm, double height) {
  const double u = (x - center) / fwhm;
  if (model == PeakModel::Lorentzian) return height / (1.0 + 4.0 * u * u);
  return height * std::exp(-kFourLn2 * u * u);
}

double PeakFit::evaluate(double x) const { return offset + peak_profile(model, x, center, fwhm, height); }

Spectrum to_energy(const Spectrum& s, bool jacobian) {
  if (s.unit() != GridUnit::Nanometre) throw InvalidInput("to_energy expects a wavelength grid");
  if (s.empty() || s.grid().front() <= 0.0) throw InvalidInput("wavelengths must be positive");
  const std::size_t n = s.size();
  std::vector<double> e(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = s.grid()[n - 1 - i];
    e[i] = kHcEvNm / lam;
    y[i] = s.intensity()[n - 1 - i] * (jacobian ? lam * lam / kHcEvNm : 1.0);
  }
  return Spectrum(std::move(e), std::move(y), s.meta(), GridUnit::ElectronVolt, s.baseline_subtracted());
}

Spectrum to_wavelength(const Spectrum& s, bool jacobian) {
  if (s.unit() != GridUnit::ElectronVolt) throw InvalidInput("to_wavelength expects an energy grid");
  if (s.empty() || s.grid().front() <= 0.0) throw InvalidInput("energies must be positive");
  const std::size_t n = s.size();
  std::vector<double> lam(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = s.grid()[n - 1 - i];
    lam[i] = kHcEvNm / e;
    y[i] = s.intensity()[n - 1 - i] * (jacobian ? e * e / kHcEvNm : 1.0);
  }
  return Spectrum(std::move(lam), std::move(y), s.meta(), GridUnit::Nanometre, s.baseline_subtracted());
}

double integrate_range(const Spectrum& s, double lo, double hi) {
  const auto& x = s.grid();
  if (x.size() < 2) throw EmptyWindow("spectrum has fewer than two samples");
  const double a = std::max(lo, x.front());
  const double b = std::min(hi, x.back());
  if (!(a < b)) throw EmptyWindow("window does not overlap the spectrum grid");
  double total = 0.0;
  auto i = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), a) - x.begin());
  i = std::max<std::size_t>(i, 1);
  for (; i < x.size() && x[i - 1] < b; ++i) {
    const double l = std::max(a, x[i - 1]);
    const double r = std::min(b, x[i]);
    if (r <= l) continue;
    total += 0.5 * (s.interpolate(l) + s.interpolate(r)) * (r - l);
  }
  return total;
}

double integrate_window(const Spectrum& s, const SpectralWindow& w) {
  if (s.unit() != GridUnit::Nanometre) throw InvalidInput("windows are defined in nm");
  return integrate_range(s, w.lo, w.hi);
}

Spectrum subtract_baseline(const Spectrum& s, const BaselineOptions& options) {
  const auto& x = s.grid();
  std::vector<double> y = s.intensity();

  switch (options.method) {
    case BaselineMethod::Reference: {
      if (!options.reference) throw InvalidInput("reference baseline requires a reference spectrum");
      const auto& ref = *options.reference;
      if (ref.size() != s.size() || ref.unit() != s.unit()) {
        throw InvalidInput("reference spectrum grid does not match");
      }
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(ref.grid()[i] - x[i]) > 1e-12 * std::max(1.0, std::abs(x[i]))) {
          throw InvalidInput("reference spectrum grid does not match");
        }
        y[i] -= ref.intensity()[i];
      }
      break;
    }
    case BaselineMethod::Constant: {
      std::vector<double> quiet;
      for (const auto& [lo, hi] : options.quiet_bands) {
        for (auto i : indices_in(x, lo, hi)) quiet.push_back(y[i]);
      }
      if (quiet.empty()) throw InvalidInput("constant baseline: quiet band holds no samples");
      const double level = median(std::move(quiet));
      for (auto& v : y) v -= level;
      break;
    }
    case BaselineMethod::Linear: {
      double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (const auto& [lo, hi] : options.quiet_bands) {
        for (auto i : indices_in(x, lo, hi)) {
          sw += 1.0;
          sx += x[i];
          sy += y[i];
          sxx += x[i] * x[i];
          sxy += x[i] * y[i];
        }
      }
      const double det = sw * sxx - sx * sx;
      if (sw < 2.0 || std::abs(det) <= 1e-12 * sxx * sw) {
        throw InvalidInput("linear baseline needs at least two distinct quiet samples");
      }
      const double slope = (sw * sxy - sx * sy) / det;
      const double intercept = (sy - slope * sx) / sw;
      for (std::size_t i = 0; i < x.size(); ++i) y[i] -= intercept + slope * x[i];
      break;
    }
  }
  return Spectrum(x, std::move(y), s.meta(), s.unit(), true);
}

PeakFit fit_peak(const Spectrum& s, double seed_center, const PeakFitOptions& options) {
  const auto& x = s.grid();
  const auto& y = s.intensity();
  if (s.empty() || seed_center < x.front() || seed_center > x.back()) {
    throw InvalidInput("peak seed lies outside the spectrum grid");
  }
  if (!(options.seed_fwhm > 0.0)) throw InvalidInput("seed_fwhm must be positive");
  const double hw = options.half_window.value_or(3.0 * options.seed_fwhm);
  const auto idx = indices_in(x, seed_center - hw, seed_center + hw);
  if (idx.size() < 5) throw InvalidInput("fewer than 5 samples inside the peak fit region");

  const std::size_t lo_i = idx.front(), hi_i = idx.back();
  std::size_t imax = lo_i;
  double ymin = y[lo_i];
  for (auto i : idx) {
    if (y[i] > y[imax]) imax = i;
    ymin = std::min(ymin, y[i]);
  }
  const double range = y[imax] - ymin;
  if (!(range > 1e-12 * std::max(std::abs(y[imax]), 1.0))) {
    throw FitFailure("flat data: no peak to fit", {seed_center, options.seed_fwhm, 0.0, ymin});
  }

  double w0 = half_width_estimate(x, y, imax, ymin, lo_i, hi_i);
  if (!(w0 > 0.0)) w0 = options.seed_fwhm;

  const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
  Eigen::VectorXd xs(m), ys(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    xs[k] = x[idx[static_cast<std::size_t>(k)]];
    ys[k] = y[idx[static_cast<std::size_t>(k)]];
  }
  const PeakModel model = options.model;
  auto residuals = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    for (Eigen::Index k = 0; k < m; ++k) {
      r[k] = p[3] + peak_profile(model, xs[k], p[0], p[1], p[2]) - ys[k];
    }
  };
  auto jacobian = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& jac) {
    jac.resize(m, 4);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double u = (xs[k] - p[0]) / p[1];
      if (model == PeakModel::Lorentzian) {
        const double d = 1.0 + 4.0 * u * u;
        const double g = p[2] * 8.0 * u / (d * d);
        jac(k, 0) = g / p[1];
        jac(k, 1) = g * u / p[1];
        jac(k, 2) = 1.0 / d;
      } else {
        const double e = std::exp(-kFourLn2 * u * u);
        const double g = p[2] * e * 2.0 * kFourLn2 * u;
        jac(k, 0) = g / p[1];
        jac(k, 1) = g * u / p[1];
        jac(k, 2) = e;
      }
      jac(k, 3) = 1.0;
    }
  };
  const double min_width = 1e-6 * options.seed_fwhm;
  auto project = [min_width](Eigen::VectorXd& p) { p[1] = std::max(p[1], min_width); };

  Eigen::VectorXd p0(4);
  p0 << x[imax], w0, range, ymin;
  fit::LmOptions lm;
  lm.max_iterations = options.max_iterations;
  lm.step_tolerance = options.step_tolerance;
  const auto res = fit::levenberg_marquardt(residuals, p0, m, lm, jacobian, project);
  const auto& p = res.params;
  std::vector<double> last(p.data(), p.data() + p.size());
  if (!res.converged) throw FitFailure("peak fit did not converge", last);
  if (!(p[2] > 0.0) || p[1] <= min_width) throw FitFailure("peak fit collapsed", last);
  if (p[0] < xs[0] || p[0] > xs[m - 1]) throw FitFailure("fitted centre left the fit region", last);

  PeakFit out;
  out.center = p[0];
  out.fwhm = p[1];
  out.height = p[2];
  out.offset = p[3];
  out.model = model;
  out.area = peak_area(model, out.height, out.fwhm);
  out.covariance = (res.covariance * res.residual_variance).topLeftCorner<4, 4>();
  out.iterations = res.iterations;
  return out;
}

std::vector<PeakFit> find_multiplet(const Spectrum& s, const SpectralWindow& window,
                                    const MultipletOptions& options) {
  const auto& x = s.grid();
  const auto& y = s.intensity();
  const auto idx = indices_in(x, window.lo, window.hi);
  std::vector<PeakFit> fits;
  if (idx.size() < 3) return fits;
  const std::size_t a = idx.front(), b = idx.back();

  struct Candidate {
    std::size_t i;
    double prominence;
    double base;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = a + 1; i < b; ++i) {
    if (!(y[i] > y[i - 1] && y[i] >= y[i + 1])) continue;
    double left_min = y[i];
    for (std::size_t j = i; j > a; --j) {
      if (y[j - 1] > y[i]) break;
      left_min = std::min(left_min, y[j - 1]);
    }
    double right_min = y[i];
    for (std::size_t j = i; j < b; ++j) {
      if (y[j + 1] > y[i]) break;
      right_min = std::min(right_min, y[j + 1]);
    }
    const double base = std::max(left_min, right_min);
    const double prom = y[i] - base;
    if (prom > 0.0 && prom >= options.min_prominence) cands.push_back({i, prom, base});
  }
  if (cands.empty()) return fits;

  const double dx = (x[b] - x[a]) / static_cast<double>(b - a);
  for (std::size_t k = 0; k < cands.size(); ++k) {
    const auto& c = cands[k];
    double w = half_width_estimate(x, y, c.i, c.base, a, b);
    if (!(w > 0.0)) w = 2.0 * dx;
    double hw = 3.0 * w;
    if (k > 0) hw = std::min(hw, 0.5 * (x[c.i] - x[cands[k - 1].i]) + w);
    if (k + 1 < cands.size()) hw = std::min(hw, 0.5 * (x[cands[k + 1].i] - x[c.i]) + w);
    hw = std::max(hw, 2.5 * dx);
    PeakFitOptions po;
    po.model = options.model;
    po.seed_fwhm = w;
    po.half_window = hw;
    try {
      fits.push_back(fit_peak(s, x[c.i], po));
    } catch (const FitFailure&) {
    } catch (const InvalidInput&) {
    }
  }
  std::sort(fits.begin(), fits.end(), [](const PeakFit& l, const PeakFit& r) { return l.center < r.center; });
  // Neighbouring maxima on one line can converge to the same centre.
  std::vector<PeakFit> unique;
  for (auto& f : fits) {
    if (!unique.empty() && std::abs(f.center - unique.back().center) < 0.5 * std::min(f.fwhm, unique.back().fwhm)) {
      if (f.height > unique.back().height) unique.back() = f;
      continue;
    }
    unique.push_back(f);
  }
  fits = std::move(unique);

  if (options.joint_refinement && fits.size() >= 2) {
    const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
    const Eigen::Index np = static_cast<Eigen::Index>(fits.size());
    Eigen::VectorXd p0(3 * np + 1);
    double offset = 0.0;
    for (Eigen::Index k = 0; k < np; ++k) {
      const auto& f = fits[static_cast<std::size_t>(k)];
      p0.segment<3>(3 * k) << f.center, f.fwhm, f.height;
      offset += f.offset / static_cast<double>(np);
    }
    p0[3 * np] = offset;
    const PeakModel model = options.model;
    auto residuals = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double xi = x[idx[static_cast<std::size_t>(i)]];
        double v = p[3 * np];
        for (Eigen::Index k = 0; k < np; ++k) v += peak_profile(model, xi, p[3 * k], p[3 * k + 1], p[3 * k + 2]);
        r[i] = v - y[idx[static_cast<std::size_t>(i)]];
      }
    };
    auto project = [np, dx](Eigen::VectorXd& p) {
      for (Eigen::Index k = 0; k < np; ++k) p[3 * k + 1] = std::max(p[3 * k + 1], 1e-3 * dx);
    };
    const auto res = fit::levenberg_marquardt(residuals, p0, m, {}, {}, project);
    bool ok = res.converged;
    for (Eigen::Index k = 0; ok && k < np; ++k) {
      ok = res.params[3 * k + 2] > 0.0 && res.params[3 * k] >= window.lo && res.params[3 * k] <= window.hi;
    }
    if (ok) {
      const Eigen::MatrixXd cov = res.covariance * res.residual_variance;
      for (Eigen::Index k = 0; k < np; ++k) {
        auto& f = fits[static_cast<std::size_t>(k)];
        f.center = res.params[3 * k];
        f.fwhm = res.params[3 * k + 1];
        f.height = res.params[3 * k + 2];
        f.offset = res.params[3 * np];
        f.area = peak_area(model, f.height, f.fwhm);
        f.covariance.setZero();
        f.covariance.topLeftCorner<3, 3>() = cov.block(3 * k, 3 * k, 3, 3);
        f.covariance(3, 3) = cov(3 * np, 3 * np);
        f.iterations = res.iterations;
      }
      std::sort(fits.begin(), fits.end(), [](const PeakFit& l, const PeakFit& r) { return l.center < r.center; });
    }
  }
  return fits;
}

std::vector<std::optional<PeakFit>> track_zpl(std::span<const Spectrum> series, double seed_center,
                                              const PeakFitOptions& options) {
  std::vector<std::optional<PeakFit>> out;
  out.reserve(series.size());
  double seed = seed_center;
  for (const auto& s : series) {
    try {
      auto f = fit_peak(s, seed, options);
      seed = f.center;
      out.emplace_back(std::move(f));
    } catch (const FitFailure&) {
      out.emplace_back(std::nullopt);
    } catch (const InvalidInput&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

double noise_sigma(const Spectrum& s) {
  const auto& y = s.intensity();
  if (y.size() < 3) return 0.0;
  std::vector<double> d(y.size() - 1);
  for (std::size_t i = 1; i < y.size(); ++i) d[i - 1] = y[i] - y[i - 1];
  const double med = median(d);
  for (auto& v : d) v = std::abs(v - med);
  return median(std::move(d)) / (0.6744897501960817 * std::numbers::sqrt2);
}

}  // namespace snvkit
