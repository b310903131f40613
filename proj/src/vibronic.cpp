#include "snvkit/vibronic.hpp"

#include "snvkit/error.hpp"
#include "snvkit/levenberg_marquardt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace snvkit::vibronic {

namespace {

constexpr double kFourLn2 = 4.0 * std::numbers::ln2;

double trapezoid(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

// Linear interpolation of a table sampled at k * spacing; zero outside.
double table_at(const std::vector<double>& t, double ev, double spacing) {
  if (ev < 0.0) return 0.0;
  const double u = ev / spacing;
  const auto k = static_cast<std::size_t>(u);
  if (k + 1 >= t.size()) return (k + 1 == t.size() && u == static_cast<double>(k)) ? t[k] : 0.0;
  const double f = u - static_cast<double>(k);
  return t[k] + f * (t[k + 1] - t[k]);
}

double zpl_line(ZplShape shape, double de_ev, double fwhm_ev) {
  const double u = de_ev / fwhm_ev;
  if (shape == ZplShape::Gaussian) {
    return std::sqrt(kFourLn2 / std::numbers::pi) / fwhm_ev * std::exp(-kFourLn2 * u * u);
  }
  return 2.0 / (std::numbers::pi * fwhm_ev) / (1.0 + 4.0 * u * u);
}

}  // namespace

PhononSpectrum::PhononSpectrum(std::vector<double> density, double spacing_mev)
    : density_(std::move(density)), spacing_(spacing_mev) {
  if (density_.size() < 2) throw InvalidInput("phonon spectrum needs at least two samples");
  if (!(spacing_ > 0.0)) throw InvalidInput("phonon grid spacing must be positive");
  if (density_.front() != 0.0) throw InvalidInput("phonon density must vanish at E_v = 0");
  for (double v : density_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("phonon density must be finite and non-negative");
  }
}

PhononSpectrum PhononSpectrum::from_function(const std::function<double(double)>& f, double cutoff_mev,
                                             double spacing_mev) {
  const auto k_max = static_cast<std::size_t>(std::llround(cutoff_mev / spacing_mev));
  std::vector<double> d(k_max + 1, 0.0);
  for (std::size_t k = 1; k <= k_max; ++k) d[k] = std::max(0.0, f(spacing_mev * static_cast<double>(k)));
  return PhononSpectrum(std::move(d), spacing_mev).normalized();
}

PhononSpectrum PhononSpectrum::from_nodes(std::span<const double> nodes, double node_spacing_mev,
                                          double spacing_mev) {
  if (nodes.empty()) throw InvalidInput("phonon basis needs at least one node");
  const double cutoff = node_spacing_mev * static_cast<double>(nodes.size());
  const auto k_max = static_cast<std::size_t>(std::llround(cutoff / spacing_mev));
  std::vector<double> d(k_max + 1, 0.0);
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double u = spacing_mev * static_cast<double>(k) / node_spacing_mev;
    const auto j = std::min(static_cast<std::size_t>(u), nodes.size() - 1);
    const double f = u - static_cast<double>(j);
    const double left = j == 0 ? 0.0 : nodes[j - 1];
    const double right = nodes[j];
    d[k] = std::max(0.0, j + 1 == nodes.size() && f > 0.0 ? right : left + f * (right - left));
  }
  return PhononSpectrum(std::move(d), spacing_mev).normalized();
}

PhononSpectrum PhononSpectrum::default_diamond() {
  auto bump = [](double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / sigma;
  };
  return from_function([&](double e) {
    return 0.35 * bump(e, 35.0, 8.0) + 0.40 * bump(e, 70.0, 12.0) + 0.25 * bump(e, 150.0, 6.0);
  });
}

double PhononSpectrum::integral() const noexcept {
  return spacing_ * std::accumulate(density_.begin(), density_.end(), 0.0);
}

bool PhononSpectrum::is_normalized(double tol) const noexcept { return std::abs(integral() - 1.0) <= tol; }

PhononSpectrum PhononSpectrum::normalized() const {
  const double total = integral();
  if (!(total > 0.0)) throw InvalidInput("phonon density has zero integral");
  std::vector<double> d = density_;
  for (auto& v : d) v /= total;
  return PhononSpectrum(std::move(d), spacing_);
}

double PhononSpectrum::value_at(double ev_mev) const noexcept { return table_at(density_, ev_mev, spacing_); }

std::vector<double> convolve(std::span<const double> a, std::span<const double> b, double spacing) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i] * spacing;
    if (ai == 0.0) continue;
    double* o = out.data() + i;
    for (std::size_t j = 0; j < b.size(); ++j) o[j] += ai * b[j];
  }
  return out;
}

std::vector<double> convolve_order(const PhononSpectrum& p, int n) {
  if (n < 1) throw InvalidInput("phonon order must be >= 1");
  if (!p.is_normalized()) throw InvalidInput("single-phonon spectrum is not normalized");
  std::vector<double> cur = p.density();
  for (int k = 2; k <= n; ++k) cur = convolve(p.density(), cur, p.spacing());
  return cur;
}

double franck_condon_weight(double huang_rhys, int n) {
  if (n < 0) return 0.0;
  double w = std::exp(-huang_rhys);
  for (int k = 1; k <= n; ++k) w *= huang_rhys / static_cast<double>(k);
  return w;
}

int required_order(double huang_rhys, double tail) {
  if (huang_rhys <= 0.0) return 1;
  double cumulative = franck_condon_weight(huang_rhys, 0);
  double term = cumulative;
  int n = 0;
  while (1.0 - cumulative >= tail && n < 10000) {
    ++n;
    term *= huang_rhys / static_cast<double>(n);
    cumulative += term;
  }
  // 1 - cumulative loses precision near the bound; add the next terms explicitly.
  double rest = 0.0;
  double t = term;
  for (int k = n + 1; k < n + 200; ++k) {
    t *= huang_rhys / static_cast<double>(k);
    rest += t;
    if (t < 1e-30) break;
  }
  while (rest >= tail) {
    ++n;
    term *= huang_rhys / static_cast<double>(n);
    rest -= term;
  }
  return std::max(n, 1);
}

VibronicModel VibronicModel::make(double zpl_energy_ev, double huang_rhys, PhononSpectrum phonons,
                                  double zpl_fwhm_mev, ZplShape shape) {
  VibronicModel m;
  m.zpl_energy_ev = zpl_energy_ev;
  m.huang_rhys = huang_rhys;
  m.phonons = std::move(phonons);
  m.zpl_fwhm_mev = zpl_fwhm_mev;
  m.n_max = required_order(huang_rhys);
  m.zpl_shape = shape;
  return m;
}

void VibronicModel::validate() const {
  if (!(huang_rhys >= 0.0)) throw InvalidInput("Huang-Rhys factor must be >= 0");
  if (n_max < 1) throw InvalidInput("n_max must be >= 1");
  if (!(zpl_energy_ev > 0.0)) throw InvalidInput("ZPL energy must be positive");
  if (!(zpl_fwhm_mev > 0.0)) throw InvalidInput("ZPL width must be positive");
  double tail = 0.0;
  for (int n = n_max + 1; n < n_max + 400; ++n) {
    const double t = franck_condon_weight(huang_rhys, n);
    tail += t;
    if (t < 1e-300) break;
  }
  if (tail >= kTruncationTail) throw InvalidInput("n_max truncation tail exceeds 1e-6");
  if (!phonons.is_normalized()) throw InvalidInput("phonon spectrum is not normalized");
}

Lineshape::Lineshape(VibronicModel model) : model_(std::move(model)) {
  model_.validate();
  const auto& p = model_.phonons;
  std::vector<double> cur = p.density();
  for (int n = 1; n <= model_.n_max; ++n) {
    if (n > 1) cur = convolve(p.density(), cur, p.spacing());
    orders_.push_back(cur);
    weights_.push_back(franck_condon_weight(model_.huang_rhys, n));
  }
  // E^3-weighted norm on a fine grid spanning the support.
  const double w = model_.zpl_fwhm_mev * 1e-3;
  const double reach = model_.zpl_shape == ZplShape::Gaussian ? 6.0 * w : 400.0 * w;
  const double lo = std::max(1e-6, support_min_ev() - 1e-3);
  const double hi = model_.zpl_energy_ev + reach;
  const double step = std::min(p.spacing() * 1e-3, w / 8.0);
  const auto npts = static_cast<std::size_t>(std::ceil((hi - lo) / step)) + 1;
  double acc = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < npts; ++i) {
    const double e = lo + static_cast<double>(i) * (hi - lo) / static_cast<double>(npts - 1);
    const double v = e * e * e * density(e);
    if (i > 0) acc += 0.5 * (v + prev) * (hi - lo) / static_cast<double>(npts - 1);
    prev = v;
  }
  e3_norm_ = acc;
}

double Lineshape::support_min_ev() const noexcept {
  return model_.zpl_energy_ev - static_cast<double>(model_.n_max) * model_.phonons.cutoff() * 1e-3;
}

double Lineshape::zpl_density(double energy_ev) const {
  return std::exp(-model_.huang_rhys) *
         zpl_line(model_.zpl_shape, energy_ev - model_.zpl_energy_ev, model_.zpl_fwhm_mev * 1e-3);
}

double Lineshape::psb_density(double energy_ev) const {
  const double ev_mev = (model_.zpl_energy_ev - energy_ev) * 1e3;
  if (ev_mev <= 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t n = 0; n < orders_.size(); ++n) {
    s += weights_[n] * table_at(orders_[n], ev_mev, model_.phonons.spacing());
  }
  return s * 1e3;
}

Spectrum synthesize(const VibronicModel& model, std::span<const double> energy_grid_ev,
                    const SynthesisOptions& options) {
  model.validate();
  if (energy_grid_ev.size() < 2) throw InvalidInput("energy grid needs at least two samples");
  const double need_lo = model.zpl_energy_ev - model.n_max * model.phonons.cutoff() * 1e-3;
  const double need_hi = model.zpl_energy_ev + 3.0 * model.zpl_fwhm_mev * 1e-3;
  const double slack = 1e-9;
  if (energy_grid_ev.front() > need_lo + slack || energy_grid_ev.back() < need_hi - slack) {
    throw InvalidInput("energy grid does not span the ZPL and all sideband orders");
  }
  const Lineshape ls(model);
  std::vector<double> e(energy_grid_ev.begin(), energy_grid_ev.end());
  std::vector<double> y(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!(e[i] > 0.0)) throw InvalidInput("photon energies must be positive");
    const double w3 = options.apply_e3 ? e[i] * e[i] * e[i] : 1.0;
    y[i] = w3 * ls.density(e[i]);
  }
  const double area = trapezoid(e, y);
  if (!(area > 0.0)) throw InvalidInput("synthesized spectrum has zero area on this grid");
  for (auto& v : y) v /= area;
  return Spectrum(std::move(e), std::move(y), {}, GridUnit::ElectronVolt);
}

std::vector<double> covering_grid(const VibronicModel& model, double spacing_mev) {
  const double step = spacing_mev * 1e-3;
  const auto above = static_cast<long>(std::ceil(3.0 * model.zpl_fwhm_mev / spacing_mev)) + 2;
  const auto below = static_cast<long>(std::ceil(model.n_max * model.phonons.cutoff() / spacing_mev));
  std::vector<double> grid;
  for (long k = -below; k <= above; ++k) {
    const double e = model.zpl_energy_ev + static_cast<double>(k) * step;
    if (e > 0.0) grid.push_back(e);
  }
  return grid;
}

Decomposition decompose(const VibronicModel& model, std::span<const double> energy_grid_ev) {
  const Lineshape ls(model);
  Decomposition d;
  d.zpl.resize(energy_grid_ev.size());
  d.psb.resize(energy_grid_ev.size());
  std::vector<double> total(energy_grid_ev.size());
  for (std::size_t i = 0; i < energy_grid_ev.size(); ++i) {
    d.zpl[i] = ls.zpl_density(energy_grid_ev[i]);
    d.psb[i] = ls.psb_density(energy_grid_ev[i]);
    total[i] = d.zpl[i] + d.psb[i];
  }
  const double t = trapezoid(energy_grid_ev, total);
  d.zpl_fraction = t > 0.0 ? trapezoid(energy_grid_ev, d.zpl) / t : 0.0;
  return d;
}

// ---------------------------------------------------------------------------
// Huang-Rhys fitting

namespace {

struct FitData {
  std::vector<double> energy;  // eV, ascending
  std::vector<double> counts;
  std::vector<double> weight;  // E^3 or 1
};

class PhononBasis {
 public:
  PhononBasis(std::size_t nodes, double node_spacing, double spacing)
      : nodes_(nodes),
        step_(static_cast<std::size_t>(std::llround(node_spacing / spacing))),
        spacing_(spacing),
        k_max_(nodes * step_) {
    hat_mass_.resize(nodes_);
    for (std::size_t j = 0; j < nodes_; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= k_max_; ++k) s += hat(j, k);
      hat_mass_[j] = spacing_ * s;
    }
  }

  [[nodiscard]] double hat(std::size_t j, std::size_t k) const {
    const double q = static_cast<double>((j + 1) * step_);
    return std::max(0.0, 1.0 - std::abs(static_cast<double>(k) - q) / static_cast<double>(step_));
  }
  [[nodiscard]] std::size_t hat_lo(std::size_t j) const { return j * step_; }
  [[nodiscard]] std::size_t hat_hi(std::size_t j) const { return std::min((j + 2) * step_, k_max_); }

  // Unnormalized grid function u = sum c_j phi_j.
  [[nodiscard]] std::vector<double> expand(const Eigen::VectorXd& c) const {
    std::vector<double> u(k_max_ + 1, 0.0);
    for (std::size_t j = 0; j < nodes_; ++j) {
      if (c[static_cast<Eigen::Index>(j)] == 0.0) continue;
      for (std::size_t k = hat_lo(j); k <= hat_hi(j); ++k) u[k] += c[static_cast<Eigen::Index>(j)] * hat(j, k);
    }
    return u;
  }
  [[nodiscard]] double mass(const std::vector<double>& u) const {
    return spacing_ * std::accumulate(u.begin(), u.end(), 0.0);
  }

  std::size_t nodes_;
  std::size_t step_;
  double spacing_;
  std::size_t k_max_;
  std::vector<double> hat_mass_;
};

std::vector<std::vector<double>> order_tables(const std::vector<double>& i1, int n_max, double spacing) {
  std::vector<std::vector<double>> t;
  t.push_back(i1);
  for (int n = 2; n <= n_max; ++n) t.push_back(convolve(i1, t.back(), spacing));
  return t;
}

}  // namespace

HuangRhysFit fit_huang_rhys(const Spectrum& observed, double zpl_hint_nm, const HuangRhysFitOptions& options) {
  const Spectrum spec = observed.unit() == GridUnit::Nanometre ? to_energy(observed, true) : observed;
  if (spec.size() < 16) throw InvalidInput("observed spectrum too short for a vibronic fit");

  FitData data;
  data.energy = spec.grid();
  data.counts = spec.intensity();
  data.weight.resize(data.energy.size());
  for (std::size_t i = 0; i < data.energy.size(); ++i) {
    const double e = data.energy[i];
    data.weight[i] = options.apply_e3 ? e * e * e : 1.0;
  }
  const auto m = static_cast<Eigen::Index>(data.energy.size());

  // Locate the ZPL.
  const double hint_ev = kHcEvNm / zpl_hint_nm;
  PeakFitOptions zopt;
  zopt.model = options.zpl_shape == ZplShape::Gaussian ? PeakModel::Gaussian : PeakModel::Lorentzian;
  zopt.seed_fwhm = options.zpl_seed_fwhm_mev * 1e-3;
  PeakFit zpl;
  try {
    zpl = fit_peak(spec, hint_ev, zopt);
  } catch (const Error& e) {
    throw FitFailure(std::string("unresolvable ZPL: ") + e.what());
  }
  if (std::abs(zpl.center - hint_ev) > 0.05) throw FitFailure("unresolvable ZPL: no line near the hint");

  const double spacing = kDefaultSpacingMeV;
  const auto n_nodes = static_cast<std::size_t>(std::llround(options.cutoff_mev / options.node_spacing_mev));
  const PhononBasis basis(n_nodes, options.node_spacing_mev, spacing);

  // Initial S from the pre-E^3 ZPL fraction.
  std::vector<double> pre(data.energy.size());
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = data.counts[i] / data.weight[i];
  const double total_pre = trapezoid(data.energy, pre);
  const double zpl_w3 = options.apply_e3 ? std::pow(zpl.center, 3) : 1.0;
  const double zpl_pre = peak_area(zopt.model, zpl.height, zpl.fwhm) / zpl_w3;
  if (!(total_pre > 0.0) || !(zpl_pre > 0.0)) throw FitFailure("unresolvable ZPL: no positive ZPL area");
  const double frac0 = std::clamp(zpl_pre / total_pre, 1e-4, 1.0);
  double s_cur = -std::log(frac0);

  // Initial I_1 nodes from the observed sideband shape.
  Eigen::VectorXd c(static_cast<Eigen::Index>(n_nodes));
  for (std::size_t j = 0; j < n_nodes; ++j) {
    const double e = zpl.center - options.node_spacing_mev * static_cast<double>(j + 1) * 1e-3;
    double v = spec.interpolate(e) - peak_profile(zopt.model, e, zpl.center, zpl.fwhm, zpl.height);
    const double w3 = options.apply_e3 ? e * e * e : 1.0;
    c[static_cast<Eigen::Index>(j)] = std::max(0.0, v / w3);
  }
  if (!(c.sum() > 0.0)) c.setOnes();
  c.array() += 1e-3 * c.maxCoeff();

  const ZplShape shape = options.zpl_shape;
  auto normalize_nodes = [&](Eigen::VectorXd& v) {
    for (auto& x : v) x = std::max(x, 0.0);
    const double mass = basis.mass(basis.expand(v));
    if (mass > 0.0) v /= mass;
  };
  normalize_nodes(c);

  // Global parameters: amplitude, S, E0, ZPL FWHM (meV).
  Eigen::VectorXd g(4);
  g << 1.0, s_cur, zpl.center, std::max(zpl.fwhm * 1e3, 0.05);
  {
    // Amplitude from total area of the initial model.
    double model_area = 0.0, prev = 0.0;
    const auto i1 = basis.expand(c);
    const Lineshape ls(VibronicModel::make(g[2], s_cur, PhononSpectrum(i1, spacing).normalized(), g[3], shape));
    for (std::size_t i = 0; i < data.energy.size(); ++i) {
      const double v = data.weight[i] * ls.density(data.energy[i]);
      if (i > 0) model_area += 0.5 * (v + prev) * (data.energy[i] - data.energy[i - 1]);
      prev = v;
    }
    const double obs_area = trapezoid(data.energy, data.counts);
    g[0] = model_area > 0.0 ? obs_area / model_area : 1.0;
  }

  auto order_cap = [](double s) { return required_order(std::max(s, 1e-3) * 1.25 + 0.25); };

  // Sideband evaluation from tables at data points.
  auto psb_at = [spacing](const std::vector<std::vector<double>>& tables, double s, double ev_mev) {
    if (ev_mev <= 0.0) return 0.0;
    double acc = 0.0;
    double w = std::exp(-s);
    for (std::size_t n = 0; n < tables.size(); ++n) {
      w *= s / static_cast<double>(n + 1);
      acc += w * table_at(tables[n], ev_mev, spacing);
    }
    return acc * 1e3;
  };

  HuangRhysFit out;
  double prev_cost = std::numeric_limits<double>::infinity();
  double y_norm2 = 0.0;
  for (double v : data.counts) y_norm2 += v * v;
  double cost = prev_cost;

  for (int round = 1; round <= options.max_rounds; ++round) {
    out.rounds = round;
    // (i) S and ZPL parameters with I_1 frozen.
    {
      const auto u = basis.expand(c);
      const double mass = basis.mass(u);
      std::vector<double> i1(u.size());
      for (std::size_t k = 0; k < u.size(); ++k) i1[k] = u[k] / mass;
      const auto tables = order_tables(i1, order_cap(std::max(g[1], 2.0 * s_cur)), spacing);
      auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
        const double ez = std::exp(-p[1]);
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto ii = static_cast<std::size_t>(i);
          const double e = data.energy[ii];
          const double d = ez * zpl_line(shape, e - p[2], p[3] * 1e-3) + psb_at(tables, p[1], (p[2] - e) * 1e3);
          r[i] = p[0] * data.weight[ii] * d - data.counts[ii];
        }
      };
      auto project = [](Eigen::VectorXd& p) {
        p[0] = std::max(p[0], 0.0);
        p[1] = std::max(p[1], 0.0);
        p[3] = std::max(p[3], 0.02);
      };
      fit::LmOptions lm;
      lm.max_iterations = 50;
      lm.step_tolerance = 1e-10;
      const auto res = fit::levenberg_marquardt(residual, g, m, lm, {}, project);
      g = res.params;
      s_cur = g[1];
    }
    // (ii) Non-negative I_1 node values with (A, S, E0, width) frozen.
    {
      const double a = g[0], s = g[1], e0 = g[2], wz = g[3];
      const int n_cap = order_cap(s);
      const double ez = std::exp(-s);
      std::vector<double> zpl_part(data.energy.size());
      std::vector<std::size_t> kidx(data.energy.size());
      std::vector<double> kfrac(data.energy.size());
      std::vector<bool> inside(data.energy.size());
      for (std::size_t i = 0; i < data.energy.size(); ++i) {
        zpl_part[i] = ez * zpl_line(shape, data.energy[i] - e0, wz * 1e-3);
        const double ev = (e0 - data.energy[i]) * 1e3;
        inside[i] = ev > 0.0;
        const double u = std::max(ev, 0.0) / spacing;
        kidx[i] = static_cast<std::size_t>(u);
        kfrac[i] = u - static_cast<double>(kidx[i]);
      }
      auto sample = [&](const std::vector<double>& t, std::size_t i) {
        if (!inside[i]) return 0.0;
        const std::size_t k = kidx[i];
        if (k + 1 >= t.size()) return 0.0;
        return t[k] + kfrac[i] * (t[k + 1] - t[k]);
      };
      std::vector<double> fc(static_cast<std::size_t>(n_cap) + 1);
      for (int n = 0; n <= n_cap; ++n) fc[static_cast<std::size_t>(n)] = franck_condon_weight(s, n);

      auto residual = [&](const Eigen::VectorXd& cv, Eigen::VectorXd& r) {
        const auto u = basis.expand(cv);
        const double mass = basis.mass(u);
        std::vector<double> i1(u.size());
        for (std::size_t k = 0; k < u.size(); ++k) i1[k] = mass > 0.0 ? u[k] / mass : 0.0;
        const auto tables = order_tables(i1, n_cap, spacing);
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto ii = static_cast<std::size_t>(i);
          double psb = 0.0;
          for (std::size_t n = 0; n < tables.size(); ++n) psb += fc[n + 1] * sample(tables[n], ii);
          r[i] = a * data.weight[ii] * (zpl_part[ii] + psb * 1e3) - data.counts[ii];
        }
      };
      auto jacobian = [&](const Eigen::VectorXd& cv, Eigen::MatrixXd& jac) {
        const auto u = basis.expand(cv);
        const double mass = basis.mass(u);
        std::vector<double> i1(u.size());
        for (std::size_t k = 0; k < u.size(); ++k) i1[k] = u[k] / mass;
        const auto tables = order_tables(i1, n_cap, spacing);
        // Q = sum n p_n I_n ; H = sum_{n>=2} n p_n I_{n-1}
        std::vector<double> q(tables.back().size(), 0.0);
        std::vector<double> h(tables.size() > 1 ? tables[tables.size() - 2].size() : 1, 0.0);
        for (std::size_t n = 0; n < tables.size(); ++n) {
          const double wq = static_cast<double>(n + 1) * fc[n + 1];
          for (std::size_t k = 0; k < tables[n].size(); ++k) q[k] += wq * tables[n][k];
          if (n + 1 < tables.size()) {
            const double wh = static_cast<double>(n + 2) * fc[n + 2];
            for (std::size_t k = 0; k < tables[n].size(); ++k) h[k] += wh * tables[n][k];
          }
        }
        jac.resize(m, cv.size());
        std::vector<double> dj(h.size() + basis.k_max_ + 1);
        for (std::size_t j = 0; j < basis.nodes_; ++j) {
          std::fill(dj.begin(), dj.end(), 0.0);
          const std::size_t lo = basis.hat_lo(j), hi = basis.hat_hi(j);
          for (std::size_t l = lo; l <= hi; ++l) {
            const double phi = basis.hat(j, l);
            if (phi == 0.0) continue;
            dj[l] += fc[1] * phi;
            const double w = spacing * phi;
            for (std::size_t k = 0; k < h.size(); ++k) dj[l + k] += w * h[k];
          }
          const double hm = basis.hat_mass_[j];
          for (std::size_t k = 0; k < q.size() && k < dj.size(); ++k) dj[k] -= hm * q[k];
          for (Eigen::Index i = 0; i < m; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            jac(i, static_cast<Eigen::Index>(j)) = a * data.weight[ii] * 1e3 * sample(dj, ii) / mass;
          }
        }
      };
      fit::LmOptions lm;
      lm.max_iterations = options.inner_iterations;
      lm.step_tolerance = 1e-10;
      const auto res = fit::levenberg_marquardt(residual, c, m, lm, jacobian, normalize_nodes);
      c = res.params;
      cost = res.cost;
    }
    const double rel_change = std::abs(prev_cost - cost) / std::max(prev_cost, 1e-300);
    if (rel_change < options.tolerance || 2.0 * cost <= 1e-24 * y_norm2) {
      out.converged = true;
      break;
    }
    prev_cost = cost;
  }

  const auto i1 = basis.expand(c);
  out.model = VibronicModel::make(g[2], g[1], PhononSpectrum(i1, spacing).normalized(), g[3], shape);
  out.amplitude = g[0];
  out.relative_residual = y_norm2 > 0.0 ? std::sqrt(2.0 * cost / y_norm2) : 0.0;
  out.node_values.assign(c.data(), c.data() + c.size());
  return out;
}

}  // namespace snvkit::vibronic
