#include "snvkit/emission.hpp"

#include "snvkit/error.hpp"

#include <algorithm>
#include <cmath>

namespace snvkit {

void SpadTrace::validate() const {
  if (!(bin_s > 0.0)) throw InvalidInput("SPAD bin width must be positive");
  for (long c : counts) {
    if (c < 0) throw InvalidInput("SPAD counts must be non-negative");
  }
}

}  // namespace snvkit

namespace snvkit::kinetics {

namespace {

double gauss_peak(double x, double mu, double fwhm) {
  const double u = (x - mu) / fwhm;
  return std::exp(-4.0 * std::log(2.0) * u * u);
}

}  // namespace

double RamanBackground::at(double nm) const noexcept {
  return line_cps_per_nm * gauss_peak(nm, line_nm, line_fwhm_nm) + band_cps_per_nm * gauss_peak(nm, band_nm, band_fwhm_nm) +
         continuum_cps_per_nm;
}

double Emitter::Template::at(double offset_ev) const noexcept {
  const double u = (offset_ev - offset_lo_ev) / step_ev;
  if (u < 0.0) return 0.0;
  const auto k = static_cast<std::size_t>(u);
  if (k + 1 >= values.size()) return 0.0;
  const double f = u - static_cast<double>(k);
  return values[k] + f * (values[k + 1] - values[k]);
}

Emitter::Template Emitter::build(const SpeciesEmission& s) {
  if (!(s.zpl_nm > 0.0)) throw ConfigError("species.zpl_nm", "must be positive");
  const double e0 = kHcEvNm / s.zpl_nm;
  const vibronic::Lineshape ls(
      vibronic::VibronicModel::make(e0, s.huang_rhys, vibronic::PhononSpectrum::default_diamond(), s.zpl_fwhm_mev));
  Template t;
  t.step_ev = 5e-5;
  t.offset_lo_ev = std::max(ls.support_min_ev(), 0.5 * e0) - e0 - 1e-3;
  const double hi = 12.0 * s.zpl_fwhm_mev * 1e-3;
  const auto n = static_cast<std::size_t>(std::ceil((hi - t.offset_lo_ev) / t.step_ev)) + 1;
  t.values.resize(n);
  const double norm = ls.e3_norm();
  for (std::size_t i = 0; i < n; ++i) {
    const double e = e0 + t.offset_lo_ev + static_cast<double>(i) * t.step_ev;
    t.values[i] = e > 0.0 ? e * e * e * ls.density(e) / norm : 0.0;
  }
  return t;
}

Emitter::Emitter(EmissionModel model) : model_(std::move(model)) {
  const auto& m = model_;
  if (!(m.grid_step_nm > 0.0) || !(m.grid_hi_nm > m.grid_lo_nm)) throw ConfigError("emission.grid", "invalid spectral grid");
  if (!(m.multiplet_saturation > 0.0)) throw ConfigError("emission.multiplet_saturation", "must be positive");
  const auto n = static_cast<std::size_t>(std::floor((m.grid_hi_nm - m.grid_lo_nm) / m.grid_step_nm + 1e-9)) + 1;
  grid_.resize(n);
  for (std::size_t i = 0; i < n; ++i) grid_[i] = m.grid_lo_nm + static_cast<double>(i) * m.grid_step_nm;
  type_ii_ = build(m.type_ii);
  snv_ = build(m.snv);
  gr1_ = build(m.gr1);
  background_.resize(n);
  for (std::size_t i = 0; i < n; ++i) background_[i] = m.raman.at(grid_[i]);
}

double Emitter::multiplier(int emitters) const noexcept {
  if (emitters <= 0) return 0.0;
  const double n = static_cast<double>(emitters);
  return n / (1.0 + (n - 1.0) / model_.multiplet_saturation);
}

void Emitter::add_species(std::vector<double>& out, const Template& t, double zpl_nm, double scale_cps,
                          double splitting_thz) const {
  if (scale_cps <= 0.0) return;
  const double e_site = kHcEvNm / zpl_nm;
  // h * 1 THz in eV.
  const double half = 0.5 * splitting_thz * 4.135667696e-3;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const double lam = grid_[i];
    const double e = kHcEvNm / lam;
    const double shape = half > 0.0 ? 0.5 * (t.at(e - e_site - half) + t.at(e - e_site + half)) : t.at(e - e_site);
    out[i] += scale_cps * shape * kHcEvNm / (lam * lam);
  }
}

std::vector<double> Emitter::expected_density(const SiteState& site) const {
  std::vector<double> out = background_;
  add_species(out, gr1_, model_.gr1.zpl_nm, model_.gr1.brightness_cps * static_cast<double>(site.gr1_population));
  const double m = multiplier(site.split_vacancies);
  if (site.state == DefectState::TypeII) {
    add_species(out, type_ii_, site.zpl_center_nm.value_or(model_.type_ii.zpl_nm), model_.type_ii.brightness_cps * m,
                model_.type_ii.doublet_splitting_thz);
  } else if (site.state == DefectState::SnV) {
    add_species(out, snv_, site.zpl_center_nm.value_or(model_.snv.zpl_nm), model_.snv.brightness_cps * m,
                model_.snv.doublet_splitting_thz);
  }
  return out;
}

Spectrum Emitter::emit_spectrum(const SiteState& site, double acquisition_s, std::uint64_t noise_seed) const {
  if (!(acquisition_s > 0.0)) throw InvalidInput("acquisition time must be positive");
  auto eng = site_engine(noise_seed, site.site_id, 2, 0);
  auto y = expected_density(site);
  for (auto& v : y) {
    const double mu = v * model_.grid_step_nm * acquisition_s;
    std::poisson_distribution<long> p(mu);
    v = mu > 0.0 ? static_cast<double>(p(eng)) : 0.0;
  }
  AcquisitionMeta meta;
  meta.integration_s = acquisition_s;
  return Spectrum(grid_, std::move(y), meta);
}

double Emitter::spad_rate(const SiteState& site, DefectState state, std::optional<double> zpl_nm) const {
  SiteState s = site;
  s.state = state;
  s.zpl_center_nm = zpl_nm;
  const Spectrum dens(grid_, expected_density(s));
  return model_.spad.efficiency * integrate_window(dens, model_.spad.window) + model_.spad.dark_cps;
}

std::vector<double> Emitter::expected_spad_counts(const SiteState& site, const Timeline& timeline, double bin_s) const {
  if (!(bin_s > 0.0)) throw InvalidInput("SPAD bin width must be positive");
  const auto n_bins = static_cast<std::size_t>(std::floor(timeline.duration_s / bin_s + 1e-9));
  // Piecewise-constant rate: boundaries[k] .. boundaries[k+1] at rates[k].
  std::vector<double> bounds{0.0};
  std::vector<double> rates{spad_rate(site, timeline.initial, timeline.initial_zpl_nm)};
  for (const auto& c : timeline.changes) {
    bounds.push_back(c.time_s);
    rates.push_back(spad_rate(site, c.state, c.zpl_center_nm));
  }
  bounds.push_back(std::max(timeline.duration_s, bounds.back()));
  std::vector<double> out(n_bins, 0.0);
  std::size_t k = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) * bin_s, hi = lo + bin_s;
    while (k + 1 < rates.size() && bounds[k + 1] <= lo) ++k;
    double acc = 0.0;
    for (std::size_t j = k; j < rates.size() && bounds[j] < hi; ++j) {
      const double overlap = std::min(hi, bounds[j + 1]) - std::max(lo, bounds[j]);
      if (overlap > 0.0) acc += overlap * rates[j];
    }
    out[b] = acc;
  }
  return out;
}

SpadTrace Emitter::emit_spad_trace(const SiteState& site, const Timeline& timeline, double bin_s,
                                   std::mt19937_64& engine) const {
  SpadTrace tr;
  tr.bin_s = bin_s;
  tr.window = model_.spad.window;
  for (double mu : expected_spad_counts(site, timeline, bin_s)) {
    std::poisson_distribution<long> p(mu);
    tr.counts.push_back(mu > 0.0 ? p(engine) : 0);
  }
  return tr;
}

}  // namespace snvkit::kinetics
