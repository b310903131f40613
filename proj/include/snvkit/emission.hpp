#pragma once

#include "snvkit/kinetics.hpp"
#include "snvkit/spectra.hpp"
#include "snvkit/vibronic.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace snvkit {

/// Photon counts per time bin from a single-photon detector behind a spectral filter.
struct SpadTrace {
  double bin_s = 0.02;
  std::vector<long> counts;
  SpectralWindow window = SpectralWindow::snv();

  void validate() const;
};

}  // namespace snvkit

namespace snvkit::kinetics {

struct SpeciesEmission {
  double zpl_nm = 0.0;     ///< mean ZPL
  double zpl_sd_nm = 0.0;  ///< spread of the per-entry ZPL draw
  double huang_rhys = 0.0;
  double zpl_fwhm_mev = 1.0;
  double brightness_cps = 0.0;  ///< per emitter (per ion for GR1)
  /// Low-temperature ZPL doublet: two equal lines this far apart in frequency. 0 = single line.
  double doublet_splitting_thz = 0.0;
  SpectralWindow window = SpectralWindow::custom(0.0, 1.0);

  [[nodiscard]] ZplDraw draw() const noexcept { return {zpl_nm, zpl_sd_nm}; }
};

/// Gaussian first-order line, Gaussian second-order band, flat continuum (counts/s/nm).
struct RamanBackground {
  double line_nm = 0.0;
  double line_fwhm_nm = 1.0;
  double line_cps_per_nm = 0.0;
  double band_nm = 0.0;
  double band_fwhm_nm = 1.0;
  double band_cps_per_nm = 0.0;
  double continuum_cps_per_nm = 0.0;

  [[nodiscard]] double at(double nm) const noexcept;
};

struct SpadModel {
  double bin_s = 0.02;
  SpectralWindow window = SpectralWindow::snv();
  double efficiency = 1.0;  ///< SPAD counts per spectrometer count in the window
  double dark_cps = 0.0;
};

struct EmissionModel {
  SpeciesEmission type_ii;
  SpeciesEmission snv;
  SpeciesEmission gr1;
  /// Emitters per site beyond this count add progressively less light.
  double multiplet_saturation = 1.0;
  double grid_lo_nm = 560.0;
  double grid_hi_nm = 780.0;
  double grid_step_nm = 0.1;
  RamanBackground raman;
  SpadModel spad;

  /// Per-entry ZPL draws for anneal().
  [[nodiscard]] AnnealOptions anneal_options() const { return {type_ii.draw(), snv.draw(), std::nullopt, 1}; }
};

/// Precomputed emission templates for fast per-site spectra.
class Emitter {
 public:
  explicit Emitter(EmissionModel model);

  [[nodiscard]] const EmissionModel& model() const noexcept { return model_; }
  [[nodiscard]] const std::vector<double>& grid() const noexcept { return grid_; }
  /// Light from n emitters relative to one: n / (1 + (n - 1) / saturation).
  [[nodiscard]] double multiplier(int emitters) const noexcept;

  /// Noise-free spectral rate (counts/s/nm) on grid().
  [[nodiscard]] std::vector<double> expected_density(const SiteState& site) const;
  /// Expected counts per grid pixel plus Poisson shot noise.
  [[nodiscard]] Spectrum emit_spectrum(const SiteState& site, double acquisition_s, std::uint64_t noise_seed) const;
  /// SPAD count rate (1/s) in the SPAD window for the site in `state`.
  [[nodiscard]] double spad_rate(const SiteState& site, DefectState state, std::optional<double> zpl_nm) const;
  /// Per-bin Poisson counts; rates switch exactly at the timeline's change times.
  [[nodiscard]] SpadTrace emit_spad_trace(const SiteState& site, const Timeline& timeline, double bin_s,
                                          std::mt19937_64& engine) const;
  /// Expected counts per bin without noise.
  [[nodiscard]] std::vector<double> expected_spad_counts(const SiteState& site, const Timeline& timeline,
                                                         double bin_s) const;

 private:
  struct Template {
    double offset_lo_ev = 0.0;  // table covers zpl + offset_lo .. zpl + offset_hi
    double step_ev = 0.0;
    std::vector<double> values;  // unit-area E^3-weighted density per eV
    [[nodiscard]] double at(double offset_ev) const noexcept;
  };
  static Template build(const SpeciesEmission& s);
  void add_species(std::vector<double>& out, const Template& t, double zpl_nm, double scale_cps,
                   double splitting_thz = 0.0) const;

  EmissionModel model_;
  std::vector<double> grid_;
  Template type_ii_;
  Template snv_;
  Template gr1_;
  std::vector<double> background_;  // raman only
};

}  // namespace snvkit::kinetics
