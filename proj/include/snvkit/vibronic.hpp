#pragma once

#include "snvkit/spectra.hpp"

#include <functional>
#include <span>
#include <vector>

namespace snvkit::vibronic {

inline constexpr double kDefaultSpacingMeV = 0.5;
inline constexpr double kDefaultCutoffMeV = 165.0;
/// Tail mass of the Poisson phonon-number distribution allowed beyond n_max.
inline constexpr double kTruncationTail = 1e-6;

/// Single-phonon coupling lineshape I_1(E_v) sampled at E_v = k * spacing,
/// k = 0..K with K * spacing = cutoff. Density is per meV.
class PhononSpectrum {
 public:
  PhononSpectrum() = default;
  /// `density` holds K+1 samples starting at E_v = 0. The first sample must be 0.
  PhononSpectrum(std::vector<double> density, double spacing_mev = kDefaultSpacingMeV);

  /// Samples f on (0, cutoff] and normalizes.
  static PhononSpectrum from_function(const std::function<double(double)>& f,
                                      double cutoff_mev = kDefaultCutoffMeV,
                                      double spacing_mev = kDefaultSpacingMeV);
  /// Piecewise-linear density through `nodes` placed at node_spacing, 2*node_spacing, ...
  /// (zero at E_v = 0), normalized.
  static PhononSpectrum from_nodes(std::span<const double> nodes, double node_spacing_mev = 5.0,
                                   double spacing_mev = kDefaultSpacingMeV);
  /// Illustrative diamond-like coupling: acoustic, mid-band and optical bumps.
  static PhononSpectrum default_diamond();

  [[nodiscard]] const std::vector<double>& density() const noexcept { return density_; }
  [[nodiscard]] double spacing() const noexcept { return spacing_; }
  [[nodiscard]] double cutoff() const noexcept { return spacing_ * static_cast<double>(density_.size() - 1); }
  /// Riemann integral spacing * sum(density); the discrete convolution preserves it exactly.
  [[nodiscard]] double integral() const noexcept;
  [[nodiscard]] bool is_normalized(double tol = 1e-9) const noexcept;
  [[nodiscard]] PhononSpectrum normalized() const;
  [[nodiscard]] double value_at(double ev_mev) const noexcept;

 private:
  std::vector<double> density_;
  double spacing_ = kDefaultSpacingMeV;
};

/// Discrete h-weighted convolution of two sampled densities on a shared grid.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b, double spacing);

/// I_n for n >= 1 on the grid 0 .. n*cutoff. Throws InvalidInput for n < 1 or
/// a non-normalized input.
std::vector<double> convolve_order(const PhononSpectrum& p, int n);

/// Franck-Condon weight S^n e^{-S} / n!.
double franck_condon_weight(double huang_rhys, int n);
/// Smallest n_max whose Poisson tail beyond n_max is below `tail`.
int required_order(double huang_rhys, double tail = kTruncationTail);

enum class ZplShape { Gaussian, Lorentzian };

struct VibronicModel {
  double zpl_energy_ev = 2.0;
  double huang_rhys = 0.0;
  PhononSpectrum phonons = PhononSpectrum::default_diamond();
  double zpl_fwhm_mev = 2.0;
  int n_max = 1;
  ZplShape zpl_shape = ZplShape::Gaussian;

  /// Model with n_max picked from the truncation bound.
  static VibronicModel make(double zpl_energy_ev, double huang_rhys, PhononSpectrum phonons,
                            double zpl_fwhm_mev, ZplShape shape = ZplShape::Gaussian);
  [[nodiscard]] double zpl_nm() const noexcept { return kHcEvNm / zpl_energy_ev; }
  /// Throws InvalidInput when S < 0, n_max < 1, the tail bound fails or the
  /// phonon spectrum is not normalized.
  void validate() const;
};

/// Precomputed n-phonon tables for evaluating a model at arbitrary energies.
class Lineshape {
 public:
  explicit Lineshape(VibronicModel model);

  [[nodiscard]] const VibronicModel& model() const noexcept { return model_; }
  /// ZPL part of the pre-E^3 density (per eV); integrates to e^{-S}.
  [[nodiscard]] double zpl_density(double energy_ev) const;
  /// Sideband part of the pre-E^3 density (per eV).
  [[nodiscard]] double psb_density(double energy_ev) const;
  [[nodiscard]] double density(double energy_ev) const { return zpl_density(energy_ev) + psb_density(energy_ev); }
  /// Integral of E^3 * density over all energies (for absolute normalization).
  [[nodiscard]] double e3_norm() const noexcept { return e3_norm_; }
  /// Lowest energy (eV) with non-zero sideband density.
  [[nodiscard]] double support_min_ev() const noexcept;

 private:
  VibronicModel model_;
  std::vector<std::vector<double>> orders_;  // orders_[n-1] = I_n
  std::vector<double> weights_;              // weights_[n-1] = FC weight of order n
  double e3_norm_ = 1.0;
};

struct SynthesisOptions {
  /// Photon density-of-states factor applied as written in the emission law.
  bool apply_e3 = true;
};

/// Emission spectrum on an energy grid (eV), normalized to unit trapezoidal area.
/// The grid must span zpl - n_max*cutoff .. zpl + 3*zpl_width.
Spectrum synthesize(const VibronicModel& model, std::span<const double> energy_grid_ev,
                    const SynthesisOptions& options = {});

/// Uniform energy grid that satisfies synthesize()'s coverage requirement.
std::vector<double> covering_grid(const VibronicModel& model, double spacing_mev = kDefaultSpacingMeV);

struct Decomposition {
  std::vector<double> zpl;  ///< pre-E^3 ZPL density per eV
  std::vector<double> psb;  ///< pre-E^3 sideband density per eV
  double zpl_fraction = 0;  ///< trapezoid(zpl) / trapezoid(zpl + psb)
};

Decomposition decompose(const VibronicModel& model, std::span<const double> energy_grid_ev);

struct HuangRhysFitOptions {
  double node_spacing_mev = 5.0;
  double cutoff_mev = kDefaultCutoffMeV;
  bool apply_e3 = true;
  ZplShape zpl_shape = ZplShape::Gaussian;
  int max_rounds = 50;
  double tolerance = 1e-6;
  /// Seed ZPL FWHM (meV) for locating the line.
  double zpl_seed_fwhm_mev = 5.0;
  int inner_iterations = 8;
};

struct HuangRhysFit {
  VibronicModel model;
  double amplitude = 1.0;
  /// ||model - observed|| / ||observed||.
  double relative_residual = 0.0;
  int rounds = 0;
  bool converged = false;
  std::vector<double> node_values;  ///< fitted I_1 at the basis nodes (per meV)
};

/// Alternating fit of (S, ZPL) and a non-negative piecewise-linear I_1.
/// `zpl_hint_nm` seeds the ZPL search. Throws FitFailure when no ZPL is found.
HuangRhysFit fit_huang_rhys(const Spectrum& observed, double zpl_hint_nm,
                            const HuangRhysFitOptions& options = {});

}  // namespace snvkit::vibronic
