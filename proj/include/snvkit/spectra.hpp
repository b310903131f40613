#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace snvkit {

/// hc in eV*nm.
inline constexpr double kHcEvNm = 1239.841984;

enum class GridUnit { Nanometre, ElectronVolt };

struct AcquisitionMeta {
  double integration_s = 1.0;
  double temperature_k = 295.0;
  std::optional<double> excitation_nm;
};

/// Sampled emission intensity on a strictly increasing grid.
///
/// Intensities are raw counts per sample. They may only go negative after a
/// baseline subtraction, which is recorded in `baseline_subtracted`.
class Spectrum {
 public:
  Spectrum() = default;
  Spectrum(std::vector<double> grid, std::vector<double> intensity, AcquisitionMeta meta = {},
           GridUnit unit = GridUnit::Nanometre, bool baseline_subtracted = false);

  [[nodiscard]] const std::vector<double>& grid() const noexcept { return grid_; }
  [[nodiscard]] const std::vector<double>& intensity() const noexcept { return intensity_; }
  [[nodiscard]] const AcquisitionMeta& meta() const noexcept { return meta_; }
  [[nodiscard]] GridUnit unit() const noexcept { return unit_; }
  [[nodiscard]] bool baseline_subtracted() const noexcept { return baseline_subtracted_; }
  [[nodiscard]] std::size_t size() const noexcept { return grid_.size(); }
  [[nodiscard]] bool empty() const noexcept { return grid_.empty(); }

  /// Linear interpolation; zero outside the grid.
  [[nodiscard]] double interpolate(double x) const;

 private:
  std::vector<double> grid_;
  std::vector<double> intensity_;
  AcquisitionMeta meta_;
  GridUnit unit_ = GridUnit::Nanometre;
  bool baseline_subtracted_ = false;
};

enum class WindowLabel { TypeIISn, SnV, GR1, Custom };

struct SpectralWindow {
  WindowLabel label = WindowLabel::Custom;
  double lo = 0.0;  ///< nm
  double hi = 0.0;  ///< nm
  std::string name;

  SpectralWindow() = default;
  SpectralWindow(WindowLabel label, double lo, double hi, std::string name = {});

  static SpectralWindow type_ii_sn() { return {WindowLabel::TypeIISn, 590.0, 600.0, "TypeIISn"}; }
  static SpectralWindow snv() { return {WindowLabel::SnV, 615.0, 625.0, "SnV"}; }
  static SpectralWindow gr1() { return {WindowLabel::GR1, 730.0, 750.0, "GR1"}; }
  /// SnV gamma / delta transition windows used for polarimetry.
  static SpectralWindow snv_gamma() { return {WindowLabel::Custom, 619.0, 622.0, "gamma"}; }
  static SpectralWindow snv_delta() { return {WindowLabel::Custom, 622.0, 625.0, "delta"}; }
  static SpectralWindow custom(double lo, double hi, std::string name = "custom") {
    return {WindowLabel::Custom, lo, hi, std::move(name)};
  }
  /// Looks up built-ins by name ("TypeIISn", "SnV", "GR1", "gamma", "delta").
  static std::optional<SpectralWindow> by_name(const std::string& name);

  [[nodiscard]] bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

enum class PeakModel { Lorentzian, Gaussian };

struct PeakFit {
  double center = 0.0;
  double fwhm = 0.0;
  double height = 0.0;
  double offset = 0.0;
  double area = 0.0;
  PeakModel model = PeakModel::Lorentzian;
  /// Covariance over (center, fwhm, height, offset).
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  int iterations = 0;

  [[nodiscard]] double center_sigma() const { return std::sqrt(std::max(covariance(0, 0), 0.0)); }
  [[nodiscard]] double evaluate(double x) const;
};

/// Closed-form area of a peak with the given height and FWHM.
[[nodiscard]] double peak_area(PeakModel model, double height, double fwhm);
/// Unit-offset-free line profile (height at centre).
[[nodiscard]] double peak_profile(PeakModel model, double x, double center, double fwhm,
                                  double height);

/// Converts a nm spectrum to photon energy (eV), re-sorted ascending. With
/// `jacobian` the intensity is transformed so integrals are conserved.
Spectrum to_energy(const Spectrum& s, bool jacobian = true);
/// Inverse of to_energy.
Spectrum to_wavelength(const Spectrum& s, bool jacobian = true);

/// Trapezoidal integral over [w.lo, w.hi] with linearly interpolated edges.
/// Throws EmptyWindow when the window does not overlap the grid.
double integrate_window(const Spectrum& s, const SpectralWindow& w);
/// Same as integrate_window over arbitrary bounds in grid units.
double integrate_range(const Spectrum& s, double lo, double hi);

enum class BaselineMethod { Constant, Linear, Reference };

struct BaselineOptions {
  BaselineMethod method = BaselineMethod::Constant;
  /// Quiet bands (grid units) used by Constant (median) and Linear (least squares).
  std::vector<std::pair<double, double>> quiet_bands;
  /// Required for the Reference method; must share the grid exactly.
  std::optional<Spectrum> reference;
};

Spectrum subtract_baseline(const Spectrum& s, const BaselineOptions& options);

struct PeakFitOptions {
  PeakModel model = PeakModel::Lorentzian;
  /// Expected FWHM used to seed the fit and size the fit region.
  double seed_fwhm = 1.0;
  /// Half-width of the fitted region; defaults to 3 * seed_fwhm.
  std::optional<double> half_window;
  int max_iterations = 200;
  double step_tolerance = 1e-8;
};

/// Damped least-squares fit of (center, fwhm, height, offset) around seed_center.
/// Throws FitFailure for flat data or non-convergence.
PeakFit fit_peak(const Spectrum& s, double seed_center, const PeakFitOptions& options = {});

struct MultipletOptions {
  PeakModel model = PeakModel::Lorentzian;
  /// Minimum topographic prominence (counts) for a local maximum to count.
  double min_prominence = 0.0;
  /// Joint refinement of all components with a shared offset.
  bool joint_refinement = true;
};

std::vector<PeakFit> find_multiplet(const Spectrum& s, const SpectralWindow& window,
                                    const MultipletOptions& options);

/// Sequential fits over a series, each seeded by the previous centre. Failed
/// fits are recorded as std::nullopt gaps.
std::vector<std::optional<PeakFit>> track_zpl(std::span<const Spectrum> series, double seed_center,
                                              const PeakFitOptions& options = {});

/// Robust estimate of per-sample noise sigma from first differences (MAD).
double noise_sigma(const Spectrum& s);

}  // namespace snvkit
