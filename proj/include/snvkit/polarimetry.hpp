#pragma once

#include "snvkit/spectra.hpp"

#include <span>
#include <vector>

namespace snvkit::polarimetry {

/// Integrated ZPL intensity versus half-wave-plate angle.
struct PolarizationScan {
  std::vector<double> angles_deg;
  std::vector<double> intensities;
  SpectralWindow window = SpectralWindow::custom(0.0, 1.0);

  /// At least 8 angles spanning >= 90 deg, finite non-negative intensities.
  void validate() const;
};

/// I(theta) = A cos^2(2 theta - phi) + C.
struct MalusFit {
  double visibility = 0.0;  ///< A / (A + 2C), clamped to [0, 1]
  double axis_deg = 0.0;    ///< HWP angle of maximum transmission, in [0, 90)
  double offset = 0.0;      ///< C
  double amplitude = 0.0;   ///< A
  double rms_residual = 0.0;

  [[nodiscard]] double evaluate(double angle_deg) const;
};

/// Linear least squares on a0 + a1 cos(4 theta) + a2 sin(4 theta).
MalusFit fit_malus(const PolarizationScan& scan);

/// Integrates each spectrum over `window`.
PolarizationScan scan_from_spectra(std::span<const Spectrum> spectra, std::span<const double> angles_deg,
                                   const SpectralWindow& window);

}  // namespace snvkit::polarimetry
