#include "snvkit/polarimetry.hpp"

#include "snvkit/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace snvkit::polarimetry {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

void PolarizationScan::validate() const {
  if (angles_deg.size() != intensities.size()) throw InvalidInput("angles and intensities differ in length");
  if (angles_deg.size() < 8) throw InvalidInput("polarization scan needs at least 8 angles");
  const auto [lo, hi] = std::minmax_element(angles_deg.begin(), angles_deg.end());
  if (*hi - *lo < 90.0 - 1e-9) throw InvalidInput("polarization scan must span at least 90 deg of HWP rotation");
  for (double v : intensities) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("intensities must be finite and non-negative");
  }
  for (double a : angles_deg) {
    if (!std::isfinite(a)) throw InvalidInput("angles must be finite");
  }
}

double MalusFit::evaluate(double angle_deg) const {
  const double c = std::cos((2.0 * angle_deg - 2.0 * axis_deg) * kDeg);
  return amplitude * c * c + offset;
}

MalusFit fit_malus(const PolarizationScan& scan) {
  scan.validate();
  if (std::all_of(scan.intensities.begin(), scan.intensities.end(), [](double v) { return v == 0.0; })) {
    throw InvalidInput("all intensities are zero");
  }
  const auto n = static_cast<Eigen::Index>(scan.angles_deg.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = 4.0 * scan.angles_deg[static_cast<std::size_t>(i)] * kDeg;
    x(i, 0) = 1.0;
    x(i, 1) = std::cos(t);
    x(i, 2) = std::sin(t);
    y[i] = scan.intensities[static_cast<std::size_t>(i)];
  }
  const Eigen::Vector3d a = x.colPivHouseholderQr().solve(y);
  const double amp = std::hypot(a[1], a[2]);  // A / 2
  MalusFit f;
  f.amplitude = 2.0 * amp;
  f.offset = a[0] - amp;
  f.visibility = a[0] > 0.0 ? std::clamp(amp / a[0], 0.0, 1.0) : 0.0;
  double axis = std::atan2(a[2], a[1]) / kDeg / 4.0;
  axis = std::fmod(axis, 90.0);
  if (axis < 0.0) axis += 90.0;
  if (axis >= 90.0) axis -= 90.0;
  f.axis_deg = axis;
  f.rms_residual = std::sqrt((x * a - y).squaredNorm() / static_cast<double>(n));
  return f;
}

PolarizationScan scan_from_spectra(std::span<const Spectrum> spectra, std::span<const double> angles_deg,
                                   const SpectralWindow& window) {
  if (spectra.size() != angles_deg.size()) throw InvalidInput("spectra and angles differ in length");
  PolarizationScan scan;
  scan.window = window;
  scan.angles_deg.assign(angles_deg.begin(), angles_deg.end());
  for (const auto& s : spectra) scan.intensities.push_back(std::max(0.0, integrate_window(s, window)));
  return scan;
}

}  // namespace snvkit::polarimetry
