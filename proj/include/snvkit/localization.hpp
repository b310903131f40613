#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace snvkit::localization {

/// 2 sqrt(2 ln 2).
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

/// Intensity raster; pixel (col, row) sits at origin + scale * (col, row) in um.
class PLMap {
 public:
  PLMap() = default;
  PLMap(std::size_t rows, std::size_t cols, std::vector<double> pixels, double scale_um_per_px,
        double origin_x_um = 0.0, double origin_y_um = 0.0);

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const { return pixels_[row * cols_ + col]; }
  [[nodiscard]] const std::vector<double>& pixels() const noexcept { return pixels_; }
  [[nodiscard]] double scale() const noexcept { return scale_; }
  [[nodiscard]] double origin_x() const noexcept { return origin_x_; }
  [[nodiscard]] double origin_y() const noexcept { return origin_y_; }
  [[nodiscard]] double x_of(double col) const noexcept { return origin_x_ + scale_ * col; }
  [[nodiscard]] double y_of(double row) const noexcept { return origin_y_ + scale_ * row; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> pixels_;
  double scale_ = 1.0;
  double origin_x_ = 0.0;
  double origin_y_ = 0.0;
};

struct Gaussian2DFit {
  double x0 = 0.0;  ///< um
  double y0 = 0.0;
  double sigma_x = 1.0;  ///< um
  double sigma_y = 1.0;
  double amplitude = 0.0;
  double offset = 0.0;

  [[nodiscard]] double fwhm_x() const noexcept { return kFwhmPerSigma * sigma_x; }
  [[nodiscard]] double fwhm_y() const noexcept { return kFwhmPerSigma * sigma_y; }
  [[nodiscard]] double mean_fwhm() const noexcept { return 0.5 * (fwhm_x() + fwhm_y()); }
  [[nodiscard]] double evaluate(double x, double y) const;
};

/// Fits offset + A exp(-(x-x0)^2/2sx^2 - (y-y0)^2/2sy^2) to the pixels within
/// `radius_px` of the seed position (um). Throws FitFailure.
Gaussian2DFit fit_gaussian(const PLMap& map, double seed_x_um, double seed_y_um, std::size_t radius_px);

/// Local maxima above `threshold` (raw counts), each fitted over +-3 px;
/// fits closer than 1 px are merged keeping the brighter one.
std::vector<Gaussian2DFit> detect_emitters(const PLMap& map, double threshold);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct RegistrationOptions {
  double theta_range_deg = 5.0;
  double theta_step_deg = 0.05;
  double tolerance_um = 1e-7;
};

/// Square grid nodes at R(theta) * spacing * (i, j) + (dx, dy).
struct GridRegistration {
  double spacing = 0.78;
  double dx = 0.0;
  double dy = 0.0;
  double theta = 0.0;  ///< rad
  double total_discrepancy = 0.0;
  std::vector<double> radial;  ///< D_r per center (um)
  std::vector<Point> centers;
  std::vector<double> weights;
  std::string weighting = "uniform";

  /// Distance from p to the nearest node of the stored grid.
  [[nodiscard]] double distance_to_grid(Point p) const;
  /// Sum w_i * D_r recomputed from the stored transform.
  [[nodiscard]] double recompute_discrepancy() const;
};

/// Minimizes D = sum w_i * min_node |c_i - node| over (dx, dy, theta). The
/// translation is reported for the node closest to the origin. Empty weights
/// mean uniform. Throws InvalidInput for fewer than 3 centers and
/// RegistrationFailure when all centers coincide.
GridRegistration register_grid(std::span<const Point> centers, double spacing, std::span<const double> weights = {},
                               const RegistrationOptions& options = {});

struct DiscrepancyStats {
  double mean = 0.0;
  double std = 0.0;  ///< sample (n - 1)
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
};

DiscrepancyStats discrepancy_stats(const GridRegistration& reg, std::size_t bins = 10, double max_um = 0.0);
DiscrepancyStats discrepancy_stats(std::span<const double> radial, std::size_t bins = 10, double max_um = 0.0);

struct SpreadPoint {
  double mean_fwhm_um = 0.0;
  double peak_height = 0.0;
};

/// One 2D Gaussian per map seeded at the hint; failed fits are gaps.
std::vector<std::optional<SpreadPoint>> activation_spread(std::span<const PLMap> maps, Point center_hint);

/// base + height / (1 + exp(-(t - t0)/width)); plateau starts at t0 + 3 width.
struct PlateauFit {
  double base = 0.0;
  double height = 0.0;
  double t0 = 0.0;
  double width = 1.0;
  [[nodiscard]] double plateau_onset() const noexcept { return t0 + 3.0 * width; }
  [[nodiscard]] double evaluate(double t) const;
};

PlateauFit fit_plateau(std::span<const double> t, std::span<const double> values);

}  // namespace snvkit::localization
