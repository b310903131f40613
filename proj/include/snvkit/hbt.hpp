#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace snvkit::hbt {

enum class Channel : std::uint8_t { A = 0, B = 1 };

struct Timetag {
  Channel channel = Channel::A;
  std::int64_t timestamp_ps = 0;
};

/// Detection events from a two-detector HBT setup, time-ordered.
class TimetagStream {
 public:
  TimetagStream() = default;
  /// Throws InvalidInput when timestamps decrease or duration <= 0.
  TimetagStream(std::vector<Timetag> events, double duration_s);
  /// Duration taken from the timestamp span (at least 1 ps).
  static TimetagStream from_events(std::vector<Timetag> events);

  [[nodiscard]] const std::vector<Timetag>& events() const noexcept { return events_; }
  [[nodiscard]] double duration_s() const noexcept { return duration_s_; }
  [[nodiscard]] std::size_t count(Channel c) const noexcept;

  /// t -> T - t with T the last timestamp; order restored.
  [[nodiscard]] TimetagStream time_reversed() const;
  /// Time-ordered union; duration is the larger of the two.
  [[nodiscard]] static TimetagStream merge(const TimetagStream& a, const TimetagStream& b);

 private:
  std::vector<Timetag> events_;
  double duration_s_ = 0.0;
};

inline constexpr double kDefaultBinWidthNs = 0.25;
inline constexpr double kDefaultMaxDelayNs = 100.0;

/// Coincidence histogram over delay t_B - t_A. Bins are centered on k * bin_width
/// for k = -K..K.
struct CorrelationHistogram {
  double bin_width_ns = kDefaultBinWidthNs;
  std::vector<double> bin_edges_ns;  ///< 2K+2 edges
  std::vector<double> counts;
  std::vector<double> variance;  ///< per-bin count variance (Poisson, floor 1)
  double normalization = 1.0;    ///< expected coincidences per bin for uncorrelated light
  double rho = 1.0;              ///< signal fraction S/(S+B)

  [[nodiscard]] std::size_t size() const noexcept { return counts.size(); }
  [[nodiscard]] double delay_ns(std::size_t i) const { return 0.5 * (bin_edges_ns[i] + bin_edges_ns[i + 1]); }
  [[nodiscard]] double g2(std::size_t i) const { return counts[i] / normalization; }
  [[nodiscard]] std::vector<double> delays() const;
  [[nodiscard]] std::vector<double> g2_values() const;

  /// Histogram holding g2 values times `normalization` on uniform centered bins.
  static CorrelationHistogram from_g2(std::span<const double> delays_ns, std::span<const double> g2,
                                      double normalization, double rho = 1.0);
  void validate() const;
};

/// All-pairs correlation of channel B against channel A. Threads > 1 split the
/// A events into blocks; the result does not depend on the thread count.
CorrelationHistogram correlate(const TimetagStream& stream, double bin_width_ns = kDefaultBinWidthNs,
                               double max_delay_ns = kDefaultMaxDelayNs, unsigned threads = 1);

/// g2_corr = (g2_raw - (1 - rho^2)) / rho^2 using h.rho; result has rho = 1.
CorrelationHistogram background_correct(const CorrelationHistogram& h);

/// Three-level curve with a free zero-delay value c:
///   g2 = 1 - (1 + alpha - c) exp(-|t|/tau1) + alpha exp(-|t|/tau2).
/// c = 0 gives the ideal single-emitter form.
struct ThreeLevelFit {
  double alpha = 0.0;
  double tau1_ns = 1.0;
  double tau2_ns = 10.0;
  double g2_zero = 0.0;
  double alpha_sigma = 0.0;
  double tau1_sigma = 0.0;
  double tau2_sigma = 0.0;
  double g2_zero_sigma = 0.0;
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  ///< order: alpha, tau1, tau2, g2_zero
  double reduced_chi2 = 0.0;
  int iterations = 0;

  [[nodiscard]] double evaluate(double delay_ns) const;
  /// g2(0) + sigma < 0.5.
  [[nodiscard]] bool single_emitter() const noexcept { return g2_zero + g2_zero_sigma < 0.5; }
};

double three_level_g2(double delay_ns, double alpha, double tau1_ns, double tau2_ns, double g2_zero = 0.0);

/// Poisson-weighted least-squares fit. Throws FitFailure when there is no dip
/// (min g2 >= 0.8) or the fit does not converge.
ThreeLevelFit fit_three_level(const CorrelationHistogram& h);

struct ValueWithSigma {
  double value = 0.0;
  double sigma = 0.0;
};
ValueWithSigma g2_at_zero(const ThreeLevelFit& fit);

/// Three-level emitter: ground(1) -> excited(2) -> ground(1) radiatively,
/// excited -> shelving(3) -> ground. Rates in 1/ns.
struct ThreeLevelRates {
  double k12 = 0.20;
  double k21 = 0.25;
  double k23 = 0.005;
  double k31 = 0.02;

  /// (tau1, tau2) in ns from the non-zero generator eigenvalues, tau1 < tau2.
  [[nodiscard]] std::pair<double, double> correlation_times() const;
  /// Adjusts k12 so the antibunching time equals tau1_ns.
  static ThreeLevelRates for_antibunching_time(double tau1_ns, double k21 = 0.25, double k23 = 0.005,
                                               double k31 = 0.02);
};

struct StreamOptions {
  std::size_t detections = 1'000'000;
  double efficiency = 0.1;  ///< per emitted photon
  double split_a = 0.5;     ///< probability a detected photon lands on A
};

/// Continuous-time Monte Carlo of one emitter behind a 50/50 beam splitter.
TimetagStream simulate_emitter(const ThreeLevelRates& rates, const StreamOptions& options, std::uint64_t seed);

/// CSV `channel,timestamp_ps` (channel A/B or 0/1) or the packed binary format,
/// chosen by content. Duration comes from the timestamp span.
TimetagStream read_timetags(const std::filesystem::path& path);
void write_timetags_csv(const TimetagStream& s, const std::filesystem::path& path);
void write_timetags_binary(const TimetagStream& s, const std::filesystem::path& path);

inline constexpr char kTimetagMagic[9] = "HBTTAGS1";
inline constexpr std::uint32_t kTimetagVersion = 1;

}  // namespace snvkit::hbt
