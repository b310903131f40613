#pragma once

#include "snvkit/emission.hpp"
#include "snvkit/kinetics.hpp"
#include "snvkit/spectra.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace snvkit::feedback {

enum class EventKind { Activation, Deactivation };

std::string_view to_string(EventKind k) noexcept;

struct FeedbackEvent {
  EventKind kind = EventKind::Activation;
  double time_s = 0.0;         ///< estimated onset (start of the first shifted bin)
  double detected_at_s = 0.0;  ///< end of the bin on which the detector fired
  std::size_t onset_bin = 0;
  double pre_mean = 0.0;   ///< counts/bin
  double post_mean = 0.0;  ///< counts/bin
  double significance = 0.0;
};

struct DetectorOptions {
  double threshold_sigma = 5.0;
  std::size_t min_dwell_bins = 25;
  /// Split points older than this many dwell windows are not revisited.
  std::size_t lookback_windows = 3;
};

/// Streaming Poisson change detector. The onset estimate is the likelihood-ratio
/// split point; an event fires once that onset has min_dwell_bins bins behind it,
/// the shift reaches threshold_sigma, and both halves of the dwell window agree.
class ChangepointDetector {
 public:
  explicit ChangepointDetector(double bin_s, DetectorOptions options = {});

  std::optional<FeedbackEvent> push(long count);
  [[nodiscard]] std::size_t bins_seen() const noexcept { return prefix_.size() - 1; }

 private:
  double sum(std::size_t lo, std::size_t hi) const { return prefix_[hi] - prefix_[lo]; }
  double z_score(std::size_t pre_lo, std::size_t split, std::size_t post_hi) const;

  double bin_s_;
  DetectorOptions options_;
  std::vector<double> prefix_{0.0};
  std::size_t segment_start_ = 0;
};

/// Offline run of ChangepointDetector over a whole trace. Throws InvalidInput
/// for traces shorter than 2 * min_dwell_bins.
std::vector<FeedbackEvent> detect_changepoints(const SpadTrace& trace, double threshold_sigma = 5.0,
                                               std::size_t min_dwell_bins = 25);

enum class SiteClass { TypeII, SnV, GR1Only, Background };

std::string_view to_string(SiteClass c) noexcept;

struct ClassifyOptions {
  double k_sigma = 5.0;
  double max_fwhm_nm = 6.0;
  /// Narrower fits are single-pixel noise; in units of the local grid step.
  double min_fwhm_samples = 3.0;
  double seed_fwhm_nm = 1.5;
};

struct Classification {
  SiteClass kind = SiteClass::Background;
  std::optional<PeakFit> peak;
  double window_integral = 0.0;
};

/// Dominant built-in window with a confirmed peak. Expects a baseline-subtracted spectrum.
Classification classify_site(const Spectrum& spectrum, const ClassifyOptions& options = {});
/// Same rule over caller-supplied TypeII / SnV / GR1 windows.
Classification classify_site(const Spectrum& spectrum, const SpectralWindow& type_ii, const SpectralWindow& snv,
                             const SpectralWindow& gr1, const ClassifyOptions& options = {});

enum class StopRule { OnActivation, OnDeactivation, MaxCycles };

std::string_view to_string(StopRule r) noexcept;

struct Protocol {
  kinetics::AnnealSegment segment;  ///< one cycle; duration_s is the cycle length
  StopRule stop = StopRule::OnActivation;
  int max_cycles = 5;
  bool monitoring = true;
  std::vector<std::size_t> targets;  ///< empty: every occupied site
  DetectorOptions detector;
  /// Minimum post-change level (counts/bin) for an activation to stop the anneal;
  /// deactivations must drop below it. 0 picks the midpoint of the TypeII and SnV levels.
  double activation_level = 0.0;

  void validate() const;
};

struct SiteOutcome {
  std::size_t site_id = 0;
  kinetics::DefectState initial = kinetics::DefectState::Empty;
  kinetics::DefectState final_state = kinetics::DefectState::Empty;
  int cycles_used = 0;
  bool stopped = false;
  std::optional<double> stopped_at_s;  ///< site anneal clock when halted
  bool reached_snv = false;
  double activation_level = 0.0;  ///< counts/bin used for this site
  std::vector<FeedbackEvent> detections;  ///< times on the site's monitoring clock
};

struct CampaignReport {
  kinetics::SiteArray array;
  std::vector<kinetics::TransitionEvent> events;  ///< ordered by (time, site_id)
  std::vector<SiteOutcome> sites;

  /// Among sites that ever reached SnV, the fraction that ended in SnV.
  [[nodiscard]] double frozen_fraction() const noexcept;
  [[nodiscard]] std::size_t reached_snv() const noexcept;
};

/// Alternating anneal and SPAD monitoring per target site. Each site is annealed
/// with the focus on it; annealing halts when the stop rule fires.
CampaignReport run_protocol(const kinetics::SiteArray& array, const Protocol& protocol,
                            const kinetics::RateModel& rates, const kinetics::Emitter& emitter,
                            std::uint64_t seed);

}  // namespace snvkit::feedback
