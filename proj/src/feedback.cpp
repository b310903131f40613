#include "snvkit/feedback.hpp"

#include "snvkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace snvkit::feedback {

std::string_view to_string(EventKind k) noexcept {
  return k == EventKind::Activation ? "Activation" : "Deactivation";
}

std::string_view to_string(SiteClass c) noexcept {
  switch (c) {
    case SiteClass::TypeII: return "TypeII";
    case SiteClass::SnV: return "SnV";
    case SiteClass::GR1Only: return "GR1-only";
    case SiteClass::Background: return "background";
  }
  return "background";
}

std::string_view to_string(StopRule r) noexcept {
  switch (r) {
    case StopRule::OnActivation: return "on-activation";
    case StopRule::OnDeactivation: return "on-deactivation";
    case StopRule::MaxCycles: return "max-cycles";
  }
  return "on-activation";
}

namespace {

double xlogx_over(double s, double n) { return s > 0.0 ? s * std::log(s / n) : 0.0; }

}  // namespace

ChangepointDetector::ChangepointDetector(double bin_s, DetectorOptions options) : bin_s_(bin_s), options_(options) {
  if (!(bin_s > 0.0)) throw InvalidInput("bin width must be positive");
  if (!(options.threshold_sigma > 0.0)) throw InvalidInput("threshold_sigma must be positive");
  if (options.min_dwell_bins < 2) throw InvalidInput("min_dwell_bins must be at least 2");
  if (options.lookback_windows < 1) throw InvalidInput("lookback_windows must be at least 1");
}

double ChangepointDetector::z_score(std::size_t pre_lo, std::size_t split, std::size_t post_hi) const {
  const double n1 = static_cast<double>(split - pre_lo), n2 = static_cast<double>(post_hi - split);
  const double m1 = sum(pre_lo, split) / n1, m2 = sum(split, post_hi) / n2;
  const double var = m1 / n1 + m2 / n2;
  if (!(var > 0.0)) return 0.0;
  return (m2 - m1) / std::sqrt(var);
}

std::optional<FeedbackEvent> ChangepointDetector::push(long count) {
  if (count < 0) throw InvalidInput("SPAD counts must be non-negative");
  prefix_.push_back(prefix_.back() + static_cast<double>(count));
  const std::size_t n = bins_seen(), w = options_.min_dwell_bins, s = segment_start_;
  if (n < s + 2 * w) return std::nullopt;

  const std::size_t lookback = options_.lookback_windows * w;
  const std::size_t first = std::max(s + w, n > lookback ? n - lookback : 0);
  const double total = sum(s, n), len = static_cast<double>(n - s);
  const double base = xlogx_over(total, len);
  std::size_t best = first;
  double best_llr = -1.0;
  for (std::size_t tau = first; tau < n; ++tau) {
    const double a = sum(s, tau), b = total - a;
    const double llr = xlogx_over(a, static_cast<double>(tau - s)) + xlogx_over(b, static_cast<double>(n - tau)) - base;
    if (llr > best_llr) {
      best_llr = llr;
      best = tau;
    }
  }
  if (n - best < w) return std::nullopt;

  const double z = z_score(s, best, n);
  const double k = options_.threshold_sigma;
  if (std::abs(z) < k) return std::nullopt;
  // Persistence: both halves of the post-change run must carry the shift.
  const std::size_t mid = best + (n - best) / 2;
  const double half_k = k / std::sqrt(2.0);
  const double z1 = z_score(s, best, mid), z2 = z_score(s, mid, n);
  if (z > 0.0 ? (z1 < half_k || z2 < half_k) : (z1 > -half_k || z2 > -half_k)) return std::nullopt;

  FeedbackEvent e;
  e.kind = z > 0.0 ? EventKind::Activation : EventKind::Deactivation;
  e.onset_bin = best;
  e.time_s = static_cast<double>(best) * bin_s_;
  e.detected_at_s = static_cast<double>(n) * bin_s_;
  e.pre_mean = sum(s, best) / static_cast<double>(best - s);
  e.post_mean = sum(best, n) / static_cast<double>(n - best);
  e.significance = std::abs(z);
  segment_start_ = best;
  return e;
}

std::vector<FeedbackEvent> detect_changepoints(const SpadTrace& trace, double threshold_sigma,
                                               std::size_t min_dwell_bins) {
  trace.validate();
  if (trace.counts.size() < 2 * min_dwell_bins) {
    throw InvalidInput("trace has " + std::to_string(trace.counts.size()) + " bins; need at least " +
                       std::to_string(2 * min_dwell_bins));
  }
  ChangepointDetector det(trace.bin_s, {threshold_sigma, min_dwell_bins});
  std::vector<FeedbackEvent> out;
  for (long c : trace.counts) {
    if (auto e = det.push(c)) out.push_back(*e);
  }
  return out;
}

Classification classify_site(const Spectrum& spectrum, const ClassifyOptions& options) {
  return classify_site(spectrum, SpectralWindow::type_ii_sn(), SpectralWindow::snv(), SpectralWindow::gr1(), options);
}

Classification classify_site(const Spectrum& spectrum, const SpectralWindow& type_ii, const SpectralWindow& snv,
                             const SpectralWindow& gr1, const ClassifyOptions& options) {
  struct Candidate {
    const SpectralWindow* window;
    SiteClass kind;
    double integral;
  };
  std::vector<Candidate> cands;
  for (auto [w, k] : {std::pair{&type_ii, SiteClass::TypeII}, std::pair{&snv, SiteClass::SnV},
                      std::pair{&gr1, SiteClass::GR1Only}}) {
    try {
      cands.push_back({w, k, integrate_window(spectrum, *w)});
    } catch (const Error&) {
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.integral > b.integral; });

  const double sigma = noise_sigma(spectrum);
  const auto& x = spectrum.grid();
  const auto& y = spectrum.intensity();
  for (const auto& c : cands) {
    if (!(c.integral > 0.0)) break;
    std::optional<std::size_t> peak_at;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (c.window->contains(x[i]) && (!peak_at || y[i] > y[*peak_at])) peak_at = i;
    }
    if (!peak_at) continue;
    PeakFitOptions po;
    po.seed_fwhm = options.seed_fwhm_nm;
    PeakFit fit;
    try {
      fit = fit_peak(spectrum, x[*peak_at], po);
    } catch (const Error&) {
      continue;
    }
    // The peak must sit inside the region the fit was given, not just anywhere.
    const double region = po.half_window.value_or(3.0 * po.seed_fwhm);
    const std::size_t j = std::min(*peak_at + 1, x.size() - 1), i = j > 0 ? j - 1 : 0;
    const double min_fwhm = options.min_fwhm_samples * (x[j] - x[i]);
    if (fit.height > options.k_sigma * sigma && fit.fwhm >= min_fwhm && fit.fwhm <= options.max_fwhm_nm &&
        std::abs(fit.center - x[*peak_at]) <= region) {
      return {c.kind, fit, c.integral};
    }
  }
  return {};
}

void Protocol::validate() const {
  if (!(segment.pulse_nj > 0.0)) throw InvalidInput("pulse energy must be positive");
  if (!(segment.duration_s >= 0.0)) throw InvalidInput("cycle duration must be non-negative");
  if (max_cycles < 1) throw InvalidInput("max_cycles must be at least 1");
  if (!(activation_level >= 0.0)) throw InvalidInput("activation_level must be non-negative");
}

double CampaignReport::frozen_fraction() const noexcept {
  std::size_t reached = 0, frozen = 0;
  for (const auto& s : sites) {
    if (!s.reached_snv) continue;
    ++reached;
    if (s.final_state == kinetics::DefectState::SnV) ++frozen;
  }
  return reached ? static_cast<double>(frozen) / static_cast<double>(reached) : 0.0;
}

std::size_t CampaignReport::reached_snv() const noexcept {
  return static_cast<std::size_t>(std::count_if(sites.begin(), sites.end(), [](const auto& s) { return s.reached_snv; }));
}

namespace {

bool stops(StopRule rule, const FeedbackEvent& e, double level) {
  switch (rule) {
    case StopRule::OnActivation: return e.kind == EventKind::Activation && e.post_mean >= level;
    case StopRule::OnDeactivation:
      return e.kind == EventKind::Deactivation && e.pre_mean >= level && e.post_mean < level;
    case StopRule::MaxCycles: return false;
  }
  return false;
}

}  // namespace

CampaignReport run_protocol(const kinetics::SiteArray& array, const Protocol& protocol,
                            const kinetics::RateModel& rates, const kinetics::Emitter& emitter, std::uint64_t seed) {
  using kinetics::DefectState;
  protocol.validate();
  CampaignReport report;
  report.array = array;

  std::vector<std::size_t> targets = protocol.targets;
  if (targets.empty()) {
    for (std::size_t i = 0; i < array.sites.size(); ++i) {
      if (array.sites[i].state != DefectState::Empty) targets.push_back(i);
    }
  }
  const auto& em = emitter.model();
  const double bin_s = em.spad.bin_s;
  const auto anneal_options = em.anneal_options();

  for (std::size_t id : targets) {
    if (id >= array.sites.size()) throw InvalidInput("target site " + std::to_string(id) + " is outside the array");
    kinetics::SiteState cur = array.sites[id];
    SiteOutcome out;
    out.site_id = cur.site_id;
    out.initial = cur.state;
    out.reached_snv = cur.state == DefectState::SnV;
    out.activation_level = protocol.activation_level > 0.0
                               ? protocol.activation_level
                               : 0.5 * bin_s *
                                     (emitter.spad_rate(cur, DefectState::TypeII, em.type_ii.zpl_nm) +
                                      emitter.spad_rate(cur, DefectState::SnV, em.snv.zpl_nm));

    kinetics::AnnealSegment segment = protocol.segment;
    segment.focus_um = std::pair{cur.x_um, cur.y_um};
    ChangepointDetector detector(bin_s, protocol.detector);
    const double cycle_s = segment.duration_s;

    for (int c = 0; c < protocol.max_cycles; ++c) {
      out.cycles_used = c + 1;
      kinetics::SiteArray one;
      one.spec = array.spec;
      one.mean_dose = array.mean_dose;
      one.seed = array.seed;
      one.sites = {cur};
      auto result = kinetics::anneal(one, segment, rates, anneal_options);

      if (protocol.monitoring && cur.state != DefectState::Empty) {
        const auto timeline = kinetics::timeline_for(cur, result.events, cycle_s);
        auto engine = kinetics::site_engine(seed, cur.site_id, 3, static_cast<std::uint64_t>(c));
        const auto trace = emitter.emit_spad_trace(cur, timeline, bin_s, engine);
        std::optional<double> halt_s;
        for (std::size_t b = 0; b < trace.counts.size(); ++b) {
          auto e = detector.push(trace.counts[b]);
          if (!e) continue;
          out.detections.push_back(*e);
          if (stops(protocol.stop, *e, out.activation_level)) {
            halt_s = static_cast<double>(b + 1) * bin_s;
            break;
          }
        }
        if (halt_s) {
          auto opts = anneal_options;
          opts.truncate_at_s = std::min(*halt_s, cycle_s);
          result = kinetics::anneal(one, segment, rates, opts);
          out.stopped = true;
          out.stopped_at_s = cur.clock_s + *opts.truncate_at_s;
        }
      }
      for (const auto& e : result.events) {
        if (e.to == DefectState::SnV) out.reached_snv = true;
      }
      report.events.insert(report.events.end(), result.events.begin(), result.events.end());
      cur = result.array.sites.front();
      if (out.stopped) break;
    }
    out.final_state = cur.state;
    report.array.sites[id] = cur;
    report.sites.push_back(std::move(out));
  }
  std::stable_sort(report.events.begin(), report.events.end(), [](const auto& a, const auto& b) {
    return a.time_s != b.time_s ? a.time_s < b.time_s : a.site_id < b.site_id;
  });
  return report;
}

}  // namespace snvkit::feedback
