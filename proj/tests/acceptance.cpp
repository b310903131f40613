// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include "snvkit/config.hpp"
#include "snvkit/emission.hpp"
#include "snvkit/error.hpp"
#include "snvkit/feedback.hpp"
#include "snvkit/hbt.hpp"
#include "snvkit/io.hpp"
#include "snvkit/kinetics.hpp"
#include "snvkit/localization.hpp"
#include "snvkit/polarimetry.hpp"
#include "snvkit/spectra.hpp"
#include "snvkit/vibronic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace snvkit;
using kinetics::DefectState;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const config::Calibration& cal() {
  static const auto c = config::default_calibration();
  return c;
}

const kinetics::Emitter& emitter() {
  static const kinetics::Emitter e(cal().emission);
  return e;
}

// ---------------------------------------------------------------------------
// 1. Vibronic round trip

Outcome vibronic_round_trip() {
  Outcome o{true, ""};
  for (auto [s, nm, tol] : {std::tuple{1.70, 595.0, 0.05}, std::tuple{0.57, 620.0, 0.03}}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = vibronic::VibronicModel::make(kHcEvNm / nm, s, vibronic::PhononSpectrum::default_diamond(), 2.0);
    const auto spec = vibronic::synthesize(m, vibronic::covering_grid(m));
    const auto fit = vibronic::fit_huang_rhys(spec, nm);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = std::abs(fit.model.huang_rhys - s) <= tol && dt < 5.0;
    o.pass = o.pass && ok;
    o.detail += fmt("S %.2f -> %.4f (tol %.2f, %.2f s) ", s, fit.model.huang_rhys, tol, dt);
  }
  return o;
}

// 2. Debye-Waller identity

Outcome debye_waller() {
  Outcome o{true, ""};
  for (double s : {0.57, 1.70}) {
    const auto m = vibronic::VibronicModel::make(2.0, s, vibronic::PhononSpectrum::default_diamond(), 2.0);
    const auto d = vibronic::decompose(m, vibronic::covering_grid(m));
    const double err = std::abs(d.zpl_fraction - std::exp(-s));
    o.pass = o.pass && err <= 1e-4;
    o.detail += fmt("S %.2f: |ZPL fraction - e^-S| = %.2e ", s, err);
  }
  return o;
}

// 3. g2 pipeline on noisy model histograms

Outcome g2_pipeline() {
  int good = 0, failed_fits = 0;
  double worst_t1 = 0.0, worst_t2 = 0.0, worst_g0 = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> d, g;
    for (int k = -400; k <= 400; ++k) {
      const double t = 0.25 * k;
      std::poisson_distribution<long> p(500.0 * hbt::three_level_g2(t, 0.3, 1.4, 9.7));
      d.push_back(t);
      g.push_back(static_cast<double>(p(rng)) / 500.0);
    }
    try {
      const auto f = hbt::fit_three_level(hbt::CorrelationHistogram::from_g2(d, g, 500.0));
      const double e1 = std::abs(f.tau1_ns - 1.4) / 1.4, e2 = std::abs(f.tau2_ns - 9.7) / 9.7;
      const double e0 = std::abs(f.g2_zero);
      worst_t1 = std::max(worst_t1, e1);
      worst_t2 = std::max(worst_t2, e2);
      worst_g0 = std::max(worst_g0, e0);
      if (e1 <= 0.20 && e2 <= 0.15 && e0 <= 0.1) ++good;
    } catch (const FitFailure&) {
      ++failed_fits;
    }
  }
  return {good >= 95, fmt("%d/100 seeds within (tau1 20%%, tau2 15%%, g2(0) 0.1), need 95; fit failures %d; "
                          "worst rel err tau1 %.2f tau2 %.2f, worst |g2(0)| %.3f",
                          good, failed_fits, worst_t1, worst_t2, worst_g0)};
}

// 4. Photon-stream oracle

Outcome photon_stream() {
  const auto rates = hbt::ThreeLevelRates::for_antibunching_time(2.2);
  const auto one = hbt::simulate_emitter(rates, {}, 1);
  const auto f1 = hbt::fit_three_level(hbt::correlate(one, 0.25, 250.0));
  hbt::StreamOptions half;
  half.detections = 500'000;
  const auto two = hbt::TimetagStream::merge(hbt::simulate_emitter(rates, half, 2), hbt::simulate_emitter(rates, half, 3));
  const auto f2 = hbt::fit_three_level(hbt::correlate(two, 0.25, 250.0));
  const bool ok = std::abs(f1.tau1_ns - 2.2) <= 0.22 && f1.g2_zero < 0.5 && f2.g2_zero >= 0.4;
  return {ok, fmt("single: %zu detections, tau1 %.3f ns (2.2 +- 10%%), g2(0) %.3f; two emitters: g2(0) %.3f",
                  one.events().size(), f1.tau1_ns, f1.g2_zero, f2.g2_zero)};
}

// 5. Localization

Outcome localization_check() {
  using namespace localization;
  const double s = 0.78, th = 1.0 * std::numbers::pi / 180.0, dx = 0.10, dy = -0.05;
  auto make = [&](double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma > 0.0 ? sigma : 1.0);
    std::vector<Point> c;
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        const double x = s * i, y = s * j;
        Point p{std::cos(th) * x - std::sin(th) * y + dx, std::sin(th) * x + std::cos(th) * y + dy};
        if (sigma > 0.0) {
          p.x += n(rng);
          p.y += n(rng);
        }
        c.push_back(p);
      }
    }
    return c;
  };
  const auto r0 = register_grid(make(0.0, 0), s);
  const double ex = r0.dx - dx, ey = r0.dy - dy;
  const double u = std::cos(th) * ex + std::sin(th) * ey, v = -std::sin(th) * ex + std::cos(th) * ey;
  const double t_err = std::hypot(u - s * std::round(u / s), v - s * std::round(v / s));
  const double th_err = std::abs(r0.theta - th) * 180.0 / std::numbers::pi;

  // Rayleigh radial jitter with mean 27.6 nm.
  const double target = 0.0276;
  const auto r1 = register_grid(make(target / std::sqrt(std::numbers::pi / 2.0), 1), s);
  const auto st = discrepancy_stats(r1);
  const bool ok = t_err <= 1e-3 && th_err <= 0.01 && std::abs(st.mean - target) <= 0.1 * target;
  return {ok, fmt("noiseless: translation err %.2e nm, angle err %.2e deg; jittered n=100: mean D_r %.1f nm "
                  "(27.6 +- 10%%), std %.1f nm",
                  t_err * 1e3, th_err, st.mean * 1e3, st.std * 1e3)};
}

// ---------------------------------------------------------------------------
// Simulation outputs shared with the determinism check.

struct Texts {
  std::map<std::string, std::string> files;
};

struct DoseScaling {
  std::vector<double> lambda, type_ii, snv, gr1;
  Texts texts;
};

DoseScaling dose_scaling_run() {
  DoseScaling d;
  io::Json rows = io::Json::array();
  for (double lam : {5.0, 10.0, 50.0, 100.0, 500.0, 1000.0}) {
    const auto a = kinetics::implant({100, 100, 0.78}, lam, 7, cal().implant);
    const auto r = kinetics::anneal(a, {1.0, 300.0, std::nullopt}, cal().rates, cal().emission.anneal_options());
    std::vector<double> sum(emitter().grid().size(), 0.0);
    for (const auto& site : r.array.sites) {
      const auto y = emitter().expected_density(site);
      for (std::size_t i = 0; i < y.size(); ++i) sum[i] += y[i];
    }
    const Spectrum total(emitter().grid(), sum);
    d.lambda.push_back(lam);
    d.type_ii.push_back(integrate_window(total, SpectralWindow::type_ii_sn()));
    d.snv.push_back(integrate_window(total, SpectralWindow::snv()));
    d.gr1.push_back(integrate_window(total, SpectralWindow::gr1()));
    rows.push_back({{"dose", lam}, {"TypeIISn", d.type_ii.back()}, {"SnV", d.snv.back()}, {"GR1", d.gr1.back()}});
    d.texts.files[fmt("dose_%g/events.jsonl", lam)] = io::event_log_text(r.events);
  }
  d.texts.files["dose_scaling/report.json"] = io::dump_report(io::make_report("dose-scaling", {{"rows", rows}}));
  return d;
}

struct Switching {
  std::vector<std::pair<std::size_t, std::size_t>> counts;  // (TypeII, SnV) per seed
  int escape_chain = 0, reversal = 0, quench = 0;
  Texts texts;
};

Switching switching_run() {
  Switching w;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto a = kinetics::implant({10, 10, 0.78}, 10.0, seed, cal().implant);
    const auto r = kinetics::anneal(a, {1.0, 300.0, std::nullopt}, cal().rates, cal().emission.anneal_options());
    w.counts.emplace_back(r.array.count(DefectState::TypeII), r.array.count(DefectState::SnV));
    std::map<std::size_t, std::vector<DefectState>> path;
    for (const auto& e : r.events) {
      auto& p = path[e.site_id];
      if (p.empty()) p.push_back(e.from);
      p.push_back(e.to);
      if (e.from == DefectState::SnV && e.to == DefectState::TypeII) ++w.reversal;
      if (e.from == DefectState::SnV && e.to == DefectState::Quenched) ++w.quench;
    }
    for (const auto& [id, p] : path) {
      for (std::size_t i = 0; i + 2 < p.size(); ++i) {
        if (p[i] == DefectState::Dark && p[i + 1] == DefectState::TypeII && p[i + 2] == DefectState::SnV) {
          ++w.escape_chain;
          break;
        }
      }
    }
    w.texts.files[fmt("seed_%llu/events.jsonl", static_cast<unsigned long long>(seed))] = io::event_log_text(r.events);
    w.texts.files[fmt("seed_%llu/final_states.json", static_cast<unsigned long long>(seed))] =
        io::dump_report(io::make_report("final-states", io::to_json(r.array)));
  }
  return w;
}

struct Feedback {
  std::size_t reached_default = 0, frozen_default = 0;
  std::size_t reached_heavy_ctl = 0, frozen_heavy_ctl = 0;
  Texts texts;
};

feedback::Protocol protocol() {
  feedback::Protocol p;
  p.segment = {1.0, 60.0, std::nullopt};
  p.max_cycles = 5;
  p.stop = feedback::StopRule::OnActivation;
  return p;
}

Feedback feedback_run() {
  Feedback f;
  const auto heavy = config::parse_config(std::string(SNVKIT_CONFIG_DIR) + "/reversal_heavy.json").calibration.rates;
  auto tally = [](const feedback::CampaignReport& r, std::size_t& reached, std::size_t& frozen) {
    reached += r.reached_snv();
    frozen += static_cast<std::size_t>(std::llround(r.frozen_fraction() * static_cast<double>(r.reached_snv())));
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto a = kinetics::implant({10, 10, 0.78}, 10.0, seed, cal().implant);
    auto p = protocol();
    const auto fb = feedback::run_protocol(a, p, cal().rates, emitter(), seed);
    tally(fb, f.reached_default, f.frozen_default);
    p.monitoring = false;
    const auto ctl = feedback::run_protocol(a, p, heavy, emitter(), seed);
    tally(ctl, f.reached_heavy_ctl, f.frozen_heavy_ctl);
    const auto tag = fmt("seed_%llu", static_cast<unsigned long long>(seed));
    f.texts.files[tag + "/feedback/events.jsonl"] = io::event_log_text(fb.events);
    f.texts.files[tag + "/feedback/report.json"] = io::dump_report(io::make_report("feedback-run", io::to_json(fb)));
    f.texts.files[tag + "/control/events.jsonl"] = io::event_log_text(ctl.events);
    f.texts.files[tag + "/control/report.json"] = io::dump_report(io::make_report("feedback-run", io::to_json(ctl)));
  }
  return f;
}

// Latest detection delay over noiseless TypeII -> SnV steps at and between bin edges.
double noiseless_latency() {
  kinetics::SiteState s;
  s.dose = 10;
  s.gr1_population = 10;
  s.split_vacancies = 4;
  s.state = DefectState::TypeII;
  s.zpl_center_nm = cal().emission.type_ii.zpl_nm;
  const double bin = cal().emission.spad.bin_s;
  double worst = 0.0;
  for (double frac : {0.0, 0.25, 0.5, 0.75, 0.99}) {
    const double t_change = 40.0 + frac * bin;
    kinetics::Timeline tl;
    tl.initial = DefectState::TypeII;
    tl.initial_zpl_nm = s.zpl_center_nm;
    tl.duration_s = 60.0;
    tl.changes.push_back({t_change, DefectState::SnV, cal().emission.snv.zpl_nm});
    feedback::ChangepointDetector det(bin);
    std::optional<feedback::FeedbackEvent> hit;
    for (double mu : emitter().expected_spad_counts(s, tl, bin)) {
      hit = det.push(std::lround(mu));
      if (hit) break;
    }
    if (!hit) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, hit->detected_at_s - t_change);
  }
  return worst;
}

// Shared between criteria 6-8 and the determinism check.
DoseScaling g_dose;
Switching g_switch;
Feedback g_feedback;

// 6. Dose scaling

Outcome dose_scaling() {
  g_dose = dose_scaling_run();
  const auto& d = g_dose;
  // Least-squares line for GR1.
  const double n = static_cast<double>(d.lambda.size());
  const double mx = std::accumulate(d.lambda.begin(), d.lambda.end(), 0.0) / n;
  const double my = std::accumulate(d.gr1.begin(), d.gr1.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < d.lambda.size(); ++i) {
    sxy += (d.lambda[i] - mx) * (d.gr1[i] - my);
    sxx += (d.lambda[i] - mx) * (d.lambda[i] - mx);
    syy += (d.gr1[i] - my) * (d.gr1[i] - my);
  }
  const double r2 = sxy * sxy / (sxx * syy);
  // Second divided differences on the unequal dose grid.
  auto divided = [&](const std::vector<double>& y) {
    std::vector<double> out;
    for (std::size_t i = 0; i + 2 < y.size(); ++i) {
      const double s1 = (y[i + 1] - y[i]) / (d.lambda[i + 1] - d.lambda[i]);
      const double s2 = (y[i + 2] - y[i + 1]) / (d.lambda[i + 2] - d.lambda[i + 1]);
      out.push_back(s2 - s1);
    }
    return out;
  };
  auto plain_negative = [](const std::vector<double>& y) {
    int k = 0;
    for (std::size_t i = 0; i + 2 < y.size(); ++i) k += y[i + 2] - 2.0 * y[i + 1] + y[i] < 0.0 ? 1 : 0;
    return k;
  };
  const auto dt = divided(d.type_ii), ds = divided(d.snv);
  const bool concave = std::all_of(dt.begin(), dt.end(), [](double v) { return v < 0.0; }) &&
                       std::all_of(ds.begin(), ds.end(), [](double v) { return v < 0.0; });
  std::ostringstream tii, snv;
  for (std::size_t i = 0; i < d.lambda.size(); ++i) {
    tii << (i ? "," : "") << fmt("%.3g", d.type_ii[i]);
    snv << (i ? "," : "") << fmt("%.3g", d.snv[i]);
  }
  return {r2 > 0.99 && concave,
          fmt("GR1 R^2 %.5f; TypeII [%s] SnV [%s]; divided second differences negative: %s "
              "(plain index differences negative: TypeII %d/4, SnV %d/4)",
              r2, tii.str().c_str(), snv.str().c_str(), concave ? "all" : "not all", plain_negative(d.type_ii),
              plain_negative(d.snv))};
}

// 7. Switching statistics

Outcome switching() {
  g_switch = switching_run();
  const auto& w = g_switch;
  bool per_seed = true;
  std::size_t t_all = 0, s_all = 0;
  std::ostringstream per;
  for (const auto& [t, s] : w.counts) {
    const double tii10 = 10.0 * static_cast<double>(t) / static_cast<double>(t + s);
    per_seed = per_seed && t + s > 0 && std::abs(tii10 - 7.0) <= 2.0;
    per << fmt("%.1f ", tii10);
    t_all += t;
    s_all += s;
  }
  const double agg = 10.0 * static_cast<double>(t_all) / static_cast<double>(t_all + s_all);
  const bool motifs = w.escape_chain > 0 && w.reversal > 0 && w.quench > 0;
  return {per_seed && std::abs(agg - 7.0) <= 2.0 && motifs,
          fmt("TypeII per 10 emitters by seed 1-10: %s; pooled %.2f:%.2f; motifs Dark->TypeII->SnV %d, "
              "SnV->TypeII %d, SnV->Quenched %d",
              per.str().c_str(), agg, 10.0 - agg, w.escape_chain, w.reversal, w.quench)};
}

// 8. Feedback efficacy

Outcome feedback_efficacy() {
  g_feedback = feedback_run();
  const auto& f = g_feedback;
  const double fb = static_cast<double>(f.frozen_default) / static_cast<double>(f.reached_default);
  const double ctl = static_cast<double>(f.frozen_heavy_ctl) / static_cast<double>(f.reached_heavy_ctl);
  const double lat = noiseless_latency();
  return {fb >= 0.80 && 1.0 - ctl > 0.30 && lat <= 0.52 + 1e-9,
          fmt("feedback frozen %.3f (default rates, %zu activations, need >= 0.80); control lost %.3f under "
              "reversal-heavy rates (need > 0.30); noiseless latency %.3f s (need <= 0.52)",
              fb, f.reached_default, 1.0 - ctl, lat)};
}

// 9. Determinism

Outcome determinism() {
  std::size_t compared = 0, differing = 0;
  auto cmp = [&](const Texts& a, const Texts& b) {
    for (const auto& [name, text] : a.files) {
      ++compared;
      const auto it = b.files.find(name);
      if (it == b.files.end() || io::strip_timestamp(it->second) != io::strip_timestamp(text)) ++differing;
    }
  };
  cmp(g_dose.texts, dose_scaling_run().texts);
  cmp(g_switch.texts, switching_run().texts);
  cmp(g_feedback.texts, feedback_run().texts);
  return {compared > 0 && differing == 0, fmt("%zu event logs and reports re-generated, %zu differ", compared, differing)};
}

// 10. Properties

Outcome properties() {
  std::vector<std::string> bad;
  std::mt19937_64 rng(10);

  // Convolution keeps unit normalization.
  {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> nodes(33);
    for (auto& v : nodes) v = u(rng);
    const auto p = vibronic::PhononSpectrum::from_nodes(nodes);
    for (int n = 1; n <= 12; ++n) {
      const auto in = vibronic::convolve_order(p, n);
      const double area = p.spacing() * std::accumulate(in.begin(), in.end(), 0.0);
      if (std::abs(area - 1.0) > 1e-6) bad.push_back(fmt("convolution order %d area %.3e", n, area - 1.0));
    }
  }
  // Window additivity.
  {
    std::vector<double> g, y;
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i <= 2000; ++i) {
      g.push_back(560.0 + 0.11 * i);
      y.push_back(u(rng));
    }
    const Spectrum s(g, y);
    std::uniform_real_distribution<double> pos(565.0, 770.0);
    for (int k = 0; k < 200; ++k) {
      double a = pos(rng), c = pos(rng);
      if (a > c) std::swap(a, c);
      const double b = 0.5 * (a + c) + 0.3 * (c - a) * (pos(rng) - 667.5) / 102.5;
      const double whole = integrate_range(s, a, c), parts = integrate_range(s, a, b) + integrate_range(s, b, c);
      if (std::abs(whole - parts) > 1e-9 * std::max(1.0, std::abs(whole))) {
        bad.push_back("window additivity");
        break;
      }
    }
  }
  // Malus fit is invariant under intensity scaling.
  {
    polarimetry::PolarizationScan sc;
    std::normal_distribution<double> n(0.0, 2.0);
    for (int i = 0; i < 36; ++i) {
      const double t = 5.0 * i, arg = (2.0 * t - 50.0) * std::numbers::pi / 180.0;
      sc.angles_deg.push_back(t);
      sc.intensities.push_back(80.0 * std::cos(arg) * std::cos(arg) + 20.0 + n(rng));
    }
    const auto f1 = polarimetry::fit_malus(sc);
    for (auto& v : sc.intensities) v *= 37.5;
    const auto f2 = polarimetry::fit_malus(sc);
    if (std::abs(f1.visibility - f2.visibility) > 1e-9 || std::abs(f1.axis_deg - f2.axis_deg) > 1e-9) {
      bad.push_back("Malus scale invariance");
    }
  }
  // FWHM constant.
  if (std::abs(localization::kFwhmPerSigma - 2.0 * std::sqrt(2.0 * std::log(2.0))) > 1e-15) bad.push_back("FWHM constant");
  {
    const double h = 3.0, w = 2.5;
    if (std::abs(peak_profile(PeakModel::Gaussian, 0.5 * w, 0.0, w, h) - 0.5 * h) > 1e-12 ||
        std::abs(peak_profile(PeakModel::Lorentzian, 0.5 * w, 0.0, w, h) - 0.5 * h) > 1e-12) {
      bad.push_back("half maximum at FWHM/2");
    }
  }
  // KS test on first Dark sojourns at the 1% level.
  {
    const std::size_t n = 10000;
    kinetics::SiteArray a;
    a.seed = 11;
    a.spec = {1, n, 0.78};
    for (std::size_t i = 0; i < n; ++i) {
      kinetics::SiteState s;
      s.site_id = i;
      s.dose = 1;
      s.split_vacancies = 1;
      s.gr1_population = 1;
      s.state = DefectState::Dark;
      a.sites.push_back(s);
    }
    const double k = cal().rates.arrhenius(cal().rates.first_escape_ev, 1.0);
    const auto r = kinetics::anneal(a, {1.0, 50.0 / k, std::nullopt}, cal().rates, cal().emission.anneal_options());
    std::vector<double> first(n, -1.0);
    for (const auto& e : r.events) {
      if (e.from == DefectState::Dark && first[e.site_id] < 0.0) first[e.site_id] = e.time_s;
    }
    std::sort(first.begin(), first.end());
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double F = 1.0 - std::exp(-k * first[i]);
      d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
    }
    if (first.front() < 0.0 || d >= 1.628 / std::sqrt(static_cast<double>(n))) bad.push_back(fmt("KS D = %.4f", d));
  }
  std::string detail = "convolution 1e-6, window additivity 1e-9, Malus scale 1e-9, FWHM constant, KS 1%";
  for (const auto& b : bad) detail += "; failed: " + b;
  return {bad.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "vibronic round trip", 10.0, vibronic_round_trip},
      {2, "Debye-Waller identity", 1.0, debye_waller},
      {3, "g2 pipeline", 30.0, g2_pipeline},
      {4, "photon-stream oracle", 60.0, photon_stream},
      {5, "localization", 10.0, localization_check},
      {6, "dose scaling", 120.0, dose_scaling},
      {7, "switching statistics", 60.0, switching},
      {8, "feedback efficacy", 60.0, feedback_efficacy},
      {9, "determinism", 300.0, determinism},
      {10, "property suites", 60.0, properties},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = dt <= c.limit_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s [%.2f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), dt, c.limit_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
