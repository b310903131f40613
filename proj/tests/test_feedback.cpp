#include "doctest.h"

#include "snvkit/config.hpp"
#include "snvkit/error.hpp"
#include "snvkit/feedback.hpp"

#include <cmath>
#include <random>

using namespace snvkit;
using namespace snvkit::feedback;
using kinetics::DefectState;

namespace {

SpadTrace poisson_trace(std::uint64_t seed, std::size_t n, double lo, double hi, std::size_t step_at) {
  std::mt19937_64 eng(seed);
  SpadTrace t;
  t.bin_s = 0.02;
  for (std::size_t i = 0; i < n; ++i) {
    std::poisson_distribution<long> p(i < step_at ? lo : hi);
    t.counts.push_back(p(eng));
  }
  return t;
}

const config::Calibration& cal() {
  static const auto c = config::default_calibration();
  return c;
}

const kinetics::Emitter& emitter() {
  static const kinetics::Emitter e(cal().emission);
  return e;
}

Spectrum subtracted(const Spectrum& s) {
  BaselineOptions bo;
  bo.quiet_bands = {{560.0, 570.0}, {760.0, 780.0}};
  return subtract_baseline(s, bo);
}

kinetics::SiteState make_site(DefectState st, std::optional<double> zpl, int dose = 4, int split = 2) {
  kinetics::SiteState s;
  s.site_id = 3;
  s.dose = dose;
  s.gr1_population = dose;
  s.split_vacancies = split;
  s.state = st;
  s.zpl_center_nm = zpl;
  return s;
}

}  // namespace

TEST_CASE("stationary traces rarely raise events") {
  int noisy = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto ev = detect_changepoints(poisson_trace(seed, 10000, 50.0, 50.0, 10000));
    if (!ev.empty()) ++noisy;
  }
  CHECK(noisy <= 1);
}

TEST_CASE("step up is located") {
  const auto ev = detect_changepoints(poisson_trace(7, 4000, 20.0, 200.0, 2000));
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].kind == EventKind::Activation);
  CHECK(std::abs(static_cast<long>(ev[0].onset_bin) - 2000) <= 5);
  CHECK(ev[0].time_s == doctest::Approx(0.02 * static_cast<double>(ev[0].onset_bin)));
  CHECK(ev[0].detected_at_s >= ev[0].time_s + 25 * 0.02 - 1e-12);
  CHECK(ev[0].pre_mean == doctest::Approx(20.0).epsilon(0.1));
  CHECK(ev[0].post_mean == doctest::Approx(200.0).epsilon(0.1));
  CHECK(ev[0].significance >= 5.0);
}

TEST_CASE("step down is a deactivation") {
  const auto ev = detect_changepoints(poisson_trace(8, 4000, 200.0, 20.0, 1500));
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].kind == EventKind::Deactivation);
  CHECK(std::abs(static_cast<long>(ev[0].onset_bin) - 1500) <= 5);
  CHECK(ev[0].post_mean < ev[0].pre_mean);
}

TEST_CASE("onset does not depend on the count scale") {
  for (long scale : {1L, 10L, 100L}) {
    SpadTrace t;
    t.bin_s = 0.02;
    for (std::size_t i = 0; i < 3000; ++i) t.counts.push_back(scale * (i < 1200 ? 30 : 90));
    const auto ev = detect_changepoints(t);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].onset_bin == 1200);
  }
}

TEST_CASE("doubling both levels keeps the onset within one bin") {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    const auto a = detect_changepoints(poisson_trace(seed, 4000, 20.0, 200.0, 2000));
    const auto b = detect_changepoints(poisson_trace(seed + 100, 4000, 40.0, 400.0, 2000));
    REQUIRE(a.size() == 1);
    REQUIRE(b.size() == 1);
    CHECK(std::abs(static_cast<long>(a[0].onset_bin) - static_cast<long>(b[0].onset_bin)) <= 1);
  }
}

TEST_CASE("dark and empty sites never classify as emitters") {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    kinetics::SiteState s = make_site(seed % 2 ? DefectState::Dark : DefectState::Empty, std::nullopt,
                                      static_cast<int>(seed % 20), seed % 2 ? 1 : 0);
    const auto k = classify_site(subtracted(emitter().emit_spectrum(s, 1.0, seed))).kind;
    hits += k == SiteClass::SnV || k == SiteClass::TypeII ? 1 : 0;
  }
  CHECK(hits == 0);
}

TEST_CASE("noiseless step latency is one dwell window") {
  ChangepointDetector det(0.02);
  std::optional<FeedbackEvent> hit;
  for (std::size_t i = 0; i < 400 && !hit; ++i) hit = det.push(i < 200 ? 20 : 200);
  REQUIRE(hit.has_value());
  CHECK(hit->onset_bin == 200);
  CHECK(hit->detected_at_s - hit->time_s == doctest::Approx(25 * 0.02));
}

TEST_CASE("detector validation") {
  CHECK_THROWS_AS(detect_changepoints(poisson_trace(1, 49, 5.0, 5.0, 49)), InvalidInput);
  CHECK_THROWS_AS(ChangepointDetector(0.0), InvalidInput);
  ChangepointDetector det(0.02);
  CHECK_THROWS_AS(det.push(-1), InvalidInput);
}

TEST_CASE("events alternate and stay ordered") {
  SpadTrace t;
  t.bin_s = 0.02;
  std::mt19937_64 eng(10);
  const double levels[] = {20.0, 150.0, 20.0, 150.0};
  for (double lv : levels) {
    std::poisson_distribution<long> p(lv);
    for (int i = 0; i < 500; ++i) t.counts.push_back(p(eng));
  }
  const auto ev = detect_changepoints(t);
  REQUIRE(ev.size() == 3);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    CHECK(ev[i].kind == (i % 2 == 0 ? EventKind::Activation : EventKind::Deactivation));
    CHECK(std::abs(static_cast<long>(ev[i].onset_bin) - 500 * static_cast<long>(i + 1)) <= 5);
    if (i > 0) CHECK(ev[i].onset_bin > ev[i - 1].onset_bin);
  }
}

TEST_CASE("classification of synthetic spectra") {
  auto kind_of = [](const kinetics::SiteState& s, std::uint64_t seed) {
    return classify_site(subtracted(emitter().emit_spectrum(s, 1.0, seed))).kind;
  };
  CHECK(kind_of(make_site(DefectState::TypeII, 595.0), 1) == SiteClass::TypeII);
  CHECK(kind_of(make_site(DefectState::SnV, 620.0), 2) == SiteClass::SnV);
  CHECK(kind_of(make_site(DefectState::Dark, std::nullopt, 10, 3), 3) == SiteClass::GR1Only);
  CHECK(kind_of(make_site(DefectState::Empty, std::nullopt, 0, 0), 4) == SiteClass::Background);
  const auto c = classify_site(subtracted(emitter().emit_spectrum(make_site(DefectState::SnV, 619.4), 1.0, 5)));
  REQUIRE(c.peak.has_value());
  CHECK(c.peak->center == doctest::Approx(619.4).epsilon(0.3 / 619.4));
  CHECK(c.window_integral > 0.0);
}

TEST_CASE("classification agrees with the simulated state") {
  int n = 0, ok = 0;
  for (std::uint64_t seed = 1; n < 1000; ++seed) {
    const auto a = kinetics::implant({10, 10, 0.78}, 10.0, seed, cal().implant);
    const auto r = kinetics::anneal(a, {1.0, 300.0, std::nullopt}, cal().rates, cal().emission.anneal_options());
    for (const auto& s : r.array.sites) {
      if (n >= 1000) break;
      if (s.state != DefectState::TypeII && s.state != DefectState::SnV) continue;
      ++n;
      const auto k = classify_site(subtracted(emitter().emit_spectrum(s, 1.0, seed))).kind;
      ok += (s.state == DefectState::TypeII) == (k == SiteClass::TypeII) &&
                    (s.state == DefectState::SnV) == (k == SiteClass::SnV)
                ? 1
                : 0;
    }
  }
  CHECK(static_cast<double>(ok) / n >= 0.95);
}

TEST_CASE("monitoring off reproduces the plain anneal") {
  const auto a = kinetics::implant({6, 6, 0.78}, 10.0, 21, cal().implant);
  Protocol p;
  p.segment = {1.0, 60.0, std::nullopt};
  p.max_cycles = 3;
  p.monitoring = false;
  const auto rep = run_protocol(a, p, cal().rates, emitter(), 5);
  auto ref = a;
  for (int c = 0; c < 3; ++c) ref = kinetics::anneal(ref, p.segment, cal().rates, cal().emission.anneal_options()).array;
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    if (a.sites[i].state == DefectState::Empty) continue;
    CHECK(rep.array.sites[i].state == ref.sites[i].state);
    CHECK(rep.array.sites[i].zpl_center_nm == ref.sites[i].zpl_center_nm);
    CHECK(rep.array.sites[i].reservoir == ref.sites[i].reservoir);
    CHECK(rep.array.sites[i].clock_s == doctest::Approx(180.0));
  }
  for (const auto& s : rep.sites) {
    CHECK_FALSE(s.stopped);
    CHECK(s.cycles_used == 3);
  }
}

TEST_CASE("on-activation halts soon after SnV entry") {
  auto a = kinetics::implant({6, 6, 0.78}, 10.0, 22, cal().implant);
  for (auto& s : a.sites) s.reservoir = 0;
  Protocol p;
  p.segment = {1.2, 60.0, std::nullopt};
  p.max_cycles = 5;
  const auto rep = run_protocol(a, p, cal().rates, emitter(), 9);
  int stopped = 0;
  for (const auto& o : rep.sites) {
    if (!o.stopped) continue;
    ++stopped;
    CHECK(o.final_state == DefectState::SnV);
    REQUIRE(o.stopped_at_s.has_value());
    double entry = -1.0;
    for (const auto& e : rep.events) {
      if (e.site_id == o.site_id && e.to == DefectState::SnV) entry = e.time_s;
    }
    REQUIRE(entry >= 0.0);
    CHECK(*o.stopped_at_s - entry <= 1.0);
    CHECK(*o.stopped_at_s >= entry);
    CHECK(o.detections.back().post_mean >= o.activation_level);
  }
  CHECK(stopped > 0);
  CHECK(rep.frozen_fraction() == 1.0);
}

TEST_CASE("max-cycles rule never halts and empty cycles change nothing") {
  const auto a = kinetics::implant({4, 4, 0.78}, 10.0, 23, cal().implant);
  Protocol p;
  p.segment = {1.0, 30.0, std::nullopt};
  p.stop = StopRule::MaxCycles;
  p.max_cycles = 2;
  for (const auto& o : run_protocol(a, p, cal().rates, emitter(), 1).sites) {
    CHECK_FALSE(o.stopped);
    CHECK(o.cycles_used == 2);
  }

  Protocol zero;
  zero.segment = {1.0, 0.0, std::nullopt};
  zero.max_cycles = 1;
  const auto rep = run_protocol(a, zero, cal().rates, emitter(), 1);
  CHECK(rep.events.empty());
  for (std::size_t i = 0; i < a.sites.size(); ++i) CHECK(rep.array.sites[i].state == a.sites[i].state);

  Protocol bad;
  bad.max_cycles = 0;
  CHECK_THROWS_AS(run_protocol(a, bad, cal().rates, emitter(), 1), InvalidInput);
  Protocol far;
  far.targets = {999};
  CHECK_THROWS_AS(run_protocol(a, far, cal().rates, emitter(), 1), InvalidInput);
}

TEST_CASE("names") {
  CHECK(to_string(StopRule::OnDeactivation) == "on-deactivation");
  CHECK(to_string(SiteClass::GR1Only) == "GR1-only");
  CHECK(to_string(EventKind::Deactivation) == "Deactivation");
}
