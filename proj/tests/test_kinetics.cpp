#include "doctest.h"

#include "snvkit/config.hpp"
#include "snvkit/error.hpp"
#include "snvkit/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace snvkit;
using namespace snvkit::kinetics;

namespace {

const config::Calibration& cal() {
  static const auto c = config::default_calibration();
  return c;
}

// n sites in Dark with no reservoir: only the escape chain Dark -> TypeII -> SnV is open.
SiteArray dark_array(std::size_t n, std::uint64_t seed) {
  SiteArray a;
  a.spec = {1, n, 0.78};
  a.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    SiteState s;
    s.site_id = i;
    s.x_um = 0.78 * static_cast<double>(i);
    s.dose = 1;
    s.split_vacancies = 1;
    s.gr1_population = 1;
    s.state = DefectState::Dark;
    a.sites.push_back(s);
  }
  return a;
}

AnnealOptions opts(unsigned threads = 1) {
  auto o = cal().emission.anneal_options();
  o.threads = threads;
  return o;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("state names round trip") {
  for (auto s : {DefectState::Empty, DefectState::Dark, DefectState::TypeII, DefectState::SnV, DefectState::Quenched}) {
    REQUIRE(state_from_string(to_string(s)).has_value());
    CHECK(*state_from_string(to_string(s)) == s);
  }
  CHECK_FALSE(state_from_string("Bogus").has_value());
}

TEST_CASE("implant statistics") {
  const auto& im = cal().implant;
  CHECK(im.split_vacancy_probability == doctest::Approx(0.40));

  const auto zero = implant({10, 10, 0.78}, 0.0, 1, im);
  CHECK(zero.count(DefectState::Empty) == 100);
  CHECK(zero.total_dose() == 0);

  const auto one = implant({100, 100, 0.78}, 1.0, 2, im);
  std::size_t hit = 0;
  for (const auto& s : one.sites) hit += s.dose > 0 ? 1 : 0;
  CHECK(static_cast<double>(hit) / 1e4 == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(0.015 / 0.632));
  const double occupied = 1.0 - static_cast<double>(one.count(DefectState::Empty)) / 1e4;
  CHECK(std::abs(occupied - (1.0 - std::exp(-0.4))) < 3.0 * std::sqrt(0.33 * 0.67 / 1e4));

  const auto ten = implant({10, 10, 0.78}, 10.0, 3, im);
  CHECK(std::abs(static_cast<double>(ten.total_dose()) - 1000.0) <= 3.0 * std::sqrt(1000.0));
  const auto small = implant({4, 4, 0.78}, 10.0, 3, im);
  CHECK(std::abs(static_cast<double>(small.total_dose()) - 160.0) <= 3.0 * std::sqrt(160.0));

  for (const auto& s : ten.sites) {
    CHECK(s.split_vacancies <= s.dose);
    CHECK(s.gr1_population == s.dose);
    CHECK((s.state == DefectState::Dark) == (s.split_vacancies > 0));
  }
  CHECK_THROWS_AS(implant({10, 10, 0.78}, -1.0, 1, im), InvalidInput);
  CHECK_THROWS_AS(implant({10, 10, -0.78}, 1.0, 1, im), InvalidInput);
}

TEST_CASE("zero-duration anneal is the identity") {
  const auto a = implant({10, 10, 0.78}, 10.0, 4, cal().implant);
  const auto r = anneal(a, {1.0, 0.0, std::nullopt}, cal().rates, opts());
  CHECK(r.events.empty());
  for (std::size_t i = 0; i < a.sites.size(); ++i) CHECK(r.array.sites[i].state == a.sites[i].state);
}

TEST_CASE("long anneal without reservoir is absorbed in SnV") {
  auto a = implant({10, 10, 0.78}, 10.0, 5, cal().implant);
  for (auto& s : a.sites) s.reservoir = 0;
  const auto r = anneal(a, {1.2, 1e6, std::nullopt}, cal().rates, opts());
  for (const auto& s : r.array.sites) {
    if (s.split_vacancies > 0) CHECK(s.state == DefectState::SnV);
    else CHECK(s.state == DefectState::Empty);
  }
}

TEST_CASE("anneal determinism, conservation, replay and truncation") {
  const auto a = implant({20, 20, 0.78}, 10.0, 6, cal().implant);
  const AnnealSegment seg{1.0, 300.0, std::nullopt};
  const auto r1 = anneal(a, seg, cal().rates, opts(1));
  const auto r4 = anneal(a, seg, cal().rates, opts(4));
  REQUIRE(r1.events.size() == r4.events.size());
  CHECK_FALSE(r1.events.empty());
  for (std::size_t i = 0; i < r1.events.size(); ++i) {
    CHECK(r1.events[i].time_s == r4.events[i].time_s);
    CHECK(r1.events[i].site_id == r4.events[i].site_id);
    CHECK(r1.events[i].to == r4.events[i].to);
  }
  CHECK(r1.array.total_dose() == a.total_dose());
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    CHECK(r1.array.sites[i].dose == a.sites[i].dose);
    CHECK(r1.array.sites[i].gr1_population == a.sites[i].gr1_population);
    CHECK(r1.array.sites[i].clock_s == doctest::Approx(300.0));
  }
  for (std::size_t i = 1; i < r1.events.size(); ++i) CHECK(r1.events[i - 1].time_s <= r1.events[i].time_s);

  const auto replayed = replay(a, r1.events);
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    CHECK(replayed.sites[i].state == r1.array.sites[i].state);
    CHECK(replayed.sites[i].reservoir == r1.array.sites[i].reservoir);
  }
  auto broken = r1.events;
  broken.insert(broken.begin(), broken.front());
  CHECK_THROWS_AS(replay(a, broken), InvalidInput);

  auto o = opts();
  o.truncate_at_s = 100.0;
  const auto t = anneal(a, seg, cal().rates, o);
  std::vector<TransitionEvent> prefix;
  for (const auto& e : r1.events) {
    if (e.time_s <= 100.0) prefix.push_back(e);
  }
  REQUIRE(t.events.size() == prefix.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(t.events[i].time_s == prefix[i].time_s);
}

TEST_CASE("first dark sojourns are exponential") {
  const std::size_t n = 10000;
  const double pulse = 1.0;
  const double k = cal().rates.arrhenius(cal().rates.first_escape_ev, pulse);
  const auto r = anneal(dark_array(n, 11), {pulse, 50.0 / k, std::nullopt}, cal().rates, opts());
  std::map<std::size_t, double> first;
  for (const auto& e : r.events) {
    if (e.from == DefectState::Dark) first.emplace(e.site_id, e.time_s);
  }
  REQUIRE(first.size() == n);
  std::vector<double> t;
  for (const auto& [id, v] : first) t.push_back(v);
  std::sort(t.begin(), t.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = 1.0 - std::exp(-k * t[i]);
    d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
  }
  CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("ZPL draws follow the configured distributions") {
  const auto r = anneal(dark_array(10000, 12), {1.0, 5000.0, std::nullopt}, cal().rates, opts());
  std::vector<double> tii, snv;
  for (const auto& e : r.events) {
    REQUIRE(e.zpl_center_nm.has_value());
    (e.to == DefectState::TypeII ? tii : snv).push_back(*e.zpl_center_nm);
  }
  REQUIRE(tii.size() > 5000);
  REQUIRE(snv.size() > 5000);
  CHECK(std::abs(mean_of(tii) - 595.0) < 4.0 * 1.10 / std::sqrt(static_cast<double>(tii.size())));
  CHECK(std::abs(mean_of(snv) - 620.0) < 4.0 * 4.77 / std::sqrt(static_cast<double>(snv.size())));
  CHECK(sd_of(tii) == doctest::Approx(1.10).epsilon(0.05));
  CHECK(sd_of(snv) == doctest::Approx(4.77).epsilon(0.05));
}

TEST_CASE("fixed-step evolution agrees with the exact chain") {
  const double pulse = 1.2, T = 60.0;
  const auto& rm = cal().rates;
  const double k1 = rm.arrhenius(rm.first_escape_ev, pulse), k2 = rm.arrhenius(rm.binding_energy_ev, pulse);
  const double p_dark = std::exp(-k1 * T);
  const double p_tii = k1 / (k2 - k1) * (std::exp(-k1 * T) - std::exp(-k2 * T));
  const std::size_t n = 4000;
  const auto a = dark_array(n, 13);
  const auto exact = anneal(a, {pulse, T, std::nullopt}, rm, opts());
  const auto stepped = anneal_fixed_dt(a, {pulse, T, std::nullopt}, rm, opts(), 0.05 / k1);
  for (const auto* r : {&exact, &stepped}) {
    const double fd = static_cast<double>(r->array.count(DefectState::Dark)) / n;
    const double ft = static_cast<double>(r->array.count(DefectState::TypeII)) / n;
    CHECK(std::abs(fd - p_dark) < 4.0 * std::sqrt(p_dark * (1 - p_dark) / n) + 0.01);
    CHECK(std::abs(ft - p_tii) < 4.0 * std::sqrt(p_tii * (1 - p_tii) / n) + 0.01);
  }
  CHECK_THROWS_AS(anneal_fixed_dt(a, {pulse, T, std::nullopt}, rm, opts(), 1.0 / k1), InvalidInput);
}

TEST_CASE("site rates") {
  const auto& rm = cal().rates;
  SiteState s;
  s.state = DefectState::SnV;
  s.reservoir = 3;
  const auto r = site_rates(s, rm, 1.0, 1.0);
  const double k = rm.arrhenius(rm.recapture_ev, 1.0);
  CHECK(r.to_typeii == doctest::Approx(k * rm.recapture_snv * 3));
  CHECK(r.to_quenched == doctest::Approx(k * rm.quench * 3.0));
  s.reservoir = 0;
  CHECK(site_rates(s, rm, 1.0, 1.0).total() == 0.0);
  s.state = DefectState::Dark;
  CHECK(site_rates(s, rm, 1.0, 0.5).to_typeii == doctest::Approx(0.5 * rm.arrhenius(rm.first_escape_ev, 1.0)));
  s.graphitized = true;
  CHECK(site_rates(s, rm, 1.0, 1.0).total() == 0.0);
  CHECK(rm.falloff(0.0) == 1.0);
  CHECK(rm.effective_temperature(1.0) == doctest::Approx(3000.0));
}

TEST_CASE("rate and landscape validation") {
  auto rm = cal().rates;
  rm.t_eff_k_at_1nj = 0.0;
  CHECK_THROWS_AS((void)rm.arrhenius(1.0, 1.0), ConfigError);
  rm = cal().rates;
  rm.falloff_um = 0.0;
  CHECK_THROWS_AS(rm.validate(), ConfigError);
  auto land = cal().landscape;
  CHECK_NOTHROW(land.validate());
  land.energies_ev = {-0.5, -0.4, 0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(land.validate(), ConfigError);
  CHECK_THROWS_AS(anneal(dark_array(3, 1), {-1.0, 1.0, std::nullopt}, cal().rates, opts()), InvalidInput);
}

TEST_CASE("timeline reconstruction") {
  const auto a = dark_array(1, 14);
  const auto r = anneal(a, {1.1, 200.0, std::nullopt}, cal().rates, opts());
  const auto tl = timeline_for(a.sites[0], r.events, 200.0);
  CHECK(tl.initial == DefectState::Dark);
  CHECK(tl.changes.size() == r.events.size());
  CHECK(tl.state_at(0.0) == DefectState::Dark);
  CHECK(tl.state_at(200.0) == r.array.sites[0].state);
}
