#include "snvkit/kinetics.hpp"

#include "snvkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

namespace snvkit::kinetics {

std::string_view to_string(DefectState s) noexcept {
  switch (s) {
    case DefectState::Empty: return "Empty";
    case DefectState::Dark: return "Dark";
    case DefectState::TypeII: return "TypeII";
    case DefectState::SnV: return "SnV";
    case DefectState::Quenched: return "Quenched";
  }
  return "Empty";
}

std::optional<DefectState> state_from_string(std::string_view s) noexcept {
  for (auto st : {DefectState::Empty, DefectState::Dark, DefectState::TypeII, DefectState::SnV, DefectState::Quenched}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

std::size_t SiteArray::count(DefectState s) const noexcept {
  return static_cast<std::size_t>(std::count_if(sites.begin(), sites.end(), [s](const SiteState& x) { return x.state == s; }));
}

long SiteArray::total_dose() const noexcept {
  long n = 0;
  for (const auto& s : sites) n += s.dose;
  return n;
}

void EnergyLandscape::validate() const {
  if (separations.size() != energies_ev.size() || separations.empty()) {
    throw ConfigError("landscape", "separations and energies must be non-empty and equal in length");
  }
  if (!(binding_energy_ev > 0.0)) throw ConfigError("landscape.binding_energy_ev", "must be positive");
  double bound_max = -std::numeric_limits<double>::infinity();
  double free_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < separations.size(); ++i) {
    if (separations[i] >= 1 && separations[i] <= 2) bound_max = std::max(bound_max, energies_ev[i]);
    else free_min = std::min(free_min, energies_ev[i]);
  }
  if (std::isfinite(bound_max) && std::isfinite(free_min) && free_min - bound_max < 1.5) {
    throw ConfigError("landscape.energies_ev", "bound configurations must lie well below the distant ones");
  }
}

double RateModel::effective_temperature(double pulse_nj) const noexcept {
  return t_eff_k_at_1nj + t_eff_slope_k_per_nj * (pulse_nj - 1.0);
}

double RateModel::falloff(double distance_um) const noexcept {
  const double u = distance_um / falloff_um;
  return std::exp(-0.5 * u * u);
}

double RateModel::arrhenius(double barrier_ev, double pulse_nj) const {
  const double t = effective_temperature(pulse_nj);
  if (!(t > 0.0)) throw ConfigError("rates.t_eff_k_at_1nj", "effective temperature is not positive at this pulse energy");
  const double k = attempt_frequency_hz * std::exp(-barrier_ev / (kBoltzmannEvPerK * t));
  if (!std::isfinite(k) || k < 0.0) throw ConfigError("rates", "rate overflow");
  return k;
}

void RateModel::validate() const {
  auto nonneg = [](double v, const char* key) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("rates.") + key, "must be finite and >= 0");
  };
  if (!(attempt_frequency_hz > 0.0)) throw ConfigError("rates.attempt_frequency_hz", "must be positive");
  if (!(falloff_um > 0.0)) throw ConfigError("rates.falloff_um", "must be positive");
  nonneg(t_eff_k_at_1nj, "t_eff_k_at_1nj");
  nonneg(graphitization_nj, "graphitization_nj");
  nonneg(first_escape_ev, "first_escape_ev");
  nonneg(binding_energy_ev, "binding_energy_ev");
  nonneg(recapture_ev, "recapture_ev");
  nonneg(recapture_snv, "recapture_snv");
  nonneg(recapture_typeii, "recapture_typeii");
  nonneg(quench, "quench");
  if (!(reservoir_loss_probability >= 0.0 && reservoir_loss_probability <= 1.0)) {
    throw ConfigError("rates.reservoir_loss_probability", "must lie in [0, 1]");
  }
}

StateRates site_rates(const SiteState& site, const RateModel& rates, double pulse_nj, double falloff) {
  StateRates r;
  const double res = static_cast<double>(site.reservoir);
  switch (site.state) {
    case DefectState::Dark:
      if (!site.graphitized) r.to_typeii = rates.arrhenius(rates.first_escape_ev, pulse_nj) * falloff;
      break;
    case DefectState::TypeII:
      if (!site.graphitized) r.to_snv = rates.arrhenius(rates.binding_energy_ev, pulse_nj) * falloff;
      r.to_dark = rates.arrhenius(rates.recapture_ev, pulse_nj) * falloff * rates.recapture_typeii * res;
      break;
    case DefectState::SnV: {
      const double k = rates.arrhenius(rates.recapture_ev, pulse_nj) * falloff;
      r.to_typeii = k * rates.recapture_snv * res;
      r.to_quenched = k * rates.quench * res * (res - 1.0) / 2.0;
      break;
    }
    default:
      break;
  }
  return r;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double site_falloff(const SiteState& s, const AnnealSegment& seg, const RateModel& rates) {
  if (!seg.focus_um) return 1.0;
  return rates.falloff(std::hypot(s.x_um - seg.focus_um->first, s.y_um - seg.focus_um->second));
}

void enter(SiteState& s, DefectState to, const AnnealOptions& opt, std::mt19937_64& eng) {
  s.state = to;
  if (to == DefectState::TypeII || to == DefectState::SnV) {
    const ZplDraw& d = to == DefectState::TypeII ? opt.type_ii : opt.snv;
    std::normal_distribution<double> n(d.mean_nm, d.sd_nm);
    s.zpl_center_nm = d.sd_nm > 0.0 ? n(eng) : d.mean_nm;
  } else {
    s.zpl_center_nm.reset();
  }
}

// Executes transition `to` from the site's current state.
TransitionEvent transition(SiteState& s, DefectState to, double t, const RateModel& rates, const AnnealOptions& opt,
                           std::mt19937_64& eng) {
  const DefectState from = s.state;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const bool escape = (from == DefectState::Dark && to == DefectState::TypeII) ||
                      (from == DefectState::TypeII && to == DefectState::SnV);
  if (escape && s.reservoir > 0 && uni(eng) < rates.reservoir_loss_probability) --s.reservoir;
  enter(s, to, opt, eng);
  return {s.clock_s + t, s.site_id, from, to, s.zpl_center_nm, s.reservoir};
}

DefectState pick(const StateRates& r, double u) {
  double acc = r.to_typeii;
  if (u < acc) return DefectState::TypeII;
  acc += r.to_snv;
  if (u < acc) return DefectState::SnV;
  acc += r.to_dark;
  if (u < acc) return DefectState::Dark;
  return DefectState::Quenched;
}

template <class Evolve>
AnnealResult run_sites(const SiteArray& array, const AnnealSegment& segment, const RateModel& rates,
                       const AnnealOptions& options, Evolve evolve) {
  if (!(segment.pulse_nj > 0.0)) throw InvalidInput("pulse energy must be positive");
  if (!(segment.duration_s >= 0.0)) throw InvalidInput("segment duration must be non-negative");
  rates.validate();
  const double end = options.truncate_at_s ? std::clamp(*options.truncate_at_s, 0.0, segment.duration_s)
                                           : segment.duration_s;
  AnnealResult out;
  out.array = array;
  auto& sites = out.array.sites;
  const bool graphitize = segment.pulse_nj >= rates.graphitization_nj;
  std::vector<std::vector<TransitionEvent>> logs(sites.size());
  std::vector<std::exception_ptr> errors(sites.size());

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        auto& s = sites[i];
        const double f = site_falloff(s, segment, rates);
        if (graphitize && f >= 0.5) s.graphitized = true;
        auto eng = site_engine(array.seed, s.site_id, 1, s.rng_counter);
        ++s.rng_counter;
        evolve(s, f, end, eng, logs[i]);
        s.clock_s += end;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(sites.size())));
  if (n_threads <= 1) {
    work(0, sites.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (sites.size() + n_threads - 1) / n_threads;
    for (unsigned t = 0; t < n_threads; ++t) {
      const std::size_t lo = std::min(sites.size(), t * chunk);
      pool.emplace_back(work, lo, std::min(sites.size(), lo + chunk));
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& l : logs) out.events.insert(out.events.end(), l.begin(), l.end());
  std::stable_sort(out.events.begin(), out.events.end(), [](const TransitionEvent& a, const TransitionEvent& b) {
    return a.time_s != b.time_s ? a.time_s < b.time_s : a.site_id < b.site_id;
  });
  return out;
}

}  // namespace

std::mt19937_64 site_engine(std::uint64_t seed, std::size_t site_id, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(site_id));
  h = splitmix(h ^ (stream * 0xD1B54A32D192ED03ULL));
  h = splitmix(h ^ counter);
  return std::mt19937_64(h);
}

SiteArray implant(const ArraySpec& spec, double mean_dose, std::uint64_t seed, const ImplantModel& model) {
  if (!(mean_dose >= 0.0) || !std::isfinite(mean_dose)) throw InvalidInput("mean dose must be >= 0");
  if (spec.rows == 0 || spec.cols == 0) throw InvalidInput("array must have at least one site");
  if (!(spec.pitch_um > 0.0)) throw InvalidInput("pitch must be positive");
  const double p = model.split_vacancy_probability;
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("split-vacancy probability must lie in [0, 1]");
  SiteArray a;
  a.spec = spec;
  a.mean_dose = mean_dose;
  a.seed = seed;
  a.sites.reserve(spec.rows * spec.cols);
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      SiteState s;
      s.site_id = r * spec.cols + c;
      s.x_um = static_cast<double>(c) * spec.pitch_um;
      s.y_um = static_cast<double>(r) * spec.pitch_um;
      auto eng = site_engine(seed, s.site_id, 0, 0);
      if (mean_dose > 0.0) {
        std::poisson_distribution<int> pois(mean_dose);
        s.dose = pois(eng);
      }
      if (s.dose > 0 && p > 0.0) {
        std::binomial_distribution<int> bin(s.dose, p);
        s.split_vacancies = bin(eng);
      }
      s.state = s.split_vacancies > 0 ? DefectState::Dark : DefectState::Empty;
      s.gr1_population = s.dose;
      s.reservoir = model.initial_reservoir;
      a.sites.push_back(s);
    }
  }
  return a;
}

AnnealResult anneal(const SiteArray& array, const AnnealSegment& segment, const RateModel& rates,
                    const AnnealOptions& options) {
  return run_sites(array, segment, rates, options,
                   [&](SiteState& s, double f, double end, std::mt19937_64& eng, std::vector<TransitionEvent>& log) {
                     std::uniform_real_distribution<double> uni(0.0, 1.0);
                     double t = 0.0;
                     while (true) {
                       const StateRates r = site_rates(s, rates, segment.pulse_nj, f);
                       const double tot = r.total();
                       if (!(tot > 0.0)) break;
                       t += -std::log1p(-uni(eng)) / tot;
                       if (t > end) break;
                       log.push_back(transition(s, pick(r, uni(eng) * tot), t, rates, options, eng));
                     }
                   });
}

AnnealResult anneal_fixed_dt(const SiteArray& array, const AnnealSegment& segment, const RateModel& rates,
                             const AnnealOptions& options, double dt_s) {
  if (!(dt_s > 0.0)) throw InvalidInput("time step must be positive");
  // Rates only fall as the reservoir depletes, so the initial rates bound the step.
  for (const auto& s : array.sites) {
    SiteState probe = s;
    for (auto st : {DefectState::Dark, DefectState::TypeII, DefectState::SnV}) {
      if (s.state == DefectState::Empty || s.state == DefectState::Quenched) break;
      probe.state = st;
      const double tot = site_rates(probe, rates, segment.pulse_nj, site_falloff(s, segment, rates)).total();
      if (tot * dt_s > 0.1) throw InvalidInput("time step too coarse: dt must be <= 0.1 / fastest rate");
    }
  }
  return run_sites(array, segment, rates, options,
                   [&](SiteState& s, double f, double end, std::mt19937_64& eng, std::vector<TransitionEvent>& log) {
                     std::uniform_real_distribution<double> uni(0.0, 1.0);
                     const auto steps = static_cast<long>(std::floor(end / dt_s + 1e-9));
                     for (long k = 1; k <= steps; ++k) {
                       const StateRates r = site_rates(s, rates, segment.pulse_nj, f);
                       const double tot = r.total();
                       if (!(tot > 0.0)) break;
                       const double u = uni(eng);
                       if (u < tot * dt_s) {
                         log.push_back(transition(s, pick(r, u / dt_s), static_cast<double>(k) * dt_s, rates, options, eng));
                       }
                     }
                   });
}

SiteArray replay(const SiteArray& initial, const std::vector<TransitionEvent>& events) {
  SiteArray a = initial;
  std::unordered_map<std::size_t, std::size_t> index;
  for (std::size_t i = 0; i < a.sites.size(); ++i) index[a.sites[i].site_id] = i;
  for (const auto& e : events) {
    const auto it = index.find(e.site_id);
    if (it == index.end()) throw InvalidInput("event refers to unknown site " + std::to_string(e.site_id));
    auto& s = a.sites[it->second];
    if (s.state != e.from) throw InvalidInput("event log does not match site " + std::to_string(e.site_id));
    s.state = e.to;
    s.zpl_center_nm = e.zpl_center_nm;
    s.reservoir = e.reservoir;
  }
  return a;
}

DefectState Timeline::state_at(double t) const noexcept {
  DefectState s = initial;
  for (const auto& c : changes) {
    if (c.time_s > t) break;
    s = c.state;
  }
  return s;
}

Timeline timeline_for(const SiteState& before, const std::vector<TransitionEvent>& events, double duration_s) {
  Timeline tl;
  tl.initial = before.state;
  tl.initial_zpl_nm = before.zpl_center_nm;
  tl.duration_s = duration_s;
  for (const auto& e : events) {
    if (e.site_id != before.site_id) continue;
    const double t = e.time_s - before.clock_s;
    if (t < 0.0 || t > duration_s) continue;
    tl.changes.push_back({t, e.to, e.zpl_center_nm});
  }
  return tl;
}

}  // namespace snvkit::kinetics
