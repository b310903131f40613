#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace snvkit::kinetics {

inline constexpr double kBoltzmannEvPerK = 8.617333262e-5;

enum class DefectState { Empty, Dark, TypeII, SnV, Quenched };

std::string_view to_string(DefectState s) noexcept;
std::optional<DefectState> state_from_string(std::string_view s) noexcept;

struct SiteState {
  std::size_t site_id = 0;
  double x_um = 0.0;
  double y_um = 0.0;
  int dose = 0;             ///< implanted Sn ions, fixed after implant
  int split_vacancies = 0;  ///< ions that settled into a split vacancy
  DefectState state = DefectState::Empty;
  std::optional<double> zpl_center_nm;  ///< only for TypeII / SnV
  int gr1_population = 0;
  int reservoir = 0;  ///< local interstitial reservoir driving recapture
  bool graphitized = false;
  double clock_s = 0.0;           ///< anneal time this site has seen
  std::uint64_t rng_counter = 0;  ///< advances once per anneal call
};

struct ArraySpec {
  std::size_t rows = 10;
  std::size_t cols = 10;
  double pitch_um = 0.78;
};

struct SiteArray {
  ArraySpec spec;
  double mean_dose = 0.0;
  std::uint64_t seed = 0;
  std::vector<SiteState> sites;

  [[nodiscard]] std::size_t count(DefectState s) const noexcept;
  [[nodiscard]] long total_dose() const noexcept;
};

struct ImplantModel {
  double split_vacancy_probability = 0.0;
  int initial_reservoir = 0;
};

/// SnV-interstitial separation energies; bound configurations sit well below
/// the distant ones and binding_energy sets the second escape barrier.
struct EnergyLandscape {
  std::vector<int> separations;
  std::vector<double> energies_ev;
  double binding_energy_ev = 0.0;

  void validate() const;
};

struct RateModel {
  double attempt_frequency_hz = 0.0;
  double t_eff_k_at_1nj = 0.0;
  double t_eff_slope_k_per_nj = 0.0;
  double graphitization_nj = 0.0;
  double first_escape_ev = 0.0;
  double binding_energy_ev = 0.0;
  double recapture_ev = 0.0;
  double recapture_snv = 0.0;     ///< SnV -> TypeII prefactor per reservoir unit
  double recapture_typeii = 0.0;  ///< TypeII -> Dark prefactor per reservoir unit
  double quench = 0.0;            ///< SnV -> Quenched prefactor per reservoir pair
  double reservoir_loss_probability = 0.0;
  double falloff_um = 0.0;

  [[nodiscard]] double effective_temperature(double pulse_nj) const noexcept;
  /// exp(-d^2 / (2 L^2)); 1 at the focus.
  [[nodiscard]] double falloff(double distance_um) const noexcept;
  /// A exp(-E / kT) at the segment's pulse energy. Throws ConfigError when not finite.
  [[nodiscard]] double arrhenius(double barrier_ev, double pulse_nj) const;
  void apply(const EnergyLandscape& landscape) { binding_energy_ev = landscape.binding_energy_ev; }
  void validate() const;
};

struct AnnealSegment {
  double pulse_nj = 1.0;
  double duration_s = 60.0;
  /// Absent: every site is annealed at its own focus (raster).
  std::optional<std::pair<double, double>> focus_um;
};

struct TransitionEvent {
  double time_s = 0.0;  ///< site clock at the transition
  std::size_t site_id = 0;
  DefectState from = DefectState::Empty;
  DefectState to = DefectState::Empty;
  std::optional<double> zpl_center_nm;
  int reservoir = 0;  ///< after the transition
};

struct AnnealResult {
  SiteArray array;
  std::vector<TransitionEvent> events;  ///< ordered by (time, site_id)
};

struct ZplDraw {
  double mean_nm = 0.0;
  double sd_nm = 0.0;
};

struct StateRates {
  double to_typeii = 0.0;
  double to_snv = 0.0;
  double to_dark = 0.0;
  double to_quenched = 0.0;
  [[nodiscard]] double total() const noexcept { return to_typeii + to_snv + to_dark + to_quenched; }
};

/// Outgoing rates for one site in its current state.
StateRates site_rates(const SiteState& site, const RateModel& rates, double pulse_nj, double falloff);

/// Per-site generator seeded from (seed, site, stream, counter).
std::mt19937_64 site_engine(std::uint64_t seed, std::size_t site_id, std::uint64_t stream, std::uint64_t counter);

/// Poisson(lambda) ions per site, each a split vacancy with probability p.
SiteArray implant(const ArraySpec& spec, double mean_dose, std::uint64_t seed, const ImplantModel& model);

struct AnnealOptions {
  ZplDraw type_ii;
  ZplDraw snv;
  /// Stop every site's evolution at this time into the segment (<= duration).
  std::optional<double> truncate_at_s;
  unsigned threads = 1;
};

/// Exact continuous-time evolution (direct method) of every non-empty site.
AnnealResult anneal(const SiteArray& array, const AnnealSegment& segment, const RateModel& rates,
                    const AnnealOptions& options);

/// Fixed-step variant; dt must satisfy dt <= 0.1 / fastest rate.
AnnealResult anneal_fixed_dt(const SiteArray& array, const AnnealSegment& segment, const RateModel& rates,
                             const AnnealOptions& options, double dt_s);

/// Applies the logged transitions to `initial`; throws InvalidInput on a log
/// that does not match the states it starts from.
SiteArray replay(const SiteArray& initial, const std::vector<TransitionEvent>& events);

/// State sequence of one site inside a segment, times relative to its start.
struct Timeline {
  struct Change {
    double time_s = 0.0;
    DefectState state = DefectState::Empty;
    std::optional<double> zpl_center_nm;
  };
  DefectState initial = DefectState::Empty;
  std::optional<double> initial_zpl_nm;
  std::vector<Change> changes;
  double duration_s = 0.0;

  [[nodiscard]] DefectState state_at(double t) const noexcept;
};

Timeline timeline_for(const SiteState& before, const std::vector<TransitionEvent>& events, double duration_s);

}  // namespace snvkit::kinetics
