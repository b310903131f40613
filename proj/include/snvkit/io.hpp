#pragma once

#include "snvkit/emission.hpp"
#include "snvkit/feedback.hpp"
#include "snvkit/hbt.hpp"
#include "snvkit/kinetics.hpp"
#include "snvkit/localization.hpp"
#include "snvkit/polarimetry.hpp"
#include "snvkit/spectra.hpp"
#include "snvkit/vibronic.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace snvkit::io {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kFormatVersion = 1;

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text, const std::string& where);

std::string read_text(const std::filesystem::path& path);
/// Creates parent directories. Throws IoError with the path on failure.
void write_text(const std::filesystem::path& path, const std::string& text);
/// `x.csv` -> `x.json`.
std::filesystem::path sidecar_path(const std::filesystem::path& data_path);

/// Rows of a numeric CSV; a first line that does not parse is treated as a header.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path, std::size_t columns);

// Spectra: `wavelength_nm,counts` (or `energy_eV,counts`) plus optional sidecar
// {integration_s, temperature_K, excitation_nm}.
void write_spectrum_csv(const Spectrum& s, const std::filesystem::path& path);
Spectrum read_spectrum_csv(const std::filesystem::path& path);

// PL maps: CSV matrix, one row per line, plus sidecar {scale_um_per_px, origin_um}.
void write_plmap(const localization::PLMap& map, const std::filesystem::path& path);
localization::PLMap read_plmap(const std::filesystem::path& path);

// SPAD traces: `bin_index,counts` plus sidecar {bin_s, window}.
void write_trace(const SpadTrace& trace, const std::filesystem::path& path);
SpadTrace read_trace(const std::filesystem::path& path);

// Polarization scans: `angle_deg,counts`.
void write_scan_csv(const polarimetry::PolarizationScan& scan, const std::filesystem::path& path);
polarimetry::PolarizationScan read_scan_csv(const std::filesystem::path& path,
                                            const SpectralWindow& window = SpectralWindow::snv());

Json to_json(const SpectralWindow& w);
SpectralWindow window_from_json(const Json& j);
Json to_json(const PeakFit& f);
Json to_json(const vibronic::VibronicModel& m);
Json to_json(const vibronic::HuangRhysFit& f);
Json to_json(const hbt::CorrelationHistogram& h);
Json to_json(const hbt::ThreeLevelFit& f);
Json to_json(const polarimetry::MalusFit& f);
Json to_json(const localization::Gaussian2DFit& f);
Json to_json(const localization::GridRegistration& reg, const localization::DiscrepancyStats& stats);
Json to_json(const kinetics::SiteState& s);
kinetics::SiteState site_from_json(const Json& j);
Json to_json(const kinetics::SiteArray& a);
kinetics::SiteArray array_from_json(const Json& j);
Json to_json(const kinetics::TransitionEvent& e);
kinetics::TransitionEvent event_from_json(const Json& j);
Json to_json(const feedback::FeedbackEvent& e);
feedback::FeedbackEvent feedback_event_from_json(const Json& j);
Json to_json(const feedback::CampaignReport& r);

/// One JSON object per line, in log order.
std::string event_log_text(const std::vector<kinetics::TransitionEvent>& events);
void write_event_log(const std::vector<kinetics::TransitionEvent>& events, const std::filesystem::path& path);
std::vector<kinetics::TransitionEvent> read_event_log(const std::filesystem::path& path);

/// Wraps `body` with kind, snvkit_version, format_version and (optionally) a
/// generated_at timestamp. Dumped reports list keys in sorted order with the
/// timestamp on a line of its own.
Json make_report(const std::string& kind, Json body, bool timestamp = true);
std::string dump_report(const Json& report);
void write_report(const Json& report, const std::filesystem::path& path);
Json read_report(const std::filesystem::path& path);
/// Drops the generated_at line so reports can be compared byte for byte.
std::string strip_timestamp(const std::string& text);

struct DoseRow {
  double dose = 0.0;
  std::string window;
  double intensity = 0.0;
};
void write_dose_scaling_csv(const std::vector<DoseRow>& rows, const std::filesystem::path& path);
std::vector<DoseRow> read_dose_scaling_csv(const std::filesystem::path& path);

}  // namespace snvkit::io
