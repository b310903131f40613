#include "snvkit/io.hpp"

#include "snvkit/error.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numbers>
#include <sstream>

namespace snvkit::io {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InvalidInput("cannot format number");
  return {buf, end};
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool try_parse(std::string_view text, double& v) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  return ec == std::errc() && ptr == text.data() + text.size();
}

Json read_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(path.string() + ": invalid JSON: " + e.what());
  }
}

std::optional<double> opt_double(const Json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

double parse_double(std::string_view text, const std::string& where) {
  double v = 0.0;
  if (!try_parse(text, v)) throw InvalidInput(where + ": not a number: '" + std::string(text) + "'");
  return v;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(path.string(), "read failed");
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(path.parent_path().string(), "cannot create directory: " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << text;
  out.flush();
  if (!out) throw IoError(path.string(), "write failed");
}

fs::path sidecar_path(const fs::path& data_path) {
  fs::path p = data_path;
  p.replace_extension(".json");
  return p;
}

std::vector<std::vector<double>> read_numeric_csv(const fs::path& path, std::size_t columns) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    std::vector<double> row;
    bool numeric = true;
    for (auto f : fields) {
      double v = 0.0;
      if (!try_parse(f, v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
    }
    if (columns != 0 && row.size() != columns) {
      throw InvalidInput(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                         " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_spectrum_csv(const Spectrum& s, const fs::path& path) {
  std::string out = s.unit() == GridUnit::Nanometre ? "wavelength_nm,counts\n" : "energy_eV,counts\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += format_double(s.grid()[i]) + "," + format_double(s.intensity()[i]) + "\n";
  }
  write_text(path, out);
  Json meta = {{"integration_s", s.meta().integration_s},
               {"temperature_K", s.meta().temperature_k},
               {"excitation_nm", opt_json(s.meta().excitation_nm)},
               {"baseline_subtracted", s.baseline_subtracted()}};
  write_text(sidecar_path(path), meta.dump(2) + "\n");
}

Spectrum read_spectrum_csv(const fs::path& path) {
  const std::string text = read_text(path);
  const bool energy = text.rfind("energy_eV", 0) == 0;
  const auto rows = read_numeric_csv(path, 2);
  if (rows.size() < 2) throw InvalidInput(path.string() + ": spectrum needs at least 2 samples");
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(r[0]);
    y.push_back(r[1]);
  }
  AcquisitionMeta meta;
  bool subtracted = false;
  const auto side = sidecar_path(path);
  if (fs::exists(side)) {
    const Json j = read_json_file(side);
    meta.integration_s = j.value("integration_s", meta.integration_s);
    meta.temperature_k = j.value("temperature_K", meta.temperature_k);
    meta.excitation_nm = opt_double(j, "excitation_nm");
    subtracted = j.value("baseline_subtracted", false);
  }
  return Spectrum(std::move(x), std::move(y), meta, energy ? GridUnit::ElectronVolt : GridUnit::Nanometre,
                  subtracted);
}

void write_plmap(const localization::PLMap& map, const fs::path& path) {
  std::string out;
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t c = 0; c < map.cols(); ++c) {
      if (c) out += ',';
      out += format_double(map.at(r, c));
    }
    out += '\n';
  }
  write_text(path, out);
  Json meta = {{"scale_um_per_px", map.scale()}, {"origin_um", {map.origin_x(), map.origin_y()}}};
  write_text(sidecar_path(path), meta.dump(2) + "\n");
}

localization::PLMap read_plmap(const fs::path& path) {
  const auto rows = read_numeric_csv(path, 0);
  if (rows.empty()) throw InvalidInput(path.string() + ": empty map");
  const std::size_t cols = rows.front().size();
  std::vector<double> px;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw InvalidInput(path.string() + ": ragged map at row " + std::to_string(r));
    px.insert(px.end(), rows[r].begin(), rows[r].end());
  }
  double scale = 1.0, ox = 0.0, oy = 0.0;
  const auto side = sidecar_path(path);
  if (fs::exists(side)) {
    const Json j = read_json_file(side);
    scale = j.value("scale_um_per_px", 1.0);
    if (j.contains("origin_um")) {
      ox = j["origin_um"].at(0).get<double>();
      oy = j["origin_um"].at(1).get<double>();
    }
  }
  return localization::PLMap(rows.size(), cols, std::move(px), scale, ox, oy);
}

Json to_json(const SpectralWindow& w) { return {{"name", w.name}, {"lo_nm", w.lo}, {"hi_nm", w.hi}}; }

SpectralWindow window_from_json(const Json& j) {
  const std::string name = j.value("name", std::string("custom"));
  const double lo = j.at("lo_nm").get<double>(), hi = j.at("hi_nm").get<double>();
  if (auto b = SpectralWindow::by_name(name); b && b->lo == lo && b->hi == hi) return *b;
  return SpectralWindow::custom(lo, hi, name);
}

void write_trace(const SpadTrace& trace, const fs::path& path) {
  trace.validate();
  std::string out = "bin_index,counts\n";
  for (std::size_t i = 0; i < trace.counts.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(trace.counts[i]) + "\n";
  }
  write_text(path, out);
  Json meta = {{"bin_s", trace.bin_s}, {"window", to_json(trace.window)}};
  write_text(sidecar_path(path), meta.dump(2) + "\n");
}

SpadTrace read_trace(const fs::path& path) {
  const auto rows = read_numeric_csv(path, 2);
  SpadTrace t;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i][0] != static_cast<double>(i)) {
      throw InvalidInput(path.string() + ": bin_index must run 0, 1, 2, ... (row " + std::to_string(i) + ")");
    }
    const double c = rows[i][1];
    if (c < 0.0 || std::floor(c) != c) throw InvalidInput(path.string() + ": counts must be non-negative integers");
    t.counts.push_back(static_cast<long>(c));
  }
  const auto side = sidecar_path(path);
  if (fs::exists(side)) {
    const Json j = read_json_file(side);
    t.bin_s = j.value("bin_s", t.bin_s);
    if (j.contains("window")) t.window = window_from_json(j["window"]);
  }
  t.validate();
  return t;
}

void write_scan_csv(const polarimetry::PolarizationScan& scan, const fs::path& path) {
  std::string out = "angle_deg,counts\n";
  for (std::size_t i = 0; i < scan.angles_deg.size(); ++i) {
    out += format_double(scan.angles_deg[i]) + "," + format_double(scan.intensities[i]) + "\n";
  }
  write_text(path, out);
}

polarimetry::PolarizationScan read_scan_csv(const fs::path& path, const SpectralWindow& window) {
  polarimetry::PolarizationScan scan;
  scan.window = window;
  for (const auto& r : read_numeric_csv(path, 2)) {
    scan.angles_deg.push_back(r[0]);
    scan.intensities.push_back(r[1]);
  }
  return scan;
}

Json to_json(const PeakFit& f) {
  return {{"model", f.model == PeakModel::Lorentzian ? "lorentzian" : "gaussian"},
          {"center_nm", f.center},
          {"center_sigma_nm", f.center_sigma()},
          {"fwhm_nm", f.fwhm},
          {"height_counts", f.height},
          {"offset_counts", f.offset},
          {"area_counts_nm", f.area},
          {"iterations", f.iterations}};
}

Json to_json(const vibronic::VibronicModel& m) {
  std::vector<double> energies;
  for (std::size_t k = 0; k < m.phonons.density().size(); ++k) energies.push_back(m.phonons.spacing() * static_cast<double>(k));
  return {{"zpl_nm", m.zpl_nm()},
          {"zpl_eV", m.zpl_energy_ev},
          {"S", m.huang_rhys},
          {"zpl_fwhm_meV", m.zpl_fwhm_mev},
          {"zpl_shape", m.zpl_shape == vibronic::ZplShape::Gaussian ? "gaussian" : "lorentzian"},
          {"n_max", m.n_max},
          {"phonon_energy_meV", energies},
          {"phonon_density_per_meV", m.phonons.density()}};
}

Json to_json(const vibronic::HuangRhysFit& f) {
  return {{"model", to_json(f.model)},
          {"amplitude", f.amplitude},
          {"relative_residual", f.relative_residual},
          {"rounds", f.rounds},
          {"converged", f.converged},
          {"debye_waller", std::exp(-f.model.huang_rhys)},
          {"node_values_per_meV", f.node_values}};
}

Json to_json(const hbt::CorrelationHistogram& h) {
  return {{"bin_width_ns", h.bin_width_ns},
          {"delay_ns", h.delays()},
          {"counts", h.counts},
          {"variance", h.variance},
          {"g2", h.g2_values()},
          {"normalization", h.normalization},
          {"rho", h.rho}};
}

Json to_json(const hbt::ThreeLevelFit& f) {
  return {{"alpha", f.alpha},
          {"alpha_sigma", f.alpha_sigma},
          {"tau1_ns", f.tau1_ns},
          {"tau1_sigma_ns", f.tau1_sigma},
          {"tau2_ns", f.tau2_ns},
          {"tau2_sigma_ns", f.tau2_sigma},
          {"g2_zero", f.g2_zero},
          {"g2_zero_sigma", f.g2_zero_sigma},
          {"reduced_chi2", f.reduced_chi2},
          {"iterations", f.iterations},
          {"single_emitter", f.single_emitter()}};
}

Json to_json(const polarimetry::MalusFit& f) {
  return {{"visibility", f.visibility},
          {"axis_deg", f.axis_deg},
          {"amplitude_counts", f.amplitude},
          {"offset_counts", f.offset},
          {"rms_residual_counts", f.rms_residual}};
}

Json to_json(const localization::Gaussian2DFit& f) {
  return {{"x_um", f.x0},         {"y_um", f.y0},           {"sigma_x_um", f.sigma_x},
          {"sigma_y_um", f.sigma_y}, {"fwhm_x_um", f.fwhm_x()}, {"fwhm_y_um", f.fwhm_y()},
          {"amplitude", f.amplitude}, {"offset", f.offset}};
}

Json to_json(const localization::GridRegistration& reg, const localization::DiscrepancyStats& stats) {
  Json centers = Json::array();
  for (const auto& p : reg.centers) centers.push_back({p.x, p.y});
  return {{"spacing_um", reg.spacing},
          {"dx_um", reg.dx},
          {"dy_um", reg.dy},
          {"theta_deg", reg.theta * 180.0 / std::numbers::pi},
          {"total_discrepancy_um", reg.total_discrepancy},
          {"weighting", reg.weighting},
          {"centers_um", centers},
          {"weights", reg.weights},
          {"radial_discrepancy_um", reg.radial},
          {"stats", {{"mean_um", stats.mean},
                     {"std_um", stats.std},
                     {"bin_edges_um", stats.bin_edges},
                     {"counts", stats.counts}}}};
}

Json to_json(const kinetics::SiteState& s) {
  return {{"site_id", s.site_id},
          {"x_um", s.x_um},
          {"y_um", s.y_um},
          {"dose", s.dose},
          {"split_vacancies", s.split_vacancies},
          {"state", std::string(kinetics::to_string(s.state))},
          {"zpl_center_nm", opt_json(s.zpl_center_nm)},
          {"gr1_population", s.gr1_population},
          {"reservoir", s.reservoir},
          {"graphitized", s.graphitized},
          {"clock_s", s.clock_s},
          {"rng_counter", s.rng_counter}};
}

namespace {

kinetics::DefectState state_of(const Json& j) {
  const std::string name = j.get<std::string>();
  auto s = kinetics::state_from_string(name);
  if (!s) throw InvalidInput("unknown defect state '" + name + "'");
  return *s;
}

}  // namespace

kinetics::SiteState site_from_json(const Json& j) {
  kinetics::SiteState s;
  s.site_id = j.at("site_id").get<std::size_t>();
  s.x_um = j.at("x_um").get<double>();
  s.y_um = j.at("y_um").get<double>();
  s.dose = j.at("dose").get<int>();
  s.split_vacancies = j.at("split_vacancies").get<int>();
  s.state = state_of(j.at("state"));
  s.zpl_center_nm = opt_double(j, "zpl_center_nm");
  s.gr1_population = j.at("gr1_population").get<int>();
  s.reservoir = j.at("reservoir").get<int>();
  s.graphitized = j.at("graphitized").get<bool>();
  s.clock_s = j.at("clock_s").get<double>();
  s.rng_counter = j.at("rng_counter").get<std::uint64_t>();
  return s;
}

Json to_json(const kinetics::SiteArray& a) {
  Json sites = Json::array();
  for (const auto& s : a.sites) sites.push_back(to_json(s));
  return {{"rows", a.spec.rows},   {"cols", a.spec.cols}, {"pitch_um", a.spec.pitch_um},
          {"mean_dose", a.mean_dose}, {"seed", a.seed},     {"sites", sites}};
}

kinetics::SiteArray array_from_json(const Json& j) {
  kinetics::SiteArray a;
  a.spec.rows = j.at("rows").get<std::size_t>();
  a.spec.cols = j.at("cols").get<std::size_t>();
  a.spec.pitch_um = j.at("pitch_um").get<double>();
  a.mean_dose = j.at("mean_dose").get<double>();
  a.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("sites")) a.sites.push_back(site_from_json(s));
  return a;
}

Json to_json(const kinetics::TransitionEvent& e) {
  return {{"time_s", e.time_s},
          {"site_id", e.site_id},
          {"from", std::string(kinetics::to_string(e.from))},
          {"to", std::string(kinetics::to_string(e.to))},
          {"zpl_center_nm", opt_json(e.zpl_center_nm)},
          {"reservoir", e.reservoir}};
}

kinetics::TransitionEvent event_from_json(const Json& j) {
  kinetics::TransitionEvent e;
  e.time_s = j.at("time_s").get<double>();
  e.site_id = j.at("site_id").get<std::size_t>();
  e.from = state_of(j.at("from"));
  e.to = state_of(j.at("to"));
  e.zpl_center_nm = opt_double(j, "zpl_center_nm");
  e.reservoir = j.at("reservoir").get<int>();
  return e;
}

Json to_json(const feedback::FeedbackEvent& e) {
  return {{"kind", std::string(feedback::to_string(e.kind))},
          {"time_s", e.time_s},
          {"detected_at_s", e.detected_at_s},
          {"onset_bin", e.onset_bin},
          {"pre_mean_counts", e.pre_mean},
          {"post_mean_counts", e.post_mean},
          {"significance_sigma", e.significance}};
}

feedback::FeedbackEvent feedback_event_from_json(const Json& j) {
  feedback::FeedbackEvent e;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind != "Activation" && kind != "Deactivation") throw InvalidInput("unknown event kind '" + kind + "'");
  e.kind = kind == "Activation" ? feedback::EventKind::Activation : feedback::EventKind::Deactivation;
  e.time_s = j.at("time_s").get<double>();
  e.detected_at_s = j.at("detected_at_s").get<double>();
  e.onset_bin = j.at("onset_bin").get<std::size_t>();
  e.pre_mean = j.at("pre_mean_counts").get<double>();
  e.post_mean = j.at("post_mean_counts").get<double>();
  e.significance = j.at("significance_sigma").get<double>();
  return e;
}

Json to_json(const feedback::CampaignReport& r) {
  Json sites = Json::array();
  for (const auto& s : r.sites) {
    Json det = Json::array();
    for (const auto& e : s.detections) det.push_back(to_json(e));
    sites.push_back({{"site_id", s.site_id},
                     {"initial_state", std::string(kinetics::to_string(s.initial))},
                     {"final_state", std::string(kinetics::to_string(s.final_state))},
                     {"cycles_used", s.cycles_used},
                     {"stopped", s.stopped},
                     {"stopped_at_s", opt_json(s.stopped_at_s)},
                     {"reached_snv", s.reached_snv},
                     {"activation_level_counts", s.activation_level},
                     {"detections", det}});
  }
  Json events = Json::array();
  for (const auto& e : r.events) events.push_back(to_json(e));
  return {{"sites", sites},
          {"events", events},
          {"reached_snv", r.reached_snv()},
          {"frozen_fraction", r.frozen_fraction()},
          {"final_counts", {{"TypeII", r.array.count(kinetics::DefectState::TypeII)},
                            {"SnV", r.array.count(kinetics::DefectState::SnV)},
                            {"Dark", r.array.count(kinetics::DefectState::Dark)},
                            {"Quenched", r.array.count(kinetics::DefectState::Quenched)},
                            {"Empty", r.array.count(kinetics::DefectState::Empty)}}}};
}

std::string event_log_text(const std::vector<kinetics::TransitionEvent>& events) {
  std::string out;
  for (const auto& e : events) out += to_json(e).dump() + "\n";
  return out;
}

void write_event_log(const std::vector<kinetics::TransitionEvent>& events, const fs::path& path) {
  write_text(path, event_log_text(events));
}

std::vector<kinetics::TransitionEvent> read_event_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<kinetics::TransitionEvent> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(event_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

Json make_report(const std::string& kind, Json body, bool timestamp) {
  Json r = {{"kind", kind}, {"snvkit_version", kVersion}, {"format_version", kFormatVersion}, {"result", std::move(body)}};
  if (timestamp) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    r["generated_at"] = buf;
  }
  return r;
}

std::string dump_report(const Json& report) { return report.dump(2) + "\n"; }

void write_report(const Json& report, const fs::path& path) { write_text(path, dump_report(report)); }

Json read_report(const fs::path& path) { return read_json_file(path); }

std::string strip_timestamp(const std::string& text) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) {
    if (line.find("\"generated_at\"") != std::string::npos) continue;
    out += line + "\n";
  }
  return out;
}

void write_dose_scaling_csv(const std::vector<DoseRow>& rows, const fs::path& path) {
  std::string out = "dose,window,intensity\n";
  for (const auto& r : rows) out += format_double(r.dose) + "," + r.window + "," + format_double(r.intensity) + "\n";
  write_text(path, out);
}

std::vector<DoseRow> read_dose_scaling_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<DoseRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty() || (n == 1 && line.rfind("dose", 0) == 0)) continue;
    const auto f = split(line);
    if (f.size() != 3) throw InvalidInput(path.string() + ":" + std::to_string(n) + ": expected 3 columns");
    const std::string where = path.string() + ":" + std::to_string(n);
    rows.push_back({parse_double(f[0], where), std::string(f[1]), parse_double(f[2], where)});
  }
  return rows;
}

}  // namespace snvkit::io
