#include "snvkit/config.hpp"

#include "snvkit/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace snvkit::config {

namespace {

const char* const kDefaultCalibrationText =
#include "default_calibration.inc"
    ;

const char* const kCampaignSchemaText =
#include "campaign_schema.inc"
    ;

std::string join(const std::string& root, const std::string& key) { return root.empty() ? key : root + "." + key; }

std::string number_text(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

const Json& resolve(const Json& root, const Json& node) {
  if (node.is_object() && node.contains("$ref")) {
    const std::string ref = node["$ref"].get<std::string>();
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) throw ConfigError("", "unsupported schema reference " + ref);
    return resolve(root, root.at("definitions").at(ref.substr(prefix.size())));
  }
  return node;
}

bool is_integral(const Json& v) {
  if (v.is_number_integer()) return true;
  if (v.is_number_float()) {
    const double d = v.get<double>();
    return std::isfinite(d) && std::floor(d) == d;
  }
  return false;
}

void check(const Json& root, const Json& schema_node, const Json& doc, const std::string& path) {
  const Json& s = resolve(root, schema_node);
  const std::string where = path.empty() ? "(root)" : path;
  if (s.contains("type")) {
    const std::string t = s["type"].get<std::string>();
    bool ok = false;
    if (t == "object") ok = doc.is_object();
    else if (t == "array") ok = doc.is_array();
    else if (t == "string") ok = doc.is_string();
    else if (t == "boolean") ok = doc.is_boolean();
    else if (t == "number") ok = doc.is_number();
    else if (t == "integer") ok = is_integral(doc);
    if (!ok) throw ConfigError(where, "expected " + t);
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == doc;
    if (!found) throw ConfigError(where, "value not allowed: " + doc.dump());
  }
  if (doc.is_number()) {
    const double v = doc.get<double>();
    if (!std::isfinite(v)) throw ConfigError(where, "must be finite");
    if (s.contains("minimum") && v < s["minimum"].get<double>()) {
      throw ConfigError(where, "must be >= " + number_text(s["minimum"].get<double>()));
    }
    if (s.contains("exclusiveMinimum") && v <= s["exclusiveMinimum"].get<double>()) {
      throw ConfigError(where, "must be > " + number_text(s["exclusiveMinimum"].get<double>()));
    }
    if (s.contains("maximum") && v > s["maximum"].get<double>()) {
      throw ConfigError(where, "must be <= " + number_text(s["maximum"].get<double>()));
    }
  }
  if (doc.is_object()) {
    if (s.contains("required")) {
      for (const auto& k : s["required"]) {
        if (!doc.contains(k.get<std::string>())) throw ConfigError(join(path, k.get<std::string>()), "required key missing");
      }
    }
    const Json empty = Json::object();
    const Json& props = s.contains("properties") ? s["properties"] : empty;
    const bool closed = s.contains("additionalProperties") && s["additionalProperties"] == false;
    for (const auto& [k, v] : doc.items()) {
      if (props.contains(k)) {
        check(root, props[k], v, join(path, k));
      } else if (closed) {
        throw ConfigError(join(path, k), "unknown key");
      }
    }
  }
  if (doc.is_array()) {
    if (s.contains("minItems") && doc.size() < s["minItems"].get<std::size_t>()) {
      throw ConfigError(where, "needs at least " + std::to_string(s["minItems"].get<std::size_t>()) + " items");
    }
    if (s.contains("maxItems") && doc.size() > s["maxItems"].get<std::size_t>()) {
      throw ConfigError(where, "allows at most " + std::to_string(s["maxItems"].get<std::size_t>()) + " items");
    }
    if (s.contains("items")) {
      for (std::size_t i = 0; i < doc.size(); ++i) check(root, s["items"], doc[i], path + "[" + std::to_string(i) + "]");
    }
  }
}

const Json& need(const Json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "required key missing");
  return j.at(key);
}

double num(const Json& j, const std::string& path, const std::string& key) { return need(j, path, key).get<double>(); }

SpectralWindow window_from(const Json& j, WindowLabel label, const std::string& name) {
  const double lo = j.at(0).get<double>(), hi = j.at(1).get<double>();
  return SpectralWindow(label, lo, hi, name);
}

kinetics::SpeciesEmission species_from(const Json& j, const std::string& path, WindowLabel label,
                                       const std::string& name) {
  kinetics::SpeciesEmission s;
  s.zpl_nm = num(j, path, "zpl_nm");
  s.zpl_sd_nm = num(j, path, "zpl_sd_nm");
  s.huang_rhys = num(j, path, "huang_rhys");
  s.zpl_fwhm_mev = num(j, path, "zpl_fwhm_mev");
  s.brightness_cps = num(j, path, "brightness_cps");
  s.doublet_splitting_thz = j.value("doublet_splitting_thz", 0.0);
  s.window = window_from(need(j, path, "window"), label, name);
  if (!(s.window.hi > s.window.lo)) throw ConfigError(join(path, "window"), "upper bound must exceed lower bound");
  return s;
}

Json species_json(const kinetics::SpeciesEmission& s) {
  return {{"zpl_nm", s.zpl_nm},
          {"zpl_sd_nm", s.zpl_sd_nm},
          {"huang_rhys", s.huang_rhys},
          {"zpl_fwhm_mev", s.zpl_fwhm_mev},
          {"brightness_cps", s.brightness_cps},
          {"doublet_splitting_thz", s.doublet_splitting_thz},
          {"window", {s.window.lo, s.window.hi}}};
}

}  // namespace

const Json& campaign_schema() {
  static const Json schema = Json::parse(kCampaignSchemaText);
  return schema;
}

void validate_schema(const Json& schema, const Json& doc, const std::string& root) { check(schema, schema, doc, root); }

const Json& default_calibration_json() {
  static const Json j = Json::parse(kDefaultCalibrationText);
  return j;
}

Calibration default_calibration() { return calibration_from_json(default_calibration_json()); }

Calibration calibration_from_json(const Json& j) {
  const Json& schema = campaign_schema();
  check(schema, schema.at("definitions").at("calibration"), j, "calibration");
  const std::string root = "calibration";
  Calibration c;
  c.version = need(j, root, "version").get<int>();

  const std::string ip = join(root, "implant");
  const Json& im = need(j, root, "implant");
  c.implant.split_vacancy_probability = num(im, ip, "split_vacancy_probability");
  c.implant.initial_reservoir = need(im, ip, "initial_reservoir").get<int>();

  const std::string rp = join(root, "rates");
  const Json& r = need(j, root, "rates");
  auto& rm = c.rates;
  rm.attempt_frequency_hz = num(r, rp, "attempt_frequency_hz");
  rm.t_eff_k_at_1nj = num(r, rp, "t_eff_k_at_1nj");
  rm.t_eff_slope_k_per_nj = num(r, rp, "t_eff_slope_k_per_nj");
  rm.graphitization_nj = num(r, rp, "graphitization_nj");
  rm.first_escape_ev = num(r, rp, "first_escape_ev");
  rm.binding_energy_ev = num(r, rp, "binding_energy_ev");
  rm.recapture_ev = num(r, rp, "recapture_ev");
  rm.recapture_snv = num(r, rp, "recapture_snv");
  rm.recapture_typeii = num(r, rp, "recapture_typeii");
  rm.quench = num(r, rp, "quench");
  rm.reservoir_loss_probability = num(r, rp, "reservoir_loss_probability");
  rm.falloff_um = num(r, rp, "falloff_um");
  rm.validate();

  const std::string lp = join(root, "landscape");
  const Json& l = need(j, root, "landscape");
  c.landscape.separations = need(l, lp, "separations").get<std::vector<int>>();
  c.landscape.energies_ev = need(l, lp, "energies_ev").get<std::vector<double>>();
  c.landscape.binding_energy_ev = num(l, lp, "binding_energy_ev");
  c.landscape.validate();

  const std::string ep = join(root, "emission");
  const Json& e = need(j, root, "emission");
  auto& em = c.emission;
  em.type_ii = species_from(need(e, ep, "type_ii"), join(ep, "type_ii"), WindowLabel::TypeIISn, "TypeIISn");
  em.snv = species_from(need(e, ep, "snv"), join(ep, "snv"), WindowLabel::SnV, "SnV");
  em.gr1 = species_from(need(e, ep, "gr1"), join(ep, "gr1"), WindowLabel::GR1, "GR1");
  em.multiplet_saturation = num(e, ep, "multiplet_saturation");
  const Json& grid = need(e, ep, "grid_nm");
  em.grid_lo_nm = grid.at(0).get<double>();
  em.grid_hi_nm = grid.at(1).get<double>();
  if (!(em.grid_hi_nm > em.grid_lo_nm)) throw ConfigError(join(ep, "grid_nm"), "upper bound must exceed lower bound");
  em.grid_step_nm = num(e, ep, "grid_step_nm");
  const std::string rmp = join(ep, "raman");
  const Json& ra = need(e, ep, "raman");
  em.raman.line_nm = num(ra, rmp, "line_nm");
  em.raman.line_fwhm_nm = num(ra, rmp, "line_fwhm_nm");
  em.raman.line_cps_per_nm = num(ra, rmp, "line_cps_per_nm");
  em.raman.band_nm = num(ra, rmp, "band_nm");
  em.raman.band_fwhm_nm = num(ra, rmp, "band_fwhm_nm");
  em.raman.band_cps_per_nm = num(ra, rmp, "band_cps_per_nm");
  em.raman.continuum_cps_per_nm = num(ra, rmp, "continuum_cps_per_nm");
  const std::string sp = join(ep, "spad");
  const Json& sj = need(e, ep, "spad");
  em.spad.bin_s = num(sj, sp, "bin_s");
  em.spad.window = window_from(need(sj, sp, "window"), WindowLabel::Custom, "spad");
  if (!(em.spad.window.hi > em.spad.window.lo)) throw ConfigError(join(sp, "window"), "upper bound must exceed lower bound");
  em.spad.efficiency = num(sj, sp, "efficiency");
  em.spad.dark_cps = num(sj, sp, "dark_cps");
  return c;
}

Json to_json(const Calibration& c) {
  const auto& r = c.rates;
  const auto& e = c.emission;
  return {
      {"version", c.version},
      {"implant", {{"split_vacancy_probability", c.implant.split_vacancy_probability},
                   {"initial_reservoir", c.implant.initial_reservoir}}},
      {"rates", {{"attempt_frequency_hz", r.attempt_frequency_hz},
                 {"t_eff_k_at_1nj", r.t_eff_k_at_1nj},
                 {"t_eff_slope_k_per_nj", r.t_eff_slope_k_per_nj},
                 {"graphitization_nj", r.graphitization_nj},
                 {"first_escape_ev", r.first_escape_ev},
                 {"binding_energy_ev", r.binding_energy_ev},
                 {"recapture_ev", r.recapture_ev},
                 {"recapture_snv", r.recapture_snv},
                 {"recapture_typeii", r.recapture_typeii},
                 {"quench", r.quench},
                 {"reservoir_loss_probability", r.reservoir_loss_probability},
                 {"falloff_um", r.falloff_um}}},
      {"landscape", {{"separations", c.landscape.separations},
                     {"energies_ev", c.landscape.energies_ev},
                     {"binding_energy_ev", c.landscape.binding_energy_ev}}},
      {"emission", {{"type_ii", species_json(e.type_ii)},
                    {"snv", species_json(e.snv)},
                    {"gr1", species_json(e.gr1)},
                    {"multiplet_saturation", e.multiplet_saturation},
                    {"grid_nm", {e.grid_lo_nm, e.grid_hi_nm}},
                    {"grid_step_nm", e.grid_step_nm},
                    {"raman", {{"line_nm", e.raman.line_nm},
                               {"line_fwhm_nm", e.raman.line_fwhm_nm},
                               {"line_cps_per_nm", e.raman.line_cps_per_nm},
                               {"band_nm", e.raman.band_nm},
                               {"band_fwhm_nm", e.raman.band_fwhm_nm},
                               {"band_cps_per_nm", e.raman.band_cps_per_nm},
                               {"continuum_cps_per_nm", e.raman.continuum_cps_per_nm}}},
                    {"spad", {{"bin_s", e.spad.bin_s},
                              {"window", {e.spad.window.lo, e.spad.window.hi}},
                              {"efficiency", e.spad.efficiency},
                              {"dark_cps", e.spad.dark_cps}}}}},
  };
}

CampaignConfig campaign_from_json(const Json& j) {
  validate_schema(campaign_schema(), j);
  CampaignConfig c;
  const Json& a = j.at("array");
  c.array.rows = a.at("rows").get<std::size_t>();
  c.array.cols = a.at("cols").get<std::size_t>();
  c.array.pitch_um = a.value("pitch_um", 0.78);
  if (j.contains("doses")) c.doses = j["doses"].get<std::vector<double>>();
  if (j.contains("segments")) {
    for (const auto& s : j["segments"]) {
      kinetics::AnnealSegment seg;
      seg.pulse_nj = s.at("pulse_nJ").get<double>();
      seg.duration_s = s.at("duration_s").get<double>();
      if (s.contains("focus_um")) seg.focus_um = std::pair{s["focus_um"][0].get<double>(), s["focus_um"][1].get<double>()};
      c.segments.push_back(seg);
    }
  } else {
    c.segments.push_back({1.0, 300.0, std::nullopt});
  }
  // Overrides are merged into the shipped calibration before it is read.
  Json cal = default_calibration_json();
  for (const char* key : {"rates", "implant", "landscape", "emission"}) {
    if (j.contains(key)) cal[key].merge_patch(j[key]);
  }
  c.calibration = calibration_from_json(cal);
  c.seed = j.value("seed", std::uint64_t{1});
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  c.output_dir = j.value("output_dir", std::string("out"));
  c.acquisition_s = j.value("acquisition_s", 1.0);
  c.threads = j.value("threads", 1u);
  c.description = j.value("description", std::string());
  if (j.contains("protocol")) {
    const Json& p = j["protocol"];
    const std::string stop = p.value("stop", std::string("on-activation"));
    c.protocol.stop = stop == "on-deactivation" ? StopRule::OnDeactivation
                      : stop == "max-cycles"    ? StopRule::MaxCycles
                                                : StopRule::OnActivation;
    c.protocol.max_cycles = p.value("max_cycles", c.protocol.max_cycles);
    c.protocol.cycle_s = p.value("cycle_s", c.protocol.cycle_s);
    c.protocol.monitoring = p.value("monitoring", c.protocol.monitoring);
    if (p.contains("targets")) c.protocol.targets = p["targets"].get<std::vector<std::size_t>>();
    c.protocol.threshold_sigma = p.value("threshold_sigma", c.protocol.threshold_sigma);
    c.protocol.min_dwell_bins = p.value("min_dwell_bins", c.protocol.min_dwell_bins);
    c.protocol.activation_level = p.value("activation_level", c.protocol.activation_level);
  }
  return c;
}

CampaignConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open configuration");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", path.string() + ": invalid JSON: " + e.what());
  }
  return campaign_from_json(j);
}

Json to_json(const CampaignConfig& c) {
  Json segs = Json::array();
  for (const auto& s : c.segments) {
    Json o = {{"pulse_nJ", s.pulse_nj}, {"duration_s", s.duration_s}};
    if (s.focus_um) o["focus_um"] = {s.focus_um->first, s.focus_um->second};
    segs.push_back(o);
  }
  Json cal = to_json(c.calibration);
  Json out = {
      {"array", {{"rows", c.array.rows}, {"cols", c.array.cols}, {"pitch_um", c.array.pitch_um}}},
      {"doses", c.doses},
      {"segments", segs},
      {"rates", cal["rates"]},
      {"implant", cal["implant"]},
      {"landscape", cal["landscape"]},
      {"emission", cal["emission"]},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"acquisition_s", c.acquisition_s},
      {"threads", c.threads},
      {"protocol", {{"stop", std::string(feedback::to_string(c.protocol.stop))},
                    {"max_cycles", c.protocol.max_cycles},
                    {"cycle_s", c.protocol.cycle_s},
                    {"monitoring", c.protocol.monitoring},
                    {"targets", c.protocol.targets},
                    {"threshold_sigma", c.protocol.threshold_sigma},
                    {"min_dwell_bins", c.protocol.min_dwell_bins},
                    {"activation_level", c.protocol.activation_level}}},
  };
  if (!c.seeds.empty()) out["seeds"] = c.seeds;
  if (!c.description.empty()) out["description"] = c.description;
  return out;
}

}  // namespace snvkit::config
