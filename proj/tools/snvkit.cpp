// snvkit command-line front end.

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

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace snvkit;
using io::Json;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config;
  std::string out;
  std::string format = "json";
};

/// Flattens scalar leaves into `key,value` rows; arrays are skipped.
void flatten(const Json& j, const std::string& prefix, std::string& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      flatten(v, key, out);
    } else if (!v.is_array()) {
      out += key + "," + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
    }
  }
}

void emit(const Globals& g, const std::string& kind, const Json& body, const std::string& csv_table = {}) {
  std::string text;
  if (g.format == "csv") {
    if (!csv_table.empty()) {
      text = csv_table;
    } else {
      text = "key,value\n";
      flatten(body, "", text);
    }
  } else {
    text = io::dump_report(io::make_report(kind, body));
  }
  if (g.out.empty() || g.out == "-") {
    std::cout << text;
  } else {
    io::write_text(g.out, text);
  }
}

config::CampaignConfig load_campaign(const Globals& g, const std::string& positional) {
  const std::string path = positional.empty() ? g.config : positional;
  if (path.empty()) throw InvalidInput("no campaign configuration given (positional path or --config)");
  auto c = config::parse_config(path);
  if (g.seed_given) {
    c.seed = g.seed;
    c.seeds.clear();
  }
  return c;
}

config::Calibration calibration_for(const Globals& g) {
  return g.config.empty() ? config::default_calibration() : config::parse_config(g.config).calibration;
}

std::optional<SpectralWindow> parse_window(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (auto w = SpectralWindow::by_name(text)) return w;
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw InvalidInput("window must be a name or lo,hi in nm: '" + text + "'");
  const double lo = io::parse_double(text.substr(0, comma), "--window");
  const double hi = io::parse_double(text.substr(comma + 1), "--window");
  if (!(hi > lo)) throw InvalidInput("window upper bound must exceed lower bound");
  return SpectralWindow::custom(lo, hi);
}

std::string dose_label(double dose) { return "dose_" + io::format_double(dose); }

/// Expected (noise-free) window intensities summed over the array, counts/s.
std::vector<io::DoseRow> window_intensities(const kinetics::Emitter& em, const kinetics::SiteArray& a, double dose) {
  std::vector<double> sum(em.grid().size(), 0.0);
  for (const auto& s : a.sites) {
    const auto d = em.expected_density(s);
    for (std::size_t i = 0; i < d.size(); ++i) sum[i] += d[i];
  }
  const Spectrum total(em.grid(), std::move(sum));
  const auto& m = em.model();
  return {{dose, m.type_ii.window.name, integrate_window(total, m.type_ii.window)},
          {dose, m.snv.window.name, integrate_window(total, m.snv.window)},
          {dose, m.gr1.window.name, integrate_window(total, m.gr1.window)}};
}

Json state_counts(const kinetics::SiteArray& a) {
  using kinetics::DefectState;
  Json j;
  for (auto s : {DefectState::Empty, DefectState::Dark, DefectState::TypeII, DefectState::SnV, DefectState::Quenched}) {
    j[std::string(kinetics::to_string(s))] = a.count(s);
  }
  return j;
}

std::vector<std::uint64_t> seeds_of(const config::CampaignConfig& c) {
  return c.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.seeds;
}

fs::path out_dir(const Globals& g, const config::CampaignConfig& c) { return g.out.empty() ? fs::path(c.output_dir) : fs::path(g.out); }

void simulate_run(const Globals& g, const std::string& campaign_path) {
  const auto c = load_campaign(g, campaign_path);
  const fs::path root = out_dir(g, c);
  const auto& cal = c.calibration;
  kinetics::RateModel rates = cal.rates;
  rates.apply(cal.landscape);
  const kinetics::Emitter em(cal.emission);
  auto opts = cal.emission.anneal_options();
  opts.threads = c.threads;

  Json runs = Json::array();
  std::vector<io::DoseRow> scaling;
  const auto seeds = seeds_of(c);
  for (std::uint64_t seed : seeds) {
    for (double dose : c.doses) {
      fs::path dir = root / dose_label(dose);
      if (seeds.size() > 1) dir = root / ("seed_" + std::to_string(seed)) / dose_label(dose);
      auto array = kinetics::implant(c.array, dose, seed, cal.implant);
      const auto initial = array;
      std::vector<kinetics::TransitionEvent> log;
      for (const auto& seg : c.segments) {
        auto r = kinetics::anneal(array, seg, rates, opts);
        log.insert(log.end(), r.events.begin(), r.events.end());
        array = std::move(r.array);
      }
      io::write_event_log(log, dir / "events.jsonl");
      io::write_report(io::make_report("site_states", io::to_json(initial), false), dir / "initial_states.json");
      io::write_report(io::make_report("site_states", io::to_json(array), false), dir / "final_states.json");
      const auto rows = window_intensities(em, array, dose);
      if (seed == seeds.front()) scaling.insert(scaling.end(), rows.begin(), rows.end());
      Json windows;
      for (const auto& r : rows) windows[r.window] = r.intensity;
      runs.push_back({{"seed", seed},
                      {"dose", dose},
                      {"total_ions", array.total_dose()},
                      {"events", log.size()},
                      {"final_counts", state_counts(array)},
                      {"window_intensity_cps", windows},
                      {"directory", dir.lexically_relative(root).generic_string()}});
    }
  }
  io::write_dose_scaling_csv(scaling, root / "dose_scaling.csv");
  io::write_report(io::make_report("simulate", {{"config", config::to_json(c)}, {"runs", runs}}), root / "report.json");
  std::cout << "wrote " << (root / "report.json").string() << "\n";
}

void feedback_run(const Globals& g, const std::string& campaign_path, const std::string& stop,
                  std::optional<int> max_cycles, bool no_monitoring) {
  auto c = load_campaign(g, campaign_path);
  if (!stop.empty()) {
    if (stop == "on-activation") c.protocol.stop = feedback::StopRule::OnActivation;
    else if (stop == "on-deactivation") c.protocol.stop = feedback::StopRule::OnDeactivation;
    else if (stop == "max-cycles") c.protocol.stop = feedback::StopRule::MaxCycles;
    else throw InvalidInput("--stop must be on-activation, on-deactivation or max-cycles");
  }
  if (max_cycles) c.protocol.max_cycles = *max_cycles;
  if (no_monitoring) c.protocol.monitoring = false;
  const fs::path root = out_dir(g, c);
  const auto& cal = c.calibration;
  kinetics::RateModel rates = cal.rates;
  rates.apply(cal.landscape);
  const kinetics::Emitter em(cal.emission);

  feedback::Protocol p;
  p.segment = c.segments.empty() ? kinetics::AnnealSegment{} : c.segments.front();
  p.segment.duration_s = c.protocol.cycle_s;
  p.stop = c.protocol.stop;
  p.max_cycles = c.protocol.max_cycles;
  p.monitoring = c.protocol.monitoring;
  p.targets = c.protocol.targets;
  p.detector.threshold_sigma = c.protocol.threshold_sigma;
  p.detector.min_dwell_bins = static_cast<std::size_t>(c.protocol.min_dwell_bins);
  p.activation_level = c.protocol.activation_level;

  Json runs = Json::array();
  const auto seeds = seeds_of(c);
  for (std::uint64_t seed : seeds) {
    for (double dose : c.doses) {
      fs::path dir = root / dose_label(dose);
      if (seeds.size() > 1) dir = root / ("seed_" + std::to_string(seed)) / dose_label(dose);
      const auto array = kinetics::implant(c.array, dose, seed, cal.implant);
      const auto report = feedback::run_protocol(array, p, rates, em, seed);
      io::write_event_log(report.events, dir / "events.jsonl");
      io::write_report(io::make_report("site_states", io::to_json(report.array), false), dir / "final_states.json");
      Json body = io::to_json(report);
      body["seed"] = seed;
      body["dose"] = dose;
      body["directory"] = dir.lexically_relative(root).generic_string();
      runs.push_back(std::move(body));
    }
  }
  io::write_report(io::make_report("feedback", {{"config", config::to_json(c)}, {"runs", runs}}), root / "report.json");
  std::cout << "wrote " << (root / "report.json").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"snvkit: colour-centre spectroscopy analysis and laser-anneal simulation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--config", g.config, "campaign configuration JSON");
  app.add_option("--out", g.out, "output file or directory ('-' for stdout)");
  app.add_option("--format", g.format, "report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  // vibronic
  auto* vib = app.add_subcommand("vibronic", "Franck-Condon lineshapes");
  vib->require_subcommand(1);
  double synth_s = 1.7, synth_zpl = 595.0, synth_fwhm = 5.0, synth_step = 0.5;
  auto* vsynth = vib->add_subcommand("synth", "synthesize an emission spectrum (CSV in nm)");
  vsynth->add_option("--s", synth_s, "Huang-Rhys factor")->capture_default_str();
  vsynth->add_option("--zpl", synth_zpl, "ZPL wavelength (nm)")->capture_default_str();
  vsynth->add_option("--fwhm-mev", synth_fwhm, "ZPL FWHM (meV)")->capture_default_str();
  vsynth->add_option("--step-mev", synth_step, "energy grid spacing (meV)")->capture_default_str();
  std::string vfit_path;
  double zpl_hint = 595.0;
  auto* vfit = vib->add_subcommand("fit", "fit S and the phonon coupling to a spectrum");
  vfit->add_option("spectrum", vfit_path, "spectrum CSV")->required();
  vfit->add_option("--zpl-hint", zpl_hint, "approximate ZPL (nm)")->capture_default_str();

  // hbt
  auto* hbt_cmd = app.add_subcommand("hbt", "photon correlation");
  hbt_cmd->require_subcommand(1);
  std::string tags_path;
  double rho = 1.0, bin_ns = hbt::kDefaultBinWidthNs, max_delay = hbt::kDefaultMaxDelayNs;
  unsigned hbt_threads = 1;
  auto* hfit = hbt_cmd->add_subcommand("fit", "correlate timetags and fit the three-level model");
  hfit->add_option("tags", tags_path, "timetag file (CSV or binary)")->required();
  hfit->add_option("--rho", rho, "signal fraction S/(S+B)")->capture_default_str();
  hfit->add_option("--bin-ns", bin_ns, "histogram bin width (ns)")->capture_default_str();
  hfit->add_option("--max-delay-ns", max_delay, "largest delay (ns)")->capture_default_str();
  hfit->add_option("--threads", hbt_threads, "correlation threads")->capture_default_str();
  std::size_t detections = 1'000'000;
  double lifetime = 2.2;
  int emitters = 1;
  bool binary = false;
  auto* hsim = hbt_cmd->add_subcommand("simulate", "timetags from simulated three-level emitters");
  hsim->add_option("--detections", detections, "detections per emitter")->capture_default_str();
  hsim->add_option("--tau1", lifetime, "antibunching time (ns)")->capture_default_str();
  hsim->add_option("--emitters", emitters, "independent emitters merged into one stream")->capture_default_str();
  hsim->add_flag("--binary", binary, "packed binary instead of CSV");

  // polar
  auto* polar = app.add_subcommand("polar", "polarization (Malus) fits");
  polar->require_subcommand(1);
  std::string scan_path;
  auto* pfit = polar->add_subcommand("fit", "fit I = A cos^2(2 theta - phi) + C to a scan");
  pfit->add_option("scan", scan_path, "scan CSV angle_deg,counts")->required();

  // localize
  auto* loc = app.add_subcommand("localize", "emitter localization and grid registration");
  std::string map_path;
  double pitch = 0.78, threshold = 0.0;
  loc->add_option("map", map_path, "PL map CSV (sidecar JSON holds scale and origin)")->required();
  loc->add_option("--pitch", pitch, "grid pitch (um)")->capture_default_str();
  loc->add_option("--threshold", threshold, "detection threshold (counts); 0 = median + 5 MAD");

  // simulate
  auto* sim = app.add_subcommand("simulate", "implant and anneal simulation");
  sim->require_subcommand(1);
  std::string sim_campaign;
  auto* srun = sim->add_subcommand("run", "run a campaign");
  srun->add_option("campaign", sim_campaign, "campaign JSON (defaults to --config)");
  std::string spec_state = "SnV";
  double spec_acq = 1.0;
  int spec_dose = 10;
  auto* sspec = sim->add_subcommand("spectrum", "one simulated site spectrum (CSV)");
  sspec->add_option("--state", spec_state, "Empty, Dark, TypeII, SnV or Quenched")->capture_default_str();
  sspec->add_option("--acquisition", spec_acq, "integration time (s)")->capture_default_str();
  sspec->add_option("--dose", spec_dose, "Sn ions at the site")->capture_default_str();

  // feedback
  auto* fb = app.add_subcommand("feedback", "SPAD change detection and closed-loop annealing");
  fb->require_subcommand(1);
  std::string fb_campaign, stop;
  std::optional<int> max_cycles;
  bool no_monitoring = false;
  auto* frun = fb->add_subcommand("run", "run the anneal/monitor protocol");
  frun->add_option("campaign", fb_campaign, "campaign JSON (defaults to --config)");
  frun->add_option("--stop", stop, "on-activation, on-deactivation or max-cycles");
  frun->add_option("--max-cycles", max_cycles, "cycles per site");
  frun->add_flag("--no-monitoring", no_monitoring, "control run without SPAD feedback");
  std::string trace_path;
  double sigma = 5.0;
  std::size_t dwell = 25;
  auto* fdet = fb->add_subcommand("detect", "change points in a SPAD trace");
  fdet->add_option("trace", trace_path, "trace CSV bin_index,counts")->required();
  fdet->add_option("--sigma", sigma, "threshold (sigma)")->capture_default_str();
  fdet->add_option("--dwell", dwell, "minimum dwell (bins)")->capture_default_str();

  // spectra
  auto* spec = app.add_subcommand("spectra", "spectrum utilities");
  spec->require_subcommand(1);
  std::string spectrum_path, window_text;
  double center = 620.0, seed_fwhm = 1.0;
  bool gaussian = false;
  auto* sfit = spec->add_subcommand("fit", "fit one peak");
  sfit->add_option("spectrum", spectrum_path, "spectrum CSV")->required();
  sfit->add_option("--center", center, "seed centre (nm)")->capture_default_str();
  sfit->add_option("--fwhm", seed_fwhm, "seed FWHM (nm)")->capture_default_str();
  sfit->add_flag("--gaussian", gaussian, "Gaussian instead of Lorentzian profile");
  auto* sint = spec->add_subcommand("integrate", "integrate over a window");
  sint->add_option("spectrum", spectrum_path, "spectrum CSV")->required();
  sint->add_option("--window", window_text, "TypeIISn, SnV, GR1, gamma, delta or lo,hi")->required();
  auto* sclass = spec->add_subcommand("classify", "TypeII / SnV / GR1-only / background");
  sclass->add_option("spectrum", spectrum_path, "baseline-subtracted spectrum CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (vsynth->parsed()) {
      const auto model = vibronic::VibronicModel::make(kHcEvNm / synth_zpl, synth_s,
                                                       vibronic::PhononSpectrum::default_diamond(), synth_fwhm);
      const auto grid = vibronic::covering_grid(model, synth_step);
      const auto s = to_wavelength(vibronic::synthesize(model, grid));
      if (g.out.empty() || g.out == "-") {
        std::cout << "wavelength_nm,counts\n";
        for (std::size_t i = 0; i < s.size(); ++i) {
          std::cout << io::format_double(s.grid()[i]) << "," << io::format_double(s.intensity()[i]) << "\n";
        }
      } else {
        io::write_spectrum_csv(s, g.out);
      }
    } else if (vfit->parsed()) {
      const auto fit = vibronic::fit_huang_rhys(io::read_spectrum_csv(vfit_path), zpl_hint);
      emit(g, "vibronic_fit", io::to_json(fit));
    } else if (hfit->parsed()) {
      const auto stream = hbt::read_timetags(tags_path);
      auto h = hbt::correlate(stream, bin_ns, max_delay, hbt_threads);
      h.rho = rho;
      if (rho < 1.0) h = hbt::background_correct(h);
      const auto fit = hbt::fit_three_level(h);
      std::string table = "delay_ns,counts,g2,model\n";
      for (std::size_t i = 0; i < h.size(); ++i) {
        table += io::format_double(h.delay_ns(i)) + "," + io::format_double(h.counts[i]) + "," +
                 io::format_double(h.g2(i)) + "," + io::format_double(fit.evaluate(h.delay_ns(i))) + "\n";
      }
      emit(g, "hbt_fit", {{"histogram", io::to_json(h)}, {"fit", io::to_json(fit)}}, table);
    } else if (hsim->parsed()) {
      if (emitters < 1) throw InvalidInput("--emitters must be at least 1");
      const auto rates = hbt::ThreeLevelRates::for_antibunching_time(lifetime);
      hbt::StreamOptions so;
      so.detections = detections;
      auto stream = hbt::simulate_emitter(rates, so, g.seed);
      for (int e = 1; e < emitters; ++e) {
        stream = hbt::TimetagStream::merge(stream, hbt::simulate_emitter(rates, so, g.seed + static_cast<std::uint64_t>(e)));
      }
      if (g.out.empty() || g.out == "-") throw InvalidInput("hbt simulate needs --out <file>");
      if (binary) hbt::write_timetags_binary(stream, g.out);
      else hbt::write_timetags_csv(stream, g.out);
    } else if (pfit->parsed()) {
      const auto fit = polarimetry::fit_malus(io::read_scan_csv(scan_path));
      emit(g, "malus_fit", io::to_json(fit));
    } else if (loc->parsed()) {
      const auto map = io::read_plmap(map_path);
      double thr = threshold;
      if (!(thr > 0.0)) {
        std::vector<double> px = map.pixels();
        std::nth_element(px.begin(), px.begin() + static_cast<long>(px.size() / 2), px.end());
        const double med = px[px.size() / 2];
        std::vector<double> dev;
        for (double v : map.pixels()) dev.push_back(std::abs(v - med));
        std::nth_element(dev.begin(), dev.begin() + static_cast<long>(dev.size() / 2), dev.end());
        thr = med + 5.0 * 1.4826 * dev[dev.size() / 2];
      }
      const auto found = localization::detect_emitters(map, thr);
      std::vector<localization::Point> centers;
      std::vector<double> weights;
      Json fits = Json::array();
      for (const auto& f : found) {
        centers.push_back({f.x0, f.y0});
        fits.push_back(io::to_json(f));
      }
      const auto reg = localization::register_grid(centers, pitch);
      const auto stats = localization::discrepancy_stats(reg);
      std::string table = "x_um,y_um,radial_discrepancy_um\n";
      for (std::size_t i = 0; i < reg.centers.size(); ++i) {
        table += io::format_double(reg.centers[i].x) + "," + io::format_double(reg.centers[i].y) + "," +
                 io::format_double(reg.radial[i]) + "\n";
      }
      emit(g, "registration", {{"threshold_counts", thr}, {"emitters", fits}, {"registration", io::to_json(reg, stats)}},
           table);
    } else if (srun->parsed()) {
      simulate_run(g, sim_campaign);
    } else if (sspec->parsed()) {
      const auto state = kinetics::state_from_string(spec_state);
      if (!state) throw InvalidInput("unknown state '" + spec_state + "'");
      const auto cal = calibration_for(g);
      const kinetics::Emitter em(cal.emission);
      kinetics::SiteState site;
      site.dose = spec_dose;
      site.gr1_population = spec_dose;
      site.split_vacancies = *state == kinetics::DefectState::Empty ? 0 : 1;
      site.state = *state;
      if (*state == kinetics::DefectState::TypeII) site.zpl_center_nm = cal.emission.type_ii.zpl_nm;
      if (*state == kinetics::DefectState::SnV) site.zpl_center_nm = cal.emission.snv.zpl_nm;
      const auto s = em.emit_spectrum(site, spec_acq, g.seed);
      if (g.out.empty() || g.out == "-") throw InvalidInput("simulate spectrum needs --out <file>");
      io::write_spectrum_csv(s, g.out);
    } else if (frun->parsed()) {
      feedback_run(g, fb_campaign, stop, max_cycles, no_monitoring);
    } else if (fdet->parsed()) {
      const auto trace = io::read_trace(trace_path);
      const auto events = feedback::detect_changepoints(trace, sigma, dwell);
      Json list = Json::array();
      std::string table = "kind,time_s,detected_at_s,pre_mean_counts,post_mean_counts,significance_sigma\n";
      for (const auto& e : events) {
        list.push_back(io::to_json(e));
        table += std::string(feedback::to_string(e.kind)) + "," + io::format_double(e.time_s) + "," +
                 io::format_double(e.detected_at_s) + "," + io::format_double(e.pre_mean) + "," +
                 io::format_double(e.post_mean) + "," + io::format_double(e.significance) + "\n";
      }
      emit(g, "changepoints", {{"bin_s", trace.bin_s}, {"window", io::to_json(trace.window)}, {"events", list}}, table);
    } else if (sfit->parsed()) {
      PeakFitOptions po;
      po.model = gaussian ? PeakModel::Gaussian : PeakModel::Lorentzian;
      po.seed_fwhm = seed_fwhm;
      emit(g, "peak_fit", io::to_json(fit_peak(io::read_spectrum_csv(spectrum_path), center, po)));
    } else if (sint->parsed()) {
      const auto w = *parse_window(window_text);
      const double v = integrate_window(io::read_spectrum_csv(spectrum_path), w);
      emit(g, "window_integral", {{"window", io::to_json(w)}, {"integral_counts_nm", v}});
    } else if (sclass->parsed()) {
      const auto cal = calibration_for(g);
      const auto& e = cal.emission;
      const auto cls = feedback::classify_site(io::read_spectrum_csv(spectrum_path), e.type_ii.window, e.snv.window,
                                               e.gr1.window);
      Json body = {{"class", std::string(feedback::to_string(cls.kind))}, {"window_integral", cls.window_integral}};
      body["peak"] = cls.peak ? io::to_json(*cls.peak) : Json(nullptr);
      emit(g, "classification", body);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
