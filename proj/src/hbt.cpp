#include "snvkit/hbt.hpp"

#include "snvkit/error.hpp"
#include "snvkit/levenberg_marquardt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

namespace snvkit::hbt {

TimetagStream::TimetagStream(std::vector<Timetag> events, double duration_s)
    : events_(std::move(events)), duration_s_(duration_s) {
  if (!(duration_s_ > 0.0) || !std::isfinite(duration_s_)) throw InvalidInput("stream duration must be positive");
  for (std::size_t i = 1; i < events_.size(); ++i) {
    if (events_[i].timestamp_ps < events_[i - 1].timestamp_ps) throw InvalidInput("timestamps must be nondecreasing");
  }
  for (const auto& e : events_) {
    if (e.channel != Channel::A && e.channel != Channel::B) throw InvalidInput("channel must be A or B");
  }
}

TimetagStream TimetagStream::from_events(std::vector<Timetag> events) {
  double span = 1e-12;
  if (events.size() > 1) {
    span = std::max(span, static_cast<double>(events.back().timestamp_ps - events.front().timestamp_ps) * 1e-12);
  }
  return TimetagStream(std::move(events), span);
}

std::size_t TimetagStream::count(Channel c) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(events_.begin(), events_.end(), [c](const Timetag& e) { return e.channel == c; }));
}

TimetagStream TimetagStream::time_reversed() const {
  std::vector<Timetag> out;
  out.reserve(events_.size());
  const std::int64_t t_end = events_.empty() ? 0 : events_.back().timestamp_ps;
  for (auto it = events_.rbegin(); it != events_.rend(); ++it) out.push_back({it->channel, t_end - it->timestamp_ps});
  return TimetagStream(std::move(out), duration_s_);
}

TimetagStream TimetagStream::merge(const TimetagStream& a, const TimetagStream& b) {
  std::vector<Timetag> out;
  out.reserve(a.events_.size() + b.events_.size());
  std::merge(a.events_.begin(), a.events_.end(), b.events_.begin(), b.events_.end(), std::back_inserter(out),
             [](const Timetag& x, const Timetag& y) { return x.timestamp_ps < y.timestamp_ps; });
  return TimetagStream(std::move(out), std::max(a.duration_s_, b.duration_s_));
}

std::vector<double> CorrelationHistogram::delays() const {
  std::vector<double> d(size());
  for (std::size_t i = 0; i < size(); ++i) d[i] = delay_ns(i);
  return d;
}

std::vector<double> CorrelationHistogram::g2_values() const {
  std::vector<double> g(size());
  for (std::size_t i = 0; i < size(); ++i) g[i] = g2(i);
  return g;
}

CorrelationHistogram CorrelationHistogram::from_g2(std::span<const double> delays_ns, std::span<const double> g2,
                                                   double normalization, double rho) {
  if (delays_ns.size() != g2.size() || delays_ns.size() < 2) throw InvalidInput("delay and g2 lengths differ");
  CorrelationHistogram h;
  h.bin_width_ns = delays_ns[1] - delays_ns[0];
  h.normalization = normalization;
  h.rho = rho;
  for (std::size_t i = 0; i < delays_ns.size(); ++i) h.bin_edges_ns.push_back(delays_ns[i] - 0.5 * h.bin_width_ns);
  h.bin_edges_ns.push_back(delays_ns.back() + 0.5 * h.bin_width_ns);
  for (double g : g2) {
    h.counts.push_back(g * normalization);
    h.variance.push_back(std::max(g * normalization, 1.0));
  }
  h.validate();
  return h;
}

void CorrelationHistogram::validate() const {
  if (!(normalization > 0.0)) throw InvalidInput("histogram normalization must be positive");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("rho must lie in (0, 1]");
  if (bin_edges_ns.size() != counts.size() + 1 || variance.size() != counts.size()) {
    throw InvalidInput("histogram arrays are inconsistent");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double w = bin_edges_ns[i + 1] - bin_edges_ns[i];
    if (std::abs(w - bin_width_ns) > 1e-6 * bin_width_ns) throw InvalidInput("histogram bins must be uniform");
  }
}

CorrelationHistogram correlate(const TimetagStream& stream, double bin_width_ns, double max_delay_ns,
                               unsigned threads) {
  if (!(bin_width_ns > 0.0)) throw InvalidInput("bin width must be positive");
  if (!(max_delay_ns >= 0.0)) throw InvalidInput("max delay must be non-negative");
  const std::int64_t bw = std::llround(bin_width_ns * 1000.0);
  if (bw < 1) throw InvalidInput("bin width below 1 ps");
  const auto k_max = static_cast<std::int64_t>(std::floor(max_delay_ns * 1000.0 / static_cast<double>(bw) + 1e-9));

  std::vector<std::int64_t> ta, tb;
  for (const auto& e : stream.events()) (e.channel == Channel::A ? ta : tb).push_back(e.timestamp_ps);
  if (ta.empty() || tb.empty()) throw InvalidInput("both channels need at least one event");

  const auto n_bins = static_cast<std::size_t>(2 * k_max + 1);
  const std::int64_t reach = (k_max + 1) * bw;
  auto work = [&](std::size_t lo, std::size_t hi, std::vector<std::uint64_t>& hist) {
    auto start = std::lower_bound(tb.begin(), tb.end(), lo < ta.size() ? ta[lo] - reach : 0);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::int64_t a = ta[i];
      while (start != tb.end() && *start < a - reach) ++start;
      for (auto it = start; it != tb.end() && *it <= a + reach; ++it) {
        const std::int64_t d = *it - a;
        const std::int64_t mag = (2 * (d < 0 ? -d : d) + bw) / (2 * bw);
        if (mag > k_max) continue;
        const std::int64_t k = d < 0 ? -mag : mag;
        ++hist[static_cast<std::size_t>(k + k_max)];
      }
    }
  };

  std::vector<std::uint64_t> total(n_bins, 0);
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(ta.size())));
  if (n_threads == 1) {
    work(0, ta.size(), total);
  } else {
    std::vector<std::vector<std::uint64_t>> parts(n_threads, std::vector<std::uint64_t>(n_bins, 0));
    std::vector<std::thread> pool;
    const std::size_t chunk = (ta.size() + n_threads - 1) / n_threads;
    for (unsigned t = 0; t < n_threads; ++t) {
      const std::size_t lo = std::min(ta.size(), t * chunk), hi = std::min(ta.size(), lo + chunk);
      pool.emplace_back(work, lo, hi, std::ref(parts[t]));
    }
    for (auto& th : pool) th.join();
    for (const auto& p : parts) {
      for (std::size_t k = 0; k < n_bins; ++k) total[k] += p[k];
    }
  }

  CorrelationHistogram h;
  const double bw_ns = static_cast<double>(bw) / 1000.0;
  h.bin_width_ns = bw_ns;
  for (std::int64_t k = -k_max; k <= k_max + 1; ++k) h.bin_edges_ns.push_back((static_cast<double>(k) - 0.5) * bw_ns);
  h.counts.resize(n_bins);
  h.variance.resize(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    h.counts[k] = static_cast<double>(total[k]);
    h.variance[k] = std::max(h.counts[k], 1.0);
  }
  h.normalization = static_cast<double>(ta.size()) * static_cast<double>(tb.size()) * bw_ns * 1e-9 / stream.duration_s();
  h.rho = 1.0;
  return h;
}

CorrelationHistogram background_correct(const CorrelationHistogram& h) {
  if (!(h.rho > 0.0)) throw InvalidInput("rho must be positive for background correction");
  if (h.rho > 1.0) throw InvalidInput("rho must not exceed 1");
  CorrelationHistogram out = h;
  const double r2 = h.rho * h.rho;
  if (r2 == 1.0) return out;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double g = (h.g2(i) - (1.0 - r2)) / r2;
    out.counts[i] = g * h.normalization;
    out.variance[i] = h.variance[i] / (r2 * r2);
  }
  out.rho = 1.0;
  return out;
}

double three_level_g2(double delay_ns, double alpha, double tau1_ns, double tau2_ns, double g2_zero) {
  const double t = std::abs(delay_ns);
  return 1.0 - (1.0 + alpha - g2_zero) * std::exp(-t / tau1_ns) + alpha * std::exp(-t / tau2_ns);
}

double ThreeLevelFit::evaluate(double delay_ns) const {
  return three_level_g2(delay_ns, alpha, tau1_ns, tau2_ns, g2_zero);
}

namespace {

// g2 folded about zero and smoothed over `half` bins on each side.
std::vector<double> folded_profile(const CorrelationHistogram& h, std::size_t& centre) {
  const auto g = h.g2_values();
  centre = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = std::abs(h.delay_ns(i));
    if (d < best) {
      best = d;
      centre = i;
    }
  }
  const std::size_t n = std::min(centre + 1, h.size() - centre);
  std::vector<double> f(n);
  for (std::size_t k = 0; k < n; ++k) f[k] = 0.5 * (g[centre + k] + g[centre - k]);
  std::vector<double> s(n);
  const std::size_t half = 2;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lo = k > half ? k - half : 0, hi = std::min(n - 1, k + half);
    double acc = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) acc += f[j];
    s[k] = acc / static_cast<double>(hi - lo + 1);
  }
  return s;
}

}  // namespace

ThreeLevelFit fit_three_level(const CorrelationHistogram& h) {
  h.validate();
  if (h.size() < 8) throw InvalidInput("histogram too short for a three-level fit");
  const auto g = h.g2_values();
  const double gmin = *std::min_element(g.begin(), g.end());
  if (!(gmin < 0.8)) throw FitFailure("no antibunching dip (min g2 >= 0.8)");

  std::size_t centre = 0;
  const auto prof = folded_profile(h, centre);
  const double bw = h.bin_width_ns;

  // Seeds.
  const double c0 = std::clamp(prof[0], -0.5, 0.9);
  std::size_t k_peak = 0;
  for (std::size_t k = 1; k < prof.size(); ++k) {
    if (prof[k] > prof[k_peak]) k_peak = k;
  }
  const double peak = prof[k_peak];
  const double alpha0 = std::max(peak - 1.0, 0.02);
  double tau1_0 = bw;
  {
    const double half = 0.5 * (c0 + peak);
    for (std::size_t k = 1; k < prof.size(); ++k) {
      if (prof[k] >= half) {
        tau1_0 = std::max(bw, static_cast<double>(k) * bw / std::numbers::ln2);
        break;
      }
    }
  }
  double tau2_0 = 10.0 * tau1_0;
  if (peak > 1.02) {
    const double target = 1.0 + (peak - 1.0) / std::numbers::e;
    for (std::size_t k = k_peak; k < prof.size(); ++k) {
      if (prof[k] <= target) {
        tau2_0 = std::max(2.0 * tau1_0, static_cast<double>(k) * bw);
        break;
      }
    }
  }

  const auto m = static_cast<Eigen::Index>(h.size());
  std::vector<double> sigma(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) sigma[i] = std::sqrt(std::max(h.variance[i], 1e-12));
  auto residual = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      r[i] = (three_level_g2(h.delay_ns(ii), p[0], p[1], p[2], p[3]) * h.normalization - h.counts[ii]) / sigma[ii];
    }
  };
  auto jacobian = [&](const Eigen::VectorXd& p, Eigen::MatrixXd& jac) {
    jac.resize(m, 4);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const double t = std::abs(h.delay_ns(ii));
      const double e1 = std::exp(-t / p[1]), e2 = std::exp(-t / p[2]);
      const double s = h.normalization / sigma[ii];
      jac(i, 0) = s * (e2 - e1);
      jac(i, 1) = -s * (1.0 + p[0] - p[3]) * e1 * t / (p[1] * p[1]);
      jac(i, 2) = s * p[0] * e2 * t / (p[2] * p[2]);
      jac(i, 3) = s * e1;
    }
  };
  auto project = [bw](Eigen::VectorXd& p) {
    p[0] = std::max(p[0], 0.0);
    p[1] = std::max(p[1], 0.05 * bw);
    p[2] = std::max({p[2], 0.05 * bw, p[1]});
  };

  fit::LmResult best;
  bool have = false;
  for (double f2 : {1.0, 0.5, 2.0}) {
    Eigen::VectorXd p0(4);
    p0 << alpha0, tau1_0, std::max(tau2_0 * f2, 1.5 * tau1_0), c0;
    auto res = fit::levenberg_marquardt(residual, p0, m, {}, jacobian, project);
    if (!res.params.allFinite()) continue;
    if (!have || res.cost < best.cost) {
      best = std::move(res);
      have = true;
    }
  }
  if (!have) throw FitFailure("three-level fit diverged");
  // Second pass with variances taken from the first-pass model.
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double mu = three_level_g2(h.delay_ns(i), best.params[0], best.params[1], best.params[2], best.params[3]) *
                      h.normalization * h.variance[i] / std::max(h.counts[i], 1.0);
    sigma[i] = std::sqrt(std::max(mu, 1.0));
  }
  best = fit::levenberg_marquardt(residual, best.params, m, {}, jacobian, project);
  Eigen::VectorXd p = best.params;

  ThreeLevelFit out;
  out.alpha = p[0];
  out.tau1_ns = p[1];
  out.tau2_ns = p[2];
  out.g2_zero = p[3];
  out.reduced_chi2 = best.residual_variance;
  out.covariance = best.covariance * std::max(best.residual_variance, 1.0);
  out.alpha_sigma = std::sqrt(std::max(out.covariance(0, 0), 0.0));
  out.tau1_sigma = std::sqrt(std::max(out.covariance(1, 1), 0.0));
  out.tau2_sigma = std::sqrt(std::max(out.covariance(2, 2), 0.0));
  out.g2_zero_sigma = std::sqrt(std::max(out.covariance(3, 3), 0.0));
  out.iterations = best.iterations;
  if (!best.converged) {
    throw FitFailure("three-level fit did not converge", {p[0], p[1], p[2], p[3]});
  }
  return out;
}

ValueWithSigma g2_at_zero(const ThreeLevelFit& fit) { return {fit.evaluate(0.0), fit.g2_zero_sigma}; }

std::pair<double, double> ThreeLevelRates::correlation_times() const {
  Eigen::Matrix3d q;
  q << -k12, k12, 0.0,
       k21, -(k21 + k23), k23,
       k31, 0.0, -k31;
  Eigen::EigenSolver<Eigen::Matrix3d> es(q);
  std::vector<double> rates;
  for (int i = 0; i < 3; ++i) {
    const double re = -es.eigenvalues()[i].real();
    if (re > 1e-12) rates.push_back(re);
  }
  if (rates.size() != 2) throw InvalidInput("degenerate three-level rates");
  std::sort(rates.begin(), rates.end());
  return {1.0 / rates[1], 1.0 / rates[0]};
}

ThreeLevelRates ThreeLevelRates::for_antibunching_time(double tau1_ns, double k21, double k23, double k31) {
  ThreeLevelRates r{0.0, k21, k23, k31};
  double lo = 1e-9, hi = 100.0;
  r.k12 = lo;
  if (r.correlation_times().first < tau1_ns) throw InvalidInput("decay rates too fast for the requested tau1");
  for (int it = 0; it < 200; ++it) {
    r.k12 = 0.5 * (lo + hi);
    (r.correlation_times().first > tau1_ns ? lo : hi) = r.k12;
  }
  r.k12 = 0.5 * (lo + hi);
  return r;
}

TimetagStream simulate_emitter(const ThreeLevelRates& rates, const StreamOptions& options, std::uint64_t seed) {
  if (!(options.efficiency > 0.0 && options.efficiency <= 1.0)) throw InvalidInput("efficiency must be in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto expo = [&](double rate) { return -std::log1p(-uni(rng)) / rate; };
  std::vector<Timetag> ev;
  ev.reserve(options.detections);
  double t_ns = 0.0;
  int state = 1;
  const double out2 = rates.k21 + rates.k23;
  while (ev.size() < options.detections) {
    if (state == 1) {
      t_ns += expo(rates.k12);
      state = 2;
    } else if (state == 2) {
      t_ns += expo(out2);
      if (uni(rng) * out2 < rates.k21) {
        state = 1;
        if (uni(rng) < options.efficiency) {
          const Channel c = uni(rng) < options.split_a ? Channel::A : Channel::B;
          ev.push_back({c, std::llround(t_ns * 1000.0)});
        }
      } else {
        state = 3;
      }
    } else {
      t_ns += expo(rates.k31);
      state = 1;
    }
  }
  return TimetagStream(std::move(ev), std::max(t_ns * 1e-9, 1e-12));
}

TimetagStream read_timetags(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open timetag file");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<Timetag> ev;
  if (content.size() >= 8 && content.compare(0, 8, kTimetagMagic) == 0) {
    if (content.size() < 16) throw IoError(path.string(), "truncated timetag header");
    std::uint32_t version = 0;
    for (int b = 0; b < 4; ++b) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(content[8 + b])) << (8 * b);
    if (version != kTimetagVersion) throw IoError(path.string(), "unsupported timetag version " + std::to_string(version));
    const std::size_t body = content.size() - 16;
    if (body % 9 != 0) throw IoError(path.string(), "timetag body is not a whole number of records");
    for (std::size_t off = 16; off < content.size(); off += 9) {
      const auto ch = static_cast<unsigned char>(content[off]);
      if (ch > 1) throw InvalidInput("channel must be A or B");
      std::uint64_t ts = 0;
      for (int b = 0; b < 8; ++b) ts |= static_cast<std::uint64_t>(static_cast<unsigned char>(content[off + 1 + b])) << (8 * b);
      ev.push_back({static_cast<Channel>(ch), static_cast<std::int64_t>(ts)});
    }
  } else {
    std::istringstream ss(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw IoError(path.string(), "line " + std::to_string(line_no) + ": expected channel,timestamp_ps");
      const std::string ch = line.substr(0, comma);
      const std::string ts = line.substr(comma + 1);
      if (ch == "channel") continue;
      Channel c;
      if (ch == "A" || ch == "0") c = Channel::A;
      else if (ch == "B" || ch == "1") c = Channel::B;
      else throw InvalidInput("line " + std::to_string(line_no) + ": channel must be A or B");
      try {
        std::size_t used = 0;
        const long long v = std::stoll(ts, &used);
        if (used != ts.size()) throw std::invalid_argument("trailing");
        ev.push_back({c, v});
      } catch (const std::logic_error&) {
        throw IoError(path.string(), "line " + std::to_string(line_no) + ": bad timestamp");
      }
    }
  }
  return TimetagStream::from_events(std::move(ev));
}

void write_timetags_csv(const TimetagStream& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write timetag file");
  out << "channel,timestamp_ps\n";
  for (const auto& e : s.events()) out << (e.channel == Channel::A ? 'A' : 'B') << ',' << e.timestamp_ps << '\n';
}

void write_timetags_binary(const TimetagStream& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot write timetag file");
  out.write(kTimetagMagic, 8);
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
  };
  put(kTimetagVersion, 4);
  put(0, 4);
  for (const auto& e : s.events()) {
    out.put(static_cast<char>(e.channel));
    put(static_cast<std::uint64_t>(e.timestamp_ps), 8);
  }
}

}  // namespace snvkit::hbt
