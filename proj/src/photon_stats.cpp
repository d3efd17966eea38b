#include "molspin/photon_stats.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "molspin/error.hpp"
#include "molspin/io.hpp"

namespace molspin::photon {

using photo::kLevels;
using photo::Matrix7d;
using photo::RateModel;

namespace {

using Vector7d = Eigen::Matrix<double, kLevels, 1>;

std::string num(double v) { return io::format_double(v); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// 0.5 exp(sigma^2 / 2t^2 - u/t) erfc((sigma/t - u/sigma) / sqrt 2): a
// Gaussian of width sigma convolved with the causal decay e^{-u/t}.
double one_sided(double u, double t, double sigma) {
  const double z = (sigma / t - u / sigma) / std::numbers::sqrt2;
  if (z >= 0.0) return 0.5 * std::exp(-0.5 * u * u / (sigma * sigma)) * erfcx(z);
  return 0.5 * std::exp(0.5 * sigma * sigma / (t * t) - u / t) * std::erfc(z);
}

// Integral of the unit-area convolved decay over [ua, ub] (times relative to the IRF center).
double convolved_bin(double ua, double ub, double tau, double sigma) {
  if (sigma == 0.0) {
    const double a = std::max(ua, 0.0), b = std::max(ub, 0.0);
    return tau * (std::exp(-a / tau) - std::exp(-b / tau));
  }
  return tau * ((normal_cdf(ub / sigma) - normal_cdf(ua / sigma)) - (one_sided(ub, tau, sigma) - one_sided(ua, tau, sigma)));
}

Vector7d steady_populations(const RateModel& jm) {
  const auto st = photo::steady_state(jm);
  Vector7d p;
  for (int i = 0; i < kLevels; ++i) p[i] = st.populations[i];
  return p;
}

struct CsvTable {
  std::vector<std::pair<std::string, std::string>> header;  // key=value pairs from "#" lines
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string item;
      while (std::getline(hs, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
          s.erase(0, s.find_first_not_of(' '));
          s.erase(s.find_last_not_of(' ') + 1);
          return s;
        };
        t.header.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
      }
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(line[0]))) continue;  // column names
    std::vector<double> row;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      double v = 0.0;
      auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) throw InvalidArgument(path.string() + ": bad number in line '" + line + "'");
      row.push_back(v);
      p = q;
      if (p < end && *p == ',') ++p;
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::optional<double> header_value(const CsvTable& t, const std::string& key) {
  for (const auto& [k, v] : t.header)
    if (k == key) return std::stod(v);
  return std::nullopt;
}

// Bin layout shared by the measured and expected histograms.
struct G2Bins {
  int half = 0;
  double bin = 0.0;
  int size() const { return 2 * half + 1; }
  double lo(int i) const { return (i - half - 0.5) * bin; }
  double hi(int i) const { return (i - half + 0.5) * bin; }
};

G2Bins make_bins(double bin_ns, double max_tau_ns) {
  if (!(bin_ns > 0.0)) throw InvalidArgument("g2: bin width must be > 0");
  if (!(max_tau_ns >= bin_ns)) throw InvalidArgument("g2: max_tau must be >= bin width");
  return {static_cast<int>(std::floor(max_tau_ns / bin_ns + 1e-9)), bin_ns};
}

void renormalize(G2Histogram& h) {
  const std::size_t n = h.counts.size();
  h.g2.assign(n, 0.0);
  h.sigma.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += h.counts[i];
    if (h.expected[i] > 0.0) {
      h.g2[i] = h.counts[i] / h.expected[i];
      h.sigma[i] = std::sqrt(std::max(h.counts[i], 1.0)) / h.expected[i];
    }
  }
  h.coincidences = static_cast<long>(total);
  h.low_statistics = h.coincidences < 100;
}

}  // namespace

// ------------------------------------------------------------- records

void PhotonRecord::validate() const {
  if (!(total_duration_ns >= 0.0) || !std::isfinite(total_duration_ns))
    throw InvalidArgument("PhotonRecord: duration must be finite and >= 0");
  for (std::size_t i = 0; i < timestamps_ns.size(); ++i) {
    const double t = timestamps_ns[i];
    if (!(t >= 0.0 && t <= total_duration_ns))
      throw InvalidArgument("PhotonRecord: timestamp " + num(t) + " outside [0, duration]");
    if (i > 0 && !(t > timestamps_ns[i - 1]))
      throw InvalidArgument("PhotonRecord: timestamps not strictly increasing at index " + std::to_string(i));
  }
}

double PhotonRecord::count_rate_per_ns() const {
  return total_duration_ns > 0.0 ? static_cast<double>(timestamps_ns.size()) / total_duration_ns : 0.0;
}

RateModel jump_model(const RateModel& model) {
  return model.has_coherent_drive() ? photo::fold_coherent_drive(model) : model;
}

PhotonRecord simulate_photon_stream(const RateModel& model, double duration_ns, std::uint64_t seed,
                                    const StreamOptions& opts, StreamStats* stats) {
  if (!(duration_ns > 0.0)) throw InvalidArgument("simulate_photon_stream: duration must be > 0");
  if (opts.max_jumps < 0 || opts.dead_time_ns < 0.0 || opts.timing_jitter_ns < 0.0)
    throw InvalidArgument("simulate_photon_stream: negative option");
  if (opts.initial_level < 0 || opts.initial_level >= kLevels)
    throw InvalidArgument("simulate_photon_stream: initial level out of range");
  const RateModel jm = jump_model(model);
  const double eta = jm.collection_efficiency;
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("simulate_photon_stream: collection efficiency outside [0, 1]");

  struct Channel {
    int to;
    double cumulative;
    double emit_prob;
  };
  std::array<std::vector<Channel>, kLevels> channels;
  std::array<double, kLevels> outflow{};
  for (int i = 0; i < kLevels; ++i) {
    double c = 0.0;
    for (int j = 0; j < kLevels; ++j) {
      if (j == i || jm.generator(j, i) <= 0.0) continue;
      c += jm.generator(j, i);
      channels[i].push_back({j, c, std::clamp(jm.emission(j, i) / jm.generator(j, i), 0.0, 1.0)});
    }
    outflow[i] = c;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  StreamStats local;
  PhotonRecord rec;
  rec.seed = seed;
  int level = opts.initial_level;
  double t = 0.0;
  double end = duration_ns;
  while (true) {
    const double q = outflow[level];
    if (!(q > 0.0))
      throw NumericalError(std::string("simulate_photon_stream: no escape from level ") + photo::level_name(level) +
                           " at t = " + num(t) + " ns");
    const double dt = -std::log1p(-uni(rng)) / q;
    if (t + dt > end) {
      local.occupancy_ns[level] += end - t;
      break;
    }
    local.occupancy_ns[level] += dt;
    t += dt;
    ++local.jumps;
    const double pick = uni(rng) * q;
    const auto& ch = channels[level];
    auto it = std::find_if(ch.begin(), ch.end(), [&](const Channel& c) { return pick < c.cumulative; });
    if (it == ch.end()) it = std::prev(ch.end());
    if (it->emit_prob > 0.0) {
      const double u = uni(rng);
      if (u < it->emit_prob) {
        ++local.emissions;
        // Reuse the same uniform for detection: u / emit_prob is uniform on [0, 1).
        if (u < it->emit_prob * eta) rec.timestamps_ns.push_back(t);
      }
    }
    level = it->to;
    if (opts.max_jumps > 0 && local.jumps >= opts.max_jumps) {
      end = t;
      break;
    }
  }
  rec.total_duration_ns = end;

  if (jm.background_rate_per_ns > 0.0) {
    std::poisson_distribution<long> pois(jm.background_rate_per_ns * end);
    const long nb = pois(rng);
    for (long k = 0; k < nb; ++k) rec.timestamps_ns.push_back(uni(rng) * end);
  }
  if (opts.timing_jitter_ns > 0.0) {
    std::normal_distribution<double> jit(0.0, opts.timing_jitter_ns);
    for (double& x : rec.timestamps_ns) x += jit(rng);
  }
  std::sort(rec.timestamps_ns.begin(), rec.timestamps_ns.end());
  std::vector<double> kept;
  kept.reserve(rec.timestamps_ns.size());
  for (double x : rec.timestamps_ns) {
    if (x < 0.0 || x > end) continue;
    if (!kept.empty() && !(x > kept.back())) continue;
    if (!kept.empty() && x - kept.back() < opts.dead_time_ns) continue;
    kept.push_back(x);
  }
  rec.timestamps_ns = std::move(kept);
  if (stats) *stats = local;
  return rec;
}

PhotonRecord poisson_stream(double rate_per_ns, double duration_ns, std::uint64_t seed) {
  if (!(rate_per_ns >= 0.0 && duration_ns > 0.0)) throw InvalidArgument("poisson_stream: rate >= 0 and duration > 0");
  PhotonRecord r;
  r.seed = seed;
  r.total_duration_ns = duration_ns;
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate_per_ns > 0.0 ? rate_per_ns : 1.0);
  if (rate_per_ns == 0.0) return r;
  for (double t = gap(rng); t <= duration_ns; t += gap(rng))
    if (r.timestamps_ns.empty() || t > r.timestamps_ns.back()) r.timestamps_ns.push_back(t);
  return r;
}

// ------------------------------------------------------------------ g2

void G2Histogram::validate() const {
  const std::size_t n = tau_ns.size();
  if (n == 0 || g2.size() != n || sigma.size() != n) throw InvalidArgument("G2Histogram: length mismatch or empty");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(tau_ns[i]) || !std::isfinite(g2[i]) || !(sigma[i] >= 0.0))
      throw InvalidArgument("G2Histogram: non-finite value or negative sigma at bin " + std::to_string(i));
    if (i > 0 && !(tau_ns[i] > tau_ns[i - 1])) throw InvalidArgument("G2Histogram: tau not increasing");
  }
}

fit::CurveData G2Histogram::as_curve_data() const {
  validate();
  fit::CurveData c;
  c.x = Eigen::Map<const Eigen::VectorXd>(tau_ns.data(), static_cast<Eigen::Index>(tau_ns.size()));
  c.y = Eigen::Map<const Eigen::VectorXd>(g2.data(), static_cast<Eigen::Index>(g2.size()));
  c.sigma = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  return c;
}

G2Histogram g2_histogram(const PhotonRecord& record, double bin_ns, double max_tau_ns, G2Estimator estimator) {
  record.validate();
  if (record.timestamps_ns.empty()) throw InvalidArgument("g2_histogram: empty photon record");
  const G2Bins bins = make_bins(bin_ns, max_tau_ns);
  const int nbins = bins.size();
  G2Histogram h;
  h.bin_ns = bin_ns;
  h.counts.assign(nbins, 0.0);
  h.expected.assign(nbins, 0.0);
  for (int i = 0; i < nbins; ++i) h.tau_ns.push_back((i - bins.half) * bin_ns);

  // Each pair lands on +dt or -dt with equal probability, as the two
  // detectors behind a 50:50 splitter would see it. Bins stay independent.
  std::mt19937_64 coin(record.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uint64_t bits = 0;
  int left = 0;
  const auto& ts = record.timestamps_ns;
  const double reach = (bins.half + 0.5) * bin_ns;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (std::size_t j = i + 1; j < ts.size(); ++j) {
      const double d = ts[j] - ts[i];
      if (d >= reach) break;
      if (left == 0) {
        bits = coin();
        left = 64;
      }
      const double s = (bits & 1U) ? d : -d;
      bits >>= 1;
      --left;
      const int k = static_cast<int>(std::floor(s / bin_ns + 0.5)) + bins.half;
      if (k >= 0 && k < nbins) h.counts[k] += 1.0;
      if (estimator == G2Estimator::start_stop) break;
    }
  }

  const double n = static_cast<double>(ts.size());
  const double T = record.total_duration_ns;
  for (int i = 0; i < nbins; ++i) {
    if (estimator == G2Estimator::full) {
      auto F = [&](double x) { return std::copysign(T * std::abs(x) - 0.5 * x * x, x); };
      h.expected[i] = n * (n - 1.0) / (2.0 * T * T) * (F(bins.hi(i)) - F(bins.lo(i)));
    } else {
      const double r = n / T;
      auto H = [&](double x) { return std::copysign(1.0 - std::exp(-r * std::abs(x)), x); };
      h.expected[i] = 0.5 * (n - 1.0) * (H(bins.hi(i)) - H(bins.lo(i)));
    }
  }
  renormalize(h);
  return h;
}

G2Histogram merge(const G2Histogram& a, const G2Histogram& b) {
  if (a.tau_ns != b.tau_ns || a.counts.size() != a.tau_ns.size() || b.counts.size() != b.tau_ns.size())
    throw InvalidArgument("merge: histograms must share bins and carry raw counts");
  G2Histogram m = a;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    m.counts[i] += b.counts[i];
    m.expected[i] += b.expected[i];
  }
  renormalize(m);
  return m;
}

void G2Params::validate() const {
  std::vector<std::string> bad;
  if (!(tau_anti_ns > 0.0)) bad.push_back("tau_anti_ns must be > 0");
  if (!(tau_bunch_ns > 0.0)) bad.push_back("tau_bunch_ns must be > 0");
  if (!(sigma_total_ns >= 0.0)) bad.push_back("sigma_total_ns must be >= 0");
  if (!(g0 >= 0.0)) bad.push_back("g0 must be >= 0");
  if (!std::isfinite(amplitude) || !std::isfinite(tau0_ns) || !std::isfinite(baseline_scale))
    bad.push_back("non-finite parameter");
  if (!bad.empty()) {
    std::string msg = "G2Params:";
    for (const auto& s : bad) msg += " " + s + ";";
    throw InvalidArgument(msg);
  }
}

double erfcx(double x) {
  if (x < 0.0) {
    if (x < -26.0) return std::numeric_limits<double>::infinity();
    return 2.0 * std::exp(x * x) - erfcx(-x);
  }
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  const double z2 = 1.0 / (x * x);
  return 1.0 / (x * std::sqrt(std::numbers::pi)) * (1.0 - 0.5 * z2 * (1.0 - 1.5 * z2 * (1.0 - 2.5 * z2)));
}

double convolved_two_sided_exp(double u, double t, double sigma) {
  if (sigma == 0.0) return std::exp(-std::abs(u) / t);
  return one_sided(u, t, sigma) + one_sided(-u, t, sigma);
}

double g2_model(double tau_ns, const G2Params& p) {
  const double u = tau_ns - p.tau0_ns;
  const double b = 1.0 - p.g0 + p.amplitude;
  return 1.0 - b * convolved_two_sided_exp(u, p.tau_anti_ns, p.sigma_total_ns) +
         p.amplitude * convolved_two_sided_exp(u, p.tau_bunch_ns, p.sigma_total_ns);
}

double irf_sigma(double sigma_detector_ns, double bin_ns) {
  if (!(sigma_detector_ns >= 0.0 && bin_ns >= 0.0)) throw InvalidArgument("irf_sigma: widths must be >= 0");
  return std::sqrt(2.0 * sigma_detector_ns * sigma_detector_ns + bin_ns * bin_ns / 12.0);
}

G2Fit fit_g2(const G2Histogram& h, const G2Params& init, const G2FitOptions& opts) {
  h.validate();
  init.validate();
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < h.tau_ns.size(); ++i) {
    if (opts.fit_range_ns > 0.0 && std::abs(h.tau_ns[i]) > opts.fit_range_ns) continue;
    x.push_back(h.tau_ns[i]);
    y.push_back(h.g2[i]);
    w.push_back(h.sigma[i] > 0.0 ? 1.0 / (h.sigma[i] * h.sigma[i]) : 1.0);
  }
  if (x.size() < 8) throw InvalidArgument("fit_g2: fewer than 8 bins in range");

  using fit::Bound;
  using fit::kInf;
  const std::vector<fit::Parameter> params{
      {"g0", init.g0, Bound{0.0, kInf}},
      {"A", std::max(init.amplitude, 1e-3), Bound{0.0, kInf}},
      {"tau_anti", init.tau_anti_ns, Bound{1e-3, kInf}},
      {"tau_bunch", init.tau_bunch_ns, Bound{1e-3, kInf}},
      {"tau0", init.tau0_ns, Bound{}, !opts.fit_tau0},
      {"sigma_total", init.sigma_total_ns, Bound{0.0, kInf}, !opts.fit_sigma},
      {"baseline_scale", init.baseline_scale, Bound{0.0, kInf}},
  };
  auto unpack = [](const Eigen::VectorXd& v) {
    G2Params p;
    p.g0 = v[0];
    p.amplitude = v[1];
    p.tau_anti_ns = v[2];
    p.tau_bunch_ns = v[3];
    p.tau0_ns = v[4];
    p.sigma_total_ns = v[5];
    p.baseline_scale = v[6];
    return p;
  };
  auto model = [&](const Eigen::VectorXd& v) {
    const G2Params p = unpack(v);
    Eigen::VectorXd out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = p.baseline_scale * g2_model(x[i], p);
    return out;
  };
  const Eigen::VectorXd data = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));

  G2Fit out;
  out.fit = fit::least_squares(model, data, weights, params);
  if (!out.fit.converged)
    throw NumericalError("fit_g2: no convergence after " + std::to_string(out.fit.n_iterations) + " iterations");
  out.params = unpack(out.fit.values);

  std::vector<int> free;
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params[k].fixed) free.push_back(static_cast<int>(k));
  Eigen::MatrixXd sub(free.size(), free.size());
  for (std::size_t a = 0; a < free.size(); ++a)
    for (std::size_t b = 0; b < free.size(); ++b) sub(a, b) = out.fit.internal_covariance(free[a], free[b]);
  Eigen::LLT<Eigen::MatrixXd> llt(sub);
  if (opts.n_mc <= 0) return out;
  if (llt.info() != Eigen::Success || !sub.allFinite()) {
    out.fit.warnings.push_back("fit_g2: covariance not positive-definite, Monte-Carlo interval skipped");
    return out;
  }
  const auto iv = fit::monte_carlo_uncertainty(
      out.fit, [](const Eigen::VectorXd& v) { return v[0]; }, opts.n_mc, opts.seed, &out.fit.warnings);
  out.g0_interval = iv;
  out.g0_upper_error = iv.hi - out.params.g0;
  out.g0_lower_error = out.params.g0 - iv.lo;
  return out;
}

std::vector<double> exact_g2(const RateModel& model, const std::vector<double>& tau_ns) {
  const RateModel jm = jump_model(model);
  const Vector7d p = steady_populations(jm);
  const Vector7d e_out = jm.emission_out();
  const double rate = e_out.dot(p);
  if (!(rate > 0.0)) throw NumericalError("exact_g2: model emits no photons in steady state");
  const Vector7d post = jm.emission * p / rate;
  const double signal = jm.collection_efficiency * rate;
  const double rho = signal / (signal + jm.background_rate_per_ns);
  std::vector<double> g;
  g.reserve(tau_ns.size());
  for (double tau : tau_ns) {
    const Matrix7d u = (jm.generator * std::abs(tau)).exp();
    const double raw = e_out.dot(u * post) / rate;
    g.push_back(1.0 + rho * rho * (raw - 1.0));
  }
  return g;
}

G2Histogram expected_g2_histogram(const RateModel& model, double bin_ns, double max_tau_ns, double sigma_detector_ns) {
  if (!(sigma_detector_ns >= 0.0)) throw InvalidArgument("expected_g2_histogram: jitter must be >= 0");
  const G2Bins bins = make_bins(bin_ns, max_tau_ns);
  const double s = std::numbers::sqrt2 * sigma_detector_ns;
  const double dt = std::min(bin_ns / 50.0, s > 0.0 ? s / 10.0 : bin_ns / 50.0);
  const int kernel_half = s > 0.0 ? static_cast<int>(std::ceil(7.0 * s / dt)) : 0;
  const double reach = (bins.half + 0.5) * bin_ns;
  const int m = static_cast<int>(std::ceil(reach / dt)) + kernel_half + 1;

  // g on tau = k dt, k = 0..m, by repeated one-step propagation.
  const RateModel jm = jump_model(model);
  const Vector7d p = steady_populations(jm);
  const Vector7d e_out = jm.emission_out();
  const double rate = e_out.dot(p);
  if (!(rate > 0.0)) throw NumericalError("expected_g2_histogram: model emits no photons in steady state");
  const double signal = jm.collection_efficiency * rate;
  const double rho = signal / (signal + jm.background_rate_per_ns);
  const Matrix7d step = (jm.generator * dt).exp();
  Vector7d v = jm.emission * p / rate;
  std::vector<double> g(static_cast<std::size_t>(m + 1));
  for (int k = 0; k <= m; ++k) {
    g[k] = 1.0 + rho * rho * (e_out.dot(v) / rate - 1.0);
    v = step * v;
  }
  auto g_at = [&](int k) { return g[static_cast<std::size_t>(std::abs(k))]; };

  std::vector<double> kernel;
  if (kernel_half > 0) {
    double sum = 0.0;
    for (int j = -kernel_half; j <= kernel_half; ++j) {
      kernel.push_back(std::exp(-0.5 * std::pow(j * dt / s, 2)));
      sum += kernel.back();
    }
    for (double& x : kernel) x /= sum;
  }
  auto smeared = [&](int k) {
    if (kernel.empty()) return g_at(k);
    double acc = 0.0;
    for (int j = -kernel_half; j <= kernel_half; ++j) acc += kernel[j + kernel_half] * g_at(k - j);
    return acc;
  };

  G2Histogram h;
  h.bin_ns = bin_ns;
  const int nb = bins.size();
  for (int i = 0; i < nb; ++i) {
    // Trapezoid over the bin on the dt grid; bin edges fall on it when bin/dt is integral.
    const double lo = bins.lo(i), hi = bins.hi(i);
    const int k0 = static_cast<int>(std::ceil(lo / dt - 1e-9));
    const int k1 = static_cast<int>(std::floor(hi / dt + 1e-9));
    double acc = 0.0;
    for (int k = k0; k < k1; ++k) acc += 0.5 * (smeared(k) + smeared(k + 1)) * dt;
    h.tau_ns.push_back((i - bins.half) * bin_ns);
    h.g2.push_back(acc / ((k1 - k0) * dt));
  }
  h.sigma.assign(h.g2.size(), 0.0);
  return h;
}

// --------------------------------------------------------------- TCSPC

void TcspcParams::validate() const {
  if (components.empty()) throw InvalidArgument("TcspcParams: no decay components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.lifetime_ns > 0.0)) throw InvalidArgument("TcspcParams: lifetimes must be > 0");
    if (!(c.amplitude >= 0.0)) throw InvalidArgument("TcspcParams: amplitudes must be >= 0");
    total += c.amplitude;
  }
  if (!(total > 0.0)) throw InvalidArgument("TcspcParams: amplitudes sum to zero");
  if (!(detection_probability >= 0.0 && detection_probability <= 1.0))
    throw InvalidArgument("TcspcParams: detection probability outside [0, 1]");
  if (!std::isfinite(irf_center_ns)) throw InvalidArgument("TcspcParams: non-finite IRF center");
}

TcspcParams tcspc_from_photophysics(const photo::PhotophysicsParams& p, const std::array<double, 3>& branching,
                                    double detection_probability) {
  TcspcParams t;
  t.detection_probability = detection_probability;
  for (int s = 0; s < 3; ++s) {
    if (!(branching[s] >= 0.0)) throw InvalidArgument("tcspc_from_photophysics: branching must be >= 0");
    if (branching[s] == 0.0) continue;
    t.components.push_back({photo::excited_lifetime_ns(p, s), branching[s] * p.gamma_rad});
  }
  t.validate();
  return t;
}

void TcspcHistogram::validate() const {
  if (counts.empty() || edges_ns.size() != counts.size() + 1) throw InvalidArgument("TcspcHistogram: bad bin layout");
  for (std::size_t i = 1; i < edges_ns.size(); ++i)
    if (!(edges_ns[i] > edges_ns[i - 1])) throw InvalidArgument("TcspcHistogram: edges not increasing");
  for (double c : counts)
    if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidArgument("TcspcHistogram: counts must be finite and >= 0");
}

double TcspcHistogram::total() const {
  double s = 0.0;
  for (double c : counts) s += c;
  return s;
}

std::vector<double> TcspcHistogram::centers() const {
  std::vector<double> c;
  for (std::size_t i = 0; i < counts.size(); ++i) c.push_back(0.5 * (edges_ns[i] + edges_ns[i + 1]));
  return c;
}

TcspcHistogram simulate_tcspc(const TcspcParams& params, double pulse_period_ns, long n_pulses, double irf_sigma_ns,
                              std::uint64_t seed, double bin_ns) {
  params.validate();
  if (!(pulse_period_ns > 0.0 && bin_ns > 0.0 && n_pulses >= 0 && irf_sigma_ns >= 0.0))
    throw InvalidArgument("simulate_tcspc: period, bin > 0 and pulses, IRF width >= 0 required");
  const long nbins = std::lround(pulse_period_ns / bin_ns);
  if (nbins < 1 || std::abs(nbins * bin_ns - pulse_period_ns) > 1e-9 * pulse_period_ns)
    throw InvalidArgument("simulate_tcspc: period must be a whole number of bins");
  TcspcHistogram h;
  h.pulse_period_ns = pulse_period_ns;
  for (long i = 0; i <= nbins; ++i) h.edges_ns.push_back(i * bin_ns);
  h.counts.assign(static_cast<std::size_t>(nbins), 0.0);

  std::vector<double> photon_share;
  for (const auto& c : params.components) photon_share.push_back(c.amplitude * c.lifetime_ns);
  std::mt19937_64 rng(seed);
  std::binomial_distribution<long> detected(n_pulses, params.detection_probability);
  const long n = detected(rng);
  std::discrete_distribution<int> which(photon_share.begin(), photon_share.end());
  std::normal_distribution<double> jitter(0.0, irf_sigma_ns > 0.0 ? irf_sigma_ns : 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (long k = 0; k < n; ++k) {
    const double tau = params.components[which(rng)].lifetime_ns;
    double t = params.irf_center_ns - tau * std::log1p(-uni(rng));
    if (irf_sigma_ns > 0.0) t += jitter(rng);
    t = std::fmod(t, pulse_period_ns);
    if (t < 0.0) t += pulse_period_ns;
    const long b = std::min(static_cast<long>(t / bin_ns), nbins - 1);
    h.counts[static_cast<std::size_t>(b)] += 1.0;
  }
  return h;
}

ReconvolutionFit fit_biexponential_reconvolution(const TcspcHistogram& h, const Irf& irf, const BiexpInit& init) {
  h.validate();
  const std::size_t n = h.counts.size();
  const double period = h.pulse_period_ns > 0.0 ? h.pulse_period_ns : h.edges_ns.back() - h.edges_ns.front();
  const double total = h.total();
  if (!(total > 0.0)) throw InvalidArgument("fit_biexponential_reconvolution: empty histogram");
  const bool gaussian = irf.sigma_ns.has_value();
  if (gaussian == !irf.histogram.empty())
    throw InvalidArgument("fit_biexponential_reconvolution: supply exactly one of IRF sigma or IRF histogram");
  if (gaussian && !(*irf.sigma_ns >= 0.0)) throw InvalidArgument("fit_biexponential_reconvolution: IRF sigma < 0");
  std::vector<double> irf_norm;
  if (!gaussian) {
    if (irf.histogram.size() != n) throw InvalidArgument("fit_biexponential_reconvolution: IRF histogram length mismatch");
    double s = 0.0;
    for (double v : irf.histogram) {
      if (!(v >= 0.0)) throw InvalidArgument("fit_biexponential_reconvolution: IRF histogram must be >= 0");
      s += v;
    }
    if (!(s > 0.0)) throw InvalidArgument("fit_biexponential_reconvolution: IRF histogram is empty");
    for (double v : irf.histogram) irf_norm.push_back(v / s);
  }
  const double bin0 = h.edges_ns[1] - h.edges_ns[0];

  double t0 = init.t0_ns.value_or(0.0);
  if (!init.t0_ns && gaussian) {
    const double peak = *std::max_element(h.counts.begin(), h.counts.end());
    for (std::size_t i = 0; i < n; ++i)
      if (h.counts[i] >= 0.5 * peak) {
        t0 = h.edges_ns[i];
        break;
      }
  }

  // Bin integrals of one unit-amplitude decay, including the periodic tail.
  auto decay_bins = [&](double tau, double t0v) {
    std::vector<double> k(n);
    const double wrap = std::exp(-period / tau) / (1.0 - std::exp(-period / tau));
    if (gaussian) {
      const double sigma = *irf.sigma_ns;
      for (std::size_t i = 0; i < n; ++i) {
        const double ua = h.edges_ns[i] - t0v, ub = h.edges_ns[i + 1] - t0v;
        // Earlier pulses: tail far past the IRF, plain exponential.
        const double tail = tau * wrap * (std::exp(-ua / tau) - std::exp(-ub / tau));
        k[i] = convolved_bin(ua, ub, tau, sigma) + tail;
      }
    } else {
      std::vector<double> d(n);
      for (std::size_t i = 0; i < n; ++i)
        d[i] = tau * (std::exp(-(h.edges_ns[i] - h.edges_ns[0]) / tau) - std::exp(-(h.edges_ns[i + 1] - h.edges_ns[0]) / tau)) *
               (1.0 + wrap);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (irf_norm[j] != 0.0) acc += irf_norm[j] * d[(i + n - j) % n];
        k[i] = acc;
      }
    }
    return k;
  };

  auto model = [&](const Eigen::VectorXd& v) {
    const auto k1 = decay_bins(v[0], v[4]);
    const auto k2 = decay_bins(v[1], v[4]);
    Eigen::VectorXd out(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) out[i] = v[3] * (v[2] * k1[i] + (1.0 - v[2]) * k2[i]) + v[5] * bin0;
    return out;
  };

  using fit::Bound;
  using fit::kInf;
  const double f1 = std::clamp(init.fraction1, 1e-3, 1.0 - 1e-3);
  const double scale0 = total / (f1 * init.tau1_ns + (1.0 - f1) * init.tau2_ns);
  const std::vector<fit::Parameter> params{
      {"tau1", init.tau1_ns, Bound{1e-3, kInf}},
      {"tau2", init.tau2_ns, Bound{1e-3, kInf}},
      {"f1", f1, Bound{0.0, 1.0}},
      {"scale", scale0, Bound{0.0, kInf}},
      {"t0", t0, Bound{}, !gaussian},
      {"background", 0.0, Bound{}},
  };
  Eigen::VectorXd data(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) data[i] = h.counts[i];
  ReconvolutionFit out;
  out.fit = fit::least_squares(model, data, fit::poisson_weights(data), params);
  const auto& v = out.fit.values;
  const bool swap = v[0] > v[1];
  out.tau1_ns = swap ? v[1] : v[0];
  out.tau2_ns = swap ? v[0] : v[1];
  out.a1 = swap ? 1.0 - v[2] : v[2];
  out.a2 = 1.0 - out.a1;
  out.mono_exponential = out.tau2_ns / out.tau1_ns < 1.05;
  if (out.mono_exponential)
    out.fit.warnings.push_back("fit_biexponential_reconvolution: lifetimes collapsed, effectively mono-exponential");
  const Eigen::VectorXd m = model(v);
  out.model.assign(m.data(), m.data() + m.size());
  for (std::size_t i = 0; i < n; ++i) out.residuals.push_back(h.counts[i] - out.model[i]);
  return out;
}

// ------------------------------------------------------------------- IO

void write_photon_csv(const PhotonRecord& r, const std::filesystem::path& path) {
  r.validate();
  std::string s = "# duration_ns=" + num(r.total_duration_ns) + ", seed=" + std::to_string(r.seed) + "\ntimestamp_ns\n";
  for (double t : r.timestamps_ns) s += num(t) + "\n";
  io::write_file_atomic(path, s);
}

PhotonRecord read_photon_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  PhotonRecord r;
  for (const auto& row : t.rows) {
    if (row.size() != 1) throw InvalidArgument(path.string() + ": expected one column");
    r.timestamps_ns.push_back(row[0]);
  }
  r.total_duration_ns = header_value(t, "duration_ns").value_or(r.timestamps_ns.empty() ? 0.0 : r.timestamps_ns.back());
  for (const auto& [k, v] : t.header)
    if (k == "seed") r.seed = std::stoull(v);
  r.validate();
  return r;
}

void write_photon_binary(const PhotonRecord& r, const std::filesystem::path& path) {
  r.validate();
  std::string bytes(r.timestamps_ns.size() * 8, '\0');
  for (std::size_t i = 0; i < r.timestamps_ns.size(); ++i) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(r.timestamps_ns[i]);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    std::memcpy(bytes.data() + 8 * i, &u, 8);
  }
  io::write_file_atomic(path, bytes);
}

PhotonRecord read_photon_binary(const std::filesystem::path& path, std::optional<double> duration_ns) {
  const std::string bytes = io::read_file(path);
  if (bytes.size() % 8 != 0) throw InvalidArgument(path.string() + ": size is not a multiple of 8 bytes");
  PhotonRecord r;
  r.timestamps_ns.resize(bytes.size() / 8);
  for (std::size_t i = 0; i < r.timestamps_ns.size(); ++i) {
    std::uint64_t u = 0;
    std::memcpy(&u, bytes.data() + 8 * i, 8);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    r.timestamps_ns[i] = std::bit_cast<double>(u);
  }
  r.total_duration_ns = duration_ns.value_or(r.timestamps_ns.empty() ? 0.0 : r.timestamps_ns.back());
  r.validate();
  return r;
}

void write_g2_csv(const G2Histogram& h, const std::filesystem::path& path) {
  h.validate();
  std::string s = "# bin_ns=" + num(h.bin_ns) + ", coincidences=" + std::to_string(h.coincidences) +
                  "\ntau_ns,g2,sigma,counts,expected\n";
  for (std::size_t i = 0; i < h.tau_ns.size(); ++i) {
    const double c = i < h.counts.size() ? h.counts[i] : 0.0;
    const double e = i < h.expected.size() ? h.expected[i] : 0.0;
    s += num(h.tau_ns[i]) + "," + num(h.g2[i]) + "," + num(h.sigma[i]) + "," + num(c) + "," + num(e) + "\n";
  }
  io::write_file_atomic(path, s);
}

G2Histogram read_g2_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  G2Histogram h;
  h.bin_ns = header_value(t, "bin_ns").value_or(0.0);
  for (const auto& row : t.rows) {
    if (row.size() < 3) throw InvalidArgument(path.string() + ": expected tau_ns,g2,sigma columns");
    h.tau_ns.push_back(row[0]);
    h.g2.push_back(row[1]);
    h.sigma.push_back(row[2]);
    if (row.size() >= 5) {
      h.counts.push_back(row[3]);
      h.expected.push_back(row[4]);
    }
  }
  if (h.bin_ns == 0.0 && h.tau_ns.size() > 1) h.bin_ns = h.tau_ns[1] - h.tau_ns[0];
  h.coincidences = static_cast<long>(header_value(t, "coincidences").value_or(0.0));
  h.low_statistics = h.coincidences < 100;
  h.validate();
  return h;
}

void write_tcspc_csv(const TcspcHistogram& h, const std::filesystem::path& path) {
  h.validate();
  std::string s = "# pulse_period_ns=" + num(h.pulse_period_ns) + "\nt_lo_ns,t_hi_ns,counts\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    s += num(h.edges_ns[i]) + "," + num(h.edges_ns[i + 1]) + "," + num(h.counts[i]) + "\n";
  io::write_file_atomic(path, s);
}

TcspcHistogram read_tcspc_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  TcspcHistogram h;
  h.pulse_period_ns = header_value(t, "pulse_period_ns").value_or(0.0);
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw InvalidArgument(path.string() + ": expected t_lo_ns,t_hi_ns,counts columns");
    if (h.edges_ns.empty()) h.edges_ns.push_back(row[0]);
    if (row[0] != h.edges_ns.back()) throw InvalidArgument(path.string() + ": bins are not contiguous");
    h.edges_ns.push_back(row[1]);
    h.counts.push_back(row[2]);
  }
  h.validate();
  return h;
}

}  // namespace molspin::photon
