#include "molspin/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "molspin/io.hpp"
#include "molspin/photon_stats.hpp"
#include "molspin/sequences.hpp"
#include "molspin/spectra.hpp"
#include "molspin/zfs_spin.hpp"

namespace molspin::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<double> linspace(double a, double b, long n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? a : a + (b - a) * i / double(n - 1);
  return v;
}

std::string csv(const std::vector<std::string>& header, const std::vector<const std::vector<double>*>& cols) {
  std::string s;
  for (std::size_t k = 0; k < header.size(); ++k) s += (k ? "," : "") + header[k];
  s += "\n";
  const std::size_t n = cols.empty() ? 0 : cols.front()->size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) s += (k ? "," : "") + io::format_double((*cols[k])[i]);
    s += "\n";
  }
  return s;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Two numeric columns; '#' lines and non-numeric header lines are skipped.
std::pair<std::vector<double>, std::vector<double>> read_two_columns(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<double> a, b;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (std::isalpha(static_cast<unsigned char>(line[0]))) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x = 0, y = 0;
    if (!(ls >> x >> y)) throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected two numbers");
    a.push_back(x);
    b.push_back(y);
  }
  if (a.empty()) throw InvalidArgument(path.string() + ": no data rows");
  return {a, b};
}

// Sweeps seed point i with seed ^ i, so nearby user seeds would share point
// streams. Scrambling the base seed keeps runs with different seeds apart.
std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string key_name(const char* section, const char* key) { return std::string("[") + section + "] " + key; }

struct Ctx {
  Ctx(const cfg::Config& cfg, fs::path out_dir, std::uint64_t run_seed, bool dry_run)
      : c(cfg), out(std::move(out_dir)), seed(run_seed), dry(dry_run) {}

  const cfg::Config& c;
  fs::path out;
  std::uint64_t seed = 0;
  bool dry = false;
  std::vector<std::string> violations;
  std::vector<std::string> outputs;
  std::optional<photo::PhotophysicsParams> params;

  const photo::PhotophysicsParams& model() {
    if (!params) {
      auto m = load_model(c);
      violations.insert(violations.end(), m.violations.begin(), m.violations.end());
      params = std::move(m.params);
    }
    return *params;
  }

  void require(bool ok, std::string msg) {
    if (!ok) violations.push_back(std::move(msg));
  }
  void positive(const char* s, const char* k, double v) {
    require(v > 0.0 && std::isfinite(v), key_name(s, k) + " must be > 0");
  }
  void non_negative(const char* s, const char* k, double v) {
    require(v >= 0.0 && std::isfinite(v), key_name(s, k) + " must be >= 0");
  }
  void at_least(const char* s, const char* k, long v, long lo) {
    require(v >= lo, key_name(s, k) + " must be >= " + std::to_string(lo));
  }
  void increasing(const char* s, const char* lo_key, double lo, const char* hi_key, double hi) {
    require(lo < hi, key_name(s, lo_key) + " must be below " + hi_key);
  }

  // False in dry mode. Otherwise throws if anything was violated.
  bool ready() {
    if (dry) return false;
    if (!violations.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& v : violations) msg += "\n  " + v;
      throw InvalidArgument(msg);
    }
    fs::create_directories(out);
    return true;
  }

  void write(const std::string& name, const std::string& content) {
    io::write_file_atomic(out / name, content);
    produced(name);
  }
  void produced(const std::string& name) {
    if (std::find(outputs.begin(), outputs.end(), name) == outputs.end()) outputs.push_back(name);
  }
  fs::path path(const std::string& name) const { return out / name; }

  // Relative inputs are looked up in the output directory, then next to the
  // config file.
  fs::path input(const std::string& p) const {
    const fs::path q(p);
    if (q.is_absolute()) return q;
    if (fs::exists(out / q)) return out / q;
    if (!c.directory().empty() && fs::exists(c.directory() / q)) return c.directory() / q;
    return out / q;
  }
};

json curve_report(const fit::FitResult& f) { return fit::to_json(f); }

// ------------------------------------------------------------------ recipes

void recipe_odmr(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  const double rabi = c.get_double("odmr", "rabi_khz", 40.0);
  const double span = c.get_double("odmr", "span_mhz", 6.0);
  const long points = c.get_long("odmr", "points", 301);
  const auto lasers =
      c.get_list("odmr", "laser_positions_mhz", std::vector<double>{p.optical_lines_mhz[0], p.optical_lines_mhz[1]});
  std::optional<std::pair<double, double>> range;
  if (c.has("odmr", "f_start_mhz") || c.has("odmr", "f_stop_mhz")) {
    range = {c.get_double("odmr", "f_start_mhz"), c.get_double("odmr", "f_stop_mhz")};
    x.increasing("odmr", "f_start_mhz", range->first, "f_stop_mhz", range->second);
  }
  x.non_negative("odmr", "rabi_khz", rabi);
  x.positive("odmr", "span_mhz", span);
  x.at_least("odmr", "points", points, 5);
  if (!x.ready()) return;

  const auto gt = zfs::ground_transition_frequencies(p.ground);
  const std::vector<std::pair<std::string, double>> lines{{"ZY", gt.f_zy_mhz}, {"ZX", gt.f_zx_mhz}};
  std::vector<std::pair<double, double>> windows;
  if (range)
    windows.push_back(*range);
  else
    for (const auto& [name, f] : lines) windows.emplace_back(f - 0.5 * span, f + 0.5 * span);

  std::vector<double> freq, counts;
  json peaks = json::array();
  for (const auto& [lo, hi] : windows) {
    const auto s = spectra::odmr_spectrum(p, linspace(lo, hi, points), rabi, lasers);
    freq.insert(freq.end(), s.axis.begin(), s.axis.end());
    counts.insert(counts.end(), s.intensity.begin(), s.intensity.end());
    json pk{{"window_mhz", {lo, hi}}, {"argmax_mhz", s.argmax()}};
    for (const auto& [name, f] : lines)
      if (f >= lo && f <= hi) pk["transition"] = name, pk["predicted_mhz"] = f;
    if (rabi > 0.0) {
      const auto f = spectra::fit_lorentzian(s);
      pk["fitted_mhz"] = f.value("x0");
      pk["fwhm_mhz"] = f.value("fwhm");
      pk["fit"] = curve_report(f);
    }
    peaks.push_back(pk);
  }
  x.write("odmr.csv", csv({"mw_mhz", "counts_per_s"}, {&freq, &counts}));
  x.write("odmr_fit.json", dump({{"f_zy_mhz", gt.f_zy_mhz}, {"f_zx_mhz", gt.f_zx_mhz}, {"peaks", peaks}}));
}

void recipe_excitation(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  const double lo = c.get_double("excitation", "laser_start_mhz", -1500.0);
  const double hi = c.get_double("excitation", "laser_stop_mhz", 1500.0);
  const long points = c.get_long("excitation", "points", 1501);
  const long n = c.get_long("excitation", "n_molecules", 1);
  const double inhom = n > 1 ? c.get_double("excitation", "inhomogeneous_fwhm_mhz", 3000.0) : 0.0;
  const double cw = c.get_double("mw", "cw_rabi_mhz", photo::kDefaultCwRabiMhz);
  x.increasing("excitation", "laser_start_mhz", lo, "laser_stop_mhz", hi);
  x.at_least("excitation", "points", points, 2);
  x.at_least("excitation", "n_molecules", n, 1);
  x.non_negative("excitation", "inhomogeneous_fwhm_mhz", inhom);
  if (!x.ready()) return;

  std::vector<double> shifts{0.0};
  if (n > 1) {
    std::mt19937_64 rng(x.seed);
    std::normal_distribution<double> g(0.0, inhom / (2.0 * std::sqrt(2.0 * std::log(2.0))));
    shifts.clear();
    for (long i = 0; i < n; ++i) shifts.push_back(g(rng));
  }
  const auto grid = linspace(lo, hi, points);
  std::vector<std::vector<double>> cols;
  json summary = json::object();
  for (auto mw : {spectra::MwConfig::none, spectra::MwConfig::zx, spectra::MwConfig::zy, spectra::MwConfig::both}) {
    const auto s = spectra::excitation_spectrum(p, shifts, grid, mw, cw);
    summary[spectra::to_string(mw)] = {{"argmax_mhz", s.argmax()}, {"max_counts_per_s", s.max_intensity()}};
    cols.push_back(s.intensity);
  }
  x.write("excitation.csv", csv({"laser_mhz", "counts_none", "counts_zx", "counts_zy", "counts_both"},
                                {&grid, &cols[0], &cols[1], &cols[2], &cols[3]}));
  x.write("excitation.json", dump({{"n_molecules", n}, {"spectra", summary}}));
}

void write_curve(Ctx& x, const std::string& name, const std::string& sweep_col, const seq::ExperimentCurve& raw,
                 const seq::ExperimentCurve* norm) {
  if (norm)
    x.write(name, csv({sweep_col, "signal", "sigma", "normalized", "normalized_sigma"},
                      {&raw.sweep, &raw.signal, &raw.sigma, &norm->signal, &norm->sigma}));
  else
    x.write(name, csv({sweep_col, "signal", "sigma"}, {&raw.sweep, &raw.signal, &raw.sigma}));
}

void recipe_rabi(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  const double omega = c.get_double("rabi", "omega_mhz", seq::kDefaultPulseRabiMhz);
  const double tmax = c.get_double("rabi", "tau_max_ns", 2000.0);
  const long points = c.get_long("rabi", "points", 201);
  const long shots = c.get_long("rabi", "shots", 10000);
  x.positive("rabi", "omega_mhz", omega);
  x.positive("rabi", "tau_max_ns", tmax);
  x.at_least("rabi", "points", points, 8);
  x.at_least("rabi", "shots", shots, 0);
  if (!x.ready()) return;
  const auto curve = seq::run_rabi(p, linspace(0.0, tmax, points), omega, {shots, splitmix64(x.seed)});
  const auto f = fit::fit_damped_cosine(curve.as_curve_data());
  write_curve(x, "rabi.csv", "tau_ns", curve, nullptr);
  x.write("rabi_fit.json", dump({{"configured_omega_mhz", omega},
                                 {"fitted_omega_mhz", f.value("freq") * 1e3},
                                 {"fitted_omega_error_mhz", f.error("freq") * 1e3},
                                 {"fit", curve_report(f)}}));
}

void recipe_echo(Ctx& x, seq::EchoKind kind) {
  const auto& p = x.model();
  const auto& c = x.c;
  const bool hahn = kind == seq::EchoKind::hahn;
  const char* s = hahn ? "hahn" : "xy8";
  seq::EchoOptions o;
  o.rabi_mhz = c.get_double(s, "rabi_mhz", seq::kDefaultPulseRabiMhz);
  const long shots = c.get_long(s, "shots", 10000);
  o.detuning_jitter_mhz = c.get_double(s, "detuning_jitter_mhz", 0.0);
  x.positive(s, "rabi_mhz", o.rabi_mhz);
  x.at_least(s, "shots", shots, 0);
  x.non_negative(s, "detuning_jitter_mhz", o.detuning_jitter_mhz);
  std::vector<double> grid;
  if (hahn) {
    const double span = p.hahn.time_constant_ns * std::pow(5.0, 1.0 / p.hahn.stretch);
    const double tmax = c.get_double(s, "tau_max_ns", span);
    const long points = c.get_long(s, "points", 400);
    x.positive(s, "tau_max_ns", tmax);
    x.at_least(s, "points", points, 5);
    if (x.violations.empty()) grid = linspace(0.0, tmax, points);
  } else {
    o.pulse_spacing_ns = c.get_double(s, "pulse_spacing_ns", seq::kPulseSpacingNs);
    x.positive(s, "pulse_spacing_ns", o.pulse_spacing_ns);
    const double span = p.xy8.time_constant_ns * std::pow(5.0, 1.0 / p.xy8.stretch);
    const long bmax =
        c.get_long(s, "blocks_max", std::max(8L, std::lround(span / (8.0 * std::max(o.pulse_spacing_ns, 1e-9)))));
    const long points = c.get_long(s, "points", 400);
    x.at_least(s, "blocks_max", bmax, 8);
    x.at_least(s, "points", points, 5);
    if (x.violations.empty()) {
      for (double b : linspace(1.0, double(bmax), points)) grid.push_back(std::round(b));
      grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    }
  }
  if (!x.ready()) return;
  o.run = {shots, splitmix64(x.seed)};
  const auto r = seq::run_echo_family(p, kind, grid, o);
  const auto& env = hahn ? p.hahn : p.xy8;
  write_curve(x, std::string(s) + ".csv", "free_time_ns", r.raw, &r.normalized);
  x.write(std::string(s) + "_fit.json",
          dump({{"configured_t_ns", env.time_constant_ns},
                {"configured_beta", env.stretch},
                {"fitted_t_ns", r.fit.value("T")},
                {"fitted_beta", r.fit.value("beta")},
                {"fit", curve_report(r.fit)}}));
}

void recipe_t1(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  const double tmax = c.get_double("t1", "tau_max_ns", 5.0 * p.t1.time_constant_ns);
  const long points = c.get_long("t1", "points", 1000);
  const long shots = c.get_long("t1", "shots", 10000);
  const double rabi = c.get_double("t1", "rabi_mhz", seq::kDefaultPulseRabiMhz);
  x.positive("t1", "tau_max_ns", tmax);
  x.at_least("t1", "points", points, 5);
  x.at_least("t1", "shots", shots, 0);
  x.positive("t1", "rabi_mhz", rabi);
  if (!x.ready()) return;
  const auto r = seq::run_t1(p, linspace(0.0, tmax, points), {shots, splitmix64(x.seed)}, rabi);
  write_curve(x, "t1.csv", "tau_ns", r.raw, &r.normalized);
  x.write("t1_fit.json", dump({{"configured_t_ns", p.t1.time_constant_ns},
                               {"fitted_t_ns", r.fit.value("T")},
                               {"fit", curve_report(r.fit)}}));
}

void g2_json_params(const photon::G2Params& p, json& j) {
  j = {{"g0", p.g0},
       {"amplitude", p.amplitude},
       {"tau_anti_ns", p.tau_anti_ns},
       {"tau_bunch_ns", p.tau_bunch_ns},
       {"tau0_ns", p.tau0_ns},
       {"sigma_total_ns", p.sigma_total_ns},
       {"baseline_scale", p.baseline_scale}};
}

void recipe_g2_sim(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  const double eta = c.get_double("g2", "collection_efficiency", 0.5);
  const bool explicit_bg = c.has("g2", "background_rate_per_ns");
  const double bg_in = explicit_bg ? c.get_double("g2", "background_rate_per_ns") : 0.0;
  const double target = explicit_bg ? 0.0 : c.get_double("g2", "target_g0", 0.142);
  const long jumps = c.get_long("g2", "max_jumps", 10000000);
  const double duration = c.get_double("g2", "duration_ns", 1e12);
  const double jitter = c.get_double("g2", "timing_jitter_ns", 0.425);
  const double bin = c.get_double("g2", "bin_ns", 5.0);
  const double max_tau = c.get_double("g2", "max_tau_ns", 3000.0);
  const std::string est = c.get_string("g2", "estimator", "full");
  const bool write_photons = c.get_bool("g2", "write_photons", true);
  x.require(eta > 0.0 && eta <= 1.0, key_name("g2", "collection_efficiency") + " must be in (0, 1]");
  x.non_negative("g2", "background_rate_per_ns", bg_in);
  x.require(target >= 0.0 && target < 1.0, key_name("g2", "target_g0") + " must be in [0, 1)");
  x.at_least("g2", "max_jumps", jumps, 0);
  x.positive("g2", "duration_ns", duration);
  x.non_negative("g2", "timing_jitter_ns", jitter);
  x.positive("g2", "bin_ns", bin);
  x.require(max_tau > 2.0 * bin, key_name("g2", "max_tau_ns") + " must exceed two bins");
  x.require(est == "full" || est == "start_stop", key_name("g2", "estimator") + " must be full or start_stop");
  if (!x.ready()) return;

  auto model = photo::build_rate_model(p);
  model.collection_efficiency = eta;
  model.background_rate_per_ns = 0.0;
  const double signal = photo::fluorescence_rate(photo::steady_state(model), model);
  double bg = bg_in;
  if (!explicit_bg) {
    // g2(0) of a perfect antibuncher diluted by background is 1 - rho^2.
    const double rho = std::sqrt(1.0 - target);
    bg = signal * (1.0 - rho) / rho;
  }
  model.background_rate_per_ns = bg;

  photon::StreamOptions so;
  so.max_jumps = jumps;
  so.timing_jitter_ns = jitter;
  photon::StreamStats stats;
  const auto rec = photon::simulate_photon_stream(model, duration, x.seed, so, &stats);
  auto h = photon::g2_histogram(rec, bin, max_tau,
                                est == "full" ? photon::G2Estimator::full : photon::G2Estimator::start_stop);

  // Reference values: the fit model applied to the noise-free histogram.
  auto ref = photon::expected_g2_histogram(model, bin, max_tau, jitter);
  ref.sigma = h.sigma;
  photon::G2Params init;
  init.sigma_total_ns = photon::irf_sigma(jitter, bin);
  photon::G2FitOptions fo;
  fo.n_mc = 0;
  const auto rf = photon::fit_g2(ref, init, fo);
  ref.sigma.assign(ref.sigma.size(), 0.0);

  if (write_photons) {
    photon::write_photon_binary(rec, x.path("photons.bin"));
    x.produced("photons.bin");
  }
  photon::write_g2_csv(h, x.path("g2.csv"));
  x.produced("g2.csv");
  photon::write_g2_csv(ref, x.path("g2_expected.csv"));
  x.produced("g2_expected.csv");
  json configured;
  g2_json_params(rf.params, configured);
  x.write("g2_sim.json", dump({{"configured", configured},
                               {"signal_rate_per_ns", signal},
                               {"background_rate_per_ns", bg},
                               {"collection_efficiency", eta},
                               {"photons", rec.timestamps_ns.size()},
                               {"duration_ns", rec.total_duration_ns},
                               {"jumps", stats.jumps},
                               {"coincidences", h.coincidences},
                               {"low_statistics", h.low_statistics}}));
}

void recipe_g2_fit(Ctx& x) {
  const auto& c = x.c;
  const std::string input = c.get_string("g2_fit", "input", "g2.csv");
  const std::string reference = c.get_string("g2_fit", "reference", "g2_sim.json");
  photon::G2Params init;
  init.g0 = c.get_double("g2_fit", "g0_init", init.g0);
  init.amplitude = c.get_double("g2_fit", "amplitude_init", init.amplitude);
  init.tau_anti_ns = c.get_double("g2_fit", "tau_anti_init_ns", init.tau_anti_ns);
  init.tau_bunch_ns = c.get_double("g2_fit", "tau_bunch_init_ns", init.tau_bunch_ns);
  const double jitter = c.get_double("g2", "timing_jitter_ns", 0.425);
  photon::G2FitOptions fo;
  fo.fit_tau0 = c.get_bool("g2_fit", "fit_tau0", true);
  fo.fit_sigma = c.get_bool("g2_fit", "fit_sigma", false);
  fo.n_mc = static_cast<int>(c.get_long("g2_fit", "n_mc", 1000));
  fo.fit_range_ns = c.get_double("g2_fit", "fit_range_ns", 0.0);
  fo.seed = x.seed;
  x.non_negative("g2", "timing_jitter_ns", jitter);
  x.at_least("g2_fit", "n_mc", fo.n_mc, 0);
  x.non_negative("g2_fit", "fit_range_ns", fo.fit_range_ns);
  x.require(init.tau_anti_ns > 0 && init.tau_bunch_ns > 0, "[g2_fit] initial time constants must be > 0");
  if (!x.ready()) return;

  const auto h = photon::read_g2_csv(x.input(input));
  init.sigma_total_ns = c.get_double("g2_fit", "sigma_total_ns", photon::irf_sigma(jitter, h.bin_ns));
  const auto r = photon::fit_g2(h, init, fo);
  std::vector<double> model;
  for (double t : h.tau_ns) model.push_back(r.params.baseline_scale * photon::g2_model(t, r.params));
  x.write("g2_fit_curve.csv", csv({"tau_ns", "g2", "sigma", "model"}, {&h.tau_ns, &h.g2, &h.sigma, &model}));

  json fitted;
  g2_json_params(r.params, fitted);
  json report{{"fitted", fitted},
              {"g0_upper_error", r.g0_upper_error},
              {"g0_lower_error", r.g0_lower_error},
              {"g0_plus_upper_error", r.params.g0 + r.g0_upper_error},
              {"single_emitter", r.params.g0 + r.g0_upper_error < 0.5},
              {"coincidences", h.coincidences},
              {"fit", curve_report(r.fit)}};
  if (r.g0_interval) report["g0_mc_interval"] = {r.g0_interval->lo, r.g0_interval->hi};

  const fs::path ref_path = x.input(reference);
  if (fs::exists(ref_path)) {
    const json ref = json::parse(io::read_file(ref_path));
    if (ref.contains("configured")) {
      json cmp = json::object();
      const std::vector<std::pair<std::string, std::string>> keys{
          {"g0", "g0"}, {"tau_anti_ns", "tau_anti"}, {"tau_bunch_ns", "tau_bunch"}};
      for (const auto& [k, name] : keys) {
        const double want = ref["configured"].at(k).get<double>();
        const double got = fitted.at(k).get<double>();
        const double err = r.fit.error(name);
        cmp[k] = {{"configured", want}, {"fitted", got}, {"error", err}, {"within_1sigma", std::abs(got - want) <= err}};
      }
      report["comparison"] = cmp;
    }
  }
  x.write("g2_fit.json", dump(report));
}

void recipe_tcspc_sim(Ctx& x) {
  const auto& c = x.c;
  const std::string source = c.get_string("tcspc", "source", "components");
  const double dp = c.get_double("tcspc", "detection_probability", 0.05);
  photon::TcspcParams tp;
  if (source == "model") {
    const auto& p = x.model();
    const std::array<double, 3> br{c.get_double("tcspc", "branching_x", 1.0 / 3.0),
                                   c.get_double("tcspc", "branching_y", 1.0 / 3.0),
                                   c.get_double("tcspc", "branching_z", 1.0 / 3.0)};
    for (int s = 0; s < 3; ++s) x.non_negative("tcspc", "branching", br[s]);
    if (x.violations.empty()) tp = photon::tcspc_from_photophysics(p, br, dp);
  } else {
    x.require(source == "components", key_name("tcspc", "source") + " must be components or model");
    tp.components = {{c.get_double("tcspc", "tau1_ns", 4.8), c.get_double("tcspc", "a1", 0.43)},
                     {c.get_double("tcspc", "tau2_ns", 22.3), c.get_double("tcspc", "a2", 0.57)}};
    tp.detection_probability = dp;
    for (const auto& k : tp.components) {
      x.positive("tcspc", "tau_ns", k.lifetime_ns);
      x.non_negative("tcspc", "amplitude", k.amplitude);
    }
  }
  tp.irf_center_ns = c.get_double("tcspc", "irf_center_ns", 2.0);
  const double photons = c.get_double("tcspc", "photons", 1e6);
  const double irf = c.get_double("tcspc", "irf_sigma_ns", 0.2);
  const double period = c.get_double("tcspc", "pulse_period_ns", 200.0);
  const double bin = c.get_double("tcspc", "bin_ns", 0.1);
  x.require(dp > 0.0 && dp <= 1.0, key_name("tcspc", "detection_probability") + " must be in (0, 1]");
  x.positive("tcspc", "photons", photons);
  x.non_negative("tcspc", "irf_sigma_ns", irf);
  x.positive("tcspc", "pulse_period_ns", period);
  x.positive("tcspc", "bin_ns", bin);
  if (!x.ready()) return;

  const long pulses = std::lround(photons / tp.detection_probability);
  const auto h = photon::simulate_tcspc(tp, period, pulses, irf, x.seed, bin);
  photon::write_tcspc_csv(h, x.path("tcspc.csv"));
  x.produced("tcspc.csv");
  double norm = 0.0;
  for (const auto& k : tp.components) norm += k.amplitude;
  json comps = json::array();
  for (const auto& k : tp.components) comps.push_back({{"lifetime_ns", k.lifetime_ns}, {"a", k.amplitude / norm}});
  x.write("tcspc_sim.json", dump({{"components", comps},
                                  {"pulses", pulses},
                                  {"detected", h.total()},
                                  {"irf_sigma_ns", irf},
                                  {"pulse_period_ns", period}}));
}

void recipe_tcspc_fit(Ctx& x) {
  const auto& c = x.c;
  const std::string input = c.get_string("tcspc_fit", "input", "tcspc.csv");
  const std::string irf_file = c.get_string("tcspc_fit", "irf_file", "");
  photon::Irf irf;
  if (irf_file.empty()) {
    irf.sigma_ns = c.get_double("tcspc_fit", "irf_sigma_ns", c.get_double("tcspc", "irf_sigma_ns", 0.2));
    x.non_negative("tcspc_fit", "irf_sigma_ns", *irf.sigma_ns);
  }
  photon::BiexpInit init;
  init.tau1_ns = c.get_double("tcspc_fit", "tau1_init_ns", init.tau1_ns);
  init.tau2_ns = c.get_double("tcspc_fit", "tau2_init_ns", init.tau2_ns);
  init.fraction1 = c.get_double("tcspc_fit", "fraction1_init", init.fraction1);
  x.positive("tcspc_fit", "tau1_init_ns", init.tau1_ns);
  x.positive("tcspc_fit", "tau2_init_ns", init.tau2_ns);
  x.require(init.fraction1 > 0.0 && init.fraction1 < 1.0, key_name("tcspc_fit", "fraction1_init") + " must be in (0, 1)");
  if (!x.ready()) return;

  const auto h = photon::read_tcspc_csv(x.input(input));
  if (!irf_file.empty()) irf.histogram = photon::read_tcspc_csv(x.input(irf_file)).counts;
  const auto r = photon::fit_biexponential_reconvolution(h, irf, init);
  std::vector<double> lo(h.edges_ns.begin(), h.edges_ns.end() - 1), hi(h.edges_ns.begin() + 1, h.edges_ns.end());
  x.write("tcspc_fit_curve.csv",
          csv({"t_lo_ns", "t_hi_ns", "counts", "model", "residual"}, {&lo, &hi, &h.counts, &r.model, &r.residuals}));
  x.write("tcspc_fit.json", dump({{"tau1_ns", r.tau1_ns},
                                  {"a1", r.a1},
                                  {"tau2_ns", r.tau2_ns},
                                  {"a2", r.a2},
                                  {"mono_exponential", r.mono_exponential},
                                  {"fit", curve_report(r.fit)}}));
}

Eigen::Vector3d vec3(const std::vector<double>& v, const char* s, const char* k, Ctx& x) {
  x.require(v.size() == 3, key_name(s, k) + " needs three components");
  if (v.size() != 3) return Eigen::Vector3d::Zero();
  return {v[0], v[1], v[2]};
}

void recipe_epr(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  zfs::RotationDispersionConfig rc;
  const std::string which = c.get_string("epr", "tensor", "ground");
  rc.mw_freq_mhz = c.get_double("epr", "mw_freq_mhz", 9700.0);
  rc.rotation_axis = vec3(c.get_list("epr", "rotation_axis", std::vector<double>{0, 0, 1}), "epr", "rotation_axis", x);
  rc.field_start = vec3(c.get_list("epr", "field_start", std::vector<double>{0, 0, 0}), "epr", "field_start", x);
  const double a0 = c.get_double("epr", "angle_start_deg", 0.0);
  const double a1 = c.get_double("epr", "angle_stop_deg", 179.0);
  const long points = c.get_long("epr", "points", 180);
  rc.site_tilt_deg = c.get_double("epr", "site_tilt_deg", 2.5);
  rc.g_iso = c.get_double("epr", "g_iso", constants::free_electron_g);
  rc.b_min_mt = c.get_double("epr", "b_min_mt", 0.0);
  rc.b_max_mt = c.get_double("epr", "b_max_mt", 800.0);
  rc.resonance.grid_step_mt = c.get_double("epr", "grid_step_mt", rc.resonance.grid_step_mt);
  rc.resonance.include_double_quantum = c.get_bool("epr", "include_double_quantum", false);
  x.require(which == "ground" || which == "excited", key_name("epr", "tensor") + " must be ground or excited");
  x.positive("epr", "mw_freq_mhz", rc.mw_freq_mhz);
  x.require(rc.rotation_axis.norm() > 0.0, key_name("epr", "rotation_axis") + " must be nonzero");
  x.at_least("epr", "points", points, 1);
  x.positive("epr", "g_iso", rc.g_iso);
  x.non_negative("epr", "b_min_mt", rc.b_min_mt);
  x.increasing("epr", "b_min_mt", rc.b_min_mt, "b_max_mt", rc.b_max_mt);
  x.positive("epr", "grid_step_mt", rc.resonance.grid_step_mt);
  if (!x.ready()) return;

  rc.angles_deg = linspace(a0, a1, points);
  const auto pts = zfs::rotation_dispersion(which == "ground" ? p.ground : p.excited, rc);
  std::string s = "angle_deg,site,field_mt,transition_pair\n";
  for (const auto& q : pts)
    s += io::format_double(q.angle_deg) + "," + std::to_string(q.site) + "," + io::format_double(q.resonance.field_mt) +
         "," + std::to_string(q.resonance.lower) + "-" + std::to_string(q.resonance.upper) + "\n";
  x.write("epr_rotation.csv", s);
}

void recipe_dw(Ctx& x) {
  const auto& c = x.c;
  const std::string input = c.get_string("dw", "input", "");
  spectra::EmissionSpec e;
  double lo = 580.0, hi = 730.0;
  long points = 15001;
  if (input.empty()) {
    e.zpl_weight = c.get_double("dw", "zpl_weight", e.zpl_weight);
    e.zpl_center_nm = c.get_double("dw", "zpl_center_nm", e.zpl_center_nm);
    e.zpl_fwhm_nm = c.get_double("dw", "zpl_fwhm_nm", e.zpl_fwhm_nm);
    e.sideband_onset_nm = c.get_double("dw", "sideband_onset_nm", e.zpl_center_nm);
    e.sideband_scale_nm = c.get_double("dw", "sideband_scale_nm", e.sideband_scale_nm);
    e.background = c.get_double("dw", "background", e.background);
    lo = c.get_double("dw", "axis_start_nm", lo);
    hi = c.get_double("dw", "axis_stop_nm", hi);
    points = c.get_long("dw", "points", points);
    x.require(e.zpl_weight > 0.0 && e.zpl_weight < 1.0, key_name("dw", "zpl_weight") + " must be in (0, 1)");
    x.positive("dw", "zpl_fwhm_nm", e.zpl_fwhm_nm);
    x.positive("dw", "sideband_scale_nm", e.sideband_scale_nm);
    x.increasing("dw", "axis_start_nm", lo, "axis_stop_nm", hi);
    x.at_least("dw", "points", points, 10);
  }
  const double center = c.get_double("dw", "zpl_window_center_nm", e.zpl_center_nm);
  const double half = c.get_double("dw", "zpl_half_window_nm", 0.5);
  const double limit = c.get_double("dw", "sideband_limit_nm", 720.0);
  const double bg_max = c.get_double("dw", "background_max_nm", 590.0);
  e.zpl_half_window_nm = half;
  e.sideband_limit_nm = limit;
  x.positive("dw", "zpl_half_window_nm", half);
  if (!x.ready()) return;

  spectra::Spectrum s;
  if (input.empty()) {
    s = spectra::synthetic_emission_spectrum(linspace(lo, hi, points), e);
    x.write("emission.csv", csv({"wavelength_nm", "intensity"}, {&s.axis, &s.intensity}));
  } else {
    auto [a, b] = read_two_columns(x.input(input));
    s.axis = std::move(a);
    s.intensity = std::move(b);
  }
  const double ratio = spectra::debye_waller(s, {center - half, center + half}, limit, bg_max);
  json j{{"debye_waller", ratio},
         {"zpl_window_nm", {center - half, center + half}},
         {"sideband_limit_nm", limit},
         {"background_max_nm", bg_max}};
  if (input.empty()) j["configured_zpl_weight"] = e.zpl_weight;
  x.write("dw.json", dump(j));
}

void recipe_isotope(Ctx& x) {
  const auto& p = x.model();
  const auto& c = x.c;
  spectra::IsotopeEnsembleSpec spec;
  spec.n_molecules = c.get_long("isotope", "n_molecules", 2000);
  spec.carbon_count = static_cast<int>(c.get_long("isotope", "carbon_count", spec.carbon_count));
  spec.c13_abundance = c.get_double("isotope", "c13_abundance", spec.c13_abundance);
  spec.inhomogeneous_fwhm_mhz = c.get_double("isotope", "inhomogeneous_fwhm_mhz", spec.inhomogeneous_fwhm_mhz);
  spec.dxy_mhz = c.get_double("optics", "dxy_mhz", spec.dxy_mhz);
  spec.dxz_mhz = c.get_double("optics", "dxz_mhz", spec.dxz_mhz);
  spec.class_shifts_mhz = c.get_list("isotope", "class_shifts_mhz", spec.class_shifts_mhz);
  const std::string mw = c.get_string("isotope", "mw", "both");
  const double lo = c.get_double("isotope", "laser_start_mhz", -8000.0);
  const double hi = c.get_double("isotope", "laser_stop_mhz", 45000.0);
  const long points = c.get_long("isotope", "points", 2651);
  const long n_triples = c.get_long("isotope", "n_triples", 5);
  const double cw = c.get_double("mw", "cw_rabi_mhz", photo::kDefaultCwRabiMhz);
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    x.violations.push_back(std::string("[isotope] ") + e.what());
  }
  std::optional<spectra::MwConfig> mwc;
  try {
    mwc = spectra::parse_mw_config(mw);
  } catch (const InvalidArgument& e) {
    x.violations.push_back(std::string("[isotope] mw: ") + e.what());
  }
  x.increasing("isotope", "laser_start_mhz", lo, "laser_stop_mhz", hi);
  x.at_least("isotope", "points", points, 10);
  x.at_least("isotope", "n_triples", n_triples, 0);
  if (!x.ready()) return;

  const auto mols = spectra::sample_isotope_ensemble(spec, x.seed);
  const auto probs = spectra::isotope_class_probabilities(spec);
  std::vector<double> idx, n13, cls, shift;
  std::vector<long> per_class(probs.size(), 0);
  for (std::size_t i = 0; i < mols.size(); ++i) {
    idx.push_back(static_cast<double>(i));
    n13.push_back(mols[i].n_c13);
    cls.push_back(mols[i].class_label);
    shift.push_back(mols[i].line_shift_mhz);
    ++per_class[static_cast<std::size_t>(mols[i].class_label)];
  }
  x.write("isotope_molecules.csv",
          csv({"index", "n_c13", "class_label", "line_shift_mhz"}, {&idx, &n13, &cls, &shift}));

  const auto ep = spectra::ensemble_params(p, spec);
  const auto grid = linspace(lo, hi, points);
  const auto s = spectra::excitation_spectrum(ep, spectra::line_shifts(mols), grid, *mwc, cw);
  x.write("isotope_spectrum.csv", csv({"laser_mhz", "counts_per_s"}, {&s.axis, &s.intensity}));

  json classes = json::array();
  for (std::size_t k = 0; k < probs.size(); ++k)
    classes.push_back({{"class", k},
                       {"probability", probs[k]},
                       {"count", per_class[k]},
                       {"fraction", double(per_class[k]) / double(mols.size())}});
  json report{{"n_molecules", mols.size()}, {"classes", classes}};
  if (n_triples > 0) {
    spectra::TripleFitOptions to;
    to.n_triples = static_cast<int>(n_triples);
    to.dxy_guess_mhz = spec.dxy_mhz;
    to.dxz_guess_mhz = spec.dxz_mhz;
    for (std::size_t k = 0; k < spec.class_shifts_mhz.size() && k < static_cast<std::size_t>(n_triples); ++k)
      to.center_guesses.push_back(ep.optical_lines_mhz[0] + spec.class_shifts_mhz[k]);
    to.width_guess_mhz = spec.inhomogeneous_fwhm_mhz;
    const auto tf = spectra::fit_lorentzian_triples(s, to);
    json triples = json::array();
    for (std::size_t t = 0; t < tf.triples.size(); ++t)
      triples.push_back({{"center_mhz", tf.triples[t].center_mhz},
                         {"relative_area", tf.relative_area[t]},
                         {"amplitude", tf.triples[t].amplitude},
                         {"fwhm_mhz", tf.triples[t].fwhm_mhz}});
    report["triple_fit"] = {{"dxy_mhz", tf.dxy_mhz}, {"dxz_mhz", tf.dxz_mhz}, {"triples", triples},
                            {"converged", tf.fit.converged}, {"warnings", tf.fit.warnings}};
  }
  x.write("isotope_fit.json", dump(report));
}

using RecipeFn = std::function<void(Ctx&)>;

const std::vector<std::pair<std::string, RecipeFn>>& registry() {
  static const std::vector<std::pair<std::string, RecipeFn>> r{
      {"odmr", recipe_odmr},
      {"excitation", recipe_excitation},
      {"rabi", recipe_rabi},
      {"hahn", [](Ctx& x) { recipe_echo(x, seq::EchoKind::hahn); }},
      {"xy8", [](Ctx& x) { recipe_echo(x, seq::EchoKind::xy8); }},
      {"t1", recipe_t1},
      {"g2-sim", recipe_g2_sim},
      {"g2-fit", recipe_g2_fit},
      {"tcspc-sim", recipe_tcspc_sim},
      {"tcspc-fit", recipe_tcspc_fit},
      {"epr-rotation", recipe_epr},
      {"dw-ratio", recipe_dw},
      {"isotope-spectrum", recipe_isotope},
  };
  return r;
}

// Config section read by each recipe, used by validate.
const std::map<std::string, std::string>& recipe_sections() {
  static const std::map<std::string, std::string> m{
      {"odmr", "odmr"},     {"excitation", "excitation"}, {"rabi", "rabi"},       {"hahn", "hahn"},
      {"xy8", "xy8"},       {"t1", "t1"},                 {"g2-sim", "g2"},       {"g2-fit", "g2_fit"},
      {"tcspc-sim", "tcspc"}, {"tcspc-fit", "tcspc_fit"}, {"epr-rotation", "epr"}, {"dw-ratio", "dw"},
      {"isotope-spectrum", "isotope"},
  };
  return m;
}

const RecipeFn& find_recipe(const std::string& name) {
  for (const auto& [n, f] : registry())
    if (n == name) return f;
  throw InvalidArgument("unknown recipe '" + name + "'");
}

}  // namespace

// ---------------------------------------------------------------- model

ModelConfig load_model(const cfg::Config& c) {
  ModelConfig m;
  auto& p = m.params;
  auto& bad = m.violations;
  p = photo::default_params();

  auto tensor = [&](const char* which, double d, double e, zfs::ZfsTensor& dst) {
    try {
      dst = zfs::ZfsTensor(d, e);
    } catch (const InvalidArgument& ex) {
      bad.push_back(std::string("[zfs] ") + which + ": " + ex.what());
    }
  };
  const double gd = c.get_double("zfs", "ground_d_mhz");
  const double ge = c.get_double("zfs", "ground_e_mhz");
  const double xd = c.get_double("zfs", "excited_d_mhz", p.excited.d_mhz());
  const double xe = c.get_double("zfs", "excited_e_mhz", p.excited.e_mhz());
  tensor("ground", gd, ge, p.ground);
  tensor("excited", xd, xe, p.excited);

  p.isc_rel = {c.get_double("rates", "isc_rel_x", p.isc_rel[0]), c.get_double("rates", "isc_rel_y", p.isc_rel[1]),
               c.get_double("rates", "isc_rel_z", p.isc_rel[2])};
  const double t_short = c.get_double("rates", "tau_short_ns", 4.8);
  const double t_long = c.get_double("rates", "tau_long_ns", 24.0);
  if (c.has("rates", "gamma_rad_per_ns") || c.has("rates", "isc_scale_per_ns")) {
    p.gamma_rad = c.get_double("rates", "gamma_rad_per_ns");
    p.isc_scale = c.get_double("rates", "isc_scale_per_ns");
  } else {
    try {
      const auto cal = photo::calibrate_isc_scale(t_short, t_long, p.isc_rel);
      p.gamma_rad = cal.gamma_rad;
      p.isc_scale = cal.isc_scale;
    } catch (const std::exception& ex) {
      bad.push_back(std::string("[rates] lifetime calibration: ") + ex.what());
    }
  }
  p.singlet_rate = c.get_double("rates", "singlet_rate_per_ns", photo::kDefaultSingletRate);
  p.singlet_branching = {c.get_double("rates", "singlet_branching_x", p.singlet_branching[0]),
                         c.get_double("rates", "singlet_branching_y", p.singlet_branching[1]),
                         c.get_double("rates", "singlet_branching_z", p.singlet_branching[2])};

  const double dxy = c.get_double("optics", "dxy_mhz", 1555.0);
  const double dxz = c.get_double("optics", "dxz_mhz", 16120.0);
  if (dxy > 0.0 && dxz > dxy)
    p.optical_lines_mhz = photo::optical_lines_from_separations(dxy, dxz);
  else
    bad.push_back("[optics] need 0 < dxy_mhz < dxz_mhz");
  p.laser_detuning_mhz = c.get_double("optics", "laser_detuning_mhz", 0.5 * dxy);
  p.homogeneous_linewidth_mhz = c.get_double("optics", "homogeneous_linewidth_mhz", p.homogeneous_linewidth_mhz);
  p.collection_efficiency = c.get_double("optics", "collection_efficiency", p.collection_efficiency);
  p.background_rate_per_ns = c.get_double("optics", "background_rate_per_ns", 0.0);

  const std::string drive = c.get_string("mw", "cw_drive", "both");
  const double cw = c.get_double("mw", "cw_rabi_mhz", photo::kDefaultCwRabiMhz);
  try {
    p.mw_drive = spectra::mw_drives(spectra::parse_mw_config(drive), cw);
  } catch (const InvalidArgument& ex) {
    bad.push_back(std::string("[mw] ") + ex.what());
  }

  p.t2_star_ns = c.get_double("coherence", "t2_star_ns", p.t2_star_ns);
  p.hahn.time_constant_ns = c.get_double("coherence", "hahn_t_ns", p.hahn.time_constant_ns);
  p.hahn.stretch = c.get_double("coherence", "hahn_beta", p.hahn.stretch);
  p.xy8.time_constant_ns = c.get_double("coherence", "xy8_t_ns", p.xy8.time_constant_ns);
  p.xy8.stretch = c.get_double("coherence", "xy8_beta", p.xy8.stretch);
  p.t1.time_constant_ns = c.get_double("coherence", "t1_ns", p.t1.time_constant_ns);

  // Pump rate last: calibration needs the rest of the model.
  if (c.has("optics", "laser_rate_per_ns")) {
    p.laser_rate_peak = c.get_double("optics", "laser_rate_per_ns");
  } else if (c.has("optics", "bunching_target_ns")) {
    const double target = c.get_double("optics", "bunching_target_ns");
    if (bad.empty() && p.violations().empty()) {
      try {
        p.laser_rate_peak = photo::calibrate_laser_rate(p, target);
      } catch (const std::exception& ex) {
        bad.push_back(std::string("[optics] bunching_target_ns: ") + ex.what());
      }
    }
  } else {
    c.get_double("optics", "laser_rate_per_ns", photo::kDefaultLaserRate);
  }

  for (auto& v : p.violations()) bad.push_back(std::move(v));
  return m;
}

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, f] : registry()) n.push_back(k);
    return n;
  }();
  return names;
}

bool is_recipe(const std::string& name) {
  const auto& n = recipe_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

json RunManifest::to_json() const {
  return {{"recipe", recipe},
          {"config", config_source},
          {"config_hash", hex64(config_hash)},
          {"seed", seed},
          {"version", version},
          {"started_utc", started_utc},
          {"finished_utc", finished_utc},
          {"outputs", outputs}};
}

RunManifest run_recipe(const std::string& recipe, const cfg::Config& c, const fs::path& out_dir, std::uint64_t seed) {
  const auto& fn = find_recipe(recipe);
  RunManifest m;
  m.recipe = recipe;
  m.config_source = c.source();
  m.seed = seed;
  m.started_utc = utc_now();
  Ctx x(c, out_dir, seed, false);
  fn(x);
  for (const auto& o : x.outputs)
    if (!fs::exists(out_dir / o)) throw std::runtime_error("output missing after run: " + o);
  m.outputs = x.outputs;
  m.config_hash = c.hash();
  m.finished_utc = utc_now();
  json j = m.to_json();
  j["effective_config"] = c.effective();
  io::write_file_atomic(out_dir / ("manifest_" + recipe + ".json"), dump(j));
  return m;
}

ValidationReport validate(const cfg::Config& c) {
  ValidationReport r;
  Ctx x(c, {}, 0, true);
  c.get_u64("run", "seed", 0);
  x.model();
  for (const auto& [name, section] : recipe_sections()) {
    if (!c.has_section(section)) continue;
    try {
      find_recipe(name)(x);
    } catch (const cfg::MissingKey&) {
      throw;
    } catch (const InvalidArgument& e) {
      x.violations.push_back(e.what());
    }
  }
  for (const auto& k : c.unused_keys()) x.violations.push_back("unknown key " + k);
  r.violations = x.violations;
  for (const auto& [k, v] : c.effective()) r.effective.push_back(k + " = " + v);
  return r;
}

std::string recipes_help() {
  return R"(Recipes and their outputs (all CSVs have a header row):
  odmr              odmr.csv: mw_mhz,counts_per_s          odmr_fit.json
  excitation        excitation.csv: laser_mhz,counts_none,counts_zx,counts_zy,counts_both
                    excitation.json
  rabi              rabi.csv: tau_ns,signal,sigma          rabi_fit.json
  hahn              hahn.csv: free_time_ns,signal,sigma,normalized,normalized_sigma
                    hahn_fit.json
  xy8               xy8.csv: free_time_ns,signal,sigma,normalized,normalized_sigma
                    xy8_fit.json
  t1                t1.csv: tau_ns,signal,sigma,normalized,normalized_sigma
                    t1_fit.json
  g2-sim            g2.csv, g2_expected.csv: tau_ns,g2,sigma,counts,expected
                    photons.bin (little-endian float64 timestamps, ns)  g2_sim.json
  g2-fit            g2_fit_curve.csv: tau_ns,g2,sigma,model    g2_fit.json
  tcspc-sim         tcspc.csv: t_lo_ns,t_hi_ns,counts      tcspc_sim.json
  tcspc-fit         tcspc_fit_curve.csv: t_lo_ns,t_hi_ns,counts,model,residual
                    tcspc_fit.json
  epr-rotation      epr_rotation.csv: angle_deg,site,field_mt,transition_pair
  dw-ratio          emission.csv: wavelength_nm,intensity (synthetic input only)  dw.json
  isotope-spectrum  isotope_molecules.csv: index,n_c13,class_label,line_shift_mhz
                    isotope_spectrum.csv: laser_mhz,counts_per_s   isotope_fit.json
  validate          prints the effective parameters and every violation

Every run also writes manifest_<recipe>.json. Any config key can be overridden with
the environment variable MOLSPIN_<SECTION>_<KEY>, e.g. MOLSPIN_ZFS_GROUND_D_MHZ.

Exit codes: 0 ok, 1 usage, 2 missing or unparsable config key,
3 invalid parameters, 4 numerical failure, 5 other runtime error.
)";
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spin and photon statistics simulations of single molecular triplet qubits.", "molspin"};
  app.footer(recipes_help());
  std::string recipe, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("recipe", recipe, "Recipe name, or 'validate'")->required();
  app.add_option("--config,-c", config_path, "Config file")->required();
  app.add_option("--out,-o", out_dir, "Output directory");
  app.add_option("--seed,-s", seed, "Random seed (default: [run] seed, else 0)");
  app.set_version_flag("--version", std::string(kVersion));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  if (recipe != "validate" && !is_recipe(recipe)) {
    err << "molspin: unknown recipe '" << recipe << "'. Run with --help for the list.\n";
    return kUsage;
  }
  if (recipe != "validate" && out_dir.empty()) {
    err << "molspin: --out is required for recipe '" << recipe << "'\n";
    return kUsage;
  }

  try {
    const auto c = cfg::Config::from_file(config_path);
    if (recipe == "validate") {
      const auto r = validate(c);
      out << "effective parameters (" << c.source() << "):\n";
      for (const auto& line : r.effective) out << "  " << line << "\n";
      if (r.ok()) {
        out << "valid\n";
        return kOk;
      }
      err << r.violations.size() << " violation(s):\n";
      for (const auto& v : r.violations) err << "  " << v << "\n";
      return kInvalid;
    }
    const std::uint64_t s = seed ? *seed : c.get_u64("run", "seed", 0);
    const auto m = run_recipe(recipe, c, out_dir, s);
    // Other recipes' sections may legitimately hold keys this run never read.
    const std::string own = recipe_sections().at(recipe) + ".";
    for (const auto& k : c.unused_keys())
      if (k.compare(0, own.size(), own) == 0) err << "molspin: warning: unused config key " << k << "\n";
    out << recipe << ": wrote " << m.outputs.size() + 1 << " files to " << out_dir << " (config hash "
        << hex64(m.config_hash) << ")\n";
    return kOk;
  } catch (const cfg::MissingKey& e) {
    err << "molspin: " << e.what() << "\n";
    return kConfigError;
  } catch (const cfg::BadValue& e) {
    err << "molspin: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidArgument& e) {
    err << "molspin: " << e.what() << "\n";
    return kInvalid;
  } catch (const NumericalError& e) {
    err << "molspin: numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "molspin: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace molspin::cli
