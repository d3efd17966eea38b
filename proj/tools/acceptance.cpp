// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "molspin/fitting.hpp"
#include "molspin/photon_stats.hpp"
#include "molspin/photophysics.hpp"
#include "molspin/sequences.hpp"
#include "molspin/spectra.hpp"
#include "molspin/zfs_spin.hpp"

using namespace molspin;

namespace {

// Fixed before any run; every stochastic check derives its seed from this.
constexpr std::uint64_t kSeed = 1;

std::vector<double> linspace(double a, double b, long n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) v[i] = a + (b - a) * double(i) / double(n - 1);
  return v;
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records one sub-check; the criterion passes only if all of them do.
  void check(bool ok, const char* fmt, ...) __attribute__((format(printf, 3, 4)));
};

void Outcome::check(bool ok, const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  if (!detail.empty()) detail += "; ";
  detail += buf;
  if (!ok) {
    detail += " [x]";
    pass = false;
  }
}

int failures = 0;

void run(int id, const char* title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, "exception: %s", e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0) o.check(secs < budget_s, "runtime %.2f s (limit %.0f s)", secs, budget_s);
  std::printf("%s [%2d] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

// ------------------------------------------------------------------ 1

void zfs_arithmetic(Outcome& o) {
  const auto g = zfs::ground_transition_frequencies(zfs::ZfsTensor(11159.7, -540.9));
  o.check(std::abs(g.f_zy_mhz - 10618.8) < 1e-6 && std::abs(g.f_zy_mhz - 10618.0) <= 1.0, "f_ZY %.1f MHz vs 10618",
          g.f_zy_mhz);
  o.check(std::abs(g.f_zx_mhz - 11700.6) < 1e-6 && std::abs(g.f_zx_mhz - 11700.0) <= 1.0, "f_ZX %.1f MHz vs 11700",
          g.f_zx_mhz);
  const auto ex = zfs::zfs_from_transitions(4423.0, 3958.0, zfs::SignConvention::excited);
  o.check(std::abs(ex.d_mhz() + 4190.5) < 1e-9 && std::abs(ex.e_mhz() - 232.5) < 1e-9, "excited D' %.1f E' %.1f MHz",
          ex.d_mhz(), ex.e_mhz());
}

// ------------------------------------------------------------------ 2

void rate_calibration(Outcome& o) {
  const std::array<double, 3> rel{0.009, 0.042, 0.949};
  const auto cal = photo::calibrate_isc_scale(4.8, 24.0, rel);
  photo::PhotophysicsParams p = photo::default_params();
  p.gamma_rad = cal.gamma_rad;
  p.isc_scale = cal.isc_scale;
  p.isc_rel = rel;
  p.laser_rate_peak = 0.0;
  p.mw_drive.clear();
  // Fed back through the assembled generator, not the closed form.
  const auto m = photo::build_rate_model(p);
  const double ty = 1.0 / m.outflow(photo::T1y);
  const double tz = 1.0 / m.outflow(photo::T1z);
  const double res = std::max(std::abs(ty - 24.0), std::abs(tz - 4.8));
  o.check(res < 1e-9, "gamma %.6g K %.6g /ns, lifetime residual %.1e ns", cal.gamma_rad, cal.isc_scale, res);
  const double lw = photo::lifetime_limited_linewidth(24.0);
  o.check(std::abs(lw - 6.63) < 0.005 && std::abs(lw - 6.6) <= 0.5, "linewidth(24 ns) %.3f MHz vs 6.6(5)", lw);
}

// ------------------------------------------------------------------ 3

// Half-maximum interval around the maximum of y.
std::pair<double, double> half_max_interval(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t im = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double half = 0.5 * y[im];
  std::size_t l = im, r = im;
  while (l > 0 && y[l - 1] > half) --l;
  while (r + 1 < y.size() && y[r + 1] > half) ++r;
  return {x[l], x[r]};
}

void mw_contrast(Outcome& o) {
  const auto base = photo::default_params();
  const auto grid = linspace(-1500.0, 1500.0, 3001);
  const auto off = spectra::excitation_spectrum(base, {0.0}, grid, spectra::MwConfig::none);
  const std::array<double, 3>& lines = base.optical_lines_mhz;
  for (auto [cfg, line, name] : {std::tuple{spectra::MwConfig::zy, 1, "ZY"}, std::tuple{spectra::MwConfig::zx, 0, "ZX"}}) {
    const auto on = spectra::excitation_spectrum(base, {0.0}, grid, cfg);
    std::vector<double> gain(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) gain[i] = on.intensity[i] - off.intensity[i];
    const std::size_t im = static_cast<std::size_t>(std::max_element(gain.begin(), gain.end()) - gain.begin());
    const double arg = grid[im];
    const auto [lo, hi] = half_max_interval(grid, gain);
    int nearest = 0;
    for (int k = 1; k < 3; ++k)
      if (std::abs(arg - lines[k]) < std::abs(arg - lines[nearest])) nearest = k;
    const bool on_line = nearest == line && lines[line] >= lo && lines[line] <= hi;
    if (cfg == spectra::MwConfig::zy) {
      // Laser parked on the Y line, as in the default single-molecule setup.
      auto pon = base;
      pon.mw_drive = spectra::mw_drives(spectra::MwConfig::zy, photo::kDefaultCwRabiMhz);
      auto poff = base;
      poff.mw_drive.clear();
      const double fon = photo::fluorescence_rate(photo::steady_state(photo::build_rate_model(pon)), pon);
      const double foff = photo::fluorescence_rate(photo::steady_state(photo::build_rate_model(poff)), poff);
      o.check(fon >= 10.0 * foff, "ZY on/off at the Y line %.3g", fon / foff);
    }
    o.check(on_line, "%s enhancement argmax %.0f MHz, half max [%.0f, %.0f] contains line %.1f", name, arg, lo, hi,
            lines[line]);
  }
}

// ------------------------------------------------------------------ 4

void g2_pipeline(Outcome& o) {
  auto p = photo::default_params();
  auto model = photo::build_rate_model(p);
  model.collection_efficiency = 0.5;
  model.background_rate_per_ns = 0.0;
  const double signal = photo::fluorescence_rate(photo::steady_state(model), model);
  const double rho = std::sqrt(1.0 - 0.142);
  model.background_rate_per_ns = signal * (1.0 - rho) / rho;

  const double jitter = 0.425, bin = 5.0, max_tau = 3000.0;
  const double sig = photon::irf_sigma(jitter, bin);
  o.check(std::abs(sig - 1.563) < 1e-3 && std::abs(sig - 1.56) < 0.005, "sigma_total %.4f ns vs 1.56", sig);

  photon::StreamOptions so;
  so.max_jumps = 10000000;
  so.timing_jitter_ns = jitter;
  photon::StreamStats st;
  const auto rec = photon::simulate_photon_stream(model, 1e12, kSeed, so, &st);
  const auto h = photon::g2_histogram(rec, bin, max_tau);

  photon::G2Params init;
  init.sigma_total_ns = sig;
  photon::G2FitOptions fo;
  fo.n_mc = 0;
  auto ref = photon::expected_g2_histogram(model, bin, max_tau, jitter);
  ref.sigma = h.sigma;
  const auto cfg = photon::fit_g2(ref, init, fo).params;

  fo.n_mc = 1000;
  fo.seed = kSeed;
  const auto f = photon::fit_g2(h, init, fo);
  o.check(st.jumps == so.max_jumps, "%ld jumps, %zu photons, %ld coincidences", st.jumps, rec.timestamps_ns.size(),
          h.coincidences);
  const double g0_err = f.params.g0 < cfg.g0 ? f.g0_upper_error : f.g0_lower_error;
  o.check(std::abs(f.params.g0 - cfg.g0) <= g0_err, "g0 %.3f (+%.3f/-%.3f) vs %.3f", f.params.g0, f.g0_upper_error,
          f.g0_lower_error, cfg.g0);
  for (auto [name, got, want] : {std::tuple{"tau_anti", f.params.tau_anti_ns, cfg.tau_anti_ns},
                                 std::tuple{"tau_bunch", f.params.tau_bunch_ns, cfg.tau_bunch_ns}}) {
    const double err = f.fit.error(name);
    o.check(std::abs(got - want) <= err, "%s %.2f(%.2f) vs %.2f ns", name, got, err, want);
  }

  // Target set (28, 245 ns): Poisson counts drawn around the model on the
  // stream's uncorrelated-coincidence baseline.
  photon::G2Params target;
  target.tau_anti_ns = 28.0;
  target.tau_bunch_ns = 245.0;
  target.sigma_total_ns = sig;
  photon::G2Histogram t = h;
  std::mt19937_64 rng(splitmix64(kSeed));
  for (std::size_t i = 0; i < t.tau_ns.size(); ++i) {
    const double mu = h.expected[i] * photon::g2_model(t.tau_ns[i], target);
    t.counts[i] = double(std::poisson_distribution<long>(mu)(rng));
    t.g2[i] = t.counts[i] / h.expected[i];
    t.sigma[i] = std::sqrt(std::max(t.counts[i], 1.0)) / h.expected[i];
  }
  const auto ft = photon::fit_g2(t, init, fo);
  o.check(ft.params.g0 + ft.g0_upper_error < 0.5, "28/245 set: g0 + upper %.3f (tau %.1f, %.1f ns)",
          ft.params.g0 + ft.g0_upper_error, ft.params.tau_anti_ns, ft.params.tau_bunch_ns);
}

// ------------------------------------------------------------------ 5

void sequences(Outcome& o) {
  const auto p = photo::default_params();
  const seq::RunOptions run{10000, splitmix64(kSeed)};
  {
    seq::EchoOptions e;
    e.run = run;
    const double span = p.hahn.time_constant_ns * std::pow(5.0, 1.0 / p.hahn.stretch);
    const auto r = seq::run_echo_family(p, seq::EchoKind::hahn, linspace(0.0, span, 400), e);
    const double t = r.fit.value("T"), b = r.fit.value("beta");
    o.check(std::abs(t / 12200.0 - 1.0) <= 0.05 && std::abs(b - 1.7) <= 0.2, "Hahn T %.0f ns beta %.2f", t, b);
  }
  {
    seq::EchoOptions e;
    e.run = run;
    const double span = p.xy8.time_constant_ns * std::pow(5.0, 1.0 / p.xy8.stretch);
    const long bmax = std::lround(span / (8.0 * e.pulse_spacing_ns));
    std::vector<double> grid;
    for (double b : linspace(1.0, double(bmax), 1000)) grid.push_back(std::round(b));
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    const auto r = seq::run_echo_family(p, seq::EchoKind::xy8, grid, e);
    const double t = r.fit.value("T"), b = r.fit.value("beta");
    o.check(std::abs(t / 2.2e6 - 1.0) <= 0.05 && std::abs(b - 0.9) <= 0.2, "XY8 T %.3g ns beta %.2f", t, b);
  }
  {
    const auto r = seq::run_t1(p, linspace(0.0, 5.0 * 21e6, 1000), run);
    const double t = r.fit.value("T");
    o.check(std::abs(t / 21e6 - 1.0) <= 0.05, "T1 %.4g ns", t);
  }
  {
    const auto c = seq::run_rabi(p, linspace(0.0, 2000.0, 201), 3.7, run);
    const double f = fit::fit_damped_cosine(c.as_curve_data()).value("freq") * 1e3;
    o.check(std::abs(f / 3.7 - 1.0) <= 0.01, "Rabi %.4f MHz", f);
  }
}

// ------------------------------------------------------------------ 6

void isotopes(Outcome& o) {
  spectra::IsotopeEnsembleSpec spec;
  spec.n_molecules = 100000;
  const auto mols = spectra::sample_isotope_ensemble(spec, kSeed);
  const double frac =
      double(std::count_if(mols.begin(), mols.end(), [](const auto& m) { return m.n_c13 == 0; })) / double(mols.size());
  const double sigma = std::sqrt(0.758 * (1.0 - 0.758) / double(mols.size()));
  o.check(std::abs(frac - 0.758) <= 3.0 * sigma, "all-12C fraction %.4f vs 0.758 (3 sigma %.4f)", frac, 3.0 * sigma);

  const std::vector<double> weights{0.789, 0.13, 0.05, 0.021, 0.01};
  const std::vector<double> centers{-777.5, 5222.5, 11222.5, 17222.5, 23222.5};
  const std::array<double, 3> share{0.45, 0.45, 0.10};
  std::vector<spectra::TripleLines> truth;
  for (int k = 0; k < 5; ++k) {
    spectra::TripleLines tl;
    tl.center_mhz = centers[k];
    tl.fwhm_mhz = {900.0, 1000.0, 1100.0};
    for (int l = 0; l < 3; ++l) tl.amplitude[l] = weights[k] * share[l] / (0.5 * std::numbers::pi * tl.fwhm_mhz[l]);
    truth.push_back(tl);
  }
  const auto s = spectra::synthetic_triple_spectrum(linspace(-8000.0, 45000.0, 2651), truth, 1555.0, 16120.0, 1e-6);
  const auto r = spectra::fit_lorentzian_triples(s);
  o.check(std::abs(r.relative_area[0] - 0.789) < 0.02, "5-triple main area %.4f vs 0.789", r.relative_area[0]);
}

// ------------------------------------------------------------------ 7

void correlation(Outcome& o) {
  spectra::FewMoleculeSpec spec;
  spec.n_molecules = 3;
  const auto xy =
      spectra::simulate_few_molecule_spectra(photo::default_params(), spec, linspace(-6000.0, 6000.0, 2401), kSeed);
  const auto pk = spectra::fit_correlation_peak(spectra::cross_correlate(xy.y, xy.x), 1555.0, 150.0);
  o.check(std::abs(pk.center - 1555.0) <= 5.0, "peak %.1f MHz", pk.center);
  o.check(std::abs(pk.fwhm / 38.0 - 3.0) <= 0.5, "width %.1f MHz = %.2fx 38 MHz", pk.fwhm, pk.fwhm / 38.0);
}

// ------------------------------------------------------------------ 8

void tcspc(Outcome& o) {
  const double rows[4][4] = {
      {4.8, 0.43, 22.3, 0.57}, {5.1, 0.39, 26.2, 0.62}, {4.7, 0.51, 26.2, 0.49}, {3.9, 0.62, 25.1, 0.37}};
  int k = 0;
  for (const auto& r : rows) {
    photon::TcspcParams tp;
    tp.components = {{r[0], r[1]}, {r[2], r[3]}};
    const long pulses = std::lround(1e6 / tp.detection_probability);
    const auto h = photon::simulate_tcspc(tp, 200.0, pulses, 0.2, splitmix64(kSeed + k++));
    const auto f = photon::fit_biexponential_reconvolution(h, photon::Irf{0.2, {}});
    const double a1 = r[1] / (r[1] + r[3]);
    const bool ok = std::abs(f.tau1_ns / r[0] - 1.0) <= 0.1 && std::abs(f.tau2_ns / r[2] - 1.0) <= 0.1 &&
                    std::abs(f.a1 - a1) <= 0.05;
    o.check(ok, "%.1f/%.2f/%.1f -> %.2f/%.3f/%.2f", r[0], a1, r[2], f.tau1_ns, f.a1, f.tau2_ns);
  }
}

// ------------------------------------------------------------------ 9

double pair_mismatch(const zfs::ZfsTensor& t, const Eigen::Vector3d& dir, double g, const zfs::Resonance& r,
                     double nu) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(zfs::spin_hamiltonian(t, {dir.normalized() * r.field_mt, g}));
  const auto ev = es.eigenvalues();
  return std::abs(ev[r.upper] - ev[r.lower] - nu);
}

void epr(Outcome& o) {
  const zfs::ZfsTensor site1(11159.7, -540.9);
  const double g = constants::free_electron_g, nu = 9700.0;
  std::mt19937_64 rng(splitmix64(kSeed));
  std::normal_distribution<double> n01;
  double worst = 0.0;
  long count = 0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d dir(n01(rng), n01(rng), n01(rng));
    zfs::ResonanceOptions ro;
    ro.include_double_quantum = i % 2 == 1;
    for (const auto& r : zfs::resonance_fields(site1, dir, g, nu, 0.0, 1500.0, ro)) {
      worst = std::max(worst, pair_mismatch(site1, dir, g, r, nu));
      ++count;
    }
  }

  zfs::RotationDispersionConfig rc;
  rc.angles_deg = linspace(0.0, 179.0, 180);
  const auto t0 = std::chrono::steady_clock::now();
  const auto sweep = zfs::rotation_dispersion(site1, rc);
  const double sweep_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(worst < 0.05, "%ld resonances over 200 directions, worst residual %.2e MHz", count, worst);

  const auto free = zfs::resonance_fields(zfs::ZfsTensor(0.0, 0.0), {0, 0, 1}, g, nu, 0.0, 800.0);
  o.check(free.size() == 1 && std::abs(free[0].field_mt - 346.1) <= 0.1, "D=E=0 line %.3f mT",
          free.empty() ? 0.0 : free[0].field_mt);

  rc.site_tilt_deg = 0.0;
  const auto t1 = std::chrono::steady_clock::now();
  const auto flat = zfs::rotation_dispersion(site1, rc);
  const double flat_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  double gap = 0.0;
  bool same_count = true;
  for (double a : rc.angles_deg) {
    std::vector<double> s1, s2;
    for (const auto& pt : flat)
      if (pt.angle_deg == a) (pt.site == 1 ? s1 : s2).push_back(pt.resonance.field_mt);
    if (s1.size() != s2.size() || s1.empty()) {
      same_count = false;
      continue;
    }
    for (std::size_t i = 0; i < s1.size(); ++i) gap = std::max(gap, std::abs(s1[i] - s2[i]));
  }
  o.check(same_count && gap < 1e-6, "tilt 0: max site gap %.1e mT over 180 angles", gap);
  o.check(sweep_s < 30.0 && flat_s < 30.0, "180-point sweeps %.2f / %.2f s", sweep_s, flat_s);
}

// ----------------------------------------------------------------- 10

void oracles(Outcome& o) {
  // KMC occupancy vs the steady state of the sampled generator.
  double worst_z = 0.0;
  bool kmc_ok = true;
  for (bool mw : {false, true}) {
    auto p = photo::default_params();
    if (!mw) {
      p.mw_drive.clear();
      p.laser_rate_peak = 0.02;
    }
    const auto m = photo::build_rate_model(p);
    const auto ss = photo::steady_state(photon::jump_model(m));
    std::vector<std::vector<double>> frac(photo::kLevels);
    for (int s = 0; s < 12; ++s) {
      photon::StreamOptions so;
      so.max_jumps = 100000;
      photon::StreamStats st;
      const auto rec = photon::simulate_photon_stream(m, 1e15, splitmix64(kSeed) + s, so, &st);
      for (int l = 0; l < photo::kLevels; ++l) frac[l].push_back(st.occupancy_ns[l] / rec.total_duration_ns);
    }
    for (int l = 0; l < photo::kLevels; ++l) {
      const double sem = stddev(frac[l]) / std::sqrt(double(frac[l].size()));
      const double dev = std::abs(mean(frac[l]) - ss.populations[l]);
      // Levels visited too rarely to show a spread (T1z ~ 1e-8) get a 1e-6 floor.
      if (dev > 3.0 * sem + 1e-6) kmc_ok = false;
      if (sem > 0.0) worst_z = std::max(worst_z, dev / sem);
    }
  }
  o.check(kmc_ok, "KMC vs steady state, worst %.2f sigma", worst_z);

  // Analytic IRF-convolved g2 vs quadrature.
  photon::G2Params g;
  g.amplitude = 2.0;
  g.tau0_ns = 0.7;
  g.sigma_total_ns = 1.563;
  photon::G2Params ideal = g;
  ideal.sigma_total_ns = 0.0;
  double worst_conv = 0.0;
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  for (double tau = -500.0; tau <= 500.0; tau += 2.5) {
    const double s = g.sigma_total_ns;
    auto f = [&](double x) {
      return photon::g2_model(tau - x, ideal) * std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
    };
    const double cusp = tau - g.tau0_ns, lo = -12.0 * s, hi = 12.0 * s;
    const double brute = (cusp > lo && cusp < hi) ? GK::integrate(f, lo, cusp, 10, 1e-13) + GK::integrate(f, cusp, hi, 10, 1e-13)
                                                  : GK::integrate(f, lo, hi, 10, 1e-13);
    worst_conv = std::max(worst_conv, std::abs(brute - photon::g2_model(tau, g)));
  }
  o.check(worst_conv < 1e-6, "convolution max diff %.1e", worst_conv);

  // Pump k, decay a to T0y and s to the T0z trap: closed-form populations.
  using namespace photo;
  const double k = 0.05, a = 1.0 / 29.5, s = 0.0077;
  RateModel m;
  m.generator(T1y, T0y) = k;
  m.generator(T0y, T0y) = -k;
  m.generator(T0y, T1y) = a;
  m.generator(T0z, T1y) = s;
  m.generator(T1y, T1y) = -(a + s);
  m.emission(T0y, T1y) = a;
  const double tr = k + a + s;
  const double disc = std::sqrt(tr * tr - 4.0 * k * s);
  const double lp = 0.5 * (-tr + disc), lm = 0.5 * (-tr - disc);
  const auto ts = evolve(m, SystemState::pure(T0y), 600.0, 0.1 / fastest_rate(m));
  double worst = 0.0;
  for (std::size_t i = 0; i < ts.t_ns.size(); ++i) {
    const double t = ts.t_ns[i];
    const double p1 = k * (std::exp(lp * t) - std::exp(lm * t)) / (lp - lm);
    const double dp1 = k * (lp * std::exp(lp * t) - lm * std::exp(lm * t)) / (lp - lm);
    const double p0 = (dp1 + (a + s) * p1) / k;
    worst = std::max({worst, std::abs(ts.states[i].populations[T0y] - p0), std::abs(ts.states[i].populations[T1y] - p1),
                      std::abs(ts.states[i].populations[T0z] - (1.0 - p0 - p1))});
  }
  o.check(worst < 1e-6, "3-level cascade max diff %.1e", worst);
}

// ----------------------------------------------------------------- 11

void debye_waller(Outcome& o) {
  spectra::EmissionSpec e;
  e.zpl_weight = 0.1947;
  e.background = 3.0;
  const auto s = spectra::synthetic_emission_spectrum(linspace(580.0, 730.0, 15001), e);
  const double dw = spectra::debye_waller(s, {e.zpl_center_nm - 0.5, e.zpl_center_nm + 0.5}, 720.0, 590.0);
  o.check(std::abs(dw - 0.1947) <= 0.005, "DW %.4f vs 0.1947 (background %.1f subtracted)", dw, e.background);
}

}  // namespace

int main() {
  run(1, "ZFS arithmetic", 0.0, zfs_arithmetic);
  run(2, "rate calibration", 0.0, rate_calibration);
  run(3, "MW shelving contrast", 1.0, mw_contrast);
  run(4, "g2 pipeline", 300.0, g2_pipeline);
  run(5, "sequence round trips", 120.0, sequences);
  run(6, "isotope statistics", 30.0, isotopes);
  run(7, "cross-correlation", 10.0, correlation);
  run(8, "TCSPC reconvolution", 60.0, tcspc);
  run(9, "EPR resonance fields", 0.0, epr);
  run(10, "oracle equivalence", 120.0, oracles);
  run(11, "Debye-Waller", 1.0, debye_waller);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
