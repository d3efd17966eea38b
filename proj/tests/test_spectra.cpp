#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "molspin/error.hpp"
#include "molspin/spectra.hpp"
#include "molspin/zfs_spin.hpp"

using namespace molspin;
using namespace molspin::spectra;

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

Spectrum window(const Spectrum& s, double lo, double hi) {
  Spectrum w;
  for (std::size_t i = 0; i < s.axis.size(); ++i)
    if (s.axis[i] >= lo && s.axis[i] <= hi) {
      w.axis.push_back(s.axis[i]);
      w.intensity.push_back(s.intensity[i]);
    }
  return w;
}

Spectrum negate(Spectrum s) {
  for (double& v : s.intensity) v = -v;
  return s;
}

// Half-maximum width above the minimum, by linear interpolation.
double fwhm_of(const Spectrum& s) {
  const auto& y = s.intensity;
  const std::size_t im = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double half = 0.5 * (y[im] + *std::min_element(y.begin(), y.end()));
  std::size_t l = im, r = im;
  while (l > 0 && y[l] > half) --l;
  while (r + 1 < y.size() && y[r] > half) ++r;
  const double xl = s.axis[l] + (half - y[l]) * (s.axis[l + 1] - s.axis[l]) / (y[l + 1] - y[l]);
  const double xr = s.axis[r] + (half - y[r]) * (s.axis[r - 1] - s.axis[r]) / (y[r - 1] - y[r]);
  return xr - xl;
}

photo::PhotophysicsParams weak_probe() {
  photo::PhotophysicsParams p = photo::default_params();
  p.laser_rate_peak *= 0.02;
  return p;
}

}  // namespace

TEST_CASE("spectrum validation") {
  Spectrum s{{1.0, 2.0, 3.0}, {0.0, 1.0, 0.0}, {}};
  CHECK_NOTHROW(s.validate());
  CHECK(s.uniform_step() == doctest::Approx(1.0));
  CHECK(s.argmax() == 2.0);
  Spectrum down{{3.0, 2.0, 1.0}, {0.0, 1.0, 0.0}, {}};
  CHECK_NOTHROW(down.validate());
  CHECK_THROWS_AS(down.uniform_step(), InvalidArgument);
  CHECK_THROWS_AS((Spectrum{{1.0, 1.0}, {0.0, 0.0}, {}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((Spectrum{{1.0, 2.0}, {0.0}, {}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((Spectrum{{1.0, 2.0}, {0.0, NAN}, {}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((Spectrum{{1.0, 2.0, 4.0}, {0.0, 0.0, 0.0}, {}}.uniform_step()), InvalidArgument);
}

TEST_CASE("ODMR peaks sit on the ground transitions") {
  const auto p = photo::default_params();
  const auto gt = zfs::ground_transition_frequencies(p.ground);
  CHECK(gt.f_zy_mhz == doctest::Approx(10618.8).epsilon(1e-9));
  CHECK(gt.f_zx_mhz == doctest::Approx(11700.6).epsilon(1e-9));
  for (double f0 : {gt.f_zy_mhz, gt.f_zx_mhz}) {
    CAPTURE(f0);
    const auto s = odmr_spectrum(p, linspace(f0 - 3.0, f0 + 3.0, 301), 40.0, {-777.5, 777.5});
    const auto f = fit_lorentzian(s);
    CHECK(std::abs(f.value("x0") - f0) < 1e-3);
    CHECK(f.value("A") > 0.0);
  }
}

TEST_CASE("ODMR contrast vanishes without MW and power-broadens with it") {
  const auto p = photo::default_params();
  const double f0 = 10618.8;
  const auto grid = linspace(f0 - 3.0, f0 + 3.0, 121);
  const auto off = odmr_spectrum(p, grid, 0.0);
  const double lo = *std::min_element(off.intensity.begin(), off.intensity.end());
  CHECK(off.max_intensity() - lo <= 1e-9 * off.max_intensity());
  const auto full = fit_lorentzian(odmr_spectrum(p, grid, 40.0));
  const auto half = fit_lorentzian(odmr_spectrum(p, grid, 20.0));
  const auto quarter = fit_lorentzian(odmr_spectrum(p, grid, 10.0));
  CHECK(half.value("fwhm") < full.value("fwhm"));
  CHECK(quarter.value("fwhm") < half.value("fwhm"));
  CHECK_THROWS_AS(odmr_spectrum(p, grid, -1.0), InvalidArgument);
}

TEST_CASE("single molecule with both drives: two 38 MHz lines split by 1555 MHz") {
  const auto p = weak_probe();
  const auto s = excitation_spectrum(p, {0.0}, linspace(-1000.0, 1000.0, 2001), MwConfig::both);
  const auto fx = fit_lorentzian(window(s, -1000.0, 0.0), 150.0);
  const auto fy = fit_lorentzian(window(s, 0.0, 1000.0), 150.0);
  CHECK(fy.value("x0") - fx.value("x0") == doctest::Approx(1555.0).epsilon(1e-4));
  CHECK(fx.value("fwhm") == doctest::Approx(38.0).epsilon(0.03));
  CHECK(fy.value("fwhm") == doctest::Approx(38.0).epsilon(0.03));
  // At the calibrated pump rate the lines sit in mild saturation.
  const auto sd = excitation_spectrum(photo::default_params(), {0.0}, linspace(-1000.0, 0.0, 1001), MwConfig::both);
  const auto fd = fit_lorentzian(sd, 150.0);
  CHECK(fd.value("fwhm") > fx.value("fwhm"));
  CHECK(fd.value("fwhm") < 1.2 * 38.0);
}

TEST_CASE("excitation spectrum MW selectivity") {
  const auto p = photo::default_params();
  const auto lines = p.optical_lines_mhz;
  const std::vector<double> pts{lines[0], lines[1], lines[2]};
  const auto none = excitation_spectrum(p, {0.0}, pts, MwConfig::none);
  const auto zx = excitation_spectrum(p, {0.0}, pts, MwConfig::zx);
  const auto zy = excitation_spectrum(p, {0.0}, pts, MwConfig::zy);
  // No MW: shelved in T0z, so the Z line is the strongest.
  CHECK(none.intensity[2] > none.intensity[0]);
  CHECK(none.intensity[2] > none.intensity[1]);
  CHECK(zx.intensity[0] > 10.0 * zy.intensity[0]);
  CHECK(zy.intensity[1] > 10.0 * zx.intensity[1]);
}

TEST_CASE("X-line enhancement is larger under ZX than under ZY for random parameters") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    auto p = photo::default_params();
    p.gamma_rad = 0.02 + 0.04 * u(rng);
    p.isc_scale = 0.05 + 0.3 * u(rng);
    p.laser_rate_peak = 1e-4 + 0.02 * u(rng);
    p.singlet_rate = 0.005 + 0.05 * u(rng);
    const double rabi = 0.1 + 2.0 * u(rng);
    const double x = p.optical_lines_mhz[0];
    const double none = excitation_spectrum(p, {0.0}, {x, x + 1.0}, MwConfig::none, rabi).intensity[0];
    const double zx = excitation_spectrum(p, {0.0}, {x, x + 1.0}, MwConfig::zx, rabi).intensity[0];
    const double zy = excitation_spectrum(p, {0.0}, {x, x + 1.0}, MwConfig::zy, rabi).intensity[0];
    CAPTURE(trial);
    CHECK(zx / none > zy / none);
  }
}

TEST_CASE("ensemble with both drives: one ~3 GHz composite peak, >= 10x over MW off") {
  const auto p = photo::default_params();
  IsotopeEnsembleSpec spec;
  spec.n_molecules = 2000;
  spec.c13_abundance = 0.0;
  const auto mol = sample_isotope_ensemble(spec, 4);
  const auto grid = linspace(-8000.0, 8000.0, 401);
  const auto both = excitation_spectrum(p, line_shifts(mol), grid, MwConfig::both);
  const auto none = excitation_spectrum(p, line_shifts(mol), grid, MwConfig::none);
  const double w = fwhm_of(both);
  CHECK(w > 2700.0);
  CHECK(w < 3700.0);
  CHECK(std::abs(both.argmax()) < 800.0);
  CHECK(both.intensity[200] / none.intensity[200] >= 10.0);
}

TEST_CASE("line response interpolation matches direct steady state") {
  const auto p = photo::default_params();
  const LineResponse r(p, MwConfig::both, -1000.0, 1000.0);
  for (double d : {-777.5, -760.3, 12.7, 790.1}) {
    auto q = p;
    q.mw_drive = mw_drives(MwConfig::both, photo::kDefaultCwRabiMhz);
    q.laser_detuning_mhz = d;
    const auto m = photo::build_rate_model(q);
    const double direct = photo::fluorescence_rate(photo::steady_state(m), m) * 1e9;
    CHECK(r(d) == doctest::Approx(direct).epsilon(1e-3));
  }
  CHECK_THROWS_AS(r(2000.0), InvalidArgument);
}

TEST_CASE("MW config parsing") {
  CHECK(parse_mw_config("both") == MwConfig::both);
  CHECK(parse_mw_config("ZX") == MwConfig::zx);
  CHECK(to_string(MwConfig::zy) == "zy");
  CHECK_THROWS_AS(parse_mw_config("xy"), InvalidArgument);
  CHECK(mw_drives(MwConfig::none, 1.0).empty());
  CHECK(mw_drives(MwConfig::both, 1.0).size() == 2);
}

TEST_CASE("isotope sampler: all-12C fraction and class frequencies") {
  IsotopeEnsembleSpec spec;
  spec.n_molecules = 100000;
  const auto probs = isotope_class_probabilities(spec);
  CHECK(probs[0] == doctest::Approx(std::pow(0.989, 25)).epsilon(1e-12));
  CHECK(probs[0] == doctest::Approx(0.758).epsilon(1e-3));
  CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  const auto mol = sample_isotope_ensemble(spec, 2024);
  std::vector<long> counts(probs.size(), 0);
  for (const auto& m : mol) {
    ++counts[m.class_label];
    CHECK_FALSE(m.n_c13 < 0);
  }
  const double n = static_cast<double>(spec.n_molecules);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double sigma = std::sqrt(n * probs[k] * (1.0 - probs[k]));
    CAPTURE(k);
    CHECK(std::abs(counts[k] - n * probs[k]) <= std::max(4.0 * sigma, 1.0));
  }
  CHECK(std::abs(counts[0] - n * 0.758) <= 3.0 * std::sqrt(n * 0.758 * 0.242) + 0.0003 * n);
}

TEST_CASE("isotope sampler edge cases") {
  IsotopeEnsembleSpec spec;
  spec.n_molecules = 20000;
  spec.c13_abundance = 0.0;
  const auto pure = sample_isotope_ensemble(spec, 1);
  double mean = 0.0, var = 0.0;
  for (const auto& m : pure) {
    CHECK(m.class_label == 0);
    mean += m.line_shift_mhz;
  }
  mean /= pure.size();
  for (const auto& m : pure) var += (m.line_shift_mhz - mean) * (m.line_shift_mhz - mean);
  const double sd = std::sqrt(var / (pure.size() - 1));
  CHECK(std::abs(mean) < 5.0 * 1274.0 / std::sqrt(20000.0));
  CHECK(sd == doctest::Approx(3000.0 / 2.3548200450309493).epsilon(0.03));

  spec.c13_abundance = 1.0;
  spec.n_molecules = 100;
  for (const auto& m : sample_isotope_ensemble(spec, 1)) {
    CHECK(m.n_c13 == 25);
    CHECK(m.class_label == 4);
  }
  spec.c13_abundance = 1.5;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec.c13_abundance = 0.1;
  spec.dxy_mhz = 0.0;
  CHECK_THROWS_AS(sample_isotope_ensemble(spec, 1), InvalidArgument);
}

TEST_CASE("ensemble params take lines from the separations") {
  IsotopeEnsembleSpec spec;
  const auto p = ensemble_params(photo::default_params(), spec);
  CHECK(p.optical_lines_mhz[1] - p.optical_lines_mhz[0] == doctest::Approx(1555.0));
  CHECK(p.optical_lines_mhz[2] - p.optical_lines_mhz[0] == doctest::Approx(16120.0));
}

TEST_CASE("five-triple fit recovers centers and the main-class area") {
  const std::vector<double> weights{0.789, 0.13, 0.05, 0.021, 0.01};
  const std::vector<double> centers{-777.5, 5222.5, 11222.5, 17222.5, 23222.5};
  std::vector<TripleLines> truth;
  for (int t = 0; t < 5; ++t) {
    TripleLines tl;
    tl.center_mhz = centers[t];
    tl.fwhm_mhz = {900.0, 1000.0, 1100.0};
    // Split the class area over the three lines as 0.45 / 0.45 / 0.10.
    const std::array<double, 3> share{0.45, 0.45, 0.10};
    for (int l = 0; l < 3; ++l) tl.amplitude[l] = weights[t] * share[l] / (0.5 * std::numbers::pi * tl.fwhm_mhz[l]);
    truth.push_back(tl);
  }
  const auto axis = linspace(-8000.0, 45000.0, 2651);
  const auto s = synthetic_triple_spectrum(axis, truth, 1555.0, 16120.0, 1e-6);
  const auto r = fit_lorentzian_triples(s);
  REQUIRE(r.triples.size() == 5);
  CHECK(r.relative_area[0] == doctest::Approx(0.789).epsilon(0.02 / 0.789));
  CHECK(std::abs(r.relative_area[0] - 0.789) < 0.02);
  CHECK(r.dxy_mhz == doctest::Approx(1555.0).epsilon(1e-3));
  CHECK(r.dxz_mhz == doctest::Approx(16120.0).epsilon(1e-3));
  std::vector<double> fitted;
  for (const auto& t : r.triples) fitted.push_back(t.center_mhz);
  for (int t = 0; t < 5; ++t) {
    CAPTURE(t);
    CHECK(std::abs(fitted[t] - centers[t]) < 0.01 * 900.0);
  }
}

TEST_CASE("one-triple fit on a single Lorentzian leaves the empty slots near zero") {
  const auto axis = linspace(-3000.0, 20000.0, 1151);
  const auto s = synthetic_triple_spectrum(axis, {{0.0, {1.0, 0.0, 0.0}, {40.0, 40.0, 40.0}}}, 1555.0, 16120.0);
  TripleFitOptions o;
  o.n_triples = 1;
  o.width_guess_mhz = 50.0;
  const auto r = fit_lorentzian_triples(s, o);
  CHECK(r.triples[0].amplitude[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(std::abs(r.triples[0].amplitude[1]) < 1e-4);
  CHECK(std::abs(r.triples[0].amplitude[2]) < 1e-4);
  CHECK_THROWS_AS(fit_lorentzian_triples(s, {0}), InvalidArgument);
}

TEST_CASE("cross-correlation matches the discrete formula") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 40;
  Spectrum a, b;
  for (int i = 0; i < n; ++i) {
    a.axis.push_back(2.0 * i);
    b.axis.push_back(2.0 * i);
    a.intensity.push_back(u(rng));
    b.intensity.push_back(u(rng));
  }
  const auto d = cross_correlate(a, b, n - 1);
  REQUIRE(d.axis.size() == 2 * n - 1);
  for (int k = -(n - 1); k <= n - 1; ++k) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (i + k >= 0 && i + k < n) {
        sum += a.intensity[i + k] * b.intensity[i];
        ++count;
      }
    CHECK(d.intensity[k + n - 1] == doctest::Approx(sum / count).epsilon(1e-12));
    CHECK(d.axis[k + n - 1] == doctest::Approx(2.0 * k));
  }
  // d_k(a, b) = d_-k(b, a)
  const auto e = cross_correlate(b, a, n - 1);
  for (int k = 0; k < 2 * n - 1; ++k) CHECK(d.intensity[k] == doctest::Approx(e.intensity[2 * n - 2 - k]));
}

TEST_CASE("cross-correlation peaks: zero lag and shift theorem") {
  const auto axis = linspace(-5000.0, 5000.0, 2001);
  Spectrum a, b;
  for (double x : axis) {
    a.axis.push_back(x);
    b.axis.push_back(x);
    a.intensity.push_back(lorentzian(x, 200.0, 38.0));
    b.intensity.push_back(lorentzian(x, 200.0 - 1555.0, 38.0));
  }
  CHECK(cross_correlate(a, a).argmax() == doctest::Approx(0.0));
  const auto d = cross_correlate(a, b);
  CHECK(d.argmax() == doctest::Approx(1555.0));
  const auto pk = fit_correlation_peak(d, 1555.0, 200.0);
  CHECK(pk.center == doctest::Approx(1555.0).epsilon(1e-4));
  // Two Lorentzians correlate into one of twice the width.
  CHECK(pk.fwhm == doctest::Approx(76.0).epsilon(0.02));
  Spectrum c = a;
  c.axis.pop_back();
  c.intensity.pop_back();
  CHECK_THROWS_AS(cross_correlate(a, c), InvalidArgument);
}

TEST_CASE("single molecule scanned X/Y spectra: correlation at 1555 MHz, ~3x width") {
  FewMoleculeSpec spec;
  spec.n_molecules = 1;
  spec.inhomogeneous_fwhm_mhz = 0.0;
  spec.scans = 128;
  const auto xy = simulate_few_molecule_spectra(photo::default_params(), spec, linspace(-3000.0, 3000.0, 1201), 3);
  // ZX selects the X line, ZY the Y line.
  CHECK(xy.x.argmax() == doctest::Approx(-777.5).epsilon(0.01));
  CHECK(xy.y.argmax() == doctest::Approx(777.5).epsilon(0.01));
  const auto pk = fit_correlation_peak(cross_correlate(xy.y, xy.x), 1555.0, 150.0);
  CHECK(std::abs(pk.center - 1555.0) <= 5.0);
  CHECK(pk.fwhm / 38.0 == doctest::Approx(3.0).epsilon(0.5 / 3.0));
  CHECK_THROWS_AS(simulate_few_molecule_spectra(photo::default_params(), spec, {0.0, 1.0, 3.0}, 1), InvalidArgument);
}

TEST_CASE("scanned lines without spectral diffusion follow the homogeneous width") {
  FewMoleculeSpec spec;
  spec.n_molecules = 1;
  spec.inhomogeneous_fwhm_mhz = 0.0;
  spec.spectral_diffusion_fwhm_mhz = 0.0;
  spec.scans = 4;
  auto p = weak_probe();
  const auto xy = simulate_few_molecule_spectra(p, spec, linspace(-1500.0, 1500.0, 1201), 1);
  const auto f = fit_lorentzian(xy.x, 150.0);
  CHECK(f.value("x0") == doctest::Approx(-777.5).epsilon(1e-3));
  CHECK(f.value("fwhm") == doctest::Approx(38.0).epsilon(0.05));
}

TEST_CASE("Debye-Waller examples") {
  const auto axis = linspace(580.0, 730.0, 15001);
  EmissionSpec e;
  e.background = 3.0;
  const auto s = synthetic_emission_spectrum(axis, e);
  const std::pair<double, double> win{e.zpl_center_nm - 0.5, e.zpl_center_nm + 0.5};
  CHECK(debye_waller(s, win) == doctest::Approx(0.1947).epsilon(1e-9));
  CHECK(std::abs(debye_waller(s, win) - 0.1947) <= 0.005);

  Spectrum scaled = s;
  for (double& v : scaled.intensity) v *= 17.0;
  CHECK(debye_waller(scaled, win) == doctest::Approx(debye_waller(s, win)).epsilon(1e-12));

  Spectrum zpl_only = s;
  for (std::size_t i = 0; i < axis.size(); ++i)
    zpl_only.intensity[i] = std::exp(-0.5 * std::pow((axis[i] - 594.18) / 0.0425, 2));
  CHECK(debye_waller(zpl_only, win) == doctest::Approx(1.0).epsilon(1e-12));

  Spectrum zero = s;
  std::fill(zero.intensity.begin(), zero.intensity.end(), 0.0);
  CHECK_THROWS_AS(debye_waller(zero, win), InvalidArgument);
  CHECK_THROWS_AS(debye_waller(s, {595.0, 594.0}), InvalidArgument);
  CHECK_THROWS_AS(debye_waller(s, {570.0, 571.0}), InvalidArgument);
  CHECK_THROWS_AS(debye_waller(s, win, 740.0), InvalidArgument);
}

TEST_CASE("excited-state ODMR dips at 3958 and 4423 MHz") {
  auto p = photo::default_params();
  const auto grid = linspace(3800.0, 4600.0, 801);
  const std::vector<double> lasers{-777.5, 777.5};
  const auto s = excited_state_odmr(p, grid, 0.01, lasers);
  const auto d1 = fit_lorentzian(negate(window(s, 3850.0, 4100.0)), 80.0);
  const auto d2 = fit_lorentzian(negate(window(s, 4300.0, 4550.0)), 80.0);
  CHECK(d1.value("x0") == doctest::Approx(3958.0).epsilon(1e-4));
  CHECK(d2.value("x0") == doctest::Approx(4423.0).epsilon(1e-4));

  const auto flat = excited_state_odmr(p, {3900.0, 3958.0, 4423.0}, 0.0, lasers);
  CHECK(flat.intensity[1] == doctest::Approx(flat.intensity[0]).epsilon(1e-12));
  const auto weak = excited_state_odmr(p, {3500.0, 3958.0}, 0.005, lasers);
  const auto strong = excited_state_odmr(p, {3500.0, 3958.0}, 0.02, lasers);
  const double depth_weak = 1.0 - weak.intensity[1] / weak.intensity[0];
  const double depth_strong = 1.0 - strong.intensity[1] / strong.intensity[0];
  CHECK(depth_weak > 0.0);
  CHECK(depth_strong > depth_weak);
  CHECK_THROWS_AS(excited_state_odmr(p, grid, -1.0), InvalidArgument);
}

TEST_CASE("doping distance") {
  CHECK(doping_distance(0.025) == doctest::Approx(2.555).epsilon(1e-3));
  CHECK(doping_distance(0.4175) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(doping_distance(2.5e-5) == doctest::Approx(25.55).epsilon(1e-3));
  CHECK_THROWS_AS(doping_distance(0.0), InvalidArgument);
}
