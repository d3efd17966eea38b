#include <doctest.h>

#include <cmath>
#include <random>

#include "molspin/error.hpp"
#include "molspin/photophysics.hpp"

using namespace molspin;
using namespace molspin::photo;

namespace {

PhotophysicsParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PhotophysicsParams p = default_params();
  p.gamma_rad = 0.01 + 0.05 * u(rng);
  p.isc_scale = 0.3 * u(rng);
  double a = u(rng), b = u(rng), c = u(rng);
  p.isc_rel = {a / (a + b + c), b / (a + b + c), c / (a + b + c)};
  a = u(rng), b = u(rng), c = u(rng);
  p.singlet_branching = {a / (a + b + c), b / (a + b + c), c / (a + b + c)};
  p.singlet_rate = 0.001 + 0.1 * u(rng);
  p.laser_rate_peak = 0.1 * u(rng);
  p.laser_detuning_mhz = 2000.0 * (u(rng) - 0.5);
  p.mw_drive = {{T0z, T0y, 3.0 * u(rng), 2.0 * (u(rng) - 0.5), 6.0 * u(rng)},
                {T0x, T0y, 3.0 * u(rng), 2.0 * (u(rng) - 0.5), 0.0}};
  p.excited_mw = {{T1y, T1z, 0.01 * u(rng), 10.0 * u(rng), 20.0}};
  return p;
}

PhotophysicsParams laser_only() {
  PhotophysicsParams p = default_params();
  p.mw_drive.clear();
  return p;
}

}  // namespace

TEST_CASE("generator conserves probability with non-negative off-diagonals") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto m = build_rate_model(random_params(rng));
    for (int c = 0; c < kLevels; ++c) {
      CHECK(std::abs(m.generator.col(c).sum()) <= 1e-12);
      for (int r = 0; r < kLevels; ++r)
        if (r != c) CHECK(m.generator(r, c) >= 0.0);
    }
    CHECK((m.coherent_part - m.coherent_part.adjoint()).norm() < 1e-15);
  }
}

TEST_CASE("channel assembly matches the stated rates") {
  PhotophysicsParams p = laser_only();
  p.laser_rate_peak = 0.05;
  const auto m = build_rate_model(p);
  // Laser on the Y line: resonant pump, off-resonant x and z lines.
  CHECK(m.generator(T1y, T0y) == doctest::Approx(0.05));
  const double lx = 1.0 / (1.0 + std::pow(2.0 * 1555.0 / 38.0, 2));
  CHECK(m.generator(T1x, T0x) == doctest::Approx(0.05 * lx));
  const double row = 0.004 + 0.977 + 0.018;
  CHECK(m.generator(T0z, T1y) == doctest::Approx(p.gamma_rad * 0.018 / row));
  CHECK(m.generator(S, T1z) == doctest::Approx(p.isc_scale * 0.949));
  CHECK(m.generator(T0z, S) == doctest::Approx(p.singlet_rate * 0.999));
  CHECK(m.emission(T0z, T1y) == doctest::Approx(p.gamma_rad * 0.018 / row));
  CHECK(m.emission(T0y, T1y) < m.generator(T0y, T1y));  // stimulated part is not emission
}

TEST_CASE("parameter validation") {
  PhotophysicsParams p = default_params();
  p.isc_rel = {0.1, 0.2, 0.3};
  auto v = p.violations();
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("normalization") != std::string::npos);
  CHECK(v[0].find("isc_rel") != std::string::npos);

  p = default_params();
  p.mw_drive = {{T1y, T1z, 1.0, 0.0, 0.0}};
  CHECK_THROWS_AS(build_rate_model(p), InvalidArgument);

  p = default_params();
  p.mw_drive = {{T0z, T0y, 1.0}, {T0z, T0x, 1.0}, {T0x, T0y, 1.0}};
  CHECK_THROWS_AS(build_rate_model(p), InvalidArgument);
  p.mw_drive = {{T0z, T0y, 1.0}, {T0y, T0z, 1.0}};
  CHECK_THROWS_AS(build_rate_model(p), InvalidArgument);

  p = default_params();
  p.gamma_rad = -1.0;
  p.collection_efficiency = 0.0;
  p.singlet_branching = {0.5, 0.5, 0.5};
  p.spin_overlap(1, 1) = 0.5;
  CHECK(p.violations().size() == 4);

  p = default_params();
  p.hahn.stretch = 3.5;
  CHECK(p.violations().size() == 1);
  p = default_params();
  p.excited_mw = {{T0y, T1z, 1.0}};
  CHECK(p.violations().size() == 1);
  CHECK(default_params().violations().empty());
}

TEST_CASE("ISC calibration against an independent closed-form solve") {
  const std::array<double, 3> rel{0.009, 0.042, 0.949};
  const auto c = calibrate_isc_scale(4.8, 24.0, rel);
  // Cramer's rule for [1 r_y; 1 r_z] [g; K] = [1/24; 1/4.8]
  const double det = rel[2] - rel[1];
  const double k = (1.0 / 4.8 - 1.0 / 24.0) / det;
  const double g = (rel[2] / 24.0 - rel[1] / 4.8) / det;
  CHECK(c.isc_scale == doctest::Approx(k).epsilon(1e-12));
  CHECK(c.gamma_rad == doctest::Approx(g).epsilon(1e-12));
  CHECK(c.isc_scale == doctest::Approx(0.1838).epsilon(1e-3));
  CHECK(c.gamma_rad == doctest::Approx(0.03395).epsilon(1e-3));
  CHECK(1.0 / c.gamma_rad == doctest::Approx(29.5).epsilon(2e-3));

  PhotophysicsParams p = laser_only();
  p.gamma_rad = c.gamma_rad;
  p.isc_scale = c.isc_scale;
  p.laser_rate_peak = 0.0;
  const auto m = build_rate_model(p);
  CHECK(std::abs(1.0 / m.outflow(T1y) - 24.0) < 1e-9);
  CHECK(std::abs(1.0 / m.outflow(T1z) - 4.8) < 1e-9);
  CHECK(std::abs(excited_lifetime_ns(p, 1) - 24.0) < 1e-9);

  const auto c2 = calibrate_isc_scale(5.1, 26.2, rel);
  CHECK(c2.gamma_rad > 0.0);
  CHECK(c2.isc_scale > 0.0);

  CHECK_THROWS_AS(calibrate_isc_scale(4.8, 4.8 * (1 + 1e-6), {0.2, 0.4, 0.4}), InvalidArgument);
  CHECK_THROWS_AS(calibrate_isc_scale(4.8, 24.0, {0.1, 0.4, 0.5}), InvalidArgument);  // gamma < 0
  CHECK_THROWS_AS(calibrate_isc_scale(24.0, 4.8, rel), InvalidArgument);
  CHECK_THROWS_AS(calibrate_isc_scale(4.8, 24.0, {0.2, 0.2, 0.2}), InvalidArgument);
}

TEST_CASE("lifetime-limited linewidth") {
  CHECK(lifetime_limited_linewidth(24.0) == doctest::Approx(6.63).epsilon(1e-3));
  CHECK(lifetime_limited_linewidth(4.8) == doctest::Approx(33.16).epsilon(1e-3));
  CHECK(lifetime_limited_linewidth(INFINITY) == 0.0);
  CHECK_THROWS_AS(lifetime_limited_linewidth(0.0), InvalidArgument);
}

TEST_CASE("no drive: stationary state is not unique and levels do not mix") {
  PhotophysicsParams p = laser_only();
  p.laser_rate_peak = 0.0;
  const auto m = build_rate_model(p);
  CHECK_THROWS_AS(steady_state(m), NumericalError);
  SystemState s0;
  s0.populations = {0.2, 0.3, 0.5, 0, 0, 0, 0};
  const auto s = propagate(m, s0, 1e6);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s.populations[k] - s0.populations[k]) < 1e-10);
}

TEST_CASE("laser on the Y line shelves into T0z") {
  auto p = laser_only();
  p.laser_rate_peak = 0.02;
  const auto m = build_rate_model(p);
  const auto ss = steady_state(m);
  CHECK(ss.populations[T0z] >= 0.99);
  const double f_off = fluorescence_rate(ss, m);

  p.mw_drive = {{T0z, T0y, 0.5, 0.0, 0.0}};
  const auto m_on = build_rate_model(p);
  const double f_on = fluorescence_rate(steady_state(m_on), m_on);
  CHECK(f_on > 10.0 * f_off);
}

TEST_CASE("shelving monotonicity") {
  auto p = laser_only();
  p.laser_rate_peak = 0.05;
  const auto m = build_rate_model(p);
  const auto ts = evolve(m, SystemState::pure(T0y), 3000.0, 0.1 / fastest_rate(m));
  double prev = -1.0;
  for (std::size_t i = 0; i < ts.t_ns.size(); ++i) {
    if (ts.t_ns[i] < 24.0) continue;
    CHECK(ts.states[i].populations[T0z] >= prev - 1e-12);
    prev = ts.states[i].populations[T0z];
  }
  CHECK(steady_state(m).populations[T0z] >= 0.99);
}

TEST_CASE("steady state residual, normalization and PSD ground block") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 30; ++i) {
    auto p = random_params(rng);
    p.laser_rate_peak = std::max(p.laser_rate_peak, 1e-3);
    const auto m = build_rate_model(p);
    const auto s = steady_state(m);
    CHECK((liouvillian(m) * s.to_vector()).norm() < 1e-10);
    CHECK(s.total_population() == doctest::Approx(1.0).epsilon(1e-9));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(s.ground_block());
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("folded drive reproduces the coherent steady state for a single drive") {
  for (double det : {0.0, 0.3, -2.0}) {
    auto p = laser_only();
    p.laser_rate_peak = 0.01;
    p.mw_drive = {{T0z, T0y, 0.8, det, 0.4}};
    const auto m = build_rate_model(p);
    const auto exact = steady_state(m);
    const auto folded = steady_state(fold_coherent_drive(m));
    for (int k = 0; k < kLevels; ++k) CHECK(std::abs(exact.populations[k] - folded.populations[k]) < 1e-10);
  }
}

TEST_CASE("evolve: zero duration, pi pulse, dt guard") {
  auto p = laser_only();
  p.laser_rate_peak = 0.0;
  p.t2_star_ns = INFINITY;
  const double omega = 3.7;
  p.mw_drive = {{T0z, T0y, omega, 0.0, 0.0}};
  const auto m = build_rate_model(p);
  const auto z = evolve(m, SystemState::pure(T0z), 0.0, 0.1);
  REQUIRE(z.states.size() == 1);
  CHECK(z.states[0].populations[T0z] == 1.0);

  const double t_pi = 1e3 / (2.0 * omega);
  const double dt = 0.1 / fastest_rate(m);
  const auto ts = evolve(m, SystemState::pure(T0z), t_pi, dt);
  CHECK(ts.t_ns.back() == doctest::Approx(t_pi));
  CHECK(ts.states.back().populations[T0y] >= 0.99);
  CHECK(ts.states.back().populations[T0y] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(propagate(m, SystemState::pure(T0z), t_pi).populations[T0y] == doctest::Approx(1.0).epsilon(1e-10));

  CHECK_THROWS_AS(evolve(m, SystemState::pure(T0z), 10.0, 10.0 * dt), InvalidArgument);
  CHECK_THROWS_AS(evolve(m, SystemState::pure(T0z), -1.0, dt), InvalidArgument);
}

TEST_CASE("evolve conserves probability for random parameters") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 10; ++i) {
    const auto m = build_rate_model(random_params(rng));
    const double dt = 0.1 / fastest_rate(m);
    const auto ts = evolve(m, SystemState::pure(T0y), 500.0, dt);
    for (const auto& s : ts.states) CHECK(std::abs(s.total_population() - 1.0) < 1e-8);
  }
}

TEST_CASE("three-level reduction matches the closed form to 1e-6") {
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
  const double dt = 0.1 / fastest_rate(m);
  const auto ts = evolve(m, SystemState::pure(T0y), 600.0, dt);
  double worst = 0.0;
  for (std::size_t i = 0; i < ts.t_ns.size(); ++i) {
    const double t = ts.t_ns[i];
    const double p1 = k * (std::exp(lp * t) - std::exp(lm * t)) / (lp - lm);
    const double dp1 = k * (lp * std::exp(lp * t) - lm * std::exp(lm * t)) / (lp - lm);
    const double p0 = (dp1 + (a + s) * p1) / k;
    const double pz = 1.0 - p0 - p1;
    worst = std::max({worst, std::abs(ts.states[i].populations[T0y] - p0),
                      std::abs(ts.states[i].populations[T1y] - p1),
                      std::abs(ts.states[i].populations[T0z] - pz)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("emitted photons from T0y match the branching cascade") {
  auto p = laser_only();
  p.laser_rate_peak = 0.05;
  // Keep only the Y line in reach of the laser.
  p.optical_lines_mhz = {-1e9, 777.5, 1e9};
  const auto m = build_rate_model(p);
  const double row = p.spin_overlap.row(1).sum();
  const double q = p.gamma_rad / (p.gamma_rad + p.isc_scale * p.isc_rel[1]);
  const double back = q * p.spin_overlap(1, 1) / row + (1.0 - q) * p.singlet_branching[1];
  const double expected = q / (1.0 - back);

  const double dt = 0.1 / fastest_rate(m);
  const auto ts = evolve(m, SystemState::pure(T0y), 4000.0, dt);
  double photons = 0.0;
  for (std::size_t i = 1; i < ts.states.size(); ++i) {
    const double f0 = m.emission_out().dot(Eigen::Map<const Eigen::Matrix<double, 7, 1>>(ts.states[i - 1].populations.data()));
    const double f1 = m.emission_out().dot(Eigen::Map<const Eigen::Matrix<double, 7, 1>>(ts.states[i].populations.data()));
    photons += 0.5 * (f0 + f1) * dt;
  }
  CHECK(photons == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("fluorescence rate definition") {
  const auto m = build_rate_model(default_params());
  CHECK(fluorescence_rate(SystemState::pure(T0y), m) == 0.0);
  auto p = default_params();
  p.gamma_rad = 0.0340;
  CHECK(fluorescence_rate(SystemState::pure(T1y), p) == doctest::Approx(3.40e-4));
  CHECK(fluorescence_rate(SystemState::pure(T1y), build_rate_model(p)) == doctest::Approx(3.40e-4));
  SystemState h;
  h.populations = {0, 0, 0, 0.1, 0.2, 0.3, 0};
  SystemState h2 = h;
  for (auto& x : h2.populations) x *= 2.5;
  CHECK(fluorescence_rate(h2, m) == doctest::Approx(2.5 * fluorescence_rate(h, m)));
}

TEST_CASE("saturation bound under a strong resonant pump") {
  auto p = laser_only();
  p.laser_rate_peak = 100.0;
  p.optical_lines_mhz = {-1e9, 777.5, 1e9};
  p.isc_scale = 0.0;
  p.mw_drive = {{T0z, T0y, 1.0, 0.0, 0.0}, {T0z, T0x, 1.0, 0.0, 0.0}};
  const auto m = build_rate_model(p);
  const auto s = steady_state(m);
  CHECK(fluorescence_rate(s, m) <= 0.5 * p.collection_efficiency * p.gamma_rad + 1e-15);
}

TEST_CASE("ISC flux leaves mostly through T1z") {
  const auto p = default_params();
  const double total = p.isc_rel[0] + p.isc_rel[1] + p.isc_rel[2];
  CHECK(p.isc_rel[2] / total >= 0.94);
  const auto m = build_rate_model(p);
  const double fz = m.generator(S, T1z), fy = m.generator(S, T1y), fx = m.generator(S, T1x);
  CHECK(fz / (fx + fy + fz) >= 0.94);
}

TEST_CASE("default pump reproduces the 245 ns relaxation time") {
  const auto t = relaxation_times_ns(build_rate_model(default_params()));
  CHECK(t.front() == doctest::Approx(kDefaultBunchingNs).epsilon(1e-4));
  const double k = calibrate_laser_rate(default_params(), kDefaultBunchingNs);
  CHECK(k == doctest::Approx(kDefaultLaserRate).epsilon(1e-5));
  CHECK_THROWS_AS(calibrate_laser_rate(default_params(), 1e7), NumericalError);
}

TEST_CASE("state helpers") {
  CHECK_THROWS_AS(SystemState::pure(7), InvalidArgument);
  SystemState s;
  s.populations = {0.5, 0.5, 0, 0, 0, 0, 0};
  s.ground_coherences[0] = {0.1, -0.2};
  const auto b = s.ground_block();
  CHECK(b(1, 0) == std::conj(b(0, 1)));
  const auto r = SystemState::from_vector(s.to_vector());
  CHECK(r.ground_coherences[0] == s.ground_coherences[0]);
  CHECK(std::string(level_name(S)) == "S");
  CHECK(ground_line_mhz(default_params(), T0z, T0y) == doctest::Approx(10618.8));
  CHECK_THROWS_AS(ground_line_mhz(default_params(), T1z, T0y), InvalidArgument);
  const auto lines = optical_lines_from_separations(1555, 16120);
  CHECK(lines[1] - lines[0] == doctest::Approx(1555));
  CHECK(lines[2] - lines[0] == doctest::Approx(16120));
}
