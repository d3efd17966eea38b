#include <doctest.h>

#include <cmath>
#include <random>

#include "molspin/error.hpp"
#include "molspin/fitting.hpp"

using namespace molspin;
using namespace molspin::fit;

namespace {

Eigen::VectorXd linspace(double a, double b, int n) { return Eigen::VectorXd::LinSpaced(n, a, b); }

Eigen::VectorXd lorentzian(const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
  // p = amplitude, center, fwhm, offset
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double u = 2.0 * (x[i] - p[1]) / p[2];
    out[i] = p[0] / (1.0 + u * u) + p[3];
  }
  return out;
}

}  // namespace

TEST_CASE("linear model converges in at most three iterations") {
  const Eigen::VectorXd x = linspace(-3, 5, 40);
  const Eigen::VectorXd y = 2.5 * x.array() - 1.25;
  auto model = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return p[0] * x.array() + p[1]; };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(40), {{"a", 0.0}, {"b", 0.0}});
  CHECK(r.converged);
  CHECK(r.n_iterations <= 3);
  CHECK(r.value("a") == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(r.value("b") == doctest::Approx(-1.25).epsilon(1e-9));
}

TEST_CASE("Lorentzian zero-residual fit") {
  const Eigen::VectorXd x = linspace(-200, 200, 301);
  Eigen::VectorXd truth(4);
  truth << 3.0, 12.0, 38.0, 0.5;
  const Eigen::VectorXd y = lorentzian(x, truth);
  auto model = [&](const Eigen::VectorXd& p) { return lorentzian(x, p); };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(x.size()),
                               {{"A", 2.0}, {"x0", 0.0}, {"w", 50.0, {0.0, kInf}}, {"c", 0.0}});
  CHECK(r.converged);
  for (int k = 0; k < 4; ++k) CHECK(r.values[k] == doctest::Approx(truth[k]).epsilon(1e-8));
  CHECK(r.residuals.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Rosenbrock-style residuals converge from 95% of seeded inits") {
  auto model = [](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(2);
    out << 10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0];
    return out;
  };
  // data = 0, so residual = -model; minimum at (1, 1)
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.9, 1.9);
  int good = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<Parameter> ps{{"x", u(rng), {-2.0, 2.0}}, {"y", u(rng), {-2.0, 2.0}}};
    const auto r = least_squares(model, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2), ps);
    if (std::abs(r.values[0] - 1.0) < 1e-4 && std::abs(r.values[1] - 1.0) < 1e-4) ++good;
  }
  CHECK(good >= 95);
}

TEST_CASE("monotone damping: accepted costs never increase") {
  const Eigen::VectorXd x = linspace(0, 10, 50);
  Eigen::VectorXd truth(4);
  truth << 1.0, 4.0, 2.0, 0.1;
  const Eigen::VectorXd y = lorentzian(x, truth);
  auto model = [&](const Eigen::VectorXd& p) { return lorentzian(x, p); };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(50),
                               {{"A", 0.3}, {"x0", 6.0}, {"w", 5.0, {0.0, kInf}}, {"c", 0.0}});
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
}

TEST_CASE("scale equivariance") {
  const Eigen::VectorXd x = linspace(0, 10, 60);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 0.05);
  Eigen::VectorXd truth(4);
  truth << 1.0, 4.0, 2.0, 0.1;
  Eigen::VectorXd y = lorentzian(x, truth);
  for (auto& v : y) v += nd(rng);
  auto model = [&](const Eigen::VectorXd& p) { return lorentzian(x, p); };
  std::vector<Parameter> ps{{"A", 0.8}, {"x0", 4.5}, {"w", 3.0, {0.0, kInf}}, {"c", 0.0}};
  const auto r1 = least_squares(model, y, Eigen::VectorXd::Ones(60), ps);
  const auto r2 = least_squares(model, y, Eigen::VectorXd::Constant(60, 7.3), ps);
  for (int k = 0; k < 4; ++k) CHECK(r1.values[k] == doctest::Approx(r2.values[k]).epsilon(1e-8));
  // errors come from sigma^2 (J^T W J)^-1 and are invariant too
  for (int k = 0; k < 4; ++k) CHECK(r1.errors[k] == doctest::Approx(r2.errors[k]).epsilon(1e-6));
}

TEST_CASE("bound transforms round-trip and keep values inside") {
  for (const Bound b : {Bound{0.0, kInf}, Bound{-kInf, 3.0}, Bound{0.05, 3.0}, Bound{}}) {
    for (double u : {-30.0, -2.0, 0.0, 1.5, 30.0}) {
      const double e = to_external(u, b);
      CHECK(e >= b.lo);
      CHECK(e <= b.hi);
      // derivative against a finite difference
      const double h = 1e-6;
      const double fd = (to_external(u + h, b) - to_external(u - h, b)) / (2 * h);
      CHECK(std::abs(external_derivative(u, b) - fd) <= 1e-6 * std::max(1e-3, std::abs(fd)));
    }
    for (double e : {0.1, 1.0, 2.9}) CHECK(to_external(to_internal(e, b), b) == doctest::Approx(e).epsilon(1e-12));
  }
}

TEST_CASE("argument errors") {
  auto model = [](const Eigen::VectorXd& p) { return p; };
  CHECK_THROWS_AS(least_squares(model, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(3), {{"a", 0}, {"b", 0}}),
                  InvalidArgument);
  CHECK_THROWS_AS(least_squares(model, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), {{"a", 5.0, {0.0, 1.0}}}),
                  InvalidArgument);
  CHECK_THROWS_AS(least_squares(model, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), {}), InvalidArgument);
}

TEST_CASE("singular normal equations are flagged") {
  // Model depends only on a + b.
  const Eigen::VectorXd x = linspace(0, 1, 10);
  auto model = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return (p[0] + p[1]) * x.array(); };
  const auto r = least_squares(model, 2.0 * x, Eigen::VectorXd::Ones(10), {{"a", 0.3}, {"b", 0.1}});
  CHECK(r.has_warning("pseudo-inverse"));
  CHECK(r.value("a") + r.value("b") == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("iteration cap reports non-convergence") {
  const Eigen::VectorXd x = linspace(0, 10, 50);
  Eigen::VectorXd truth(4);
  truth << 1.0, 4.0, 2.0, 0.1;
  const Eigen::VectorXd y = lorentzian(x, truth);
  auto model = [&](const Eigen::VectorXd& p) { return lorentzian(x, p); };
  LsqOptions o;
  o.max_iterations = 1;
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(50),
                               {{"A", 0.3}, {"x0", 6.0}, {"w", 5.0, {0.0, kInf}}, {"c", 0.0}}, o);
  CHECK_FALSE(r.converged);
  CHECK(r.has_warning("non-convergence"));
}

TEST_CASE("fixed parameters are held") {
  const Eigen::VectorXd x = linspace(0, 5, 30);
  const Eigen::VectorXd y = 3.0 * x.array() + 1.0;
  auto model = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return p[0] * x.array() + p[1]; };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(30), {{"a", 0.0}, {"b", 2.0, {}, true}});
  CHECK(r.value("b") == 2.0);
  CHECK(r.error("b") == 0.0);
}

TEST_CASE("Jacobian agrees with a ten times smaller step") {
  const Eigen::VectorXd t = linspace(0, 40000, 25);
  auto stretched = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = stretched_exponential(t[i], p[0], p[1], p[2], p[3]);
    return out;
  };
  Eigen::VectorXd p(4);
  p << 1.0, 12200.0, 1.7, 0.05;
  const Eigen::MatrixXd j1 = numeric_jacobian(stretched, p, 1e-6);
  const Eigen::MatrixXd j2 = numeric_jacobian(stretched, p, 1e-7);
  CHECK((j1 - j2).norm() <= 1e-4 * j2.norm());

  const Eigen::VectorXd x = linspace(-100, 100, 41);
  auto lor = [&](const Eigen::VectorXd& q) { return lorentzian(x, q); };
  Eigen::VectorXd q(4);
  q << 2.0, 5.0, 38.0, 0.1;
  CHECK((numeric_jacobian(lor, q, 1e-6) - numeric_jacobian(lor, q, 1e-7)).norm() <=
        1e-4 * numeric_jacobian(lor, q, 1e-7).norm());
}

TEST_CASE("stretched exponential: exact curve with Hahn parameters") {
  CurveData c;
  c.x = linspace(0, 40000, 40);
  c.y.resize(40);
  for (int i = 0; i < 40; ++i) c.y[i] = stretched_exponential(c.x[i], 1.0, 12200.0, 1.7, 0.0);
  const auto r = fit_stretched_exponential(c);
  CHECK(r.converged);
  CHECK(r.value("A") == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.value("T") == doctest::Approx(12200.0).epsilon(1e-6));
  CHECK(r.value("beta") == doctest::Approx(1.7).epsilon(1e-6));
  CHECK(std::abs(r.value("y0")) < 1e-6);
}

TEST_CASE("stretched exponential: beta fixed to one") {
  CurveData c;
  c.x = linspace(0, 80e6, 30);
  c.y.resize(30);
  for (int i = 0; i < 30; ++i) c.y[i] = stretched_exponential(c.x[i], 0.7, 21e6, 1.0, 0.0);
  const auto r = fit_stretched_exponential(c, 1.0);
  CHECK(r.value("beta") == 1.0);
  CHECK(r.value("T") == doctest::Approx(21e6).epsilon(1e-6));
}

TEST_CASE("stretched exponential: noisy XY8-like curve") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd(0.0, 0.05);
  CurveData c;
  c.x = linspace(1e4, 8e6, 50);
  c.y.resize(50);
  c.sigma = Eigen::VectorXd::Constant(50, 0.05);
  for (int i = 0; i < 50; ++i) c.y[i] = stretched_exponential(c.x[i], 1.0, 2.2e6, 0.9, 0.0) + nd(rng);
  const auto r = fit_stretched_exponential(c);
  CHECK(r.value("T") == doctest::Approx(2.2e6).epsilon(0.10));
  CHECK(std::abs(r.value("beta") - 0.9) < 0.2);
}

TEST_CASE("stretched exponential: extrapolation and argument checks") {
  CurveData c;
  c.x = linspace(0, 100, 20);
  c.y.resize(20);
  for (int i = 0; i < 20; ++i) c.y[i] = stretched_exponential(c.x[i], 1.0, 5000.0, 1.0, 0.0);
  const auto r = fit_stretched_exponential(c, 1.0);
  CHECK(r.has_warning("extrapolation"));

  CurveData short_curve;
  short_curve.x = linspace(0, 1, 5);
  short_curve.y = short_curve.x;
  CHECK_THROWS_AS(fit_stretched_exponential(short_curve), InvalidArgument);
  CHECK_THROWS_AS(fit_stretched_exponential(c, 4.0), InvalidArgument);
}

TEST_CASE("damped cosine recovers frequency") {
  CurveData c;
  c.x = linspace(0, 2000, 200);
  c.y.resize(200);
  for (int i = 0; i < 200; ++i)
    c.y[i] = 0.4 * std::cos(2 * std::numbers::pi * 0.0037 * c.x[i] + 3.14159) * std::exp(-c.x[i] / 3000) + 1.0;
  const auto r = fit_damped_cosine(c);
  CHECK(r.value("freq") == doctest::Approx(0.0037).epsilon(1e-6));
  CHECK(r.value("T") == doctest::Approx(3000).epsilon(1e-4));
}

TEST_CASE("Monte Carlo intervals") {
  FitResult f;
  f.names = {"a", "b"};
  f.values = Eigen::Vector2d(0.5, -1.0);
  f.covariance = Eigen::Matrix2d::Zero();
  auto first = [](const Eigen::VectorXd& p) { return p[0]; };
  const auto zero = monte_carlo_uncertainty(f, first, 200, 1);
  CHECK(zero.lo == doctest::Approx(0.5));
  CHECK(zero.hi == doctest::Approx(0.5));

  f.covariance = Eigen::Matrix2d::Identity();
  const auto unit = monte_carlo_uncertainty(f, first, 20000, 7);
  CHECK(unit.lo == doctest::Approx(-0.5).epsilon(0.05));
  CHECK(unit.hi == doctest::Approx(1.5).epsilon(0.05));

  const auto again = monte_carlo_uncertainty(f, first, 20000, 7);
  CHECK(again.lo == unit.lo);
  CHECK(again.hi == unit.hi);

  f.covariance << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
  std::vector<std::string> warnings;
  monte_carlo_uncertainty(f, first, 100, 3, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("clipped") != std::string::npos);

  CHECK_THROWS_AS(monte_carlo_uncertainty(f, first, 0, 3), InvalidArgument);
}

TEST_CASE("Monte Carlo on a bounded fit is asymmetric near a bound") {
  // y = a * x with a close to its lower bound 0 and noisy data.
  const Eigen::VectorXd x = linspace(0, 1, 20);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 0.05);
  Eigen::VectorXd y = 0.03 * x;
  for (auto& v : y) v += nd(rng);
  auto model = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return p[0] * x.array(); };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(20), {{"a", 0.1, {0.0, kInf}}});
  const auto iv = monte_carlo_uncertainty(r, [](const Eigen::VectorXd& p) { return p[0]; }, 4000, 11);
  CHECK(iv.lo >= 0.0);
  CHECK(iv.hi - r.value("a") > r.value("a") - iv.lo);
}

TEST_CASE("json report lists names, values and errors") {
  const Eigen::VectorXd x = linspace(0, 5, 30);
  const Eigen::VectorXd y = 3.0 * x.array() + 1.0;
  auto model = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return p[0] * x.array() + p[1]; };
  const auto r = least_squares(model, y, Eigen::VectorXd::Ones(30), {{"a", 0.0}, {"b", 0.0}});
  const auto j = to_json(r);
  CHECK(j["parameters"].size() == 2);
  CHECK(j["parameters"][0]["name"] == "a");
  CHECK(j["converged"] == true);
}

TEST_CASE("Poisson weights floor at one count") {
  const auto w = poisson_weights(Eigen::Vector3d(0.0, 4.0, 100.0));
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(0.25));
  CHECK(w[2] == doctest::Approx(0.01));
}
