#pragma once

// Levenberg-Marquardt least squares with box bounds, plus uncertainty
// propagation by sampling the fit covariance.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace molspin::fit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bound {
  double lo = -kInf;
  double hi = kInf;
};

struct Parameter {
  std::string name;
  double init = 0.0;
  Bound bound{};
  bool fixed = false;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd values;
  Eigen::VectorXd errors;      // sqrt(diag(covariance))
  Eigen::MatrixXd covariance;  // external parameters; zero rows/cols for fixed ones
  Eigen::VectorXd residuals;   // data - model
  double residual_norm = 0.0;  // sqrt(sum w r^2)
  double cost = 0.0;           // sum w r^2
  int n_iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<std::optional<Interval>> mc_intervals;

  // Bound transform state; used to draw parameter samples in the
  // unconstrained space where the Gaussian approximation was made.
  std::vector<Bound> bounds;
  std::vector<bool> fixed;
  Eigen::VectorXd internal_values;
  Eigen::MatrixXd internal_covariance;

  std::vector<double> cost_history;  // cost after each accepted step

  double value(const std::string& name) const;
  double error(const std::string& name) const;
  int index(const std::string& name) const;
  bool has_warning(const std::string& needle) const;
};

struct LsqOptions {
  int max_iterations = 500;
  double rel_cost_tol = 1e-10;
  double grad_tol = 1e-8;
  double initial_lambda = 1e-3;
};

using ModelFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& params)>;

// Central differences with step max(step_scale, step_scale * |x_k|).
Eigen::MatrixXd numeric_jacobian(const ModelFn& fn, const Eigen::VectorXd& x, double step_scale = 1e-6);

// Minimizes sum_i w_i (data_i - model_i)^2. Bounded parameters are mapped
// through a smooth internal transform; the Jacobian is a central difference
// in internal coordinates.
FitResult least_squares(const ModelFn& model, const Eigen::VectorXd& data,
                        const Eigen::VectorXd& weights, const std::vector<Parameter>& params,
                        const LsqOptions& opts = {});

// Poisson weights for count data: 1 / max(counts, 1).
Eigen::VectorXd poisson_weights(const Eigen::VectorXd& counts);

// Bound transform helpers (exposed for tests).
double to_internal(double external, const Bound& b);
double to_external(double internal, const Bound& b);
double external_derivative(double internal, const Bound& b);

struct CurveData {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd sigma;  // empty = unweighted
};

// f(t) = A exp(-(t/T)^beta) + y0, parameters named A, T, beta, y0.
double stretched_exponential(double t, double amplitude, double time_constant, double beta,
                             double offset);

FitResult fit_stretched_exponential(const CurveData& curve, std::optional<double> fix_beta = {});

// f(t) = A cos(2 pi f t + phi) exp(-t/T) + y0 with f in cycles per unit of t.
// Parameters named A, freq, phase, T, y0. Frequency is seeded from a
// periodogram peak.
FitResult fit_damped_cosine(const CurveData& curve);

// Central 68% interval of derived_fn over n draws from the fit covariance.
// Draws are made in the internal (unbounded) coordinates and mapped back.
Interval monte_carlo_uncertainty(const FitResult& fit,
                                 const std::function<double(const Eigen::VectorXd&)>& derived_fn,
                                 int n, std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

nlohmann::json to_json(const FitResult& fit);

}  // namespace molspin::fit
