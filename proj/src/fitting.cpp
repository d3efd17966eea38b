#include "molspin/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "molspin/error.hpp"

namespace molspin::fit {

namespace {

bool finite_lo(const Bound& b) { return std::isfinite(b.lo); }
bool finite_hi(const Bound& b) { return std::isfinite(b.hi); }

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= v.size()) return v.back();
  return v[i] * (1.0 - frac) + v[i + 1] * frac;
}

}  // namespace

double to_internal(double external, const Bound& b) {
  if (finite_lo(b) && finite_hi(b)) {
    const double span = b.hi - b.lo;
    const double s = std::clamp((external - b.lo) / span, 1e-12, 1.0 - 1e-12);
    return std::log(s / (1.0 - s));
  }
  if (finite_lo(b)) return std::log(std::max(external - b.lo, 1e-300));
  if (finite_hi(b)) return std::log(std::max(b.hi - external, 1e-300));
  return external;
}

double to_external(double internal, const Bound& b) {
  if (finite_lo(b) && finite_hi(b)) return b.lo + (b.hi - b.lo) / (1.0 + std::exp(-internal));
  if (finite_lo(b)) return b.lo + std::exp(internal);
  if (finite_hi(b)) return b.hi - std::exp(internal);
  return internal;
}

double external_derivative(double internal, const Bound& b) {
  if (finite_lo(b) && finite_hi(b)) {
    const double s = 1.0 / (1.0 + std::exp(-internal));
    return (b.hi - b.lo) * s * (1.0 - s);
  }
  if (finite_lo(b)) return std::exp(internal);
  if (finite_hi(b)) return -std::exp(internal);
  return 1.0;
}

int FitResult::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw InvalidArgument("FitResult: unknown parameter '" + name + "'");
}

double FitResult::value(const std::string& name) const { return values[index(name)]; }
double FitResult::error(const std::string& name) const { return errors[index(name)]; }

bool FitResult::has_warning(const std::string& needle) const {
  return std::any_of(warnings.begin(), warnings.end(),
                     [&](const std::string& w) { return w.find(needle) != std::string::npos; });
}

Eigen::VectorXd poisson_weights(const Eigen::VectorXd& counts) {
  Eigen::VectorXd w(counts.size());
  for (Eigen::Index i = 0; i < counts.size(); ++i) w[i] = 1.0 / std::max(counts[i], 1.0);
  return w;
}

Eigen::MatrixXd numeric_jacobian(const ModelFn& fn, const Eigen::VectorXd& x, double step_scale) {
  Eigen::MatrixXd j;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = std::max(step_scale, step_scale * std::abs(x[k]));
    Eigen::VectorXd up = x, um = x;
    up[k] += h;
    um[k] -= h;
    const Eigen::VectorXd col = (fn(up) - fn(um)) / (2.0 * h);
    if (k == 0) j.resize(col.size(), x.size());
    j.col(k) = col;
  }
  return j;
}

FitResult least_squares(const ModelFn& model, const Eigen::VectorXd& data,
                        const Eigen::VectorXd& weights, const std::vector<Parameter>& params,
                        const LsqOptions& opts) {
  const Eigen::Index n = data.size();
  if (weights.size() != n) throw InvalidArgument("least_squares: data/weights length mismatch");
  if (params.empty()) throw InvalidArgument("least_squares: no parameters");
  for (const auto& p : params) {
    if (p.bound.lo > p.bound.hi) throw InvalidArgument("least_squares: bad bound for " + p.name);
    if (p.init < p.bound.lo || p.init > p.bound.hi)
      throw InvalidArgument("least_squares: init outside bounds for " + p.name);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(weights[i] >= 0.0) || !std::isfinite(data[i]))
      throw InvalidArgument("least_squares: weights must be >= 0 and data finite");

  const auto n_par = static_cast<Eigen::Index>(params.size());
  std::vector<int> free_idx;
  for (Eigen::Index k = 0; k < n_par; ++k)
    if (!params[k].fixed) free_idx.push_back(static_cast<int>(k));
  const auto m = static_cast<Eigen::Index>(free_idx.size());

  FitResult res;
  for (const auto& p : params) {
    res.names.push_back(p.name);
    res.bounds.push_back(p.bound);
    res.fixed.push_back(p.fixed);
  }

  Eigen::VectorXd internal(n_par);
  for (Eigen::Index k = 0; k < n_par; ++k)
    internal[k] = params[k].fixed ? params[k].init : to_internal(params[k].init, params[k].bound);

  auto external_of = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd p(n_par);
    for (Eigen::Index k = 0; k < n_par; ++k)
      p[k] = params[k].fixed ? params[k].init : to_external(u[k], params[k].bound);
    return p;
  };
  const Eigen::VectorXd sqrt_w = weights.cwiseSqrt();
  auto weighted_residual = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    const Eigen::VectorXd pred = model(external_of(u));
    if (pred.size() != n) throw InvalidArgument("least_squares: model output length mismatch");
    Eigen::VectorXd r = sqrt_w.cwiseProduct(data - pred);
    for (Eigen::Index i = 0; i < n; ++i)
      if (!std::isfinite(r[i])) r[i] = 1e150;
    return r;
  };
  auto jacobian = [&](const Eigen::VectorXd& u) {
    // d(weighted model)/du over the free parameters only
    Eigen::VectorXd u_free(m);
    for (Eigen::Index c = 0; c < m; ++c) u_free[c] = u[free_idx[c]];
    auto neg_residual = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      Eigen::VectorXd full = u;
      for (Eigen::Index c = 0; c < m; ++c) full[free_idx[c]] = v[c];
      return -weighted_residual(full);
    };
    return numeric_jacobian(neg_residual, u_free);
  };

  Eigen::VectorXd r = weighted_residual(internal);
  double cost = r.squaredNorm();
  res.cost_history.push_back(cost);
  double lambda = opts.initial_lambda;
  bool singular_flagged = false;
  Eigen::MatrixXd jac;

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    if (m == 0) {
      res.converged = true;
      break;
    }
    jac = jacobian(internal);
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < opts.grad_tol * std::max(1.0, cost) || cost == 0.0) {
      res.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    bool accepted = false;
    while (lambda < 1e20) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index c = 0; c < m; ++c) a(c, c) += lambda * std::max(jtj(c, c), 1e-12);
      Eigen::VectorXd step;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(grad);
      } else {
        singular_flagged = true;
        step = a.completeOrthogonalDecomposition().solve(grad);
      }
      Eigen::VectorXd trial = internal;
      for (Eigen::Index c = 0; c < m; ++c) trial[free_idx[c]] += step[c];
      const Eigen::VectorXd r_trial = weighted_residual(trial);
      const double cost_trial = r_trial.squaredNorm();
      if (std::isfinite(cost_trial) && cost_trial < cost) {
        const double rel = (cost - cost_trial) / std::max(cost, 1e-300);
        internal = trial;
        r = r_trial;
        cost = cost_trial;
        res.cost_history.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < opts.rel_cost_tol) res.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (res.converged) {
      ++iter;
      break;
    }
    if (!accepted) {
      // No downhill step at any damping: stationary to machine precision.
      res.converged = true;
      ++iter;
      break;
    }
  }
  res.n_iterations = iter;
  if (!res.converged)
    res.warnings.push_back("non-convergence: iteration cap reached, best cost " +
                           std::to_string(cost));

  // Covariance at the solution.
  const Eigen::VectorXd ext = external_of(internal);
  res.values = ext;
  res.internal_values = internal;
  res.residuals = data - model(ext);
  res.cost = cost;
  res.residual_norm = std::sqrt(cost);

  res.internal_covariance = Eigen::MatrixXd::Zero(n_par, n_par);
  res.covariance = Eigen::MatrixXd::Zero(n_par, n_par);
  if (m > 0) {
    jac = jacobian(internal);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const double dof = static_cast<double>(n - m);
    const double sigma2 = dof > 0 ? cost / dof : 1.0;
    Eigen::MatrixXd inv;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(jtj);
    const bool pd = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                    ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff());
    if (pd) {
      inv = ldlt.solve(Eigen::MatrixXd::Identity(m, m));
    } else {
      singular_flagged = true;
      inv = jtj.completeOrthogonalDecomposition().pseudoInverse();
      res.warnings.push_back("covariance not positive-definite");
    }
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        res.internal_covariance(free_idx[a], free_idx[b]) = sigma2 * inv(a, b);
    Eigen::VectorXd t = Eigen::VectorXd::Zero(n_par);
    for (int k : free_idx) t[k] = external_derivative(internal[k], params[k].bound);
    res.covariance = t.asDiagonal() * res.internal_covariance * t.asDiagonal();
    res.covariance = 0.5 * (res.covariance + res.covariance.transpose());
  }
  if (singular_flagged) res.warnings.push_back("singular normal equations: damped pseudo-inverse used");
  res.errors = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.mc_intervals.assign(static_cast<std::size_t>(n_par), std::nullopt);
  return res;
}

double stretched_exponential(double t, double amplitude, double time_constant, double beta,
                             double offset) {
  return amplitude * std::exp(-std::pow(std::max(t, 0.0) / time_constant, beta)) + offset;
}

FitResult fit_stretched_exponential(const CurveData& curve, std::optional<double> fix_beta) {
  const Eigen::Index n = curve.x.size();
  if (curve.y.size() != n) throw InvalidArgument("fit_stretched_exponential: length mismatch");
  if (n < 8) throw InvalidArgument("fit_stretched_exponential: need at least 8 points");
  if (fix_beta && !(*fix_beta > 0.0 && *fix_beta <= 3.0))
    throw InvalidArgument("fit_stretched_exponential: fixed beta must be in (0, 3]");

  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return curve.x[a] < curve.x[b]; });
  const double y_first = curve.y[order.front()];
  const double y_last = curve.y[order.back()];
  double a0 = y_first - y_last;
  if (a0 == 0.0) a0 = 1.0;
  double t0 = curve.x[order[n / 2]];
  for (Eigen::Index i : order) {
    if ((curve.y[i] - y_last) / a0 < std::exp(-1.0)) {
      t0 = curve.x[i];
      break;
    }
  }
  const double x_max = curve.x.maxCoeff();
  if (!(t0 > 0.0)) t0 = std::max(x_max / 3.0, 1e-12);

  std::vector<Parameter> params{
      {"A", a0, {}, false},
      {"T", t0, {0.0, kInf}, false},
      {"beta", fix_beta.value_or(1.0), {0.05, 3.0}, fix_beta.has_value()},
      {"y0", y_last, {}, false},
  };
  const Eigen::VectorXd x = curve.x;
  auto model = [x](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      out[i] = stretched_exponential(x[i], p[0], p[1], p[2], p[3]);
    return out;
  };
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (curve.sigma.size() == n)
    for (Eigen::Index i = 0; i < n; ++i) w[i] = 1.0 / std::max(curve.sigma[i] * curve.sigma[i], 1e-300);

  // Seed with a short exponential fit, then release beta; the stretched
  // surface has a flat valley in (T, beta) far from the optimum.
  FitResult res;
  if (!fix_beta) {
    auto p1 = params;
    p1[2].fixed = true;
    const FitResult pre = least_squares(model, curve.y, w, p1);
    for (int k : {0, 1, 3}) params[k].init = pre.values[k];
  }
  res = least_squares(model, curve.y, w, params);

  const double t_fit = res.value("T");
  double x_min_pos = kInf;
  for (Eigen::Index i = 0; i < n; ++i)
    if (curve.x[i] > 0.0) x_min_pos = std::min(x_min_pos, curve.x[i]);
  if (t_fit > 10.0 * x_max || t_fit < x_min_pos / 10.0)
    res.warnings.push_back("extrapolation: fitted T outside sweep range by more than 10x");
  return res;
}

FitResult fit_damped_cosine(const CurveData& curve) {
  const Eigen::Index n = curve.x.size();
  if (curve.y.size() != n || n < 8) throw InvalidArgument("fit_damped_cosine: need >= 8 points");
  const double mean = curve.y.mean();
  const double x0 = curve.x.minCoeff();
  const double span = curve.x.maxCoeff() - x0;
  if (!(span > 0.0)) throw InvalidArgument("fit_damped_cosine: degenerate sweep");
  const double two_pi = 2.0 * std::numbers::pi;

  // Periodogram seed up to the mean-spacing Nyquist frequency.
  const double f_max = 0.5 * static_cast<double>(n - 1) / span;
  const int n_f = static_cast<int>(40 * n);
  double best_f = 1.0 / span;
  double best_p = -1.0;
  std::complex<double> best_acc = 0.0;
  for (int k = 1; k <= n_f; ++k) {
    const double f = f_max * k / n_f;
    std::complex<double> acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      acc += (curve.y[i] - mean) * std::polar(1.0, -two_pi * f * curve.x[i]);
    if (std::norm(acc) > best_p) {
      best_p = std::norm(acc);
      best_f = f;
      best_acc = acc;
    }
  }
  const double amp0 = 0.5 * (curve.y.maxCoeff() - curve.y.minCoeff());
  const double phase0 = std::arg(best_acc);

  std::vector<Parameter> params{
      {"A", amp0, {}, false},
      {"freq", best_f, {0.0, kInf}, false},
      {"phase", phase0, {}, false},
      {"T", 2.0 * span, {0.0, kInf}, false},
      {"y0", mean, {}, false},
  };
  const Eigen::VectorXd x = curve.x;
  auto model = [x, two_pi](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
      out[i] = p[0] * std::cos(two_pi * p[1] * x[i] + p[2]) * std::exp(-x[i] / p[3]) + p[4];
    return out;
  };
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (curve.sigma.size() == n)
    for (Eigen::Index i = 0; i < n; ++i) w[i] = 1.0 / std::max(curve.sigma[i] * curve.sigma[i], 1e-300);
  return least_squares(model, curve.y, w, params);
}

Interval monte_carlo_uncertainty(const FitResult& fit,
                                 const std::function<double(const Eigen::VectorXd&)>& derived_fn,
                                 int n, std::uint64_t seed, std::vector<std::string>* warnings) {
  if (n <= 0) throw InvalidArgument("monte_carlo_uncertainty: n must be > 0");
  const Eigen::Index p = fit.values.size();
  const bool use_internal = fit.internal_covariance.size() == p * p && p > 0 &&
                            fit.internal_values.size() == p && fit.bounds.size() == static_cast<std::size_t>(p);
  const Eigen::MatrixXd cov = use_internal ? fit.internal_covariance : fit.covariance;
  const Eigen::VectorXd center = use_internal ? fit.internal_values : fit.values;
  if (cov.rows() != p || cov.cols() != p)
    throw InvalidArgument("monte_carlo_uncertainty: covariance shape mismatch");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol && warnings)
    warnings->push_back("non-PSD covariance: negative eigenvalues clipped to 0");
  ev = ev.cwiseMax(0.0);
  const Eigen::MatrixXd l = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(n));
  Eigen::VectorXd z(p);
  for (int s = 0; s < n; ++s) {
    for (Eigen::Index k = 0; k < p; ++k) z[k] = normal(rng);
    Eigen::VectorXd draw = center + l * z;
    if (use_internal) {
      for (Eigen::Index k = 0; k < p; ++k)
        draw[k] = fit.fixed[k] ? fit.values[k] : to_external(draw[k], fit.bounds[k]);
    }
    samples.push_back(derived_fn(draw));
  }
  std::sort(samples.begin(), samples.end());
  const double q = std::erf(1.0 / std::numbers::sqrt2);  // 0.6827
  return {quantile_sorted(samples, 0.5 - 0.5 * q), quantile_sorted(samples, 0.5 + 0.5 * q)};
}

nlohmann::json to_json(const FitResult& fit) {
  nlohmann::json j;
  j["converged"] = fit.converged;
  j["n_iterations"] = fit.n_iterations;
  j["residual_norm"] = fit.residual_norm;
  j["warnings"] = fit.warnings;
  nlohmann::json ps = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    nlohmann::json e{{"name", fit.names[k]},
                     {"value", fit.values[static_cast<Eigen::Index>(k)]},
                     {"error", fit.errors.size() > static_cast<Eigen::Index>(k)
                                   ? fit.errors[static_cast<Eigen::Index>(k)]
                                   : 0.0},
                     {"fixed", k < fit.fixed.size() ? static_cast<bool>(fit.fixed[k]) : false}};
    if (k < fit.mc_intervals.size() && fit.mc_intervals[k])
      e["mc_interval"] = {fit.mc_intervals[k]->lo, fit.mc_intervals[k]->hi};
    ps.push_back(e);
  }
  j["parameters"] = ps;
  return j;
}

}  // namespace molspin::fit
