#include "molspin/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_map>

#include <unsupported/Eigen/MatrixFunctions>

#include <boost/math/distributions/binomial.hpp>

#include "molspin/error.hpp"
#include "molspin/zfs_spin.hpp"

namespace molspin::spectra {

namespace {

using photo::PhotophysicsParams;

constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))

double counts_per_s(const PhotophysicsParams& p) {
  const photo::RateModel m = photo::build_rate_model(p);
  return photo::fluorescence_rate(photo::steady_state(m), m) * 1e9;
}

// Linear interpolation on a monotone increasing axis; zero outside.
double sample(const std::vector<double>& x, const std::vector<double>& y, double at) {
  if (at < x.front() || at > x.back()) return 0.0;
  const auto it = std::lower_bound(x.begin(), x.end(), at);
  const std::size_t i = static_cast<std::size_t>(it - x.begin());
  if (i == 0) return y[0];
  const double f = (at - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + f * (y[i] - y[i - 1]);
}

// Trapezoid integral of the piece-wise linear interpolant over [lo, hi].
double integrate(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi) {
  lo = std::max(lo, x.front());
  hi = std::min(hi, x.back());
  if (!(hi > lo)) return 0.0;
  double sum = 0.0;
  double xp = lo, yp = sample(x, y, lo);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= lo) continue;
    if (x[i] >= hi) break;
    sum += 0.5 * (y[i] + yp) * (x[i] - xp);
    xp = x[i];
    yp = y[i];
  }
  sum += 0.5 * (sample(x, y, hi) + yp) * (hi - xp);
  return sum;
}

// Full width at half maximum of the highest peak above the minimum.
double half_max_width(const std::vector<double>& x, const std::vector<double>& y) {
  const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double base = *std::min_element(y.begin(), y.end());
  const double half = 0.5 * (y[imax] + base);
  std::size_t l = imax, r = imax;
  while (l > 0 && y[l] > half) --l;
  while (r + 1 < y.size() && y[r] > half) ++r;
  auto cross = [&](std::size_t i, std::size_t j) {
    if (y[i] == y[j]) return x[i];
    return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i]);
  };
  const double xl = l < imax ? cross(l, l + 1) : x[l];
  const double xr = r > imax ? cross(r, r - 1) : x[r];
  const double w = std::abs(xr - xl);
  return w > 0.0 ? w : std::abs(x.back() - x.front()) / static_cast<double>(x.size());
}

Spectrum make_spectrum(std::vector<double> axis, std::vector<double> intensity) {
  Spectrum s;
  s.axis = std::move(axis);
  s.intensity = std::move(intensity);
  return s;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

// ---------------------------------------------------------------- Spectrum

void Spectrum::validate() const {
  if (axis.size() != intensity.size()) throw InvalidArgument("spectrum: axis and intensity lengths differ");
  if (axis.size() < 2) throw InvalidArgument("spectrum: need at least 2 points");
  const bool up = axis[1] > axis[0];
  for (std::size_t i = 1; i < axis.size(); ++i)
    if (!(up ? axis[i] > axis[i - 1] : axis[i] < axis[i - 1]))
      throw InvalidArgument("spectrum: axis must be strictly monotone");
  for (double v : intensity)
    if (!std::isfinite(v)) throw InvalidArgument("spectrum: intensities must be finite");
}

double Spectrum::uniform_step() const {
  validate();
  const double step = (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1);
  if (!(step > 0.0)) throw InvalidArgument("spectrum: axis must be increasing");
  for (std::size_t i = 1; i < axis.size(); ++i)
    if (std::abs(axis[i] - axis[i - 1] - step) > 1e-6 * step)
      throw InvalidArgument("spectrum: axis must be uniformly spaced");
  return step;
}

double Spectrum::max_intensity() const { return *std::max_element(intensity.begin(), intensity.end()); }

double Spectrum::argmax() const {
  return axis[static_cast<std::size_t>(std::max_element(intensity.begin(), intensity.end()) - intensity.begin())];
}

double lorentzian(double x, double center, double fwhm, double amplitude) {
  const double u = 2.0 * (x - center) / fwhm;
  return amplitude / (1.0 + u * u);
}

fit::FitResult fit_lorentzian(const Spectrum& s, std::optional<double> window) {
  s.validate();
  const double peak = s.argmax();
  std::vector<double> x, y;
  for (std::size_t i = 0; i < s.axis.size(); ++i)
    if (!window || std::abs(s.axis[i] - peak) <= *window) {
      x.push_back(s.axis[i]);
      y.push_back(s.intensity[i]);
    }
  if (x.size() < 5) throw InvalidArgument("fit_lorentzian: fewer than 5 points in the window");
  if (x.front() > x.back()) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  const double base = *std::min_element(y.begin(), y.end());
  const double top = *std::max_element(y.begin(), y.end());
  const std::vector<fit::Parameter> params{
      {"A", top - base, {}, false},
      {"x0", peak, {}, false},
      {"fwhm", half_max_width(x, y), {0.0, fit::kInf}, false},
      {"y0", base, {}, false},
  };
  const Eigen::VectorXd xv = to_eigen(x);
  auto model = [xv](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(xv.size());
    for (Eigen::Index i = 0; i < xv.size(); ++i) out[i] = lorentzian(xv[i], p[1], p[2], p[0]) + p[3];
    return out;
  };
  return fit::least_squares(model, to_eigen(y), Eigen::VectorXd::Ones(xv.size()), params);
}

// ---------------------------------------------------------------- ODMR

Spectrum odmr_spectrum(const PhotophysicsParams& params, const std::vector<double>& mw_grid_mhz, double mw_rabi_khz,
                       const std::vector<double>& laser_positions_mhz) {
  params.validate();
  if (!(mw_rabi_khz >= 0.0)) throw InvalidArgument("odmr_spectrum: Rabi frequency must be >= 0");
  const double f_zy = photo::ground_line_mhz(params, photo::T0z, photo::T0y);
  const double f_zx = photo::ground_line_mhz(params, photo::T0z, photo::T0x);
  const std::vector<double> lasers =
      laser_positions_mhz.empty() ? std::vector<double>{params.laser_detuning_mhz} : laser_positions_mhz;
  const double rabi = mw_rabi_khz * 1e-3;
  PhotophysicsParams q = params;
  q.excited_mw.clear();
  std::vector<double> out;
  out.reserve(mw_grid_mhz.size());
  for (double f : mw_grid_mhz) {
    q.mw_drive = {{photo::T0z, photo::T0y, rabi, f - f_zy, 0.0}, {photo::T0z, photo::T0x, rabi, f - f_zx, 0.0}};
    double sum = 0.0;
    for (double l : lasers) {
      q.laser_detuning_mhz = l;
      sum += counts_per_s(q);
    }
    out.push_back(sum / static_cast<double>(lasers.size()));
  }
  Spectrum s = make_spectrum(mw_grid_mhz, std::move(out));
  s.metadata["kind"] = "odmr";
  s.metadata["mw_rabi_khz"] = std::to_string(mw_rabi_khz);
  return s;
}

Spectrum excited_state_odmr(const PhotophysicsParams& params, const std::vector<double>& mw_grid_mhz,
                            double transfer_rate_per_ns, const std::vector<double>& laser_positions_mhz) {
  params.validate();
  if (!(transfer_rate_per_ns >= 0.0)) throw InvalidArgument("excited_state_odmr: transfer rate must be >= 0");
  const auto e = zfs::zero_field_energies(params.excited).energies_mhz;
  const double f_zy = std::abs(e[2] - e[1]);
  const double f_zx = std::abs(e[2] - e[0]);
  const std::vector<double> lasers =
      laser_positions_mhz.empty() ? std::vector<double>{params.laser_detuning_mhz} : laser_positions_mhz;
  PhotophysicsParams q = params;
  std::vector<double> out;
  out.reserve(mw_grid_mhz.size());
  for (double f : mw_grid_mhz) {
    q.excited_mw = {{photo::T1y, photo::T1z, transfer_rate_per_ns, f - f_zy},
                    {photo::T1x, photo::T1z, transfer_rate_per_ns, f - f_zx}};
    double sum = 0.0;
    for (double l : lasers) {
      q.laser_detuning_mhz = l;
      sum += counts_per_s(q);
    }
    out.push_back(sum / static_cast<double>(lasers.size()));
  }
  Spectrum s = make_spectrum(mw_grid_mhz, std::move(out));
  s.metadata["kind"] = "excited_state_odmr";
  return s;
}

// ---------------------------------------------------------- excitation

MwConfig parse_mw_config(const std::string& s) {
  if (s == "none") return MwConfig::none;
  if (s == "zx" || s == "ZX") return MwConfig::zx;
  if (s == "zy" || s == "ZY") return MwConfig::zy;
  if (s == "both") return MwConfig::both;
  throw InvalidArgument("unknown MW configuration '" + s + "' (none, zx, zy, both)");
}

std::string to_string(MwConfig c) {
  switch (c) {
    case MwConfig::none:
      return "none";
    case MwConfig::zx:
      return "zx";
    case MwConfig::zy:
      return "zy";
    case MwConfig::both:
      return "both";
  }
  return "none";
}

std::vector<photo::MwDrive> mw_drives(MwConfig c, double rabi_mhz) {
  std::vector<photo::MwDrive> d;
  if (c == MwConfig::zy || c == MwConfig::both) d.push_back({photo::T0z, photo::T0y, rabi_mhz, 0.0, 0.0});
  if (c == MwConfig::zx || c == MwConfig::both) d.push_back({photo::T0z, photo::T0x, rabi_mhz, 0.0, 0.0});
  return d;
}

LineResponse::LineResponse(const PhotophysicsParams& params, MwConfig mw, double lo_mhz, double hi_mhz,
                           double step_mhz, double cw_rabi_mhz)
    : lo_(lo_mhz) {
  params.validate();
  if (!(hi_mhz > lo_mhz) || !(step_mhz > 0.0)) throw InvalidArgument("LineResponse: need lo < hi and step > 0");
  PhotophysicsParams q = params;
  q.mw_drive = mw_drives(mw, cw_rabi_mhz);
  q.excited_mw.clear();
  q.line_shift_mhz = 0.0;
  const auto n = static_cast<std::size_t>(std::ceil((hi_mhz - lo_mhz) / step_mhz)) + 1;
  std::vector<double> v(std::max<std::size_t>(n, 4));
  for (std::size_t i = 0; i < v.size(); ++i) {
    q.laser_detuning_mhz = lo_mhz + step_mhz * static_cast<double>(i);
    v[i] = counts_per_s(q);
  }
  hi_ = lo_mhz + step_mhz * static_cast<double>(v.size() - 1);
  spline_ = std::make_shared<boost::math::interpolators::cardinal_cubic_b_spline<double>>(v.begin(), v.end(),
                                                                                          lo_mhz, step_mhz);
}

double LineResponse::operator()(double d) const {
  if (d < lo_ || d > hi_) throw InvalidArgument("LineResponse: detuning outside the sampled range");
  return (*spline_)(d);
}

Spectrum excitation_spectrum(const PhotophysicsParams& params, const std::vector<double>& line_shifts_mhz,
                             const std::vector<double>& laser_grid_mhz, MwConfig mw, double cw_rabi_mhz) {
  if (line_shifts_mhz.empty()) throw InvalidArgument("excitation_spectrum: no molecules");
  if (laser_grid_mhz.size() < 2) throw InvalidArgument("excitation_spectrum: need at least 2 grid points");
  const auto [smin, smax] = std::minmax_element(line_shifts_mhz.begin(), line_shifts_mhz.end());
  const auto [gmin, gmax] = std::minmax_element(laser_grid_mhz.begin(), laser_grid_mhz.end());
  const LineResponse r(params, mw, *gmin - *smax - 10.0, *gmax - *smin + 10.0, 2.0, cw_rabi_mhz);
  std::vector<double> out(laser_grid_mhz.size(), 0.0);
  for (std::size_t i = 0; i < laser_grid_mhz.size(); ++i)
    for (double s : line_shifts_mhz) out[i] += r(laser_grid_mhz[i] - s);
  Spectrum sp = make_spectrum(laser_grid_mhz, std::move(out));
  sp.metadata["kind"] = "excitation";
  sp.metadata["mw"] = to_string(mw);
  sp.metadata["molecules"] = std::to_string(line_shifts_mhz.size());
  return sp;
}

// ---------------------------------------------------------- isotopes

void IsotopeEnsembleSpec::validate() const {
  if (n_molecules < 0) throw InvalidArgument("isotope ensemble: n_molecules must be >= 0");
  if (carbon_count < 0) throw InvalidArgument("isotope ensemble: carbon_count must be >= 0");
  if (!(c13_abundance >= 0.0 && c13_abundance <= 1.0))
    throw InvalidArgument("isotope ensemble: abundance must be in [0, 1]");
  if (!(dxy_mhz > 0.0) || !(dxz_mhz > 0.0)) throw InvalidArgument("isotope ensemble: separations must be > 0");
  if (!(inhomogeneous_fwhm_mhz >= 0.0)) throw InvalidArgument("isotope ensemble: inhomogeneous FWHM must be >= 0");
  if (class_shifts_mhz.empty()) throw InvalidArgument("isotope ensemble: class shift table is empty");
}

std::vector<double> isotope_class_probabilities(const IsotopeEnsembleSpec& spec) {
  spec.validate();
  const int n_classes = static_cast<int>(spec.class_shifts_mhz.size());
  std::vector<double> p(static_cast<std::size_t>(n_classes), 0.0);
  const boost::math::binomial_distribution<double> b(spec.carbon_count, spec.c13_abundance);
  for (int k = 0; k <= spec.carbon_count; ++k) p[std::min(k, n_classes - 1)] += boost::math::pdf(b, k);
  return p;
}

std::vector<EnsembleMolecule> sample_isotope_ensemble(const IsotopeEnsembleSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::binomial_distribution<int> count(spec.carbon_count, spec.c13_abundance);
  std::normal_distribution<double> jitter(0.0, spec.inhomogeneous_fwhm_mhz * kFwhmToSigma);
  const int last = static_cast<int>(spec.class_shifts_mhz.size()) - 1;
  std::vector<EnsembleMolecule> out(static_cast<std::size_t>(spec.n_molecules));
  for (auto& m : out) {
    m.n_c13 = count(rng);
    m.class_label = std::min(m.n_c13, last);
    m.line_shift_mhz = spec.class_shifts_mhz[m.class_label] + (spec.inhomogeneous_fwhm_mhz > 0.0 ? jitter(rng) : 0.0);
  }
  return out;
}

PhotophysicsParams ensemble_params(const PhotophysicsParams& base, const IsotopeEnsembleSpec& spec) {
  spec.validate();
  PhotophysicsParams p = base;
  p.optical_lines_mhz = photo::optical_lines_from_separations(spec.dxy_mhz, spec.dxz_mhz);
  return p;
}

std::vector<double> line_shifts(const std::vector<EnsembleMolecule>& molecules) {
  std::vector<double> s;
  s.reserve(molecules.size());
  for (const auto& m : molecules) s.push_back(m.line_shift_mhz);
  return s;
}

// ---------------------------------------------------------- triple fits

Spectrum synthetic_triple_spectrum(const std::vector<double>& axis, const std::vector<TripleLines>& triples,
                                   double dxy_mhz, double dxz_mhz, double offset) {
  const std::array<double, 3> off{0.0, dxy_mhz, dxz_mhz};
  std::vector<double> y(axis.size(), offset);
  for (std::size_t i = 0; i < axis.size(); ++i)
    for (const auto& t : triples)
      for (int l = 0; l < 3; ++l) y[i] += lorentzian(axis[i], t.center_mhz + off[l], t.fwhm_mhz[l], t.amplitude[l]);
  Spectrum s = make_spectrum(axis, std::move(y));
  s.validate();
  return s;
}

TripleFit fit_lorentzian_triples(const Spectrum& s, const TripleFitOptions& o) {
  s.validate();
  if (o.n_triples < 1) throw InvalidArgument("fit_lorentzian_triples: n_triples must be >= 1");
  if (!o.center_guesses.empty() && static_cast<int>(o.center_guesses.size()) != o.n_triples)
    throw InvalidArgument("fit_lorentzian_triples: need one center guess per triple");
  std::vector<double> x = s.axis, y = s.intensity;
  if (x.front() > x.back()) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  const int nt = o.n_triples;
  const double base = *std::min_element(y.begin(), y.end());
  const double w0 = o.width_guess_mhz > 0.0 ? o.width_guess_mhz : half_max_width(x, y);
  const std::array<double, 3> off{0.0, o.dxy_guess_mhz, o.dxz_guess_mhz};

  // Seeds: greedy matched filter on the residual, peeling one triple at a time.
  std::vector<double> centers = o.center_guesses;
  std::vector<std::array<double, 3>> amps(static_cast<std::size_t>(nt));
  std::vector<double> r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = y[i] - base;
  for (int t = 0; t < nt; ++t) {
    double c = 0.0;
    if (o.center_guesses.empty()) {
      double best = -fit::kInf;
      for (double xc : x) {
        const double score = sample(x, r, xc) + sample(x, r, xc + off[1]) + sample(x, r, xc + off[2]);
        if (score > best) {
          best = score;
          c = xc;
        }
      }
      centers.push_back(c);
    } else {
      c = centers[t];
    }
    for (int l = 0; l < 3; ++l) amps[t][l] = std::max(sample(x, r, c + off[l]), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int l = 0; l < 3; ++l) r[i] -= lorentzian(x[i], c + off[l], w0, amps[t][l]);
  }

  // Widths between one grid step and the axis span; unbounded widths let
  // empty slots absorb the baseline on broad ensemble spectra.
  const double span = x.back() - x.front();
  const fit::Bound wb{std::abs(x[1] - x[0]), span};
  const fit::Bound cb{x.front() - span, x.back() + span};
  std::vector<fit::Parameter> params{
      {"dxy", o.dxy_guess_mhz, {0.0, fit::kInf}, false},
      {"dxz", o.dxz_guess_mhz, {0.0, fit::kInf}, false},
      {"y0", base, {}, false},
  };
  const char* lbl[3] = {"x", "y", "z"};
  for (int t = 0; t < nt; ++t) {
    const std::string k = std::to_string(t);
    params.push_back({"c_" + k, centers[t], cb, false});
    for (int l = 0; l < 3; ++l) params.push_back({"A_" + k + "_" + lbl[l], amps[t][l], {0.0, fit::kInf}, false});
    const double wi = std::clamp(w0, wb.lo * 1.01, wb.hi * 0.99);
    for (int l = 0; l < 3; ++l) params.push_back({"w_" + k + "_" + lbl[l], wi, wb, false});
  }
  const Eigen::VectorXd xv = to_eigen(x);
  auto model = [xv, nt](const Eigen::VectorXd& p) {
    Eigen::VectorXd out = Eigen::VectorXd::Constant(xv.size(), p[2]);
    const std::array<double, 3> d{0.0, p[0], p[1]};
    for (int t = 0; t < nt; ++t) {
      const int b = 3 + 7 * t;
      for (int l = 0; l < 3; ++l)
        for (Eigen::Index i = 0; i < xv.size(); ++i) out[i] += lorentzian(xv[i], p[b] + d[l], p[b + 4 + l], p[b + 1 + l]);
    }
    return out;
  };
  fit::LsqOptions lo;
  lo.max_iterations = 2000;
  TripleFit res;
  res.fit = fit::least_squares(model, to_eigen(y), Eigen::VectorXd::Ones(xv.size()), params, lo);
  if (!res.fit.converged)
    res.fit.warnings.push_back("triple fit did not converge; best residual norm " +
                               std::to_string(res.fit.residual_norm));
  const Eigen::VectorXd& p = res.fit.values;
  res.dxy_mhz = p[0];
  res.dxz_mhz = p[1];
  std::vector<double> area(static_cast<std::size_t>(nt), 0.0);
  std::vector<TripleLines> tl(static_cast<std::size_t>(nt));
  for (int t = 0; t < nt; ++t) {
    const int b = 3 + 7 * t;
    tl[t].center_mhz = p[b];
    for (int l = 0; l < 3; ++l) {
      tl[t].amplitude[l] = p[b + 1 + l];
      tl[t].fwhm_mhz[l] = p[b + 4 + l];
      area[t] += 0.5 * std::numbers::pi * tl[t].amplitude[l] * tl[t].fwhm_mhz[l];
    }
  }
  const double total = std::accumulate(area.begin(), area.end(), 0.0);
  std::vector<int> order(static_cast<std::size_t>(nt));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return area[a] > area[b]; });
  for (int t : order) {
    res.triples.push_back(tl[t]);
    res.relative_area.push_back(total != 0.0 ? area[t] / total : 0.0);
  }
  return res;
}

// ---------------------------------------------------------- correlation

Spectrum cross_correlate(const Spectrum& a, const Spectrum& b, std::optional<int> max_lag) {
  const double step = a.uniform_step();
  const double step_b = b.uniform_step();
  const auto n = static_cast<int>(a.axis.size());
  if (static_cast<int>(b.axis.size()) != n || std::abs(step - step_b) > 1e-9 * step ||
      std::abs(a.axis.front() - b.axis.front()) > 1e-6 * step)
    throw InvalidArgument("cross_correlate: spectra must share one uniform grid");
  const int k_max = max_lag.value_or(n / 2);
  if (k_max < 0 || k_max >= n) throw InvalidArgument("cross_correlate: max_lag out of range");
  std::vector<double> axis, d;
  for (int k = -k_max; k <= k_max; ++k) {
    const int lo = std::max(0, -k);
    const int hi = std::min(n, n - k);
    double sum = 0.0;
    for (int i = lo; i < hi; ++i) sum += a.intensity[i + k] * b.intensity[i];
    axis.push_back(k * step);
    d.push_back(sum / static_cast<double>(hi - lo));
  }
  Spectrum out = make_spectrum(std::move(axis), std::move(d));
  out.metadata["kind"] = "cross_correlation";
  return out;
}

PeakEstimate fit_correlation_peak(const Spectrum& corr, double guess, double window) {
  corr.validate();
  std::vector<double> x, y;
  for (std::size_t i = 0; i < corr.axis.size(); ++i)
    if (std::abs(corr.axis[i] - guess) <= window) {
      x.push_back(corr.axis[i]);
      y.push_back(corr.intensity[i]);
    }
  if (x.size() < 6) throw InvalidArgument("fit_correlation_peak: fewer than 6 points in the window");
  if (x.front() > x.back()) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  // Lorentzian on a linear slope, slope referenced to the window center.
  const auto imax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double base = std::min(y.front(), y.back());
  const std::vector<fit::Parameter> params{
      {"A", y[imax] - base, {}, false},
      {"x0", x[imax], {}, false},
      {"fwhm", half_max_width(x, y), {0.0, fit::kInf}, false},
      {"y0", base, {}, false},
      {"slope", (y.back() - y.front()) / (x.back() - x.front()), {}, false},
  };
  const Eigen::VectorXd xv = to_eigen(x);
  auto model = [xv, guess](const Eigen::VectorXd& p) {
    Eigen::VectorXd out(xv.size());
    for (Eigen::Index i = 0; i < xv.size(); ++i)
      out[i] = lorentzian(xv[i], p[1], p[2], p[0]) + p[3] + p[4] * (xv[i] - guess);
    return out;
  };
  PeakEstimate pe;
  pe.fit = fit::least_squares(model, to_eigen(y), Eigen::VectorXd::Ones(xv.size()), params);
  pe.center = pe.fit.value("x0");
  pe.fwhm = pe.fit.value("fwhm");
  return pe;
}

namespace {

// One laser step of a scan: propagator over the dwell and the detected-count
// row vector integrated over it.
struct ScanStep {
  photo::LiouvilleMatrix u;
  Eigen::Matrix<double, 1, photo::kStateDim> counts;
};

class ScanCache {
 public:
  ScanCache(const PhotophysicsParams& params, MwConfig mw, double step, double dwell)
      : p_(params), step_(step), dwell_(dwell) {
    p_.mw_drive = mw_drives(mw, photo::kDefaultCwRabiMhz);
    p_.excited_mw.clear();
    p_.line_shift_mhz = 0.0;
  }

  // Relative detuning k * step + frac.
  const ScanStep& at(long k, double frac) {
    auto& table = tables_[frac];
    auto it = table.find(k);
    if (it != table.end()) return it->second;
    PhotophysicsParams q = p_;
    q.laser_detuning_mhz = static_cast<double>(k) * step_ + frac;
    const photo::RateModel m = photo::build_rate_model(q);
    constexpr int n = photo::kStateDim;
    Eigen::Matrix<double, 2 * n, 2 * n> aug = Eigen::Matrix<double, 2 * n, 2 * n>::Zero();
    aug.topLeftCorner<n, n>() = photo::liouvillian(m);
    aug.topRightCorner<n, n>().setIdentity();
    const Eigen::Matrix<double, 2 * n, 2 * n> e = (aug * dwell_).exp();
    Eigen::Matrix<double, 1, n> row = Eigen::Matrix<double, 1, n>::Zero();
    row.head<photo::kLevels>() = m.collection_efficiency * m.emission_out().transpose();
    return table.emplace(k, ScanStep{e.topLeftCorner<n, n>(), row * e.topRightCorner<n, n>()}).first->second;
  }

  photo::LiouvilleVector start_state(double detuning) const {
    PhotophysicsParams q = p_;
    q.laser_detuning_mhz = detuning;
    return photo::steady_state(photo::build_rate_model(q)).to_vector();
  }

 private:
  PhotophysicsParams p_;
  double step_, dwell_;
  std::map<double, std::unordered_map<long, ScanStep>> tables_;
};

}  // namespace

XYSpectra simulate_few_molecule_spectra(const PhotophysicsParams& params, const FewMoleculeSpec& spec,
                                        const std::vector<double>& laser_grid_mhz, std::uint64_t seed) {
  params.validate();
  if (spec.n_molecules < 1 || spec.scans < 1 || spec.warmup_scans < 0)
    throw InvalidArgument("few-molecule spectra: need >= 1 molecule and >= 1 scan");
  if (!(spec.inhomogeneous_fwhm_mhz >= 0.0) || !(spec.spectral_diffusion_fwhm_mhz >= 0.0))
    throw InvalidArgument("few-molecule spectra: widths must be >= 0");
  if (!(spec.dwell_ns > 0.0)) throw InvalidArgument("few-molecule spectra: dwell must be > 0");
  Spectrum grid = make_spectrum(laser_grid_mhz, std::vector<double>(laser_grid_mhz.size(), 0.0));
  const double h = grid.uniform_step();
  const double g0 = laser_grid_mhz.front();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> inh(0.0, spec.inhomogeneous_fwhm_mhz * kFwhmToSigma);
  std::normal_distribution<double> sd(0.0, spec.spectral_diffusion_fwhm_mhz * kFwhmToSigma);
  XYSpectra out;
  for (int m = 0; m < spec.n_molecules; ++m) out.line_shifts_mhz.push_back(inh(rng));

  for (int which = 0; which < 2; ++which) {
    ScanCache cache(params, which == 0 ? MwConfig::zx : MwConfig::zy, h, spec.dwell_ns);
    std::vector<double> y(laser_grid_mhz.size(), 0.0);
    for (double s : out.line_shifts_mhz) {
      // Relative detuning of grid point i: g0 + i h - s = (i - k0) h + frac.
      const double rel0 = g0 - s;
      const long k0 = static_cast<long>(std::floor(rel0 / h));
      const double frac = rel0 - static_cast<double>(k0) * h;
      photo::LiouvilleVector v = cache.start_state(rel0);
      for (int scan = 0; scan < spec.warmup_scans + spec.scans; ++scan) {
        const long jit = std::lround(sd(rng) / h);
        const bool record = scan >= spec.warmup_scans;
        for (std::size_t i = 0; i < y.size(); ++i) {
          const ScanStep& st = cache.at(k0 + static_cast<long>(i) - jit, frac);
          if (record) y[i] += st.counts.dot(v);
          v = st.u * v;
        }
      }
    }
    for (double& c : y) c *= 1e9 / (spec.dwell_ns * spec.scans);
    Spectrum sp = make_spectrum(laser_grid_mhz, std::move(y));
    sp.metadata["kind"] = "few_molecule_excitation";
    sp.metadata["mw"] = which == 0 ? "zx" : "zy";
    (which == 0 ? out.x : out.y) = std::move(sp);
  }
  return out;
}

// ---------------------------------------------------------- emission

Spectrum synthetic_emission_spectrum(const std::vector<double>& axis_nm, const EmissionSpec& e) {
  if (!(e.zpl_weight >= 0.0 && e.zpl_weight <= 1.0)) throw InvalidArgument("emission: ZPL weight must be in [0, 1]");
  if (!(e.zpl_fwhm_nm > 0.0) || !(e.sideband_scale_nm > 0.0)) throw InvalidArgument("emission: widths must be > 0");
  std::vector<double> zpl(axis_nm.size()), side(axis_nm.size());
  const double sig = e.zpl_fwhm_nm * kFwhmToSigma;
  for (std::size_t i = 0; i < axis_nm.size(); ++i) {
    const double dz = (axis_nm[i] - e.zpl_center_nm) / sig;
    zpl[i] = std::exp(-0.5 * dz * dz);
    const double u = (axis_nm[i] - e.sideband_onset_nm) / e.sideband_scale_nm;
    side[i] = u > 0.0 ? u * u * std::exp(-u) : 0.0;
  }
  const double w_lo = e.zpl_center_nm - e.zpl_half_window_nm, w_hi = e.zpl_center_nm + e.zpl_half_window_nm;
  // Scale both components so that the ZPL window holds zpl_weight of the
  // (window start .. limit) integral, which is normalized to 1.
  const double z_in = integrate(axis_nm, zpl, w_lo, w_hi), z_all = integrate(axis_nm, zpl, w_lo, e.sideband_limit_nm);
  const double s_in = integrate(axis_nm, side, w_lo, w_hi), s_all = integrate(axis_nm, side, w_lo, e.sideband_limit_nm);
  const double det = z_in * s_all - s_in * z_all;
  if (std::abs(det) < 1e-300) throw InvalidArgument("emission: ZPL and sideband shapes are not separable on this axis");
  const double a = (e.zpl_weight * s_all - s_in) / det;
  const double b = (z_in - e.zpl_weight * z_all) / det;
  std::vector<double> y(axis_nm.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a * zpl[i] + b * side[i] + e.background;
  Spectrum s = make_spectrum(axis_nm, std::move(y));
  s.validate();
  s.metadata["kind"] = "emission";
  return s;
}

double debye_waller(const Spectrum& emission, std::pair<double, double> zpl_window_nm, double sideband_limit_nm,
                    double background_max_nm) {
  emission.validate();
  std::vector<double> x = emission.axis, y = emission.intensity;
  if (x.front() > x.back()) {
    std::reverse(x.begin(), x.end());
    std::reverse(y.begin(), y.end());
  }
  const auto [lo, hi] = zpl_window_nm;
  if (!(hi > lo) || lo < x.front() || hi > x.back())
    throw InvalidArgument("debye_waller: ZPL window is empty or outside the axis");
  if (!(sideband_limit_nm > hi) || sideband_limit_nm > x.back())
    throw InvalidArgument("debye_waller: sideband limit must lie above the ZPL window and inside the axis");
  double bg = 0.0;
  int nb = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] <= background_max_nm) {
      bg += y[i];
      ++nb;
    }
  if (nb == 0) throw InvalidArgument("debye_waller: no background points below the background limit");
  bg /= nb;
  for (double& v : y) v -= bg;
  const double num = integrate(x, y, lo, hi);
  const double den = integrate(x, y, lo, sideband_limit_nm);
  if (!(den > 0.0)) throw InvalidArgument("debye_waller: window integral must be > 0");
  return std::clamp(num / den, 0.0, 1.0);
}

double doping_distance(double ratio) {
  if (!(ratio > 0.0)) throw InvalidArgument("doping_distance: ratio must be > 0");
  return std::cbrt(0.4175 / ratio);
}

}  // namespace molspin::spectra
