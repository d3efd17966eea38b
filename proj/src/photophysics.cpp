#include "molspin/photophysics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "molspin/constants.hpp"
#include "molspin/error.hpp"

namespace molspin::photo {

namespace {

using cd = std::complex<double>;

constexpr double kSumTol = 1e-9;

// Ground coherence slots: (row, col) of the ground block, in state order.
constexpr std::array<std::pair<int, int>, 3> kCoherencePairs{{{0, 1}, {0, 2}, {1, 2}}};

double unit_lorentzian(double detuning, double fwhm) {
  const double x = 2.0 * detuning / fwhm;
  return 1.0 / (1.0 + x * x);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void check_rate(std::vector<std::string>& out, const char* name, double v) {
  if (!std::isfinite(v) || v < 0.0) out.push_back(std::string(name) + " must be a finite rate >= 0, got " + fmt(v));
}

void check_distribution(std::vector<std::string>& out, const char* name,
                        const std::array<double, 3>& v) {
  for (double x : v)
    if (!std::isfinite(x) || x < 0.0) {
      out.push_back(std::string(name) + " entries must be >= 0");
      return;
    }
  const double s = v[0] + v[1] + v[2];
  if (std::abs(s - 1.0) > kSumTol)
    out.push_back(std::string("normalization: ") + name + " must sum to 1, sums to " + fmt(s));
}

// Rotating-frame level energies (rad/ns) for a tree of ground drives.
// Returns false if the drives contain a cycle or a repeated pair.
bool frame_energies(const PhotophysicsParams& p, std::array<double, 3>& e) {
  const auto zf = zfs::zero_field_energies(p.ground).energies_mhz;
  std::array<int, 3> parent{0, 1, 2};
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  for (const auto& d : p.mw_drive) {
    const int ra = find(d.a), rb = find(d.b);
    if (ra == rb) return false;
    parent[ra] = rb;
  }
  std::array<bool, 3> known{false, false, false};
  e = {0.0, 0.0, 0.0};
  for (int root = 0; root < 3; ++root) {
    if (known[root]) continue;
    known[root] = true;
    bool progress = true;
    while (progress) {
      progress = false;
      for (const auto& d : p.mw_drive) {
        if (known[d.a] == known[d.b]) continue;
        const bool a_upper = zf[d.a] > zf[d.b];
        const int upper = a_upper ? d.a : d.b;
        const int lower = a_upper ? d.b : d.a;
        const double delta = constants::mhz_to_rad_per_ns(d.detuning_mhz);
        if (known[lower])
          e[upper] = e[lower] - delta;
        else
          e[lower] = e[upper] + delta;
        known[d.a] = known[d.b] = true;
        progress = true;
      }
    }
  }
  return true;
}

Eigen::Matrix3cd ground_block_of(const LiouvilleVector& v) {
  Eigen::Matrix3cd rho = Eigen::Matrix3cd::Zero();
  for (int k = 0; k < 3; ++k) rho(k, k) = v[k];
  for (int c = 0; c < 3; ++c) {
    const auto [m, n] = kCoherencePairs[c];
    rho(m, n) = cd(v[kLevels + 2 * c], v[kLevels + 2 * c + 1]);
    rho(n, m) = std::conj(rho(m, n));
  }
  return rho;
}

LiouvilleVector apply_generator(const RateModel& model, const LiouvilleVector& v) {
  LiouvilleVector dv = LiouvilleVector::Zero();
  dv.head<kLevels>() = model.generator * v.head<kLevels>();

  const Eigen::Matrix3cd rho = ground_block_of(v);
  const Eigen::Matrix3cd& h = model.coherent_part;
  const Eigen::Matrix3cd comm = cd(0.0, -1.0) * (h * rho - rho * h);
  for (int k = 0; k < 3; ++k) dv[k] += comm(k, k).real();
  for (int c = 0; c < 3; ++c) {
    const auto [m, n] = kCoherencePairs[c];
    const double decay = 0.5 * (model.outflow(m) + model.outflow(n)) + model.dephasing_rate;
    const cd d = comm(m, n) - decay * rho(m, n);
    dv[kLevels + 2 * c] = d.real();
    dv[kLevels + 2 * c + 1] = d.imag();
  }
  return dv;
}

}  // namespace

const char* level_name(int level) {
  static constexpr const char* names[kLevels] = {"T0x", "T0y", "T0z", "T1x", "T1y", "T1z", "S"};
  if (level < 0 || level >= kLevels) return "?";
  return names[level];
}

bool is_ground(int level) { return level >= T0x && level <= T0z; }
bool is_excited(int level) { return level >= T1x && level <= T1z; }

std::array<double, 3> optical_lines_from_separations(double dxy_mhz, double dxz_mhz) {
  return {-0.5 * dxy_mhz, 0.5 * dxy_mhz, dxz_mhz - 0.5 * dxy_mhz};
}

double ground_line_mhz(const PhotophysicsParams& p, int a, int b) {
  if (!is_ground(a) || !is_ground(b)) throw InvalidArgument("ground_line_mhz: levels must be ground sublevels");
  const auto e = zfs::zero_field_energies(p.ground).energies_mhz;
  return std::abs(e[a] - e[b]);
}

std::vector<std::string> PhotophysicsParams::violations() const {
  std::vector<std::string> out;
  check_rate(out, "gamma_rad", gamma_rad);
  check_rate(out, "isc_scale", isc_scale);
  check_rate(out, "singlet_rate", singlet_rate);
  check_rate(out, "laser_rate_peak", laser_rate_peak);
  check_rate(out, "background_rate_per_ns", background_rate_per_ns);
  check_distribution(out, "isc_rel", isc_rel);
  check_distribution(out, "singlet_branching", singlet_branching);
  if (!(homogeneous_linewidth_mhz > 0.0) || !std::isfinite(homogeneous_linewidth_mhz))
    out.push_back("homogeneous_linewidth_mhz must be > 0");
  if (!std::isfinite(laser_detuning_mhz)) out.push_back("laser_detuning_mhz must be finite");
  if (!std::isfinite(line_shift_mhz)) out.push_back("line_shift_mhz must be finite");
  for (double l : optical_lines_mhz)
    if (!std::isfinite(l)) out.push_back("optical line centers must be finite");

  for (int s = 0; s < 3; ++s) {
    double row = 0.0;
    for (int g = 0; g < 3; ++g) {
      if (!(spin_overlap(s, g) >= 0.0)) out.push_back("spin_overlap entries must be >= 0");
      row += spin_overlap(s, g);
    }
    if (row > 1.0 + kSumTol)
      out.push_back("normalization: spin_overlap row " + std::to_string(s) + " sums to " + fmt(row) + " > 1");
    if (!(row > 0.0)) out.push_back("spin_overlap row " + std::to_string(s) + " is empty");
    if (spin_overlap(s, s) < 0.97)
      out.push_back("spin_overlap diagonal entry " + std::to_string(s) + " below 0.97");
  }

  if (!(t2_star_ns > 0.0)) out.push_back("t2_star_ns must be > 0");
  for (const auto* env : {&hahn, &xy8, &t1}) {
    try {
      env->validate();
    } catch (const std::exception& e) {
      out.push_back(e.what());
    }
  }
  if (!(collection_efficiency > 0.0 && collection_efficiency <= 1.0))
    out.push_back("collection_efficiency must be in (0, 1], got " + fmt(collection_efficiency));

  for (const auto& d : mw_drive) {
    if (!is_ground(d.a) || !is_ground(d.b) || d.a == d.b) {
      out.push_back(std::string("mw_drive must couple two distinct ground sublevels, got ") +
                    level_name(d.a) + "-" + level_name(d.b));
      continue;
    }
    if (!(d.rabi_mhz >= 0.0) || !std::isfinite(d.rabi_mhz)) out.push_back("mw_drive rabi_mhz must be >= 0");
    if (!std::isfinite(d.detuning_mhz) || !std::isfinite(d.phase_rad))
      out.push_back("mw_drive detuning and phase must be finite");
  }
  bool pairs_ok = true;
  for (const auto& d : mw_drive)
    if (!is_ground(d.a) || !is_ground(d.b) || d.a == d.b) pairs_ok = false;
  if (pairs_ok) {
    std::array<double, 3> e{};
    if (!frame_energies(*this, e))
      out.push_back("mw_drive transitions must not repeat a pair or form a closed loop");
  }
  for (const auto& x : excited_mw) {
    if (!is_excited(x.a) || !is_excited(x.b) || x.a == x.b) {
      out.push_back(std::string("excited_mw must couple two distinct excited sublevels, got ") +
                    level_name(x.a) + "-" + level_name(x.b));
      continue;
    }
    if (!(x.peak_rate_per_ns >= 0.0) || !std::isfinite(x.peak_rate_per_ns))
      out.push_back("excited_mw rate must be >= 0");
    if (!(x.linewidth_mhz > 0.0)) out.push_back("excited_mw linewidth must be > 0");
  }
  return out;
}

void PhotophysicsParams::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid photophysics parameters:";
  for (const auto& s : v) msg += "\n  " + s;
  throw InvalidArgument(msg);
}

bool RateModel::has_coherent_drive() const {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j && std::abs(coherent_part(i, j)) > 0.0) return true;
  return false;
}

RateModel build_rate_model(const PhotophysicsParams& p) {
  p.validate();
  RateModel m;
  auto add = [&m](int from, int to, double rate) {
    m.generator(to, from) += rate;
    m.generator(from, from) -= rate;
  };
  for (int s = 0; s < 3; ++s) {
    const double delta = p.laser_detuning_mhz - (p.optical_lines_mhz[s] + p.line_shift_mhz);
    const double k = p.laser_rate_peak * unit_lorentzian(delta, p.homogeneous_linewidth_mhz);
    add(T0x + s, T1x + s, k);
    add(T1x + s, T0x + s, k);  // stimulated emission
  }
  for (int s = 0; s < 3; ++s) {
    const double row = p.spin_overlap.row(s).sum();
    for (int g = 0; g < 3; ++g) {
      const double r = p.gamma_rad * p.spin_overlap(s, g) / row;
      add(T1x + s, T0x + g, r);
      m.emission(T0x + g, T1x + s) += r;
    }
    add(T1x + s, S, p.isc_scale * p.isc_rel[s]);
    add(S, T0x + s, p.singlet_rate * p.singlet_branching[s]);
  }
  for (const auto& x : p.excited_mw) {
    const double r = x.peak_rate_per_ns * unit_lorentzian(x.detuning_mhz, x.linewidth_mhz);
    add(x.a, x.b, r);
    add(x.b, x.a, r);
  }

  std::array<double, 3> e{};
  frame_energies(p, e);
  const auto zf = zfs::zero_field_energies(p.ground).energies_mhz;
  for (int k = 0; k < 3; ++k) m.coherent_part(k, k) = e[k];
  for (const auto& d : p.mw_drive) {
    const int upper = zf[d.a] > zf[d.b] ? d.a : d.b;
    const int lower = upper == d.a ? d.b : d.a;
    const double half_rabi = 0.5 * constants::mhz_to_rad_per_ns(d.rabi_mhz);
    m.coherent_part(lower, upper) = half_rabi * std::polar(1.0, -d.phase_rad);
    m.coherent_part(upper, lower) = std::conj(m.coherent_part(lower, upper));
  }

  m.dephasing_rate = std::isfinite(p.t2_star_ns) ? 1.0 / p.t2_star_ns : 0.0;
  m.collection_efficiency = p.collection_efficiency;
  m.background_rate_per_ns = p.background_rate_per_ns;
  return m;
}

LiouvilleMatrix liouvillian(const RateModel& model) {
  LiouvilleMatrix l;
  for (int k = 0; k < kStateDim; ++k) l.col(k) = apply_generator(model, LiouvilleVector::Unit(k));
  return l;
}

IscCalibration calibrate_isc_scale(double tau_short_ns, double tau_long_ns,
                                   const std::array<double, 3>& isc_rel) {
  if (!(tau_short_ns > 0.0) || !(tau_long_ns > tau_short_ns))
    throw InvalidArgument("calibrate_isc_scale: need 0 < tau_short < tau_long");
  std::vector<std::string> v;
  check_distribution(v, "isc_rel", isc_rel);
  if (!v.empty()) throw InvalidArgument("calibrate_isc_scale: " + v.front());
  const double ry = isc_rel[1], rz = isc_rel[2];
  const double denom = rz - ry;
  if (std::abs(denom) < 1e-12)
    throw InvalidArgument("calibrate_isc_scale: singular system, r_z == r_y");
  IscCalibration c;
  c.isc_scale = (1.0 / tau_short_ns - 1.0 / tau_long_ns) / denom;
  c.gamma_rad = 1.0 / tau_long_ns - c.isc_scale * ry;
  if (!(c.isc_scale > 0.0))
    throw InvalidArgument("calibrate_isc_scale: lifetimes imply a negative ISC scale (r_z < r_y)");
  if (!(c.gamma_rad > 0.0))
    throw InvalidArgument("calibrate_isc_scale: inconsistent lifetimes, gamma_rad = " + fmt(c.gamma_rad) + " < 0");
  return c;
}

double excited_lifetime_ns(const PhotophysicsParams& p, int sublevel) {
  if (sublevel < 0 || sublevel > 2) throw InvalidArgument("excited_lifetime_ns: sublevel index must be 0..2");
  return 1.0 / (p.gamma_rad + p.isc_scale * p.isc_rel[sublevel]);
}

double lifetime_limited_linewidth(double tau_exc_ns) {
  if (!(tau_exc_ns > 0.0)) throw InvalidArgument("lifetime_limited_linewidth: tau must be > 0");
  if (std::isinf(tau_exc_ns)) return 0.0;
  return 1e3 / (constants::two_pi * tau_exc_ns);
}

SystemState SystemState::pure(int level) {
  if (level < 0 || level >= kLevels) throw InvalidArgument("SystemState::pure: bad level");
  SystemState s;
  s.populations[level] = 1.0;
  return s;
}

SystemState SystemState::from_vector(const LiouvilleVector& v) {
  SystemState s;
  for (int k = 0; k < kLevels; ++k) s.populations[k] = v[k];
  for (int c = 0; c < 3; ++c) s.ground_coherences[c] = cd(v[kLevels + 2 * c], v[kLevels + 2 * c + 1]);
  return s;
}

LiouvilleVector SystemState::to_vector() const {
  LiouvilleVector v;
  for (int k = 0; k < kLevels; ++k) v[k] = populations[k];
  for (int c = 0; c < 3; ++c) {
    v[kLevels + 2 * c] = ground_coherences[c].real();
    v[kLevels + 2 * c + 1] = ground_coherences[c].imag();
  }
  return v;
}

Eigen::Matrix3cd SystemState::ground_block() const { return ground_block_of(to_vector()); }

double SystemState::total_population() const {
  return std::accumulate(populations.begin(), populations.end(), 0.0);
}

double SystemState::excited_population() const {
  return populations[T1x] + populations[T1y] + populations[T1z];
}

SystemState steady_state(const RateModel& model) {
  const LiouvilleMatrix l = liouvillian(model);
  Eigen::JacobiSVD<LiouvilleMatrix> svd(l);
  const auto& sv = svd.singularValues();  // descending
  const double tol = 1e-12 * std::max(sv[0], 1e-300);
  if (sv[kStateDim - 2] <= tol)
    throw NumericalError("steady_state: stationary state is not unique (no drive connects the levels); "
                         "add a drive or supply an initial condition");

  LiouvilleMatrix a = l;
  a.row(0).setZero();
  a.row(0).head<kLevels>().setOnes();
  LiouvilleVector b = LiouvilleVector::Unit(0);
  const LiouvilleVector x = a.fullPivLu().solve(b);
  const double residual = (l * x).norm();
  if (!(residual < 1e-10))
    throw NumericalError("steady_state: residual " + fmt(residual) + " exceeds 1e-10");
  return SystemState::from_vector(x);
}

SystemState propagate(const RateModel& model, const SystemState& initial, double duration_ns) {
  if (!(duration_ns >= 0.0)) throw InvalidArgument("propagate: duration must be >= 0");
  if (duration_ns == 0.0) return initial;
  const LiouvilleMatrix l = liouvillian(model);
  const LiouvilleMatrix u = (l * duration_ns).exp();
  return SystemState::from_vector(u * initial.to_vector());
}

double fastest_rate(const RateModel& model) {
  const LiouvilleMatrix l = liouvillian(model);
  return l.cwiseAbs().rowwise().sum().maxCoeff();
}

TimeSeries evolve(const RateModel& model, const SystemState& initial, double duration_ns, double dt_ns) {
  if (!(duration_ns >= 0.0)) throw InvalidArgument("evolve: duration must be >= 0");
  TimeSeries out;
  out.t_ns.push_back(0.0);
  out.states.push_back(initial);
  if (duration_ns == 0.0) return out;
  if (!(dt_ns > 0.0)) throw InvalidArgument("evolve: dt must be > 0");
  const double rmax = fastest_rate(model);
  if (dt_ns > 0.1 / rmax * (1.0 + 1e-12))
    throw InvalidArgument("evolve: dt = " + fmt(dt_ns) + " ns exceeds 0.1 / fastest rate (" + fmt(rmax) +
                          " 1/ns)");

  const LiouvilleMatrix l = liouvillian(model);
  // Dormand-Prince 5(4) coefficients
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  constexpr double rtol = 1e-11, atol = 1e-13;

  LiouvilleVector y = initial.to_vector();
  double t = 0.0;
  double h = dt_ns;
  const int n_samples = static_cast<int>(std::ceil(duration_ns / dt_ns - 1e-9));
  for (int k = 1; k <= n_samples; ++k) {
    const double t_target = std::min(duration_ns, k * dt_ns);
    while (t < t_target) {
      h = std::min(h, t_target - t);
      const LiouvilleVector k1 = l * y;
      const LiouvilleVector k2 = l * (y + h * a21 * k1);
      const LiouvilleVector k3 = l * (y + h * (a31 * k1 + a32 * k2));
      const LiouvilleVector k4 = l * (y + h * (a41 * k1 + a42 * k2 + a43 * k3));
      const LiouvilleVector k5 = l * (y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const LiouvilleVector k6 = l * (y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
      const LiouvilleVector y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const LiouvilleVector k7 = l * y5;
      const LiouvilleVector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double en = 0.0;
      for (int i = 0; i < kStateDim; ++i) {
        const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
        en = std::max(en, std::abs(err[i]) / sc);
      }
      if (en <= 1.0) {
        t += h;
        y = y5;
        if (t_target - t < 1e-12 * std::max(1.0, t_target)) t = t_target;
      }
      const double factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      h = std::min(h * factor, dt_ns);
      if (h < 1e-14 * std::max(1.0, t))
        throw NumericalError("evolve: step size underflow at t = " + fmt(t) + " ns; fastest rate " + fmt(rmax) +
                             " 1/ns");
    }
    out.t_ns.push_back(t_target);
    out.states.push_back(SystemState::from_vector(y));
  }
  return out;
}

double fluorescence_rate(const SystemState& state, const RateModel& model) {
  const auto out = model.emission_out();
  double flux = 0.0;
  for (int k = 0; k < kLevels; ++k) flux += out[k] * state.populations[k];
  return model.collection_efficiency * flux;
}

double fluorescence_rate(const SystemState& state, const PhotophysicsParams& params) {
  return params.collection_efficiency * params.gamma_rad * state.excited_population();
}

RateModel fold_coherent_drive(const RateModel& model) {
  RateModel out = model;
  out.coherent_part.setZero();
  for (const auto& [m, n] : kCoherencePairs) {
    const double h2 = std::norm(model.coherent_part(m, n));
    if (h2 == 0.0) continue;
    const double g2 = model.dephasing_rate + 0.5 * (model.outflow(m) + model.outflow(n));
    const double delta = (model.coherent_part(n, n) - model.coherent_part(m, m)).real();
    const double w = 2.0 * h2 * g2 / (g2 * g2 + delta * delta);
    out.generator(n, m) += w;
    out.generator(m, m) -= w;
    out.generator(m, n) += w;
    out.generator(n, n) -= w;
  }
  return out;
}

std::vector<double> relaxation_times_ns(const RateModel& model) {
  const RateModel folded = model.has_coherent_drive() ? fold_coherent_drive(model) : model;
  Eigen::EigenSolver<Matrix7d> es(folded.generator, false);
  std::vector<double> rates;
  for (int i = 0; i < kLevels; ++i) rates.push_back(std::abs(es.eigenvalues()[i].real()));
  std::sort(rates.begin(), rates.end());
  std::vector<double> times;
  for (std::size_t i = 1; i < rates.size(); ++i)
    times.push_back(rates[i] > 0.0 ? 1.0 / rates[i] : std::numeric_limits<double>::infinity());
  return times;
}

PhotophysicsParams default_params() {
  PhotophysicsParams p;
  p.singlet_rate = kDefaultSingletRate;
  p.laser_rate_peak = kDefaultLaserRate;
  p.mw_drive = {{T0z, T0y, kDefaultCwRabiMhz, 0.0, 0.0}, {T0z, T0x, kDefaultCwRabiMhz, 0.0, 0.0}};
  return p;
}

double calibrate_laser_rate(const PhotophysicsParams& p, double target_ns) {
  if (!(target_ns > 0.0)) throw InvalidArgument("calibrate_laser_rate: target must be > 0");
  PhotophysicsParams q = p;
  auto mismatch = [&](double k) {
    q.laser_rate_peak = k;
    return relaxation_times_ns(build_rate_model(q)).front() - target_ns;
  };
  double lo = 1e-5;
  double f_lo = mismatch(lo);
  for (int i = 1; i <= 100; ++i) {
    const double hi = 1e-5 * std::pow(10.0, 5.0 * i / 100.0);
    const double f_hi = mismatch(hi);
    if ((f_lo < 0.0) != (f_hi < 0.0)) {
      double a = lo, b = hi;
      for (int it = 0; it < 200 && b - a > 1e-12 * b; ++it) {
        const double m = 0.5 * (a + b);
        if ((mismatch(m) < 0.0) == (f_lo < 0.0))
          a = m;
        else
          b = m;
      }
      return 0.5 * (a + b);
    }
    lo = hi;
    f_lo = f_hi;
  }
  throw NumericalError("calibrate_laser_rate: no pump rate in [1e-5, 1] 1/ns reaches " + fmt(target_ns) + " ns");
}

}  // namespace molspin::photo
