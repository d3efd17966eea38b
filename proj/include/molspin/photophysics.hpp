#pragma once

// Seven-level photophysics: ground triplet T0{x,y,z}, excited triplet
// T1{x,y,z} and a shelving singlet S. Incoherent channels form a classical
// rate generator; microwave drive on the ground triplet is coherent and
// handled in the rotating frame.

#include <array>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "molspin/envelope.hpp"
#include "molspin/zfs_spin.hpp"

namespace molspin::photo {

enum Level : int { T0x = 0, T0y, T0z, T1x, T1y, T1z, S };
inline constexpr int kLevels = 7;
// 7 populations + Re/Im of the three ground coherences (xy, xz, yz).
inline constexpr int kStateDim = 13;

using Matrix7d = Eigen::Matrix<double, kLevels, kLevels>;
using LiouvilleMatrix = Eigen::Matrix<double, kStateDim, kStateDim>;
using LiouvilleVector = Eigen::Matrix<double, kStateDim, 1>;

const char* level_name(int level);
bool is_ground(int level);
bool is_excited(int level);

// Coherent drive of a ground-triplet transition. detuning = f_mw - f_line.
// Phase selects the rotation axis in the rotating frame (0 = X, pi/2 = Y).
struct MwDrive {
  int a = T0z;
  int b = T0y;
  double rabi_mhz = 0.0;
  double detuning_mhz = 0.0;
  double phase_rad = 0.0;
};

// Incoherent MW-induced mixing of two excited sublevels, rate
// peak_rate * L(detuning; linewidth).
struct ExcitedMwTransfer {
  int a = T1y;
  int b = T1z;
  double peak_rate_per_ns = 0.0;
  double detuning_mhz = 0.0;
  double linewidth_mhz = 38.0;
};

// Arrays indexed by sublevel x, y, z.
struct PhotophysicsParams {
  zfs::ZfsTensor ground{11159.7, -540.9};
  zfs::ZfsTensor excited{-4190.5, 232.5};

  double gamma_rad = 0.0339489;  // 1/ns
  double isc_scale = 0.183756;   // 1/ns
  std::array<double, 3> isc_rel{0.009, 0.042, 0.949};
  double singlet_rate = 0.0;     // set by default_params()
  std::array<double, 3> singlet_branching{0.0005, 0.0005, 0.999};

  double laser_rate_peak = 0.0;  // 1/ns, on resonance
  // Laser position on the excitation axis. Zero is the midpoint of the X and
  // Y optical lines.
  double laser_detuning_mhz = 777.5;
  double homogeneous_linewidth_mhz = 38.0;
  // Centers of the T0s -> T1s lines on the excitation axis.
  std::array<double, 3> optical_lines_mhz{-777.5, 777.5, 15342.5};
  double line_shift_mhz = 0.0;  // per-molecule offset added to all three lines

  // Rows: excited x', y', z'. Columns: ground x, y, z.
  Eigen::Matrix3d spin_overlap = (Eigen::Matrix3d() << 0.993, 0.003, 0.004,  //
                                  0.004, 0.977, 0.018,                       //
                                  0.003, 0.019, 0.978)
                                     .finished();

  std::vector<MwDrive> mw_drive;
  std::vector<ExcitedMwTransfer> excited_mw;

  double t2_star_ns = 2000.0;
  seq::DecoherenceEnvelope hahn{seq::EnvelopeKind::hahn, 12200.0, 1.7};
  seq::DecoherenceEnvelope xy8{seq::EnvelopeKind::xy8, 2.2e6, 0.9};
  seq::DecoherenceEnvelope t1{seq::EnvelopeKind::t1, 21e6, 1.0};

  double collection_efficiency = 0.01;
  double background_rate_per_ns = 0.0;  // detected dark counts

  // Every violated invariant, one message each. Empty when valid.
  std::vector<std::string> violations() const;
  // Throws InvalidArgument listing all violations.
  void validate() const;
};

// Line centers X = -dxy/2, Y = +dxy/2, Z = dxz - dxy/2.
std::array<double, 3> optical_lines_from_separations(double dxy_mhz, double dxz_mhz);

// Ground-triplet transition frequency between two ground levels (MHz).
double ground_line_mhz(const PhotophysicsParams& p, int a, int b);

// Calibrated defaults, see default_params().
inline constexpr double kDefaultSingletRate = 0.02;       // 1/ns, 50 ns singlet lifetime
inline constexpr double kDefaultLaserRate = 0.00266050;   // 1/ns
inline constexpr double kDefaultCwRabiMhz = 0.5;
inline constexpr double kDefaultBunchingNs = 245.0;

// Site-1 defaults: laser on the Y line, resonant CW drive of Z<->Y and Z<->X.
// The pump rate is the output of calibrate_laser_rate(p, 245 ns).
PhotophysicsParams default_params();

// Smallest pump rate for which the slowest relaxation time of the folded CW
// model equals target_ns. Scans a log grid then bisects the first bracket.
double calibrate_laser_rate(const PhotophysicsParams& p, double target_ns);

struct SystemState {
  std::array<double, kLevels> populations{};
  // rho_xy, rho_xz, rho_yz of the ground block.
  std::array<std::complex<double>, 3> ground_coherences{};

  static SystemState pure(int level);
  static SystemState from_vector(const LiouvilleVector& v);
  LiouvilleVector to_vector() const;
  Eigen::Matrix3cd ground_block() const;
  double total_population() const;
  double excited_population() const;
};

struct RateModel {
  // generator(j, i) = rate i -> j; diagonal = -total outflow.
  Matrix7d generator = Matrix7d::Zero();
  // Ground-block rotating-frame Hamiltonian, rad/ns.
  Eigen::Matrix3cd coherent_part = Eigen::Matrix3cd::Zero();
  double dephasing_rate = 0.0;  // extra decay of ground coherences, 1/ns
  // Spontaneous (photon-emitting) part of the generator, same layout, off-diagonal only.
  Matrix7d emission = Matrix7d::Zero();
  double collection_efficiency = 0.01;
  double background_rate_per_ns = 0.0;

  double outflow(int level) const { return -generator(level, level); }
  // Photon emission rate out of each level.
  Eigen::Matrix<double, kLevels, 1> emission_out() const { return emission.colwise().sum().transpose(); }
  bool has_coherent_drive() const;
};

RateModel build_rate_model(const PhotophysicsParams& params);

// Real 13x13 generator of the reduced master equation.
LiouvilleMatrix liouvillian(const RateModel& model);

struct IscCalibration {
  double gamma_rad = 0.0;
  double isc_scale = 0.0;
};

// Solves 1/tau_long = gamma + K r_y and 1/tau_short = gamma + K r_z.
// isc_rel is indexed x, y, z.
IscCalibration calibrate_isc_scale(double tau_short_ns, double tau_long_ns,
                                   const std::array<double, 3>& isc_rel);

// Decay time of an excited sublevel: 1 / (gamma + K r_s).
double excited_lifetime_ns(const PhotophysicsParams& p, int sublevel);

// 1 / (2 pi tau) in MHz.
double lifetime_limited_linewidth(double tau_exc_ns);

SystemState steady_state(const RateModel& model);

// Exact propagation over one piece-wise constant segment.
SystemState propagate(const RateModel& model, const SystemState& initial, double duration_ns);

struct TimeSeries {
  std::vector<double> t_ns;
  std::vector<SystemState> states;
};

// Adaptive Dormand-Prince integration, sampled every dt. Requires
// dt <= 0.1 / (fastest rate of the Liouvillian).
TimeSeries evolve(const RateModel& model, const SystemState& initial, double duration_ns,
                  double dt_ns);

double fastest_rate(const RateModel& model);

// Detected counts per ns, excluding background: eta * sum of spontaneous
// emission flux.
double fluorescence_rate(const SystemState& state, const RateModel& model);
double fluorescence_rate(const SystemState& state, const PhotophysicsParams& params);

// Replaces each coherent ground drive by the equivalent incoherent transfer
// rate W = (w_R^2 / 2) G2 / (G2^2 + delta^2), with G2 the coherence decay
// rate. Exact for the steady state of an isolated driven pair.
RateModel fold_coherent_drive(const RateModel& model);

// Relaxation times (ns, descending) of the incoherent generator, excluding
// the stationary mode.
std::vector<double> relaxation_times_ns(const RateModel& model);

}  // namespace molspin::photo
