#pragma once

// Zero-field splitting algebra for S=1 triplets, Zeeman Hamiltonians and
// field-swept EPR resonance positions.

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "molspin/constants.hpp"

namespace molspin::zfs {

// Sublevel order used everywhere in the library: x, y, z.
enum class Sublevel { x = 0, y = 1, z = 2 };

// Axial/transverse ZFS parameters plus the orientation of the tensor
// eigenframe. `frame` columns are the tensor x, y, z axes expressed in the
// laboratory frame.
class ZfsTensor {
 public:
  ZfsTensor(double d_mhz, double e_mhz, const Eigen::Matrix3d& frame = Eigen::Matrix3d::Identity());

  double d_mhz() const { return d_; }
  double e_mhz() const { return e_; }
  const Eigen::Matrix3d& frame() const { return frame_; }

  // Principal values D_x = -D/3 + E, D_y = -D/3 - E, D_z = 2D/3.
  Eigen::Vector3d principal_values() const;

  // Same D, E with the eigenframe rotated by `r` (applied in the lab frame).
  ZfsTensor rotated(const Eigen::Matrix3d& r) const;

 private:
  double d_;
  double e_;
  Eigen::Matrix3d frame_;
};

struct SpinLevelSet {
  std::array<double, 3> energies_mhz{};  // E(T_x), E(T_y), E(T_z)
  std::array<std::string, 3> labels{"T_x", "T_y", "T_z"};
};

struct ZeemanConfig {
  Eigen::Vector3d b_field_mt = Eigen::Vector3d::Zero();
  double g_iso = constants::free_electron_g;
};

struct GroundTransitions {
  double f_zx_mhz = 0.0;
  double f_zy_mhz = 0.0;
  double f_xy_mhz = 0.0;
};

enum class SignConvention { ground, excited };

SpinLevelSet zero_field_energies(const ZfsTensor& tensor);

// Transition frequencies between the zero-field sublevels. The same
// arithmetic applies to the excited triplet (pass its tensor).
GroundTransitions ground_transition_frequencies(const ZfsTensor& tensor);

// Inverts a pair of measured zero-field lines. Ground: D > 0 and E < 0 so that
// the higher line is T_z <-> T_x. Excited: D < 0, E > 0.
ZfsTensor zfs_from_transitions(double f_hi_mhz, double f_lo_mhz, SignConvention convention);

// 3x3 Hamiltonian (MHz) in the tensor-frame basis {T_x, T_y, T_z}.
Eigen::Matrix3cd spin_hamiltonian(const ZfsTensor& tensor, const ZeemanConfig& zeeman);

// Spin-1 operators in the {T_x, T_y, T_z} basis: (S_k)_ij = -i eps_kij.
const std::array<Eigen::Matrix3cd, 3>& spin_operators();

struct ResonanceOptions {
  double grid_step_mt = 0.5;
  double bisection_tol_mt = 1e-4;
  double dedup_tol_mt = 1e-3;
  // Also report the level pair (lowest, highest), i.e. the half-field
  // "Delta m_S = 2" line. Off by default.
  bool include_double_quantum = false;
};

struct Resonance {
  double field_mt = 0.0;
  // Indices of the eigenvalue pair (ascending energy order) at resonance.
  int lower = 0;
  int upper = 0;
};

std::vector<Resonance> resonance_fields(const ZfsTensor& tensor, const Eigen::Vector3d& field_dir,
                                        double g_iso, double mw_freq_mhz, double b_min_mt,
                                        double b_max_mt, const ResonanceOptions& opts = {});

// Active right-handed rotation by `angle_deg` about `axis` (normalized internally).
Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis, double angle_deg);

struct RotationPoint {
  double angle_deg = 0.0;
  int site = 1;
  Resonance resonance;
};

struct RotationDispersionConfig {
  Eigen::Vector3d rotation_axis = Eigen::Vector3d::UnitZ();
  // Field direction at angle 0; projected onto the plane normal to the axis.
  // Zero vector selects a canonical perpendicular direction.
  Eigen::Vector3d field_start = Eigen::Vector3d::Zero();
  std::vector<double> angles_deg;
  double site_tilt_deg = 2.5;
  double g_iso = constants::free_electron_g;
  double mw_freq_mhz = 9700.0;
  double b_min_mt = 0.0;
  double b_max_mt = 800.0;
  ResonanceOptions resonance;
};

// Resonance fields of two magnetically equivalent sites vs goniometer angle.
// Site 2 is the site-1 tensor pre-rotated by the tilt about its own y axis.
// Output is ordered by angle, then site, then field.
std::vector<RotationPoint> rotation_dispersion(const ZfsTensor& tensor,
                                               const RotationDispersionConfig& cfg);

}  // namespace molspin::zfs
