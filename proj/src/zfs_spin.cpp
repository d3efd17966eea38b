#include "molspin/zfs_spin.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "molspin/error.hpp"

namespace molspin::zfs {

namespace {

constexpr double kConventionTol = 1e-12;

bool is_proper_rotation(const Eigen::Matrix3d& r) {
  const double scale = std::max(1.0, r.norm());
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
  return orth <= 1e-12 * scale && std::abs(r.determinant() - 1.0) <= 1e-12;
}

Eigen::Vector3d eigenvalues_at(const ZfsTensor& tensor, const Eigen::Vector3d& dir, double g,
                               double b_mt) {
  ZeemanConfig z{dir * b_mt, g};
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(spin_hamiltonian(tensor, z),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace

ZfsTensor::ZfsTensor(double d_mhz, double e_mhz, const Eigen::Matrix3d& frame)
    : d_(d_mhz), e_(e_mhz), frame_(frame) {
  if (!std::isfinite(d_mhz) || !std::isfinite(e_mhz))
    throw InvalidArgument("ZfsTensor: D and E must be finite");
  // |D| >= 3|E| is the standard-frame convention |D_z| >= |D_x|, |D_y|.
  if (std::abs(d_mhz) + kConventionTol * std::max(1.0, std::abs(d_mhz)) < 3.0 * std::abs(e_mhz))
    throw InvalidArgument("ZfsTensor: convention violated, |D| < 3|E| (D=" + std::to_string(d_mhz) +
                          " MHz, E=" + std::to_string(e_mhz) + " MHz)");
  if (!is_proper_rotation(frame))
    throw InvalidArgument("ZfsTensor: frame must be orthonormal with determinant +1");
}

Eigen::Vector3d ZfsTensor::principal_values() const {
  return {-d_ / 3.0 + e_, -d_ / 3.0 - e_, 2.0 * d_ / 3.0};
}

ZfsTensor ZfsTensor::rotated(const Eigen::Matrix3d& r) const {
  return ZfsTensor(d_, e_, r * frame_);
}

SpinLevelSet zero_field_energies(const ZfsTensor& tensor) {
  const double d = tensor.d_mhz();
  const double e = tensor.e_mhz();
  SpinLevelSet out;
  out.energies_mhz = {d / 3.0 - e, d / 3.0 + e, -2.0 * d / 3.0};
  return out;
}

GroundTransitions ground_transition_frequencies(const ZfsTensor& tensor) {
  const auto [ex, ey, ez] = zero_field_energies(tensor).energies_mhz;
  return {std::abs(ex - ez), std::abs(ey - ez), std::abs(ex - ey)};
}

ZfsTensor zfs_from_transitions(double f_hi_mhz, double f_lo_mhz, SignConvention convention) {
  if (!(f_lo_mhz >= 0.0) || !(f_hi_mhz >= 0.0))
    throw InvalidArgument("zfs_from_transitions: frequencies must be non-negative");
  if (f_lo_mhz > f_hi_mhz)
    throw InvalidArgument("zfs_from_transitions: f_lo > f_hi");
  const double mean = 0.5 * (f_hi_mhz + f_lo_mhz);
  const double half_diff = 0.5 * (f_hi_mhz - f_lo_mhz);
  if (convention == SignConvention::ground) return ZfsTensor(mean, -half_diff);
  return ZfsTensor(-mean, half_diff);
}

const std::array<Eigen::Matrix3cd, 3>& spin_operators() {
  static const std::array<Eigen::Matrix3cd, 3> ops = [] {
    using C = std::complex<double>;
    const C i(0.0, 1.0);
    std::array<Eigen::Matrix3cd, 3> s;
    for (int k = 0; k < 3; ++k) {
      s[k].setZero();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          // Levi-Civita for (k, a, b)
          double eps = 0.0;
          if (k != a && a != b && k != b) eps = ((a - k + 3) % 3 == 1) ? 1.0 : -1.0;
          s[k](a, b) = -i * eps;
        }
    }
    return s;
  }();
  return ops;
}

Eigen::Matrix3cd spin_hamiltonian(const ZfsTensor& tensor, const ZeemanConfig& zeeman) {
  if (!(zeeman.g_iso > 0.0)) throw InvalidArgument("spin_hamiltonian: g_iso must be > 0");
  const auto& s = spin_operators();
  const Eigen::Vector3d dk = tensor.principal_values();
  Eigen::Matrix3cd h = Eigen::Matrix3cd::Zero();
  for (int k = 0; k < 3; ++k) h += dk[k] * (s[k] * s[k]);

  const Eigen::Vector3d b_tensor = tensor.frame().transpose() * zeeman.b_field_mt;
  const double scale = zeeman.g_iso * constants::bohr_mhz_per_mt;
  for (int k = 0; k < 3; ++k) h += scale * b_tensor[k] * s[k];
  return 0.5 * (h + h.adjoint());
}

std::vector<Resonance> resonance_fields(const ZfsTensor& tensor, const Eigen::Vector3d& field_dir,
                                        double g_iso, double mw_freq_mhz, double b_min_mt,
                                        double b_max_mt, const ResonanceOptions& opts) {
  if (!(mw_freq_mhz > 0.0)) throw InvalidArgument("resonance_fields: mw_freq must be > 0");
  if (!(b_max_mt > b_min_mt)) throw InvalidArgument("resonance_fields: degenerate field range");
  if (!(opts.grid_step_mt > 0.0)) throw InvalidArgument("resonance_fields: grid step must be > 0");
  if (!(field_dir.norm() > 0.0)) throw InvalidArgument("resonance_fields: zero field direction");
  const Eigen::Vector3d dir = field_dir.normalized();

  std::vector<std::pair<int, int>> pairs{{0, 1}, {1, 2}};
  if (opts.include_double_quantum) pairs.emplace_back(0, 2);

  const int n_steps = static_cast<int>(std::ceil((b_max_mt - b_min_mt) / opts.grid_step_mt));
  std::vector<double> grid(n_steps + 1);
  std::vector<Eigen::Vector3d> levels(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) {
    grid[i] = std::min(b_max_mt, b_min_mt + i * opts.grid_step_mt);
    levels[i] = eigenvalues_at(tensor, dir, g_iso, grid[i]);
  }

  std::vector<Resonance> found;
  for (const auto& [lo, hi] : pairs) {
    auto mismatch = [&](const Eigen::Vector3d& ev) { return (ev[hi] - ev[lo]) - mw_freq_mhz; };
    for (int i = 0; i < n_steps; ++i) {
      double fa = mismatch(levels[i]);
      double fb = mismatch(levels[i + 1]);
      if (fa == 0.0) {
        found.push_back({grid[i], lo, hi});
        continue;
      }
      if (i + 1 == n_steps && fb == 0.0) {
        found.push_back({grid[i + 1], lo, hi});
        continue;
      }
      if ((fa < 0.0) == (fb < 0.0)) continue;
      double a = grid[i];
      double b = grid[i + 1];
      while (b - a > opts.bisection_tol_mt) {
        const double m = 0.5 * (a + b);
        const double fm = mismatch(eigenvalues_at(tensor, dir, g_iso, m));
        if ((fm < 0.0) == (fa < 0.0)) {
          a = m;
          fa = fm;
        } else {
          b = m;
        }
      }
      found.push_back({0.5 * (a + b), lo, hi});
    }
  }

  std::sort(found.begin(), found.end(),
            [](const Resonance& l, const Resonance& r) { return l.field_mt < r.field_mt; });
  std::vector<Resonance> unique;
  for (const auto& r : found) {
    if (!unique.empty() && r.field_mt - unique.back().field_mt < opts.dedup_tol_mt) continue;
    unique.push_back(r);
  }
  return unique;
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis, double angle_deg) {
  if (!(axis.norm() > 0.0)) throw InvalidArgument("rotation_matrix: zero axis");
  const double rad = angle_deg * std::numbers::pi / 180.0;
  return Eigen::AngleAxisd(rad, axis.normalized()).toRotationMatrix();
}

std::vector<RotationPoint> rotation_dispersion(const ZfsTensor& tensor,
                                               const RotationDispersionConfig& cfg) {
  if (!(std::abs(cfg.site_tilt_deg) < 90.0))
    throw InvalidArgument("rotation_dispersion: |site_tilt| must be < 90 deg");
  if (!(cfg.rotation_axis.norm() > 0.0))
    throw InvalidArgument("rotation_dispersion: zero rotation axis");
  const Eigen::Vector3d axis = cfg.rotation_axis.normalized();

  Eigen::Vector3d start = cfg.field_start - cfg.field_start.dot(axis) * axis;
  if (start.norm() < 1e-12) {
    Eigen::Vector3d trial = Eigen::Vector3d::UnitX();
    if (std::abs(axis.dot(trial)) > 0.9) trial = Eigen::Vector3d::UnitY();
    start = trial - trial.dot(axis) * axis;
  }
  start.normalize();

  const Eigen::Vector3d tensor_y = tensor.frame().col(1);
  const ZfsTensor site2 = tensor.rotated(rotation_matrix(tensor_y, cfg.site_tilt_deg));

  std::vector<RotationPoint> out;
  for (double angle : cfg.angles_deg) {
    if (!std::isfinite(angle)) throw InvalidArgument("rotation_dispersion: non-finite angle");
    const Eigen::Vector3d dir = rotation_matrix(axis, angle) * start;
    int site = 1;
    for (const ZfsTensor* t : {&tensor, &site2}) {
      for (const auto& r : resonance_fields(*t, dir, cfg.g_iso, cfg.mw_freq_mhz, cfg.b_min_mt,
                                            cfg.b_max_mt, cfg.resonance))
        out.push_back({angle, site, r});
      ++site;
    }
  }
  return out;
}

}  // namespace molspin::zfs
