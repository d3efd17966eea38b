#pragma once

// Pulse-sequence engine: piece-wise constant laser/MW segments propagated
// exactly through the reduced master equation, with phenomenological
// decoherence envelopes on free-evolution periods.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "molspin/envelope.hpp"
#include "molspin/fitting.hpp"
#include "molspin/photophysics.hpp"

namespace molspin::seq {

struct MwPulse {
  int a = photo::T0z;
  int b = photo::T0y;
  double rabi_mhz = 0.0;
  double phase_rad = 0.0;  // [0, 2 pi)
  double detuning_mhz = 0.0;
};

struct Segment {
  double duration_ns = 0.0;
  bool laser_on = false;
  double laser_detuning_mhz = 0.0;  // offset from params.laser_detuning_mhz
  std::vector<MwPulse> mw;
  // Counts toward the elapsed time of the sequence's decoherence envelope.
  bool free_evolution = false;
};

struct ReadoutWindow {
  int segment = -1;
  double gate_start_ns = 0.0;  // relative to the segment start
  double gate_ns = 2000.0;
};

struct PulseSequence {
  std::vector<Segment> segments;
  ReadoutWindow readout;
  // t2star_free: Lindblad dephasing 1/T2* everywhere, no envelope.
  // hahn, xy8: envelope on coherences, no Lindblad dephasing.
  // t1: ground populations relax toward 1/3 on free segments.
  EnvelopeKind envelope = EnvelopeKind::t2star_free;
  // Quasi-static detuning of the (frame_a, frame_b) transition, applied to
  // every segment.
  double frame_detuning_mhz = 0.0;
  int frame_a = photo::T0z;
  int frame_b = photo::T0y;

  // Throws InvalidArgument on negative durations, phases outside [0, 2 pi),
  // overlapping pulses on one transition, or a bad readout window.
  void validate() const;
};

struct SequenceResult {
  double mean_counts = 0.0;
  double variance = 0.0;  // variance of the shot-averaged mean
};

// Initial state for every sequence: CW steady state under the laser alone.
photo::SystemState initialized_state(const photo::PhotophysicsParams& params);

// Expected detected counts in the readout gate for one shot.
double expected_counts(const PulseSequence& seq, const photo::PhotophysicsParams& params);

// shots == 0: deterministic, variance = mean (single-shot Poisson).
// shots > 0: per-shot Poisson counts averaged, variance from the sample.
SequenceResult run_sequence(const PulseSequence& seq, const photo::PhotophysicsParams& params,
                            long shots = 0, std::uint64_t seed = 0);

double apply_decoherence(const DecoherenceEnvelope& envelope, double coherence_magnitude, double elapsed_ns);

struct ExperimentCurve {
  std::vector<double> sweep;  // ns (or block count where noted)
  std::vector<double> signal;
  std::vector<double> sigma;

  // Throws InvalidArgument unless lengths match and sigma >= 0.
  void validate() const;
  fit::CurveData as_curve_data() const;
};

struct RunOptions {
  long shots = 0;  // 0 = deterministic expectation with Poisson sigma for 1 shot
  std::uint64_t seed = 0;
};

// Per-point seed used by all sweeps.
inline std::uint64_t point_seed(std::uint64_t seed, std::size_t index) { return seed ^ index; }

inline constexpr double kSettleNs = 1000.0;
inline constexpr double kPulseSpacingNs = 1000.0;
inline constexpr double kDefaultPulseRabiMhz = 3.7;

PulseSequence rabi_sequence(double tau_ns, double omega_mhz);
ExperimentCurve run_rabi(const photo::PhotophysicsParams& params, const std::vector<double>& tau_grid_ns,
                         double omega_mhz, const RunOptions& opts = {});

enum class EchoKind { hahn, xy8 };

struct EchoOptions {
  double rabi_mhz = kDefaultPulseRabiMhz;
  double pulse_spacing_ns = kPulseSpacingNs;  // XY8 edge-to-edge
  // Regression guard: every refocusing pulse on the X axis.
  bool all_pulses_x = false;
  // Quasi-static detuning noise: Gaussian sigma and number of realizations
  // averaged per point (seeded draws).
  double detuning_jitter_mhz = 0.0;
  int jitter_samples = 16;
  std::uint64_t jitter_seed = 99;
  RunOptions run;
};

// pi/2_x - tau/2 - pi_x - tau/2 - pi/2_phi.
PulseSequence hahn_sequence(double tau_ns, double final_phase_rad, const EchoOptions& opts = {});
// pi/2_x - [XY8 with spacing s, s/2 at both ends]^(n/8) - pi/2_phi.
// n_pulses must be a positive multiple of 8.
PulseSequence xy8_sequence(int n_pulses, double final_phase_rad, const EchoOptions& opts = {});

struct EchoResult {
  ExperimentCurve raw;         // complementary difference, sweep = free evolution time (ns)
  ExperimentCurve normalized;  // raw / fitted A
  std::vector<int> blocks;     // XY8 block counts; empty for Hahn
  fit::FitResult fit;
};

// Hahn: grid = tau (ns). XY8: grid = block counts N (free time 8 N spacing).
EchoResult run_echo_family(const photo::PhotophysicsParams& params, EchoKind kind, const std::vector<double>& grid,
                           const EchoOptions& opts = {});

// Difference of two complementary runs; swapping them negates the result.
ExperimentCurve complementary_difference(const ExperimentCurve& a, const ExperimentCurve& b);

PulseSequence t1_sequence(double tau_ns, bool with_pi, double rabi_mhz = kDefaultPulseRabiMhz);

struct T1Result {
  ExperimentCurve raw;  // counts(pi) - counts(no pi)
  ExperimentCurve normalized;
  fit::FitResult fit;  // beta fixed to 1
};

T1Result run_t1(const photo::PhotophysicsParams& params, const std::vector<double>& tau_grid_ns,
                const RunOptions& opts = {}, double rabi_mhz = kDefaultPulseRabiMhz);

}  // namespace molspin::seq
