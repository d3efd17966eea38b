#include "molspin/sequences.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>

#include <unsupported/Eigen/MatrixFunctions>

#include "molspin/error.hpp"

namespace molspin::seq {

namespace {

using photo::LiouvilleMatrix;
using photo::LiouvilleVector;
using photo::PhotophysicsParams;
using photo::kLevels;
using photo::kStateDim;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

bool same_pair(int a, int b, int c, int d) { return (a == c && b == d) || (a == d && b == c); }

// Exact propagators for piece-wise constant segments, shared across the
// points of one sweep.
class PropagatorCache {
 public:
  PropagatorCache(const PhotophysicsParams& params, EnvelopeKind kind, double frame_detuning, int fa, int fb)
      : params_(params), kind_(kind), frame_detuning_(frame_detuning), fa_(fa), fb_(fb) {}

  const LiouvilleMatrix& step(const Segment& s) {
    const std::string key = key_of(s) + "|" + hex(s.duration_ns);
    auto it = steps_.find(key);
    if (it != steps_.end()) return it->second;
    const LiouvilleMatrix l = photo::liouvillian(model_of(s));
    return steps_.emplace(key, (l * s.duration_ns).exp()).first->second;
  }

  // Expected detected counts accumulated over `gate` ns from state v.
  double gate_counts(const Segment& s, const LiouvilleVector& v, double gate) {
    const std::string key = key_of(s) + "|gate " + hex(gate);
    auto it = gates_.find(key);
    if (it == gates_.end()) {
      const photo::RateModel m = model_of(s);
      // exp([[L, I], [0, 0]] t) has int_0^t exp(L s) ds as its top-right block.
      Eigen::Matrix<double, 2 * kStateDim, 2 * kStateDim> aug;
      aug.setZero();
      aug.topLeftCorner<kStateDim, kStateDim>() = photo::liouvillian(m);
      aug.topRightCorner<kStateDim, kStateDim>().setIdentity();
      const Eigen::Matrix<double, 2 * kStateDim, 2 * kStateDim> e = (aug * gate).exp();
      Eigen::Matrix<double, 1, kStateDim> row = Eigen::Matrix<double, 1, kStateDim>::Zero();
      row.head<kLevels>() = m.collection_efficiency * m.emission_out().transpose();
      it = gates_.emplace(key, row * e.topRightCorner<kStateDim, kStateDim>()).first;
    }
    return it->second.dot(v) + params_.background_rate_per_ns * gate;
  }

 private:
  std::string key_of(const Segment& s) const {
    std::string k = s.laser_on ? "L" + hex(s.laser_detuning_mhz) : "D";
    for (const auto& p : s.mw)
      k += "/" + std::to_string(p.a) + std::to_string(p.b) + hex(p.rabi_mhz) + hex(p.phase_rad) + hex(p.detuning_mhz);
    return k;
  }

  photo::RateModel model_of(const Segment& s) const {
    PhotophysicsParams q = params_;
    q.mw_drive.clear();
    q.excited_mw.clear();
    q.laser_rate_peak = s.laser_on ? params_.laser_rate_peak : 0.0;
    q.laser_detuning_mhz += s.laser_detuning_mhz;
    bool frame_driven = false;
    for (const auto& p : s.mw) {
      const bool on_frame = same_pair(p.a, p.b, fa_, fb_);
      frame_driven = frame_driven || on_frame;
      q.mw_drive.push_back({p.a, p.b, p.rabi_mhz, p.detuning_mhz + (on_frame ? frame_detuning_ : 0.0), p.phase_rad});
    }
    if (!frame_driven && frame_detuning_ != 0.0) q.mw_drive.push_back({fa_, fb_, 0.0, frame_detuning_, 0.0});
    if (kind_ != EnvelopeKind::t2star_free) q.t2_star_ns = std::numeric_limits<double>::infinity();
    return photo::build_rate_model(q);
  }

  PhotophysicsParams params_;
  EnvelopeKind kind_;
  double frame_detuning_;
  int fa_, fb_;
  std::unordered_map<std::string, LiouvilleMatrix> steps_;
  std::unordered_map<std::string, Eigen::Matrix<double, 1, kStateDim>> gates_;
};

const DecoherenceEnvelope& envelope_of(const PhotophysicsParams& p, EnvelopeKind kind) {
  switch (kind) {
    case EnvelopeKind::hahn:
      return p.hahn;
    case EnvelopeKind::xy8:
      return p.xy8;
    default:
      return p.t1;
  }
}

// f(t1) / f(t0) for f = exp(-(t/T)^beta), computed in log space.
double envelope_ratio(const DecoherenceEnvelope& env, double t0, double t1) {
  const double a = t0 > 0.0 ? std::pow(t0 / env.time_constant_ns, env.stretch) : 0.0;
  const double b = t1 > 0.0 ? std::pow(t1 / env.time_constant_ns, env.stretch) : 0.0;
  return std::exp(a - b);
}

double counts_with_cache(const PulseSequence& seq, const PhotophysicsParams& params, PropagatorCache& cache,
                         const LiouvilleVector& init) {
  if (seq.readout.gate_ns == 0.0) return 0.0;
  LiouvilleVector v = init;
  double t_free = 0.0;
  const bool coherence_env = seq.envelope == EnvelopeKind::hahn || seq.envelope == EnvelopeKind::xy8;
  for (int i = 0; i < static_cast<int>(seq.segments.size()); ++i) {
    const Segment& s = seq.segments[i];
    if (i == seq.readout.segment) {
      if (seq.readout.gate_start_ns > 0.0) {
        Segment head = s;
        head.duration_ns = seq.readout.gate_start_ns;
        v = cache.step(head) * v;
      }
      return cache.gate_counts(s, v, seq.readout.gate_ns);
    }
    v = cache.step(s) * v;
    if (!s.free_evolution || s.duration_ns == 0.0) continue;
    if (coherence_env) {
      const double r = envelope_ratio(envelope_of(params, seq.envelope), t_free, t_free + s.duration_ns);
      v.tail<kStateDim - kLevels>() *= r;
    } else if (seq.envelope == EnvelopeKind::t1) {
      const double r = envelope_ratio(params.t1, t_free, t_free + s.duration_ns);
      const double total = v[0] + v[1] + v[2];
      for (int k = 0; k < 3; ++k) v[k] = total / 3.0 + (v[k] - total / 3.0) * r;
    }
    t_free += s.duration_ns;
  }
  throw InvalidArgument("sequence has no readout segment");
}

SequenceResult sample_counts(double mu, long shots, std::mt19937_64& rng) {
  if (shots <= 0) return {mu, mu};
  if (mu <= 0.0) return {0.0, 0.0};
  std::poisson_distribution<long> pois(mu);
  double sum = 0.0, sum2 = 0.0;
  for (long i = 0; i < shots; ++i) {
    const double c = static_cast<double>(pois(rng));
    sum += c;
    sum2 += c * c;
  }
  const double n = static_cast<double>(shots);
  const double mean = sum / n;
  const double var = shots > 1 ? (sum2 - n * mean * mean) / (n - 1.0) : mean;
  return {mean, std::max(var, 0.0) / n};
}

MwPulse zy_pulse(double rabi, double phase) { return {photo::T0z, photo::T0y, rabi, phase, 0.0}; }

Segment pulse_segment(double rabi, double phase, double angle) {
  Segment s;
  s.duration_ns = angle / kTwoPi * 1e3 / rabi;  // rotation angle / (2 pi Omega)
  s.mw = {zy_pulse(rabi, phase)};
  return s;
}

Segment free_segment(double d, bool counts = true) {
  Segment s;
  s.duration_ns = d;
  s.free_evolution = counts;
  return s;
}

Segment settle_segment() { return free_segment(kSettleNs, false); }

void append_readout(PulseSequence& seq) {
  Segment r;
  r.duration_ns = 2000.0;
  r.laser_on = true;
  seq.segments.push_back(r);
  seq.readout = {static_cast<int>(seq.segments.size()) - 1, 0.0, 2000.0};
}

std::vector<double> jitter_samples(const EchoOptions& o) {
  if (o.detuning_jitter_mhz == 0.0) return {0.0};
  if (o.jitter_samples <= 0) throw InvalidArgument("jitter_samples must be > 0");
  std::mt19937_64 rng(o.jitter_seed);
  std::normal_distribution<double> nd(0.0, o.detuning_jitter_mhz);
  std::vector<double> d(static_cast<std::size_t>(o.jitter_samples));
  for (auto& x : d) x = nd(rng);
  return d;
}

ExperimentCurve normalize(const ExperimentCurve& c, double a) {
  ExperimentCurve n = c;
  if (a == 0.0) throw NumericalError("normalization by a zero fitted amplitude");
  for (std::size_t i = 0; i < c.signal.size(); ++i) {
    n.signal[i] = c.signal[i] / a;
    n.sigma[i] = c.sigma[i] / std::abs(a);
  }
  return n;
}

}  // namespace

void PulseSequence::validate() const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    if (!(s.duration_ns >= 0.0) || !std::isfinite(s.duration_ns))
      throw InvalidArgument("segment " + std::to_string(i) + ": duration must be >= 0");
    for (std::size_t j = 0; j < s.mw.size(); ++j) {
      const auto& p = s.mw[j];
      if (!(p.phase_rad >= 0.0 && p.phase_rad < kTwoPi))
        throw InvalidArgument("segment " + std::to_string(i) + ": MW phase must be in [0, 2 pi)");
      if (!(p.rabi_mhz >= 0.0)) throw InvalidArgument("segment " + std::to_string(i) + ": Rabi frequency < 0");
      for (std::size_t k = 0; k < j; ++k)
        if (same_pair(p.a, p.b, s.mw[k].a, s.mw[k].b))
          throw InvalidArgument("segment " + std::to_string(i) + ": overlapping MW pulses on the same transition");
    }
  }
  if (segments.empty() && readout.gate_ns == 0.0) return;
  if (readout.segment < 0 || readout.segment >= static_cast<int>(segments.size()))
    throw InvalidArgument("readout window must reference exactly one existing segment");
  const Segment& r = segments[readout.segment];
  if (!(readout.gate_start_ns >= 0.0) || !(readout.gate_ns >= 0.0) ||
      readout.gate_start_ns + readout.gate_ns > r.duration_ns * (1.0 + 1e-12))
    throw InvalidArgument("readout gate must lie inside its segment");
}

void ExperimentCurve::validate() const {
  if (sweep.size() != signal.size() || sweep.size() != sigma.size())
    throw InvalidArgument("ExperimentCurve: sweep, signal and sigma lengths differ");
  for (double s : sigma)
    if (!(s >= 0.0)) throw InvalidArgument("ExperimentCurve: sigma must be >= 0");
}

fit::CurveData ExperimentCurve::as_curve_data() const {
  validate();
  fit::CurveData d;
  d.x = Eigen::Map<const Eigen::VectorXd>(sweep.data(), static_cast<Eigen::Index>(sweep.size()));
  d.y = Eigen::Map<const Eigen::VectorXd>(signal.data(), static_cast<Eigen::Index>(signal.size()));
  d.sigma = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  bool any_positive = false;
  for (double s : sigma) any_positive = any_positive || s > 0.0;
  if (!any_positive) d.sigma.resize(0);
  else
    for (auto& s : d.sigma)
      if (s == 0.0) s = d.sigma.maxCoeff();
  return d;
}

photo::SystemState initialized_state(const PhotophysicsParams& params) {
  PhotophysicsParams q = params;
  q.mw_drive.clear();
  q.excited_mw.clear();
  return photo::steady_state(photo::build_rate_model(q));
}

double expected_counts(const PulseSequence& seq, const PhotophysicsParams& params) {
  seq.validate();
  params.validate();
  if (seq.readout.gate_ns == 0.0) return 0.0;
  PropagatorCache cache(params, seq.envelope, seq.frame_detuning_mhz, seq.frame_a, seq.frame_b);
  return counts_with_cache(seq, params, cache, initialized_state(params).to_vector());
}

SequenceResult run_sequence(const PulseSequence& seq, const PhotophysicsParams& params, long shots,
                            std::uint64_t seed) {
  if (shots < 0) throw InvalidArgument("run_sequence: shots must be >= 0");
  const double mu = expected_counts(seq, params);
  std::mt19937_64 rng(seed);
  return sample_counts(mu, shots, rng);
}

double apply_decoherence(const DecoherenceEnvelope& envelope, double coherence_magnitude, double elapsed_ns) {
  envelope.validate();
  if (!(elapsed_ns >= 0.0)) throw InvalidArgument("apply_decoherence: elapsed time must be >= 0");
  return coherence_magnitude * envelope.factor(elapsed_ns);
}

PulseSequence rabi_sequence(double tau_ns, double omega_mhz) {
  if (!(omega_mhz > 0.0)) throw InvalidArgument("rabi: omega must be > 0");
  PulseSequence s;
  s.segments.push_back(settle_segment());
  Segment p;
  p.duration_ns = tau_ns;
  p.mw = {zy_pulse(omega_mhz, 0.0)};
  s.segments.push_back(p);
  append_readout(s);
  return s;
}

ExperimentCurve run_rabi(const PhotophysicsParams& params, const std::vector<double>& tau_grid_ns, double omega_mhz,
                         const RunOptions& opts) {
  if (!(omega_mhz > 0.0)) throw InvalidArgument("run_rabi: omega must be > 0");
  params.validate();
  PropagatorCache cache(params, EnvelopeKind::t2star_free, 0.0, photo::T0z, photo::T0y);
  const LiouvilleVector init = initialized_state(params).to_vector();
  ExperimentCurve c;
  for (std::size_t i = 0; i < tau_grid_ns.size(); ++i) {
    const PulseSequence seq = rabi_sequence(tau_grid_ns[i], omega_mhz);
    seq.validate();
    std::mt19937_64 rng(point_seed(opts.seed, i));
    const auto r = sample_counts(counts_with_cache(seq, params, cache, init), opts.shots, rng);
    c.sweep.push_back(tau_grid_ns[i]);
    c.signal.push_back(r.mean_counts);
    c.sigma.push_back(std::sqrt(r.variance));
  }
  return c;
}

PulseSequence hahn_sequence(double tau_ns, double final_phase_rad, const EchoOptions& o) {
  if (!(tau_ns >= 0.0)) throw InvalidArgument("hahn: tau must be >= 0");
  PulseSequence s;
  s.envelope = EnvelopeKind::hahn;
  s.segments.push_back(settle_segment());
  s.segments.push_back(pulse_segment(o.rabi_mhz, 0.0, 0.5 * std::numbers::pi));
  s.segments.push_back(free_segment(0.5 * tau_ns));
  s.segments.push_back(pulse_segment(o.rabi_mhz, 0.0, std::numbers::pi));
  s.segments.push_back(free_segment(0.5 * tau_ns));
  s.segments.push_back(pulse_segment(o.rabi_mhz, final_phase_rad, 0.5 * std::numbers::pi));
  append_readout(s);
  return s;
}

PulseSequence xy8_sequence(int n_pulses, double final_phase_rad, const EchoOptions& o) {
  if (n_pulses <= 0 || n_pulses % 8 != 0)
    throw InvalidArgument("xy8: pulse count must be a positive multiple of 8, got " + std::to_string(n_pulses));
  constexpr double x = 0.0, y = 0.5 * std::numbers::pi;
  const std::array<double, 8> block{x, y, x, y, y, x, y, x};
  PulseSequence s;
  s.envelope = EnvelopeKind::xy8;
  s.segments.push_back(settle_segment());
  s.segments.push_back(pulse_segment(o.rabi_mhz, 0.0, 0.5 * std::numbers::pi));
  for (int k = 0; k < n_pulses; ++k) {
    s.segments.push_back(free_segment(k == 0 ? 0.5 * o.pulse_spacing_ns : o.pulse_spacing_ns));
    s.segments.push_back(pulse_segment(o.rabi_mhz, o.all_pulses_x ? x : block[k % 8], std::numbers::pi));
  }
  s.segments.push_back(free_segment(0.5 * o.pulse_spacing_ns));
  s.segments.push_back(pulse_segment(o.rabi_mhz, final_phase_rad, 0.5 * std::numbers::pi));
  append_readout(s);
  return s;
}

ExperimentCurve complementary_difference(const ExperimentCurve& a, const ExperimentCurve& b) {
  a.validate();
  b.validate();
  if (a.sweep != b.sweep) throw InvalidArgument("complementary_difference: sweeps differ");
  ExperimentCurve d = a;
  for (std::size_t i = 0; i < a.signal.size(); ++i) {
    d.signal[i] = a.signal[i] - b.signal[i];
    d.sigma[i] = std::hypot(a.sigma[i], b.sigma[i]);
  }
  return d;
}

EchoResult run_echo_family(const PhotophysicsParams& params, EchoKind kind, const std::vector<double>& grid,
                           const EchoOptions& opts) {
  params.validate();
  if (!(opts.rabi_mhz > 0.0)) throw InvalidArgument("echo: pulse Rabi frequency must be > 0");
  const std::vector<double> detunings = jitter_samples(opts);
  const EnvelopeKind env = kind == EchoKind::hahn ? EnvelopeKind::hahn : EnvelopeKind::xy8;
  std::vector<PropagatorCache> caches;
  for (double d : detunings) caches.emplace_back(params, env, d, photo::T0z, photo::T0y);
  const LiouvilleVector init = initialized_state(params).to_vector();

  EchoResult res;
  ExperimentCurve run0, run1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double free_time = 0.0;
    std::array<double, 2> mu{0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
      const double phase = c == 0 ? 0.0 : std::numbers::pi;
      PulseSequence seq;
      if (kind == EchoKind::hahn) {
        seq = hahn_sequence(grid[i], phase, opts);
        free_time = grid[i];
      } else {
        const double n = grid[i];
        if (!(n >= 1.0) || n != std::floor(n)) throw InvalidArgument("xy8: block counts must be positive integers");
        seq = xy8_sequence(8 * static_cast<int>(n), phase, opts);
        free_time = 8.0 * n * opts.pulse_spacing_ns;
      }
      for (std::size_t j = 0; j < detunings.size(); ++j) {
        seq.frame_detuning_mhz = detunings[j];
        mu[c] += counts_with_cache(seq, params, caches[j], init) / static_cast<double>(detunings.size());
      }
    }
    std::mt19937_64 rng(point_seed(opts.run.seed, i));
    const auto r0 = sample_counts(mu[0], opts.run.shots, rng);
    const auto r1 = sample_counts(mu[1], opts.run.shots, rng);
    for (auto* c : {&run0, &run1}) c->sweep.push_back(free_time);
    run0.signal.push_back(r0.mean_counts);
    run0.sigma.push_back(std::sqrt(r0.variance));
    run1.signal.push_back(r1.mean_counts);
    run1.sigma.push_back(std::sqrt(r1.variance));
    if (kind == EchoKind::xy8) res.blocks.push_back(static_cast<int>(grid[i]));
  }
  res.raw = complementary_difference(run0, run1);
  res.fit = fit::fit_stretched_exponential(res.raw.as_curve_data());
  res.normalized = normalize(res.raw, res.fit.value("A"));
  return res;
}

PulseSequence t1_sequence(double tau_ns, bool with_pi, double rabi_mhz) {
  if (!(tau_ns >= 0.0)) throw InvalidArgument("t1: tau must be >= 0");
  PulseSequence s;
  s.envelope = EnvelopeKind::t1;
  s.segments.push_back(settle_segment());
  if (with_pi) s.segments.push_back(pulse_segment(rabi_mhz, 0.0, std::numbers::pi));
  s.segments.push_back(free_segment(tau_ns));
  append_readout(s);
  return s;
}

T1Result run_t1(const PhotophysicsParams& params, const std::vector<double>& tau_grid_ns, const RunOptions& opts,
                double rabi_mhz) {
  params.validate();
  PropagatorCache cache(params, EnvelopeKind::t1, 0.0, photo::T0z, photo::T0y);
  const LiouvilleVector init = initialized_state(params).to_vector();
  T1Result res;
  ExperimentCurve with, without;
  for (std::size_t i = 0; i < tau_grid_ns.size(); ++i) {
    const double a = counts_with_cache(t1_sequence(tau_grid_ns[i], true, rabi_mhz), params, cache, init);
    const double b = counts_with_cache(t1_sequence(tau_grid_ns[i], false, rabi_mhz), params, cache, init);
    std::mt19937_64 rng(point_seed(opts.seed, i));
    const auto ra = sample_counts(a, opts.shots, rng);
    const auto rb = sample_counts(b, opts.shots, rng);
    for (auto* c : {&with, &without}) c->sweep.push_back(tau_grid_ns[i]);
    with.signal.push_back(ra.mean_counts);
    with.sigma.push_back(std::sqrt(ra.variance));
    without.signal.push_back(rb.mean_counts);
    without.sigma.push_back(std::sqrt(rb.variance));
  }
  res.raw = complementary_difference(with, without);
  res.fit = fit::fit_stretched_exponential(res.raw.as_curve_data(), 1.0);
  res.normalized = normalize(res.raw, res.fit.value("A"));
  return res;
}

}  // namespace molspin::seq
