#pragma once

// Photon streams from kinetic Monte Carlo over the rate model, g2
// histogramming and fitting, and TCSPC decay simulation with
// reconvolution fits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "molspin/fitting.hpp"
#include "molspin/photophysics.hpp"

namespace molspin::photon {

struct PhotonRecord {
  std::vector<double> timestamps_ns;
  double total_duration_ns = 0.0;
  std::uint64_t seed = 0;

  // Throws InvalidArgument unless timestamps increase strictly and lie in
  // [0, duration].
  void validate() const;
  double count_rate_per_ns() const;
};

struct StreamOptions {
  // Stop after this many jumps (0 = run to the full duration). The record
  // duration is then the time of the last jump.
  long max_jumps = 0;
  double dead_time_ns = 0.0;
  // Gaussian jitter added to each detection time.
  double timing_jitter_ns = 0.0;
  int initial_level = photo::T0z;
};

struct StreamStats {
  long jumps = 0;
  long emissions = 0;  // spontaneous decays, detected or not
  std::array<double, photo::kLevels> occupancy_ns{};
};

// Exact-time jump process over model.generator. A coherent ground drive is
// first folded into incoherent transfer rates. Each spontaneous decay is
// detected with probability collection_efficiency; background counts are a
// Poisson process at model.background_rate_per_ns.
// Throws NumericalError if a level with zero outflow is reached.
PhotonRecord simulate_photon_stream(const photo::RateModel& model, double duration_ns, std::uint64_t seed,
                                    const StreamOptions& opts = {}, StreamStats* stats = nullptr);

// Incoherent model actually sampled by simulate_photon_stream.
photo::RateModel jump_model(const photo::RateModel& model);

// Homogeneous Poisson stream (uncorrelated reference).
PhotonRecord poisson_stream(double rate_per_ns, double duration_ns, std::uint64_t seed);

// ---------------------------------------------------------------- g2

enum class G2Estimator { full, start_stop };

struct G2Histogram {
  std::vector<double> tau_ns;  // bin centers, symmetric about 0
  std::vector<double> g2;
  std::vector<double> sigma;
  std::vector<double> counts;
  std::vector<double> expected;  // uncorrelated coincidences per bin
  double bin_ns = 5.0;
  long coincidences = 0;
  bool low_statistics = false;  // fewer than 100 coincidences

  void validate() const;
  fit::CurveData as_curve_data() const;
};

G2Histogram g2_histogram(const PhotonRecord& record, double bin_ns = 5.0, double max_tau_ns = 2000.0,
                         G2Estimator estimator = G2Estimator::full);

// Sums the coincidences and expected counts of two histograms on the same
// bins and renormalizes.
G2Histogram merge(const G2Histogram& a, const G2Histogram& b);

struct G2Params {
  double g0 = 0.142;
  double amplitude = 1.0;  // A
  double tau_anti_ns = 28.0;
  double tau_bunch_ns = 245.0;
  double tau0_ns = 0.0;
  double sigma_total_ns = 1.563;
  double baseline_scale = 1.0;

  void validate() const;
};

// 1 - (1 - g0 + A) e^{-|u|/ta} + A e^{-|u|/tb}, u = tau - tau0, convolved
// with a Gaussian of width sigma_total. baseline_scale is not applied.
double g2_model(double tau_ns, const G2Params& p);

// Gaussian convolution of e^{-|u|/t} evaluated at u.
double convolved_two_sided_exp(double u, double t, double sigma);

// exp(x^2) erfc(x).
double erfcx(double x);

// sqrt(2 sigma_det^2 + bin^2 / 12).
double irf_sigma(double sigma_detector_ns = 0.425, double bin_ns = 5.0);

struct G2FitOptions {
  bool fit_tau0 = true;
  bool fit_sigma = false;
  int n_mc = 1000;
  std::uint64_t seed = 0;
  // Half-width of the fitted tau range (0 = whole histogram).
  double fit_range_ns = 0.0;
};

struct G2Fit {
  fit::FitResult fit;  // g0, A, tau_anti, tau_bunch, tau0, sigma_total, baseline_scale
  G2Params params;
  std::optional<fit::Interval> g0_interval;  // central 68% over covariance draws
  double g0_upper_error = 0.0;
  double g0_lower_error = 0.0;
};

G2Fit fit_g2(const G2Histogram& h, const G2Params& init, const G2FitOptions& opts = {});

// Normalized g2 of a photon stream from the model, computed from the
// post-emission state propagated by the jump generator. Background counts
// dilute it as 1 + rho^2 (g2 - 1), rho = signal / (signal + background).
std::vector<double> exact_g2(const photo::RateModel& model, const std::vector<double>& tau_ns);

// Noise-free counterpart of g2_histogram for the model: exact g2 smeared
// by the two-detector timing jitter (sqrt(2) sigma_det) and averaged over
// each bin. sigma is left at zero.
G2Histogram expected_g2_histogram(const photo::RateModel& model, double bin_ns, double max_tau_ns,
                                  double sigma_detector_ns);

// ---------------------------------------------------------------- TCSPC

struct DecayComponent {
  double lifetime_ns = 1.0;
  double amplitude = 1.0;  // pre-exponential, relative
};

struct TcspcParams {
  std::vector<DecayComponent> components;
  // Probability that a pulse yields a detected photon.
  double detection_probability = 0.05;
  double irf_center_ns = 2.0;

  void validate() const;
};

// Components from the photophysics model: one per excited sublevel with
// lifetime 1/(gamma + K r_s) and initial intensity branching_s * gamma.
TcspcParams tcspc_from_photophysics(const photo::PhotophysicsParams& p, const std::array<double, 3>& branching,
                                    double detection_probability = 0.05);

struct TcspcHistogram {
  std::vector<double> edges_ns;  // size = counts + 1
  std::vector<double> counts;
  double pulse_period_ns = 0.0;

  void validate() const;
  double total() const;
  std::vector<double> centers() const;
};

// Arrival time = IRF jitter + exponential delay, folded into one period.
TcspcHistogram simulate_tcspc(const TcspcParams& params, double pulse_period_ns, long n_pulses, double irf_sigma_ns,
                              std::uint64_t seed, double bin_ns = 0.1);

struct Irf {
  // Gaussian of this width centered at t0 (t0 is fitted) ...
  std::optional<double> sigma_ns;
  // ... or a measured histogram on the data bins (t0 fixed by it).
  std::vector<double> histogram;
};

struct BiexpInit {
  double tau1_ns = 3.0;
  double tau2_ns = 20.0;
  double fraction1 = 0.5;
  std::optional<double> t0_ns;  // default: rising edge of the data
};

struct ReconvolutionFit {
  fit::FitResult fit;  // tau1, tau2, f1, scale, t0, background
  double tau1_ns = 0.0;
  double a1 = 0.0;  // normalized pre-exponential amplitudes, a1 + a2 = 1
  double tau2_ns = 0.0;
  double a2 = 0.0;
  bool mono_exponential = false;  // tau2 / tau1 < 1.05
  std::vector<double> model;
  std::vector<double> residuals;
};

// Model IRF (x) (A1 e^{-t/tau1} + A2 e^{-t/tau2}) including the tail from
// earlier pulses, integrated over bins, plus a flat background.
// Poisson-weighted; tau1 <= tau2 on return.
ReconvolutionFit fit_biexponential_reconvolution(const TcspcHistogram& h, const Irf& irf, const BiexpInit& init = {});

// ----------------------------------------------------------------- IO

// CSV: "# duration_ns=..., seed=..." then one timestamp per line.
void write_photon_csv(const PhotonRecord& r, const std::filesystem::path& path);
PhotonRecord read_photon_csv(const std::filesystem::path& path);
// Flat little-endian float64 timestamps in ns, no header.
void write_photon_binary(const PhotonRecord& r, const std::filesystem::path& path);
PhotonRecord read_photon_binary(const std::filesystem::path& path, std::optional<double> duration_ns = {});

// tau_ns,g2,sigma (+ counts, expected).
void write_g2_csv(const G2Histogram& h, const std::filesystem::path& path);
G2Histogram read_g2_csv(const std::filesystem::path& path);
// t_lo_ns,t_hi_ns,counts
void write_tcspc_csv(const TcspcHistogram& h, const std::filesystem::path& path);
TcspcHistogram read_tcspc_csv(const std::filesystem::path& path);

}  // namespace molspin::photon
