#pragma once

// CW spectra from the photophysics model (ODMR, MW-assisted excitation,
// ensembles) and the analysis tools applied to measured spectra.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

#include "molspin/fitting.hpp"
#include "molspin/photophysics.hpp"

namespace molspin::spectra {

struct Spectrum {
  std::vector<double> axis;       // MHz offsets, or nm for emission
  std::vector<double> intensity;  // counts/s unless noted
  std::map<std::string, std::string> metadata;

  // Throws InvalidArgument unless the axis is strictly monotone, lengths
  // match and intensities are finite.
  void validate() const;
  // Throws unless the axis is strictly increasing with constant step.
  double uniform_step() const;
  double max_intensity() const;
  double argmax() const;
};

// Lorentzian with peak height `amplitude` and full width `fwhm`.
double lorentzian(double x, double center, double fwhm, double amplitude = 1.0);

// Single Lorentzian plus offset; parameters A, x0, fwhm, y0. An optional
// window restricts the fit to |x - argmax| <= window.
fit::FitResult fit_lorentzian(const Spectrum& s, std::optional<double> window = {});

// ---------------------------------------------------------------- ODMR

// Steady-state fluorescence vs MW frequency. One MW source drives Z<->Y and
// Z<->X at the same Rabi frequency with detunings f - f_ZY and f - f_ZX,
// replacing params.mw_drive. Intensities are averaged over the laser
// positions (empty = params.laser_detuning_mhz).
Spectrum odmr_spectrum(const photo::PhotophysicsParams& params, const std::vector<double>& mw_grid_mhz,
                       double mw_rabi_khz, const std::vector<double>& laser_positions_mhz = {});

// Excited-state ODMR: ground CW drive from params, plus an incoherent MW
// transfer T1y<->T1z and T1x<->T1z tuned by the scanned frequency. Laser
// positions are averaged as in odmr_spectrum.
Spectrum excited_state_odmr(const photo::PhotophysicsParams& params, const std::vector<double>& mw_grid_mhz,
                            double transfer_rate_per_ns, const std::vector<double>& laser_positions_mhz = {});

// ---------------------------------------------------------- excitation

enum class MwConfig { none, zx, zy, both };

MwConfig parse_mw_config(const std::string& s);
std::string to_string(MwConfig c);

// Ground drives for a MW configuration: resonant, phase 0.
std::vector<photo::MwDrive> mw_drives(MwConfig c, double rabi_mhz);

// Fluorescence (counts/s) of one molecule vs laser position relative to its
// own line shift, sampled on a uniform grid for fast interpolation.
class LineResponse {
 public:
  LineResponse(const photo::PhotophysicsParams& params, MwConfig mw, double lo_mhz, double hi_mhz,
               double step_mhz = 2.0, double cw_rabi_mhz = photo::kDefaultCwRabiMhz);
  double operator()(double relative_detuning_mhz) const;

 private:
  double lo_, hi_;
  std::shared_ptr<boost::math::interpolators::cardinal_cubic_b_spline<double>> spline_;
};

// Summed over molecules with the given line shifts (single molecule: {0}).
Spectrum excitation_spectrum(const photo::PhotophysicsParams& params, const std::vector<double>& line_shifts_mhz,
                             const std::vector<double>& laser_grid_mhz, MwConfig mw,
                             double cw_rabi_mhz = photo::kDefaultCwRabiMhz);

// ---------------------------------------------------------- isotopes

struct IsotopeEnsembleSpec {
  long n_molecules = 1000;
  int carbon_count = 25;
  double c13_abundance = 0.011;
  double inhomogeneous_fwhm_mhz = 3000.0;
  double dxy_mhz = 1555.0;
  double dxz_mhz = 16120.0;
  // Shift of class k = number of 13C atoms, the last entry collecting all
  // higher counts.
  std::vector<double> class_shifts_mhz{0.0, 6000.0, 12000.0, 18000.0, 24000.0};

  void validate() const;
};

struct EnsembleMolecule {
  int n_c13 = 0;
  int class_label = 0;
  double line_shift_mhz = 0.0;
};

std::vector<EnsembleMolecule> sample_isotope_ensemble(const IsotopeEnsembleSpec& spec, std::uint64_t seed);

// Binomial probability of each class label.
std::vector<double> isotope_class_probabilities(const IsotopeEnsembleSpec& spec);

// Params with optical lines taken from the spec separations.
photo::PhotophysicsParams ensemble_params(const photo::PhotophysicsParams& base, const IsotopeEnsembleSpec& spec);

std::vector<double> line_shifts(const std::vector<EnsembleMolecule>& molecules);

// ---------------------------------------------------------- triple fits

struct TripleLines {
  double center_mhz = 0.0;  // X line; Y = +dxy, Z = +dxz
  std::array<double, 3> amplitude{};
  std::array<double, 3> fwhm_mhz{};
};

Spectrum synthetic_triple_spectrum(const std::vector<double>& axis, const std::vector<TripleLines>& triples,
                                   double dxy_mhz, double dxz_mhz, double offset = 0.0);

struct TripleFitOptions {
  int n_triples = 5;
  double dxy_guess_mhz = 1555.0;
  double dxz_guess_mhz = 16120.0;
  std::vector<double> center_guesses;  // empty = greedy matched-filter seeding
  double width_guess_mhz = 0.0;        // 0 = half-maximum width of the highest peak
};

struct TripleFit {
  fit::FitResult fit;  // dxy, dxz, y0, then c_t, A_t_{x,y,z}, w_t_{x,y,z}
  std::vector<TripleLines> triples;
  std::vector<double> relative_area;
  double dxy_mhz = 0.0;
  double dxz_mhz = 0.0;
};

// Triples are returned in the order of decreasing area.
TripleFit fit_lorentzian_triples(const Spectrum& s, const TripleFitOptions& opts = {});

// ---------------------------------------------------------- correlation

// d_k = sum_{n=N}^{M-1} a_{n+k} b_n / (M - N) over the overlap of the two
// grids, for |k| <= max_lag (default: all lags with overlap >= half the
// grid). Axis = k * step. A peak at +s means a's features lie s above b's.
Spectrum cross_correlate(const Spectrum& a, const Spectrum& b, std::optional<int> max_lag = {});

struct PeakEstimate {
  double center = 0.0;
  double fwhm = 0.0;
  fit::FitResult fit;
};

// Lorentzian on a linear slope fitted within +/- window of a guess.
PeakEstimate fit_correlation_peak(const Spectrum& corr, double guess, double window);

struct FewMoleculeSpec {
  int n_molecules = 3;
  double inhomogeneous_fwhm_mhz = 3000.0;
  // Repeated upward laser scans, averaged. The state carries over from point
  // to point and from scan to scan; each scan draws a fresh quasi-static
  // line-center offset of this Gaussian FWHM.
  double spectral_diffusion_fwhm_mhz = 45.0;
  int scans = 64;
  int warmup_scans = 2;
  double dwell_ns = 2000.0;
};

struct XYSpectra {
  Spectrum x;  // ZX drive
  Spectrum y;  // ZY drive
  std::vector<double> line_shifts_mhz;
};

// Laser grid must be uniform and increasing.
XYSpectra simulate_few_molecule_spectra(const photo::PhotophysicsParams& params, const FewMoleculeSpec& spec,
                                        const std::vector<double>& laser_grid_mhz, std::uint64_t seed);

// ---------------------------------------------------------- emission

struct EmissionSpec {
  double zpl_center_nm = 594.18;
  double zpl_fwhm_nm = 0.1;
  double zpl_weight = 0.1947;  // ZPL-window share of the ZPL..limit integral
  double zpl_half_window_nm = 0.5;
  double sideband_onset_nm = 594.18;
  double sideband_scale_nm = 18.0;  // gamma-like wing (d/scale)^2 exp(-d/scale)
  double background = 0.0;
  double sideband_limit_nm = 720.0;
};

Spectrum synthetic_emission_spectrum(const std::vector<double>& axis_nm, const EmissionSpec& spec);

// Background = mean intensity at axis <= background_max_nm, subtracted before
// integrating. Returns ZPL-window integral / (window start .. limit) integral.
double debye_waller(const Spectrum& emission, std::pair<double, double> zpl_window_nm,
                    double sideband_limit_nm = 720.0, double background_max_nm = 590.0);

// ---------------------------------------------------------- doping

// Mean guest-guest distance (nm) for doping ratio xi = 0.4175 / d^3.
double doping_distance(double ratio);

}  // namespace molspin::spectra
