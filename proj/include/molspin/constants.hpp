#pragma once

// Physical constants and unit conventions used throughout the library.
//
// Energies and frequencies are in MHz, magnetic fields in mT, times in ns and
// rates in 1/ns. Angular quantities inside the master-equation code are in
// rad/ns.

#include <numbers>

namespace molspin::constants {

// CODATA 2018
inline constexpr double planck_js = 6.62607015e-34;
inline constexpr double bohr_magneton_jt = 9.2740100783e-24;

// mu_B / h expressed in MHz per mT.
inline constexpr double bohr_mhz_per_mt = bohr_magneton_jt / planck_js * 1e-9;

inline constexpr double free_electron_g = 2.0023;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Frequency in MHz to angular frequency in rad/ns.
constexpr double mhz_to_rad_per_ns(double f_mhz) { return two_pi * f_mhz * 1e-3; }

}  // namespace molspin::constants
