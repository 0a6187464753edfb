#pragma once

namespace beamkit::constants {

// 2019 SI exact values
inline constexpr double k_boltzmann = 1.380649e-23;   // J/K
inline constexpr double hbar = 1.054571817e-34;       // J s
inline constexpr double atomic_mass_unit = 1.66053906892e-27;  // kg

// CODATA mass of 87Rb
inline constexpr double mass_rb87 = 86.909180531 * atomic_mass_unit;  // kg

}  // namespace beamkit::constants
