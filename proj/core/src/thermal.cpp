#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "beamkit/constants.hpp"
#include "beamkit/errors.hpp"
#include "beamkit/qsim.hpp"
#include "beamkit/rng.hpp"

namespace beamkit::qsim {

TrapSpec TrapSpec::from_optics(double depth_uk, double waist_um, double wavelength_nm,
                               double temperature_uk, double mass_kg) {
  TrapSpec t;
  t.depth_uk = depth_uk;
  t.waist_um = waist_um;
  t.wavelength_nm = wavelength_nm;
  t.rayleigh_um = M_PI * waist_um * waist_um / (wavelength_nm * 1e-3);
  t.temperature_uk = temperature_uk;
  t.mass_kg = mass_kg;
  return t;
}

void TrapSpec::validate() const {
  if (!(depth_uk > 0.0)) throw std::invalid_argument("TrapSpec: depth must be positive");
  if (!(waist_um > 0.0)) throw std::invalid_argument("TrapSpec: waist must be positive");
  if (!(rayleigh_um > 0.0)) {
    throw std::invalid_argument("TrapSpec: rayleigh length must be positive");
  }
  if (temperature_uk < 0.0) {
    throw std::invalid_argument("TrapSpec: temperature must be >= 0");
  }
  if (!(mass_kg > 0.0)) throw std::invalid_argument("TrapSpec: mass must be positive");
}

double trap_potential_uk(const TrapSpec& trap, double x_um, double y_um, double z_um) {
  double zr = z_um / trap.rayleigh_um;
  double w2 = trap.waist_um * trap.waist_um * (1.0 + zr * zr);
  double rho2 = x_um * x_um + y_um * y_um;
  // Gaussian-beam intensity profile, referenced to the trap bottom
  double intensity = std::exp(-2.0 * rho2 / w2) / (1.0 + zr * zr);
  return trap.depth_uk * (1.0 - intensity);
}

TrapFrequencies trap_frequencies(const TrapSpec& trap) {
  trap.validate();
  // harmonic expansion of the Gaussian beam about the focus:
  // omega_r = sqrt(4 U0 / (m w0^2)), omega_z = sqrt(2 U0 / (m z0^2))
  double u0 = trap.depth_uk * 1e-6 * constants::k_boltzmann;  // J
  double w0 = trap.waist_um * 1e-6;
  double z0 = trap.rayleigh_um * 1e-6;
  TrapFrequencies f;
  f.omega_r = std::sqrt(4.0 * u0 / (trap.mass_kg * w0 * w0));
  f.omega_z = std::sqrt(2.0 * u0 / (trap.mass_kg * z0 * z0));
  return f;
}

std::vector<Trajectory> sample_thermal(const TrapSpec& trap, ThermalMode mode, int n,
                                       std::uint64_t seed, const ThermalOptions& opt) {
  trap.validate();
  if (n < 0) throw std::invalid_argument("sample_thermal: n must be >= 0");
  std::vector<Trajectory> out;
  out.reserve(n);

  // Maxwellian velocity scale; k_B T / m in (m/s)^2 equals (um/us)^2.
  double sigma_v = std::sqrt(constants::k_boltzmann * trap.temperature_uk * 1e-6 /
                             trap.mass_kg);
  if (trap.temperature_uk == 0.0) {
    out.assign(n, Trajectory{});
    return out;
  }

  rng::Stream stream(seed, 0);
  if (mode == ThermalMode::harmonic) {
    TrapFrequencies f = trap_frequencies(trap);
    double sx = sigma_v / f.omega_r * 1e6;  // m -> um
    double sz = sigma_v / f.omega_z * 1e6;
    for (int i = 0; i < n; ++i) {
      Trajectory t;
      t.r0_um = {sx * stream.gaussian(), sx * stream.gaussian(), sz * stream.gaussian()};
      t.v0_um_us = {sigma_v * stream.gaussian(), sigma_v * stream.gaussian(),
                    sigma_v * stream.gaussian()};
      out.push_back(t);
    }
    return out;
  }

  // exact mode: random-walk Metropolis on exp(-U/kT).  The Boltzmann weight
  // in a Gaussian potential is not normalizable, so the walk is confined to
  // a box around the thermal core: cutoff harmonic widths plus a fixed pad
  // of 1/16 of the beam scale per axis (cold walks are never truncated),
  // capped at w0/2 radially and 3 z0/5 axially (hot walks fail the
  // acceptance check instead of wandering into the plateau of U).
  TrapFrequencies f = trap_frequencies(trap);
  double sx = sigma_v / f.omega_r * 1e6;  // m -> um
  double sz = sigma_v / f.omega_z * 1e6;
  double bx = std::min(opt.cutoff * sx + trap.waist_um / 16.0, 0.5 * trap.waist_um);
  double bz =
      std::min(opt.cutoff * sz + trap.rayleigh_um / 16.0, 0.6 * trap.rayleigh_um);
  std::array<double, 3> pos = {0.0, 0.0, 0.0};
  double u_cur = 0.0;  // potential at the origin
  long accepted = 0, proposed = 0;
  auto in_bounds = [&](const std::array<double, 3>& r) {
    return std::abs(r[0]) <= bx && std::abs(r[1]) <= bx && std::abs(r[2]) <= bz;
  };
  auto step = [&]() {
    std::array<double, 3> prop = {pos[0] + sx * stream.gaussian(),
                                  pos[1] + sx * stream.gaussian(),
                                  pos[2] + sz * stream.gaussian()};
    ++proposed;
    if (!in_bounds(prop)) return;
    double u_prop = trap_potential_uk(trap, prop[0], prop[1], prop[2]);
    double log_ratio = -(u_prop - u_cur) / trap.temperature_uk;
    if (log_ratio >= 0.0 || stream.uniform_positive() < std::exp(log_ratio)) {
      pos = prop;
      u_cur = u_prop;
      ++accepted;
    }
  };
  for (int i = 0; i < opt.burn_in; ++i) step();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < opt.thin; ++j) step();
    Trajectory t;
    t.r0_um = pos;
    t.v0_um_us = {sigma_v * stream.gaussian(), sigma_v * stream.gaussian(),
                  sigma_v * stream.gaussian()};
    out.push_back(t);
  }
  if (proposed > 0 && static_cast<double>(accepted) / proposed < 0.01) {
    throw ConvergenceError("sample_thermal: Metropolis acceptance below 1%");
  }
  return out;
}

}  // namespace beamkit::qsim
