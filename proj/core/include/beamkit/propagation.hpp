#pragma once

#include <array>
#include <complex>
#include <functional>
#include <vector>

#include "beamkit/flattop.hpp"
#include "beamkit/sampled_field.hpp"

namespace beamkit::prop {

// Physical scales of the Gaussian basis.  Transverse coordinates are in units
// of waist_um, longitudinal in units of rayleigh_um; the consistency
// rayleigh = pi * waist^2 / wavelength is enforced on construction.
struct BeamGeometry {
  double waist_um;
  double rayleigh_um;
  double wavelength_nm;

  BeamGeometry(double waist_um, double rayleigh_um, double wavelength_nm);
  static BeamGeometry from_waist(double waist_um, double wavelength_nm);

  // Plane-wave phase advance per unit normalized z: 2 z0^2 / w0^2, i.e. k z
  // rewritten in waist/Rayleigh units (z0 and w0 share the micron scale).
  double carrier_exponent() const;
  std::complex<double> carrier(double z) const;  // exp(-i * carrier_exponent() * z)
};

// Hermite-Gaussian mode continued off the focal plane,
//   (1 - i z)^{-1/2} ((i - z)/(i + z))^{n/2} H_n(sqrt(2) x / sqrt(1 + z^2))
//     * exp(-x^2 / (1 - i z)).
// The base (i - z)/(i + z) has unit modulus and argument 2 atan(z), so the
// n/2 power is taken as exp(i n atan z): the branch continuous from z = 0,
// with no cut crossings anywhere on the real z line.
std::complex<double> hg_mode_xz(int n, double x, double z);

// Flat-top axis profile away from focus: sum of hg_mode_xz over the
// Hermite coefficients of the order-N construction.  field_xz(N, x, 0)
// reproduces flattop_profile(N, x).
std::complex<double> field_xz(int order, double x, double z);

// Separable 2-D field E_N(x, z) E_M(y, z); the geometry overload multiplies
// by the carrier phase exp(-i k z) in normalized bookkeeping.
std::complex<double> field_xyz(const flattop::FlatTopOrder& order, double x, double y, double z);
std::complex<double> field_xyz(const flattop::FlatTopOrder& order, double x, double y, double z,
                               const BeamGeometry& geom);

// Transfer-function propagation of a sampled focal field by dz (Rayleigh
// units): FT, advance each plane wave per the paraxial equation, inverse FT.
// Periodic wrap-around is the caller's responsibility; when the boundary
// amplitude is not < 1e-8 of the peak the result is flagged as aliased
// (written to *aliasing_flagged when given, warned on stderr otherwise).
SampledField angular_spectrum_propagate(const SampledField& in, double dz,
                                        bool* aliasing_flagged = nullptr);

// One monomial coeff * x^alpha y^beta z^gamma of the near-focus expansion.
struct TaylorTerm {
  int alpha = 0;
  int beta = 0;
  int gamma = 0;
  std::complex<double> coeff;
};

// Leading terms of E_NN(x, y, z) about the origin for the square (N = M)
// flat-top: the constant 1, the transverse pair x^2 z^{N/2} and y^2 z^{N/2},
// and the on-axis powers z^{N/2+1}, z^{N/2+2}.
std::vector<TaylorTerm> taylor_coefficients(int order);

std::complex<double> eval_taylor(const std::vector<TaylorTerm>& terms, double x, double y,
                                 double z);

using FieldSampler = std::function<std::complex<double>(double, double, double)>;

// Max over probes of |(d_xx + d_yy) E - 4 i d_z E| by central differences
// with one Richardson extrapolation at the given step.
double paraxial_residual(const FieldSampler& field,
                         const std::vector<std::array<double, 3>>& probes, double step = 1e-3);

}  // namespace beamkit::prop
