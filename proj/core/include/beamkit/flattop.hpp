#pragma once

#include <string>
#include <utility>
#include <vector>

namespace beamkit::flattop {

enum class Basis { HermiteGauss, LaguerreGauss };

// Per-axis flat-top orders for separable 2-D beams.  Both must be even, >= 0.
struct FlatTopOrder {
  int n = 0;  // x-axis order
  int m = 0;  // y-axis order

  FlatTopOrder(int n_, int m_);
};

// Finite modal expansion of an axis profile.  For HermiteGauss the profile is
//   E(u) = sum_n c_n H_n(sqrt(2) u) exp(-u^2),
// for LaguerreGauss (radial)
//   E(u) = sum_k c_k L_k(2 u^2) exp(-u^2),
// with u the coordinate in units of the basis waist.
struct ModeExpansion {
  Basis basis = Basis::HermiteGauss;
  double waist_um = 1.0;
  std::vector<std::pair<int, double>> coeffs;  // (index, coefficient), indices strictly increasing

  std::string to_json_string() const;
  static ModeExpansion from_json_string(const std::string& text);
};

// Flat-top axis profile E_N(x) = Q(N/2 + 1, x^2), normalized to E(0) = 1.
// x is in waist units.  Noninteger orders are meaningful here (the gamma form
// interpolates); the coefficient generators below require even integers.
double flattop_profile(double order, double x);

// Hermite-basis coefficients of E_N.  Exact rational arithmetic internally;
// order must be even, >= 0, <= 20.
ModeExpansion hg_coefficients(int order, double waist_um = 1.0);

// Independent route to the same profile: solve the triangular linear system
// expressing "derivatives 2..N vanish at x = 0, E(0) = 1" for the polynomial
// coefficients c[n] of x^{2n} in E(x) = exp(-x^2) sum_n c[n] x^{2n}.
std::vector<double> solve_flatness_system(int order);

// exp(-x^2) * sum_n c[n] x^{2n} for the solve_flatness_system output.
double eval_monomial_profile(const std::vector<double>& c, double x);

// Evaluate a ModeExpansion at u (waist units).
double eval_expansion(const ModeExpansion& me, double u);

// Fourier transform of E_N under (1/sqrt(2 pi)) Int E(x) exp(i x t) dx,
// normalized to 1 at t = 0.  Kummer form near t = 0 (removable singularity),
// Hermite form elsewhere.  order must be even, >= 0.
double fourier_flattop(int order, double t);

// Large-N closed forms: erfc approximation of the profile and the
// sinc-times-Gaussian approximation of its transform.
double asymptotic_profile(int order, double x);
double asymptotic_fourier(int order, double t);

// Full width at half maximum of E_N in waist units: sqrt(2 N + 8/3).
double fwhm(int order);

// FWHM by bisection on the exact profile, for validating fwhm().
double fwhm_exact(double order);

// Radial flat-top: same gamma form, r in waist units.
double lg_flattop(double order, double r);

// Laguerre-basis coefficients of the radial profile; order even, >= 0, <= 20.
ModeExpansion lg_coefficients(int order, double waist_um = 1.0);

// Hankel transform of the radial profile, normalized to 1 at k = 0:
// (2/(N+2)) L_{N/2}^{(1)}(k^2/4) exp(-k^2/4).
double hankel_flattop(int order, double k);

// Phase profile of the aspheric Gaussian-to-flat-top lens, one axis:
// phi(x) = (sqrt(pi)/2) x erf(x) + exp(-x^2)/2 - 1/2.
double aspheric_phi(double x);

// Separable two-axis lens phase c * phi(x) * phi(y).
double aspheric_lens_phase(double x, double y, double c);

}  // namespace beamkit::flattop
