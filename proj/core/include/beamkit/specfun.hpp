#pragma once

namespace beamkit::specfun {

// Physicists' Hermite polynomial H_n(x), three-term recurrence.
double hermite(int n, double x);

// Generalized Laguerre polynomial L_n^(alpha)(x), three-term recurrence.
double laguerre(int n, double alpha, double x);

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
// Series for x < a + 1, Lentz continued fraction otherwise.
// Requires a > 0, x >= 0.
double gamma_q(double a, double x);

// Regularized lower incomplete gamma P(a, x) = 1 - Q(a, x).
double gamma_p(double a, double x);

// Confluent hypergeometric M(a, b, z) (Kummer's function).
// Terminating polynomial when a is a nonpositive integer; otherwise Taylor
// series, with the Kummer transformation M(a,b,z) = e^z M(b-a,b,-z) applied
// for z < 0 so the summed series has a positive argument.
// b must not be a nonpositive integer.
double kummer_m(double a, double b, double z);

double erf(double x);
double erfc(double x);

// Bessel J_0. Power series for |x| <= 12, Hankel asymptotic expansion beyond.
double bessel_j0(double x);

// sin(x)/x with sinc(0) = 1.
double sinc(double x);

// Inverse of sinc restricted to [-pi, 0], where it increases from 0 to 1.
// Input must lie in [0, 1].
double sinc_inv(double y);

}  // namespace beamkit::specfun
