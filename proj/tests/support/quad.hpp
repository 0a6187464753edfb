#pragma once

#include <complex>
#include <functional>
#include <vector>

// Test-side numerical oracles: deliberately independent of the library
// implementations they are used to check.
namespace oracle {

// Adaptive Simpson quadrature with absolute tolerance tol.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol = 1e-11);

// Trapezoid-rule Cauchy coefficients: Taylor coefficient a_k of an entire
// function sampled on the circle |z| = radius with n_samples points.
std::complex<double> taylor_coefficient(
    const std::function<std::complex<double>(std::complex<double>)>& f, int k,
    double radius, int n_samples = 256);

// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace oracle
