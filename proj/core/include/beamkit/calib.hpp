#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "beamkit/qsim.hpp"
#include "beamkit/sampled_field.hpp"

namespace beamkit::calib {

// Recover trap depth and waist from measured trap frequencies.  The radial
// and axial relations omega_r = sqrt(4 U0 / m) / w0, omega_z = sqrt(2 U0 / m)
// / z0 together with z0 = pi w0^2 / lambda close to
//   w0 = lambda omega_r / (sqrt(2) pi omega_z),
// and the depth follows from omega_r alone.  temperature_uk is left at zero
// for the caller to fill.
qsim::TrapSpec invert_trap(double omega_r_rad_s, double omega_z_rad_s,
                           double wavelength_nm, double mass_kg);

struct RecaptureCurve {
  std::vector<double> release_us;
  std::vector<double> survival;  // same length, values in [0, 1]
};

// Monte Carlo release-recapture: atoms sampled at temperature_uk (overriding
// trap.temperature_uk) fly ballistically for each release time and are
// recaptured when E_kin + U(r) < U0 in the restored trap.  The ensemble is
// conditioned on being bound at t = 0, so survival(0) = 1 identically.
RecaptureCurve release_recapture(const qsim::TrapSpec& trap, double temperature_uk,
                                 const std::vector<double>& release_us, int n_mc,
                                 uint64_t seed,
                                 qsim::ThermalMode mode = qsim::ThermalMode::harmonic);

// Least-squares scan over temperature against simulated curves generated with
// common random numbers (one seed shared across all candidates, so the
// objective is smooth in T).  Coarse log-spaced grid over
// [t_min_uk, t_max_uk], then a fine grid around the coarse minimum.
double fit_temperature(const qsim::TrapSpec& trap, const RecaptureCurve& curve,
                       int n_mc, uint64_t seed, double t_min_uk = 1.0,
                       double t_max_uk = 1000.0);

struct FitResult {
  double omega0_rad_s = 0.0;  // >= 0
  double delta_rad_s = 0.0;
  double gamma_1_s = 0.0;  // >= 0
  std::array<double, 3> sigma{{0.0, 0.0, 0.0}};  // 1-sigma for (omega0, delta, gamma)
  double residual_norm = 0.0;  // sqrt of the sum of squared residuals

  std::string to_json_string() const;
};

// P(t) = 1 - (omega0^2 / omega_tilde^2) (1 - e^{-gamma t} cos(omega_tilde t)) / 2
// with omega_tilde = sqrt(omega0^2 + delta^2).
double damped_rabi_model(double omega0_rad_s, double delta_rad_s, double gamma_1_s,
                         double t_s);

// Nonlinear least squares on the damped-Rabi model, multi-start.  The initial
// frequency comes from the dominant discrete-Fourier peak of the
// mean-subtracted data; starts differ in how the peak splits into (omega0,
// delta) and in the initial decay.  Throws FitError when the data are
// constant, std::invalid_argument for fewer than 8 samples or a non-increasing
// time grid.
FitResult fit_damped_rabi(const std::vector<double>& t_s,
                          const std::vector<double>& p);

// eta = omega0 / omega_bar: field seen by a neighbor relative to the target.
double crosstalk_eta(const FitResult& fit, double omega_bar_rad_s);

struct IonizationMap {
  double x0_um = 0.0, y0_um = 0.0;
  double dx_um = 1.0, dy_um = 1.0;
  int nx = 0, ny = 1;
  std::vector<double> survival;  // row-major (y outer, x inner), p in [0, 1]

  double p(int i, int j) const {
    return survival[static_cast<size_t>(j) * nx + i];
  }
  void validate() const;  // throws std::invalid_argument

  // CSV rows "x_um,y_um,p" covering a regular grid, any row order.  Blank
  // lines, '#' comments, and an optional non-numeric header row are skipped.
  static IonizationMap read_csv(std::istream& is);
};

// Survival -> relative beam intensity.  The default assumes ionization/loss
// grows linearly with intensity: I = 1 - p.
using IntensityCalibration = std::function<double(double)>;

// E(x,y) = e0 sqrt(I(x,y) / i0); the phase is taken constant across the
// plane, so the result is real.  Throws std::invalid_argument when the
// calibration produces a negative intensity.
prop::SampledField reconstruct_field(const IonizationMap& map, double e0, double i0,
                                     const IntensityCalibration& calibration = {});

struct HgExpansion {
  double waist_um = 1.0;
  int max_order = 0;  // coefficients present for n, m < max_order
  std::vector<std::complex<double>> c;  // row-major n * max_order + m
  double reconstruction_error = 0.0;  // ||E - sum|| / ||E|| on the source grid

  std::complex<double> coeff(int n, int m) const {
    return c[static_cast<size_t>(n) * max_order + m];
  }
  std::string to_json_string() const;
};

// Overlap coefficients of a sampled plane against the separable modes
// phi_n(x) phi_m(y), phi_n(x) = H_n(sqrt(2) x / w) exp(-x^2 / w^2),
//   c_nm = sum E phi_n phi_m dx dy / (||phi_n|| ||phi_m||),
// with every integral, norms included, taken by the midpoint rule on the
// field's own grid.  The coefficients therefore refer to grid-normalized
// modes, and reconstruction_error is the relative residual of the
// grid-normalized mode sum.
HgExpansion decompose_hg(const prop::SampledField& field, double waist_um,
                         int max_order);

// Mode sum evaluated on the grid of `like` (geometry copied, values replaced,
// mode norms taken on that same grid).
prop::SampledField evaluate_hg(const HgExpansion& expansion,
                               const prop::SampledField& like);

}  // namespace beamkit::calib
