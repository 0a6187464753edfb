#pragma once

#include <functional>
#include <string>
#include <vector>

#include "beamkit/flattop.hpp"
#include "beamkit/sampled_field.hpp"

namespace beamkit::holo {

enum class GratingAxis { Column, Row };

// SLM panel geometry plus the blazed-grating period in pixels per 2 pi ramp.
// The ramp runs along the column index m by default; Row is a config option.
struct SlmSpec {
  int width;        // pixels, column index m
  int height;       // pixels, row index n
  double pixel_pitch_um;
  double grating_period;  // >= 2 (Nyquist)
  GratingAxis grating_axis = GratingAxis::Column;

  SlmSpec(int width, int height, double pixel_pitch_um, double grating_period,
          GratingAxis grating_axis = GratingAxis::Column);
};

// Per-pixel phase in [0, 2 pi), row-major.
struct PhaseMask {
  SlmSpec spec;
  std::vector<double> values;

  explicit PhaseMask(const SlmSpec& spec);
  double& at(int m, int n) { return values[static_cast<size_t>(n) * spec.width + m]; }
  double at(int m, int n) const { return values[static_cast<size_t>(n) * spec.width + m]; }
};

// Desired first-order field at the SLM plane: peak-normalized amplitude in
// [0, 1] and unconstrained phase, same shape as the panel.
struct TargetField {
  int width = 0;
  int height = 0;
  std::vector<double> amplitude;
  std::vector<double> phase;

  double amp(int m, int n) const { return amplitude[static_cast<size_t>(n) * width + m]; }
  double phi(int m, int n) const { return phase[static_cast<size_t>(n) * width + m]; }
};

// Aberration correction weights in radians on the inscribed disk.
struct ZernikeCorrection {
  double a2 = 0.0;  // vertical astigmatism Z_2^2
  double a3 = 0.0;  // horizontal coma Z_3^1
  double radius_px;

  ZernikeCorrection(double a2, double a3, double radius_px);
};

// SLM-plane target for a separable flat-top focal field: modulus and argument
// of the centered inverse DFT of the sampled profile.  output_scale is the
// flat-top unit length (the basis waist) in far-field bins; the focal grid is
// x_u = (u - width/2) / output_scale.  Throws ApertureError when the target
// amplitude has not decayed below 1e-3 of peak at the panel edge.
TargetField target_from_flattop(const flattop::FlatTopOrder& order, const SlmSpec& slm,
                                double output_scale);

// Amplitude-and-phase encoding on a phase-only panel:
//   M = 1 + sinc_inv(A)/pi,  F = Phi - pi M,  Psi = M * mod(F + 2 pi m/L, 2 pi).
// The first-harmonic amplitude of exp(i Psi) at the grating frequency is then
// exactly A.  Throws std::out_of_range when A leaves [0, 1].
PhaseMask phase_mask(const TargetField& target, const SlmSpec& slm);

// Zernike polynomial Z_n^m on the unit disk, unnormalized radial form
// (peak magnitude 1), cos(m theta) for m >= 0 and sin(|m| theta) for m < 0.
double zernike(int n, int m, double rho, double theta);

// Adds a2 Z_2^2 + a3 Z_3^1 (evaluated on the inscribed disk of corr.radius_px
// around the panel center, zero outside) to the mask, mod 2 pi.
PhaseMask compose(const PhaseMask& mask, const ZernikeCorrection& corr);

struct FarFieldMetrics {
  double efficiency = 0.0;   // first-order power / input power
  double flat_rms = 0.0;     // relative intensity RMS inside the flat region
  double correlation = 0.0;  // normalized intensity inner product with the reference
};

struct FarFieldResult {
  prop::SampledField field;  // first-order window, coordinates in target units
  FarFieldMetrics metrics;
};

// x, y in target units -> reference intensity (used for correlation and for
// locating the flat region as the >= 95%-of-peak set of the reference).
using ReferenceIntensity = std::function<double(double, double)>;

// Illuminates the mask with a centered Gaussian (waist input_waist_um),
// transforms to the far field and cuts the first-order window: half the
// grating frequency on each side of the order, all rows, recentered.
// Throws ApertureError when the zero and first orders are not separable.
FarFieldResult simulate_far_field(const PhaseMask& mask, double input_waist_um,
                                  const SlmSpec& slm, double output_scale,
                                  const ReferenceIntensity& reference);

// Reference preset: the separable flat-top intensity of the given order.
FarFieldResult simulate_far_field(const PhaseMask& mask, double input_waist_um,
                                  const SlmSpec& slm, double output_scale,
                                  const flattop::FlatTopOrder& order);

struct OptimizeResult {
  ZernikeCorrection best;
  double objective = 0.0;
  int evaluations = 0;
  bool converged = false;
};

using CorrectionObjective = std::function<double(double, double)>;  // (a2, a3) -> score

// Deterministic coordinate descent with golden-section line searches,
// maximizing the objective.  Stops when the scan span falls below tol_rad;
// returns best-so-far with converged = false when the budget runs out.
OptimizeResult optimize_correction(const ZernikeCorrection& initial,
                                   const CorrectionObjective& objective, double tol_rad = 0.01,
                                   int max_eval = 200);

// 8-bit export, gray = round-half-up(Psi / 2 pi * 255); PNG or PGM by
// extension.  import reverses the quantization (exact on exported files).
void export_mask(const PhaseMask& mask, const std::string& path);
PhaseMask import_mask(const std::string& path, const SlmSpec& slm);

}  // namespace beamkit::holo
