#include "beamkit/hologram.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include "beamkit/errors.hpp"
#include "beamkit/fft.hpp"
#include "beamkit/image_io.hpp"
#include "beamkit/specfun.hpp"

namespace beamkit::holo {

using prop::SampledField;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr std::complex<double> kI{0.0, 1.0};

double mod_2pi(double x) {
  double r = std::fmod(x, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r;
}

// dst[u] = src[(u + shift) mod n] along one axis of a row-major W x H array
void roll_columns(std::vector<std::complex<double>>& v, int w, int h, int shift) {
  std::vector<std::complex<double>> tmp(static_cast<size_t>(w));
  for (int n = 0; n < h; ++n) {
    auto* row = v.data() + static_cast<size_t>(n) * w;
    for (int m = 0; m < w; ++m) tmp[m] = row[(m + shift) % w];
    std::copy(tmp.begin(), tmp.end(), row);
  }
}

void roll_rows(std::vector<std::complex<double>>& v, int w, int h, int shift) {
  std::vector<std::complex<double>> tmp(v.size());
  for (int n = 0; n < h; ++n) {
    const auto* src = v.data() + static_cast<size_t>((n + shift) % h) * w;
    std::copy(src, src + w, tmp.data() + static_cast<size_t>(n) * w);
  }
  v.swap(tmp);
}

int factorial_int(int n) {
  int f = 1;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

}  // namespace

SlmSpec::SlmSpec(int width_, int height_, double pixel_pitch_um_, double grating_period_,
                 GratingAxis grating_axis_)
    : width(width_), height(height_), pixel_pitch_um(pixel_pitch_um_),
      grating_period(grating_period_), grating_axis(grating_axis_) {
  if (width <= 0 || height <= 0 || !(pixel_pitch_um > 0.0)) {
    throw std::invalid_argument("SlmSpec: panel dimensions and pitch must be positive");
  }
  if (!(grating_period >= 2.0)) {
    throw std::invalid_argument("SlmSpec: grating period must be >= 2 pixels per ramp");
  }
}

PhaseMask::PhaseMask(const SlmSpec& spec_) : spec(spec_) {
  values.assign(static_cast<size_t>(spec.width) * spec.height, 0.0);
}

ZernikeCorrection::ZernikeCorrection(double a2_, double a3_, double radius_px_)
    : a2(a2_), a3(a3_), radius_px(radius_px_) {
  if (!(radius_px > 0.0)) throw std::invalid_argument("ZernikeCorrection: radius must be > 0");
}

TargetField target_from_flattop(const flattop::FlatTopOrder& order, const SlmSpec& slm,
                                double output_scale) {
  if (!(output_scale > 0.0)) {
    throw std::invalid_argument("target_from_flattop: output_scale must be > 0");
  }
  int w = slm.width, h = slm.height;
  std::vector<std::complex<double>> grid(static_cast<size_t>(w) * h);
  // sample the focal field with its center rolled to index 0 so the inverse
  // transform comes out real (up to rounding) and centered phases are flat
  int cm = w / 2, cn = h / 2;
  for (int n = 0; n < h; ++n) {
    double y = (n - cn) / output_scale;
    double ey = flattop::flattop_profile(order.m, y);
    for (int m = 0; m < w; ++m) {
      double x = (m - cm) / output_scale;
      grid[static_cast<size_t>(n) * w + m] = ey * flattop::flattop_profile(order.n, x);
    }
  }
  // a focal profile that has not decayed at the grid edge wraps around in the
  // discrete transform; the separable profile peaks at 1 in the center, so its
  // perimeter max is the largest single-axis edge factor
  double profile_edge = std::max({flattop::flattop_profile(order.n, cm / output_scale),
                                  flattop::flattop_profile(order.n, (w - 1 - cm) / output_scale),
                                  flattop::flattop_profile(order.m, cn / output_scale),
                                  flattop::flattop_profile(order.m, (h - 1 - cn) / output_scale)});
  if (profile_edge > 1e-3) {
    throw ApertureError("target_from_flattop: focal profile clipped by the sampling grid");
  }
  roll_columns(grid, w, h, cm);
  roll_rows(grid, w, h, cn);
  fft::inverse_2d(grid, w, h);
  roll_columns(grid, w, h, w - cm);
  roll_rows(grid, w, h, h - cn);

  TargetField t;
  t.width = w;
  t.height = h;
  t.amplitude.resize(grid.size());
  t.phase.resize(grid.size());
  double peak = 0.0;
  for (const auto& z : grid) peak = std::max(peak, std::abs(z));
  for (size_t i = 0; i < grid.size(); ++i) {
    t.amplitude[i] = std::abs(grid[i]) / peak;
    t.phase[i] = std::arg(grid[i]);
  }

  double edge = 0.0;
  for (int m = 0; m < w; ++m) {
    edge = std::max({edge, t.amp(m, 0), t.amp(m, h - 1)});
  }
  for (int n = 0; n < h; ++n) {
    edge = std::max({edge, t.amp(0, n), t.amp(w - 1, n)});
  }
  if (edge > 1e-3) {
    throw ApertureError("target_from_flattop: target clipped by the panel aperture");
  }
  return t;
}

PhaseMask phase_mask(const TargetField& target, const SlmSpec& slm) {
  if (target.width != slm.width || target.height != slm.height) {
    throw std::invalid_argument("phase_mask: target shape does not match the panel");
  }
  PhaseMask mask(slm);
  for (int n = 0; n < slm.height; ++n) {
    for (int m = 0; m < slm.width; ++m) {
      double a = target.amp(m, n);
      if (!(a >= 0.0) || a > 1.0) {
        throw std::out_of_range("phase_mask: amplitude outside [0, 1]");
      }
      double mm = 1.0 + specfun::sinc_inv(a) / M_PI;
      double f = target.phi(m, n) - M_PI * mm;
      int ramp = slm.grating_axis == GratingAxis::Column ? m : n;
      mask.at(m, n) = mm * mod_2pi(f + kTwoPi * ramp / slm.grating_period);
    }
  }
  return mask;
}

double zernike(int n, int m, double rho, double theta) {
  if (!(rho >= 0.0) || rho > 1.0) throw std::domain_error("zernike: rho must be in [0, 1]");
  int am = std::abs(m);
  if (n < 0 || n - am < 0 || (n - am) % 2 != 0) {
    throw std::invalid_argument("zernike: invalid (n, m) index");
  }
  double r = 0.0;
  for (int k = 0; k <= (n - am) / 2; ++k) {
    double term = factorial_int(n - k) /
                  (factorial_int(k) * factorial_int((n + am) / 2 - k) *
                   static_cast<double>(factorial_int((n - am) / 2 - k)));
    r += (k % 2 == 0 ? term : -term) * std::pow(rho, n - 2 * k);
  }
  return m >= 0 ? r * std::cos(am * theta) : r * std::sin(am * theta);
}

PhaseMask compose(const PhaseMask& mask, const ZernikeCorrection& corr) {
  PhaseMask out = mask;
  int w = mask.spec.width, h = mask.spec.height;
  double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  for (int n = 0; n < h; ++n) {
    for (int m = 0; m < w; ++m) {
      double dx = (m - cx) / corr.radius_px, dy = (n - cy) / corr.radius_px;
      double rho = std::hypot(dx, dy);
      if (rho > 1.0) continue;
      double theta = std::atan2(dy, dx);
      double add = corr.a2 * zernike(2, 2, rho, theta) + corr.a3 * zernike(3, 1, rho, theta);
      out.at(m, n) = mod_2pi(out.at(m, n) + add);
    }
  }
  return out;
}

FarFieldResult simulate_far_field(const PhaseMask& mask, double input_waist_um,
                                  const SlmSpec& slm, double output_scale,
                                  const ReferenceIntensity& reference) {
  if (!(input_waist_um > 0.0)) {
    throw std::invalid_argument("simulate_far_field: input waist must be > 0");
  }
  if (slm.grating_axis == GratingAxis::Row) {
    // run the column path on the transposed problem, then swap axes back
    SlmSpec t(slm.height, slm.width, slm.pixel_pitch_um, slm.grating_period,
              GratingAxis::Column);
    PhaseMask tm(t);
    for (int n = 0; n < slm.height; ++n) {
      for (int m = 0; m < slm.width; ++m) tm.at(n, m) = mask.at(m, n);
    }
    auto ref_t = [&reference](double x, double y) { return reference(y, x); };
    FarFieldResult r = simulate_far_field(tm, input_waist_um, t, output_scale, ref_t);
    SampledField swapped(r.field.y(0), r.field.x(0), r.field.dy(), r.field.dx(),
                         r.field.ny(), r.field.nx());
    for (int j = 0; j < swapped.ny(); ++j) {
      for (int i = 0; i < swapped.nx(); ++i) swapped.at(i, j) = r.field.at(j, i);
    }
    return {std::move(swapped), r.metrics};
  }
  if (mask.spec.width != slm.width || mask.spec.height != slm.height) {
    throw std::invalid_argument("simulate_far_field: mask shape does not match the panel");
  }
  int w = slm.width, h = slm.height;
  int u1 = static_cast<int>(std::lround(w / slm.grating_period));
  int halfw = static_cast<int>(std::floor(w / (2.0 * slm.grating_period)));
  if (u1 < 2 || halfw < 1 || u1 - halfw < 1) {
    throw ApertureError("simulate_far_field: zero and first orders are not separable");
  }

  double w_px = input_waist_um / slm.pixel_pitch_um;
  double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  std::vector<std::complex<double>> u(static_cast<size_t>(w) * h);
  double input_power = 0.0;
  for (int n = 0; n < h; ++n) {
    for (int m = 0; m < w; ++m) {
      double g = std::exp(-((m - cx) * (m - cx) + (n - cy) * (n - cy)) / (w_px * w_px));
      input_power += g * g;
      u[static_cast<size_t>(n) * w + m] = g * std::exp(kI * mask.at(m, n));
    }
  }
  fft::forward_2d(u, w, h);

  int width_out = 2 * halfw + 1;
  SampledField field(-halfw / output_scale, -(h / 2) / output_scale, 1.0 / output_scale,
                     1.0 / output_scale, width_out, h);
  double window_power = 0.0;
  for (int j = 0; j < h; ++j) {
    int v_src = (j - h / 2 + h) % h;
    for (int i = 0; i < width_out; ++i) {
      int u_src = u1 - halfw + i;
      std::complex<double> z = u[static_cast<size_t>(v_src) * w + u_src];
      window_power += std::norm(z);
      field.at(i, j) = z;
    }
  }
  FarFieldResult res{std::move(field), {}};
  res.metrics.efficiency = window_power / (static_cast<double>(w) * h) / input_power;

  double peak = res.field.peak_modulus();
  if (peak > 0.0) {
    for (auto& z : res.field.values()) z /= peak;
  }

  // correlation against the reference intensity and RMS uniformity on the
  // flat region, operationally the >= 95%-of-peak set of the reference
  double ref_peak = 0.0;
  std::vector<double> ref(res.field.values().size());
  for (int j = 0; j < res.field.ny(); ++j) {
    for (int i = 0; i < res.field.nx(); ++i) {
      double r = reference(res.field.x(i), res.field.y(j));
      ref[static_cast<size_t>(j) * res.field.nx() + i] = r;
      ref_peak = std::max(ref_peak, r);
    }
  }
  double dot = 0.0, ss_sim = 0.0, ss_ref = 0.0;
  double flat_sum = 0.0, flat_sum2 = 0.0;
  int flat_count = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    double isim = std::norm(res.field.values()[i]);
    dot += isim * ref[i];
    ss_sim += isim * isim;
    ss_ref += ref[i] * ref[i];
    if (ref[i] >= 0.95 * ref_peak) {
      flat_sum += isim;
      flat_sum2 += isim * isim;
      ++flat_count;
    }
  }
  res.metrics.correlation = dot / std::sqrt(ss_sim * ss_ref);
  if (flat_count > 0 && flat_sum > 0.0) {
    double mean = flat_sum / flat_count;
    double var = std::max(0.0, flat_sum2 / flat_count - mean * mean);
    res.metrics.flat_rms = std::sqrt(var) / mean;
  }
  return res;
}

FarFieldResult simulate_far_field(const PhaseMask& mask, double input_waist_um,
                                  const SlmSpec& slm, double output_scale,
                                  const flattop::FlatTopOrder& order) {
  auto ref = [&order](double x, double y) {
    double e = flattop::flattop_profile(order.n, x) * flattop::flattop_profile(order.m, y);
    return e * e;
  };
  return simulate_far_field(mask, input_waist_um, slm, output_scale, ref);
}

OptimizeResult optimize_correction(const ZernikeCorrection& initial,
                                   const CorrectionObjective& objective, double tol_rad,
                                   int max_eval) {
  if (!(tol_rad > 0.0) || max_eval < 4) {
    throw std::invalid_argument("optimize_correction: bad tolerance or budget");
  }
  int evals = 0;
  double best_a2 = initial.a2, best_a3 = initial.a3;
  auto eval = [&](double a2, double a3) {
    ++evals;
    return objective(a2, a3);
  };
  double best = eval(best_a2, best_a3);

  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  // maximize along one coordinate on [lo, hi], to resolution res
  auto line_search = [&](double lo, double hi, double res, bool vary_a2) {
    auto f = [&](double t) { return vary_a2 ? eval(t, best_a3) : eval(best_a2, t); };
    double x1 = hi - golden * (hi - lo), x2 = lo + golden * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    while (hi - lo > res && evals < max_eval) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + golden * (hi - lo);
        f2 = f(x2);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - golden * (hi - lo);
        f1 = f(x1);
      }
    }
    double xm = 0.5 * (lo + hi);
    double fm = std::max(f1, f2);
    double& coord = vary_a2 ? best_a2 : best_a3;
    if (fm > best) {
      best = fm;
      coord = f1 >= f2 ? x1 : x2;
    }
    (void)xm;
  };

  double span = 1.0;
  bool converged = false;
  while (evals < max_eval) {
    line_search(best_a2 - span, best_a2 + span, std::max(tol_rad, 0.2 * span), true);
    if (evals >= max_eval) break;
    line_search(best_a3 - span, best_a3 + span, std::max(tol_rad, 0.2 * span), false);
    span *= 0.4;
    if (span < tol_rad) {
      converged = true;
      break;
    }
  }
  return {ZernikeCorrection(best_a2, best_a3, initial.radius_px), best, evals, converged};
}

void export_mask(const PhaseMask& mask, const std::string& path) {
  img::Gray8 image;
  image.width = mask.spec.width;
  image.height = mask.spec.height;
  image.pixels.resize(mask.values.size());
  for (size_t i = 0; i < mask.values.size(); ++i) {
    image.pixels[i] = static_cast<std::uint8_t>(std::floor(mask.values[i] * 255.0 / kTwoPi + 0.5));
  }
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
    img::write_png(path, image);
  } else if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
    img::write_pgm(path, image);
  } else {
    throw std::invalid_argument("export_mask: path must end in .png or .pgm");
  }
}

PhaseMask import_mask(const std::string& path, const SlmSpec& slm) {
  img::Gray8 image;
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) {
    image = img::read_png_gray8(path);
  } else if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0) {
    image = img::read_pgm(path);
  } else {
    throw std::invalid_argument("import_mask: path must end in .png or .pgm");
  }
  if (image.width != slm.width || image.height != slm.height) {
    throw std::invalid_argument("import_mask: image shape does not match the panel");
  }
  PhaseMask mask(slm);
  const double top = std::nextafter(kTwoPi, 0.0);
  for (size_t i = 0; i < mask.values.size(); ++i) {
    mask.values[i] = std::min(image.pixels[i] * kTwoPi / 255.0, top);
  }
  return mask;
}

}  // namespace beamkit::holo
