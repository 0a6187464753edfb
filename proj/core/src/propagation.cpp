#include "beamkit/propagation.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>

#include "beamkit/fft.hpp"
#include "beamkit/specfun.hpp"

namespace beamkit::prop {

namespace {

constexpr std::complex<double> kI{0.0, 1.0};

const std::vector<std::pair<int, double>>& cached_hg_coefficients(int order) {
  static std::mutex m;
  static std::map<int, std::vector<std::pair<int, double>>> cache;
  std::lock_guard<std::mutex> lock(m);
  auto it = cache.find(order);
  if (it == cache.end()) {
    it = cache.emplace(order, flattop::hg_coefficients(order).coeffs).first;
  }
  return it->second;
}

// i^{-k} for the (4i)^{-N/2} prefactor
std::complex<double> inv_i_pow(int k) {
  switch (((k % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, -1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, 1.0};
  }
}

}  // namespace

BeamGeometry::BeamGeometry(double waist_um_, double rayleigh_um_, double wavelength_nm_)
    : waist_um(waist_um_), rayleigh_um(rayleigh_um_), wavelength_nm(wavelength_nm_) {
  if (!(waist_um > 0.0) || !(rayleigh_um > 0.0) || !(wavelength_nm > 0.0)) {
    throw std::invalid_argument("BeamGeometry: all lengths must be positive");
  }
  double expected = M_PI * waist_um * waist_um / (wavelength_nm * 1e-3);
  if (std::fabs(rayleigh_um - expected) > 1e-9 * expected) {
    throw std::invalid_argument("BeamGeometry: rayleigh != pi * waist^2 / wavelength");
  }
}

BeamGeometry BeamGeometry::from_waist(double waist_um, double wavelength_nm) {
  double rayleigh_um = M_PI * waist_um * waist_um / (wavelength_nm * 1e-3);
  return BeamGeometry(waist_um, rayleigh_um, wavelength_nm);
}

double BeamGeometry::carrier_exponent() const {
  return 2.0 * rayleigh_um * rayleigh_um / (waist_um * waist_um);
}

std::complex<double> BeamGeometry::carrier(double z) const {
  return std::exp(-kI * (carrier_exponent() * z));
}

std::complex<double> hg_mode_xz(int n, double x, double z) {
  if (n < 0) throw std::domain_error("hg_mode_xz: mode index must be >= 0");
  double s = 1.0 + z * z;
  // (1 - i z)^{-1/2} = s^{-1/4} exp(i atan(z) / 2); Re(1 - i z) > 0 so the
  // principal branch is already continuous.
  double gouy = (n + 0.5) * std::atan(z);
  double amp = std::pow(s, -0.25) * specfun::hermite(n, std::sqrt(2.0 / s) * x);
  // exp(-x^2/(1 - i z)) = exp(-x^2/s) exp(-i x^2 z / s)
  std::complex<double> phase = std::exp(kI * (gouy - x * x * z / s));
  return amp * std::exp(-x * x / s) * phase;
}

std::complex<double> field_xz(int order, double x, double z) {
  const auto& coeffs = cached_hg_coefficients(order);
  std::complex<double> acc{0.0, 0.0};
  for (const auto& [n, c] : coeffs) acc += c * hg_mode_xz(n, x, z);
  return acc;
}

std::complex<double> field_xyz(const flattop::FlatTopOrder& order, double x, double y, double z) {
  return field_xz(order.n, x, z) * field_xz(order.m, y, z);
}

std::complex<double> field_xyz(const flattop::FlatTopOrder& order, double x, double y, double z,
                               const BeamGeometry& geom) {
  return field_xyz(order, x, y, z) * geom.carrier(z);
}

SampledField angular_spectrum_propagate(const SampledField& in, double dz,
                                        bool* aliasing_flagged) {
  double peak = in.peak_modulus();
  bool aliased = peak > 0.0 && in.boundary_modulus() >= 1e-8 * peak;
  if (aliasing_flagged != nullptr) {
    *aliasing_flagged = aliased;
  } else if (aliased) {
    std::cerr << "angular_spectrum_propagate: boundary amplitude >= 1e-8 of peak, "
                 "periodic wrap-around will alias\n";
  }

  SampledField out = in;
  auto& v = out.values();
  // With the exp(-i k x) analysis / exp(+i k x) synthesis pair of fft::, the
  // paraxial equation (d_xx + d_yy) E = 4 i d_z E advances each plane wave by
  // exp(+i k_perp^2 dz / 4).
  if (in.is_1d()) {
    fft::forward(v);
    for (int i = 0; i < in.nx(); ++i) {
      double k = fft::bin_frequency(i, in.nx(), in.dx());
      v[i] *= std::exp(kI * (0.25 * k * k * dz));
    }
    fft::inverse(v);
  } else {
    fft::forward_2d(v, in.nx(), in.ny());
    for (int j = 0; j < in.ny(); ++j) {
      double ky = fft::bin_frequency(j, in.ny(), in.dy());
      for (int i = 0; i < in.nx(); ++i) {
        double kx = fft::bin_frequency(i, in.nx(), in.dx());
        v[static_cast<size_t>(j) * in.nx() + i] *=
            std::exp(kI * (0.25 * (kx * kx + ky * ky) * dz));
      }
    }
    fft::inverse_2d(v, in.nx(), in.ny());
  }
  return out;
}

std::vector<TaylorTerm> taylor_coefficients(int order) {
  if (order < 0 || order % 2 != 0) {
    throw std::domain_error("taylor_coefficients: order must be an even integer >= 0");
  }
  int half = order / 2;
  double n = order;
  // (N+2)! / ((4 i)^{N/2} ((N/2 + 1)!)^2)
  double mag = std::exp(std::lgamma(n + 3.0) - half * std::log(4.0) -
                        2.0 * std::lgamma(half + 2.0));
  std::complex<double> pref = mag * inv_i_pow(half);

  std::vector<TaylorTerm> terms;
  terms.push_back({0, 0, 0, {1.0, 0.0}});
  std::complex<double> transverse = -pref * ((n + 2.0) / 4.0);
  terms.push_back({2, 0, half, transverse});
  terms.push_back({0, 2, half, transverse});
  terms.push_back({0, 0, half + 1, pref * (0.5 * kI)});
  terms.push_back({0, 0, half + 2, -pref * ((n + 2.0) * (n + 3.0) / (4.0 * (n + 4.0)))});
  return terms;
}

std::complex<double> eval_taylor(const std::vector<TaylorTerm>& terms, double x, double y,
                                 double z) {
  std::complex<double> acc{0.0, 0.0};
  for (const auto& t : terms) {
    acc += t.coeff * std::pow(x, t.alpha) * std::pow(y, t.beta) * std::pow(z, t.gamma);
  }
  return acc;
}

double paraxial_residual(const FieldSampler& field,
                         const std::vector<std::array<double, 3>>& probes, double step) {
  auto laplacian = [&](double x, double y, double z, double h) {
    std::complex<double> c = field(x, y, z);
    return (field(x + h, y, z) + field(x - h, y, z) + field(x, y + h, z) +
            field(x, y - h, z) - 4.0 * c) /
           (h * h);
  };
  auto dz = [&](double x, double y, double z, double h) {
    return (field(x, y, z + h) - field(x, y, z - h)) / (2.0 * h);
  };
  double worst = 0.0;
  for (const auto& p : probes) {
    auto [x, y, z] = p;
    std::complex<double> lap =
        (4.0 * laplacian(x, y, z, 0.5 * step) - laplacian(x, y, z, step)) / 3.0;
    std::complex<double> ez = (4.0 * dz(x, y, z, 0.5 * step) - dz(x, y, z, step)) / 3.0;
    worst = std::max(worst, std::abs(lap - 4.0 * kI * ez));
  }
  return worst;
}

}  // namespace beamkit::prop
