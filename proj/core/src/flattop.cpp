#include "beamkit/flattop.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "beamkit/errors.hpp"
#include "beamkit/specfun.hpp"

namespace beamkit::flattop {

namespace {

using json = nlohmann::json;
using i128 = __int128;

void require_even_order(int order, int max_order = 20) {
  if (order < 0 || order % 2 != 0) {
    throw std::domain_error("flattop: order must be an even integer >= 0");
  }
  if (order > max_order) {
    throw std::domain_error("flattop: exact coefficient arithmetic is limited to order <= 20");
  }
}

// Exact fraction on 128-bit integers.  The coefficient sums stay O(1) with
// denominators that are products of small factorials and powers of two, so
// reduced values fit comfortably for order <= 20.
struct Frac {
  i128 num = 0;
  i128 den = 1;

  void reduce() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    i128 a = num < 0 ? -num : num;
    i128 b = den;
    while (b != 0) {
      i128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      num /= a;
      den /= a;
    }
  }

  void add(i128 n, i128 d) {
    num = num * d + n * den;
    den *= d;
    reduce();
  }

  double value() const {
    return static_cast<double>(static_cast<long double>(num) /
                               static_cast<long double>(den));
  }
};

i128 factorial128(int n) {
  i128 f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;  // exact through 33!
}

}  // namespace

FlatTopOrder::FlatTopOrder(int n_, int m_) : n(n_), m(m_) {
  if (n < 0 || n % 2 != 0 || m < 0 || m % 2 != 0) {
    throw std::domain_error("FlatTopOrder: axis orders must be even integers >= 0");
  }
}

std::string ModeExpansion::to_json_string() const {
  json j;
  j["basis"] = basis == Basis::HermiteGauss ? "hermite-gauss" : "laguerre-gauss";
  j["waist_um"] = waist_um;
  json coeff_list = json::array();
  for (const auto& [n, c] : coeffs) coeff_list.push_back(json::array({n, c}));
  j["coeffs"] = coeff_list;
  return j.dump(2);
}

ModeExpansion ModeExpansion::from_json_string(const std::string& text) {
  json j = json::parse(text);
  ModeExpansion me;
  std::string basis = j.at("basis").get<std::string>();
  if (basis == "hermite-gauss") {
    me.basis = Basis::HermiteGauss;
  } else if (basis == "laguerre-gauss") {
    me.basis = Basis::LaguerreGauss;
  } else {
    throw std::invalid_argument("ModeExpansion: unknown basis '" + basis + "'");
  }
  me.waist_um = j.at("waist_um").get<double>();
  int prev = -1;
  for (const auto& entry : j.at("coeffs")) {
    int n = entry.at(0).get<int>();
    double c = entry.at(1).get<double>();
    if (n <= prev) {
      throw std::invalid_argument("ModeExpansion: indices must be strictly increasing");
    }
    prev = n;
    me.coeffs.emplace_back(n, c);
  }
  return me;
}

double flattop_profile(double order, double x) {
  if (order < 0.0) throw std::domain_error("flattop_profile: order must be >= 0");
  return specfun::gamma_q(0.5 * order + 1.0, x * x);
}

ModeExpansion hg_coefficients(int order, double waist_um) {
  require_even_order(order);
  const int half = order / 2;
  ModeExpansion me;
  me.basis = Basis::HermiteGauss;
  me.waist_um = waist_um;
  for (int n = 0; n <= half; ++n) {
    // c_{2n} = sum_{k=n}^{N/2} (2k)! / (2^{3k} k! (k-n)! (2n)!)
    Frac acc;
    for (int k = n; k <= half; ++k) {
      // (2k)!/(2n)! = prod_{j=2n+1}^{2k} j  (at most 20!, fits in 128 bits)
      i128 num = 1;
      for (int j = 2 * n + 1; j <= 2 * k; ++j) num *= j;
      i128 den = factorial128(k) * factorial128(k - n);
      den <<= 3 * k;
      acc.add(num, den);
    }
    me.coeffs.emplace_back(2 * n, acc.value());
  }
  return me;
}

std::vector<double> solve_flatness_system(int order) {
  require_even_order(order);
  const int half = order / 2;
  // Row k of the derivative conditions reads
  //   sum_{n=0}^{k} (-1)^{k-n} (2k)!/(k-n)! c_n = 0,   k = 1..N/2,
  // with c_0 = 1 from E(0) = 1.  The matrix is lower triangular, so forward
  // substitution is the whole solve.
  std::vector<double> c(half + 1, 0.0);
  c[0] = 1.0;
  for (int k = 1; k <= half; ++k) {
    double acc = 0.0;
    for (int n = 0; n < k; ++n) {
      double entry = ((k - n) % 2 == 0 ? 1.0 : -1.0) *
                     std::exp(std::lgamma(2.0 * k + 1.0) - std::lgamma(static_cast<double>(k - n) + 1.0));
      acc += entry * c[n];
    }
    double diag = std::exp(std::lgamma(2.0 * k + 1.0));  // (2k)!/0!
    c[k] = -acc / diag;
  }
  return c;
}

double eval_monomial_profile(const std::vector<double>& c, double x) {
  double x2 = x * x;
  double pow = 1.0, sum = 0.0;
  for (double cn : c) {
    sum += cn * pow;
    pow *= x2;
  }
  return std::exp(-x2) * sum;
}

double eval_expansion(const ModeExpansion& me, double u) {
  double sum = 0.0;
  if (me.basis == Basis::HermiteGauss) {
    double arg = std::sqrt(2.0) * u;
    for (const auto& [n, c] : me.coeffs) sum += c * specfun::hermite(n, arg);
    return sum * std::exp(-u * u);
  }
  double arg = 2.0 * u * u;
  for (const auto& [k, c] : me.coeffs) sum += c * specfun::laguerre(k, 0.0, arg);
  return sum * std::exp(-u * u);
}

double fourier_flattop(int order, double t) {
  if (order < 0 || order % 2 != 0) {
    throw std::domain_error("fourier_flattop: order must be an even integer >= 0");
  }
  const int half = order / 2;
  if (std::fabs(t) < 0.75) {
    // M((N+3)/2, 3/2, -t^2/4); kummer_m transforms this to the terminating
    // polynomial exp(-t^2/4) M(-N/2, 3/2, t^2/4), finite at t = 0.
    return specfun::kummer_m(0.5 * order + 1.5, 1.5, -0.25 * t * t);
  }
  double ratio = std::exp(std::lgamma(half + 1.0) - std::lgamma(order + 2.0));
  double sign = (half % 2 == 0) ? 1.0 : -1.0;
  return sign * ratio * specfun::hermite(order + 1, 0.5 * t) / t *
         std::exp(-0.25 * t * t);
}

double asymptotic_profile(int order, double x) {
  if (order < 0) throw std::domain_error("asymptotic_profile: order must be >= 0");
  return 0.5 * specfun::erfc(std::sqrt(2.0) * std::fabs(x) -
                             std::sqrt(order + 4.0 / 3.0));
}

double asymptotic_fourier(int order, double t) {
  if (order < 0) throw std::domain_error("asymptotic_fourier: order must be >= 0");
  return specfun::sinc(t * std::sqrt(0.5 * order + 0.75)) *
         std::exp(-t * t / 8.0);
}

double fwhm(int order) {
  if (order < 0) throw std::domain_error("fwhm: order must be >= 0");
  return std::sqrt(2.0 * order + 8.0 / 3.0);
}

double fwhm_exact(double order) {
  if (order < 0.0) throw std::domain_error("fwhm_exact: order must be >= 0");
  // E_N decreases monotonically from 1; bracket the half point and bisect.
  double lo = 0.0, hi = std::sqrt(2.0 * order + 8.0 / 3.0) + 4.0;
  while (flattop_profile(order, hi) > 0.5) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (flattop_profile(order, mid) > 0.5) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14) break;
  }
  return lo + hi;  // full width = 2 * half point
}

double lg_flattop(double order, double r) { return flattop_profile(order, r); }

ModeExpansion lg_coefficients(int order, double waist_um) {
  require_even_order(order);
  const int half = order / 2;
  ModeExpansion me;
  me.basis = Basis::LaguerreGauss;
  me.waist_um = waist_um;
  for (int k = 0; k <= half; ++k) {
    // b_k = (-1)^k sum_{n=k}^{N/2} n! / (2^n k! (n-k)!)
    Frac acc;
    for (int n = k; n <= half; ++n) {
      // n!/(k!(n-k)!) = C(n,k) exactly
      i128 num = factorial128(n) / (factorial128(k) * factorial128(n - k));
      i128 den = i128(1) << n;
      acc.add(num, den);
    }
    double val = acc.value();
    me.coeffs.emplace_back(k, (k % 2 == 0) ? val : -val);
  }
  return me;
}

double hankel_flattop(int order, double k) {
  if (order < 0 || order % 2 != 0) {
    throw std::domain_error("hankel_flattop: order must be an even integer >= 0");
  }
  double q = 0.25 * k * k;
  return (2.0 / (order + 2.0)) * specfun::laguerre(order / 2, 1.0, q) *
         std::exp(-q);
}

double aspheric_phi(double x) {
  return 0.5 * std::sqrt(M_PI) * x * specfun::erf(x) +
         0.5 * std::exp(-x * x) - 0.5;
}

double aspheric_lens_phase(double x, double y, double c) {
  return c * aspheric_phi(x) * aspheric_phi(y);
}

}  // namespace beamkit::flattop
