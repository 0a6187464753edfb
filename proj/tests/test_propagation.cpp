#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "beamkit/flattop.hpp"
#include "beamkit/propagation.hpp"
#include "beamkit/sampled_field.hpp"
#include "beamkit/specfun.hpp"
#include "quad.hpp"

using namespace beamkit;
using prop::SampledField;
using cplx = std::complex<double>;

namespace {

constexpr cplx kI{0.0, 1.0};

// Test-side mode evaluator at complex coordinates, written independently of
// the library (principal powers are safe for |z| < 1 and the x-arguments
// used here).  Feeds the contour-integral coefficient extraction.
cplx hermite_c(int n, cplx w) {
  cplx hk{1.0, 0.0}, hk1{0.0, 0.0};
  for (int k = 0; k < n; ++k) {
    cplx next = 2.0 * w * hk - 2.0 * static_cast<double>(k) * hk1;
    hk1 = hk;
    hk = next;
  }
  return hk;
}

cplx mode_c(int n, cplx x, cplx z) {
  cplx s = 1.0 + z * z;
  return std::pow(1.0 - kI * z, -0.5) * std::pow((kI - z) / (kI + z), 0.5 * n) *
         hermite_c(n, std::sqrt(2.0 / s) * x) * std::exp(-x * x / (1.0 - kI * z));
}

cplx field_c(int order, cplx x, cplx z) {
  auto me = flattop::hg_coefficients(order);
  cplx acc{0.0, 0.0};
  for (const auto& [n, c] : me.coeffs) acc += c * mode_c(n, x, z);
  return acc;
}

// Gaussian-beam closed form, the N=0 reference.
cplx gaussian_xz(double x, double z) {
  cplx q = 1.0 - kI * z;
  return std::pow(q, -0.5) * std::exp(-x * x / q);
}

double sup_rel_err(const std::vector<cplx>& got, const std::vector<cplx>& want) {
  double sup_ref = 0.0, sup_diff = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    sup_ref = std::max(sup_ref, std::abs(want[i]));
    sup_diff = std::max(sup_diff, std::abs(got[i] - want[i]));
  }
  return sup_diff / sup_ref;
}

}  // namespace

TEST_CASE("hg_mode_xz reduces to the focal mode at z = 0") {
  for (int n : {0, 1, 2, 5, 8}) {
    for (double x = -3.0; x <= 3.0; x += 0.25) {
      cplx got = prop::hg_mode_xz(n, x, 0.0);
      double want = specfun::hermite(n, std::sqrt(2.0) * x) * std::exp(-x * x);
      CHECK(std::abs(got - want) <= 1e-13 * std::max(1.0, std::fabs(want)));
      CHECK(std::fabs(got.imag()) <= 1e-14 * std::max(1.0, std::fabs(want)));
    }
  }
  CHECK_THROWS_AS(prop::hg_mode_xz(-1, 0.0, 0.0), std::domain_error);
}

TEST_CASE("hg_mode_xz branch values and Gaussian closed form") {
  cplx v = prop::hg_mode_xz(0, 0.0, 1.0);
  CHECK(std::abs(v) == doctest::Approx(std::pow(2.0, -0.25)).epsilon(1e-13));
  CHECK(std::arg(v) == doctest::Approx(M_PI / 8.0).epsilon(1e-13));

  for (double z : {-2.0, -0.6, 0.0, 0.4, 1.0, 3.0}) {
    for (double x = -3.0; x <= 3.0; x += 0.3) {
      CHECK(std::abs(prop::hg_mode_xz(0, x, z) - gaussian_xz(x, z)) <= 1e-13);
    }
  }
}

TEST_CASE("hg_mode_xz phase winds as the Gouy factor") {
  // unwrap arg(mode(2,0,z)) along z and compare against (n + 1/2) atan z
  double total = 0.0;
  double z = 0.0, dz = 0.01;
  cplx prev = prop::hg_mode_xz(2, 0.0, 0.0);
  for (int j = 0; j < 500; ++j) {
    z += dz;
    cplx cur = prop::hg_mode_xz(2, 0.0, z);
    total += std::arg(cur / prev);
    prev = cur;
    CHECK(total == doctest::Approx(2.5 * std::atan(z)).epsilon(1e-10));
  }
}

TEST_CASE("hg_mode_xz is continuous in z") {
  // A branch jump flips the phase by pi between adjacent samples; smooth
  // evolution moves it by O(n h).  Samples near amplitude zeros (Hermite
  // root crossings) carry no usable phase and are skipped.
  const double h = 2e-3;
  for (int n : {0, 1, 2, 3, 7}) {
    for (double x : {0.0, 0.7}) {
      std::vector<cplx> line;
      double scale = 0.0;
      for (double z = -5.0; z <= 5.0; z += h) {
        line.push_back(prop::hg_mode_xz(n, x, z));
        scale = std::max(scale, std::abs(line.back()));
      }
      if (scale == 0.0) continue;  // odd modes vanish identically on axis
      for (size_t j = 1; j < line.size(); ++j) {
        if (std::abs(line[j]) < 0.05 * scale || std::abs(line[j - 1]) < 0.05 * scale) continue;
        CHECK(std::fabs(std::arg(line[j] / line[j - 1])) < M_PI / 2);
        CHECK(std::fabs(std::abs(line[j]) - std::abs(line[j - 1])) <= 0.05 * scale);
      }
    }
  }
}

TEST_CASE("field_xz focal plane and Gaussian limit") {
  for (int order : {0, 2, 8, 16}) {
    for (double x = -6.0; x <= 6.0; x += 0.2) {
      cplx got = prop::field_xz(order, x, 0.0);
      CHECK(std::fabs(got.real() - flattop::flattop_profile(order, x)) <= 1e-12);
      CHECK(std::fabs(got.imag()) <= 1e-12);
    }
  }
  for (double z : {-1.0, 0.3, 2.0}) {
    for (double x = -2.0; x <= 2.0; x += 0.25) {
      CHECK(std::abs(prop::field_xz(0, x, z) - gaussian_xz(x, z)) <= 1e-13);
    }
  }
  CHECK_THROWS_AS(prop::field_xz(3, 0.0, 0.0), std::domain_error);
}

TEST_CASE("angular_spectrum_propagate is the identity at dz = 0") {
  SampledField f(-12.0, 24.0 / 2048, 2048);
  for (int i = 0; i < f.nx(); ++i) f.at(i) = flattop::flattop_profile(8, f.x(i));
  bool aliased = true;
  SampledField out = prop::angular_spectrum_propagate(f, 0.0, &aliased);
  CHECK(!aliased);
  for (int i = 0; i < f.nx(); ++i) CHECK(std::abs(out.at(i) - f.at(i)) <= 1e-13);
}

TEST_CASE("angular_spectrum_propagate reproduces the widened Gaussian") {
  for (double dz : {0.5, -0.7, 2.0}) {
    SampledField f(-12.0, 24.0 / 2048, 2048);
    for (int i = 0; i < f.nx(); ++i) f.at(i) = std::exp(-f.x(i) * f.x(i));
    SampledField out = prop::angular_spectrum_propagate(f, dz);
    std::vector<cplx> got, want;
    for (int i = 0; i < f.nx(); ++i) {
      got.push_back(out.at(i));
      want.push_back(gaussian_xz(f.x(i), dz));
    }
    CHECK(sup_rel_err(got, want) <= 1e-8);
  }

  // separable 2-D case
  SampledField g(-8.0, -6.0, 16.0 / 192, 12.0 / 160, 192, 160);
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      g.at(i, j) = std::exp(-g.x(i) * g.x(i) - g.y(j) * g.y(j));
    }
  }
  SampledField out = prop::angular_spectrum_propagate(g, 0.4);
  std::vector<cplx> got, want;
  for (int j = 0; j < g.ny(); ++j) {
    for (int i = 0; i < g.nx(); ++i) {
      got.push_back(out.at(i, j));
      want.push_back(gaussian_xz(g.x(i), 0.4) * gaussian_xz(g.y(j), 0.4));
    }
  }
  CHECK(sup_rel_err(got, want) <= 1e-8);
}

TEST_CASE("angular_spectrum_propagate flags truncated grids") {
  SampledField f(-2.0, 4.0 / 256, 256);
  for (int i = 0; i < f.nx(); ++i) f.at(i) = std::exp(-f.x(i) * f.x(i));
  bool aliased = false;
  prop::angular_spectrum_propagate(f, 0.1, &aliased);
  CHECK(aliased);
}

TEST_CASE("field_xz agrees with the angular-spectrum route off focus") {
  for (double dz : {0.3, -0.45}) {
    SampledField f(-12.0, 24.0 / 2048, 2048);
    for (int i = 0; i < f.nx(); ++i) f.at(i) = flattop::flattop_profile(8, f.x(i));
    SampledField out = prop::angular_spectrum_propagate(f, dz);
    std::vector<cplx> got, want;
    for (int i = 0; i < f.nx(); ++i) {
      got.push_back(out.at(i));
      want.push_back(prop::field_xz(8, f.x(i), dz));
    }
    CHECK(sup_rel_err(got, want) <= 1e-6);
    // the on-axis sample by itself
    CHECK(std::abs(out.at(1024) - prop::field_xz(8, 0.0, dz)) <=
          1e-6 * std::abs(prop::field_xz(8, 0.0, dz)));
  }
}

TEST_CASE("power is conserved along z") {
  for (int order : {2, 8}) {
    auto power = [order](double z) {
      return oracle::integrate(
          [order, z](double x) { return std::norm(prop::field_xz(order, x, z)); }, -12.0,
          12.0, 1e-12);
    };
    double p0 = power(0.0);
    for (double z : {-1.0, -0.5, 0.3, 1.0}) {
      CHECK(std::fabs(power(z) - p0) <= 1e-8 * p0);
    }
  }
}

TEST_CASE("on-axis phase is stationary at focus for order >= 2") {
  auto phase_slope = [](int order) {
    const double h = 1e-3;
    auto phi = [order](double z) { return std::arg(prop::field_xz(order, 0.0, z)); };
    double d1 = (phi(h) - phi(-h)) / (2.0 * h);
    double d2 = (phi(0.5 * h) - phi(-0.5 * h)) / h;
    return (4.0 * d2 - d1) / 3.0;
  };
  CHECK(phase_slope(0) == doctest::Approx(0.5).epsilon(1e-9));
  for (int order : {2, 4, 8, 16}) {
    CHECK(std::fabs(phase_slope(order)) <= 1e-9);

    // same statement via the coefficients: sum c_n H_n(0) (n + 1/2) = 0
    auto me = flattop::hg_coefficients(order);
    double slope = 0.0;
    for (const auto& [n, c] : me.coeffs) slope += c * specfun::hermite(n, 0.0) * (n + 0.5);
    CHECK(std::fabs(slope) <= 1e-12);
  }
}

TEST_CASE("field_xyz separability and carrier") {
  flattop::FlatTopOrder sq(8, 8);
  CHECK(std::abs(prop::field_xyz(sq, 0.0, 0.0, 0.0) - 1.0) <= 1e-12);
  for (double z : {0.0, 0.2}) {
    for (double x : {-1.0, 0.3}) {
      for (double y : {0.5, 1.7}) {
        CHECK(std::abs(prop::field_xyz(sq, x, y, z) - prop::field_xyz(sq, y, x, z)) <= 1e-13);
        CHECK(std::abs(prop::field_xyz(sq, x, y, z) -
                       prop::field_xz(8, x, z) * prop::field_xz(8, y, z)) <= 1e-13);
      }
    }
  }

  auto geom = prop::BeamGeometry::from_waist(10.0, 500.0);
  double z = 0.37;
  cplx plain = prop::field_xyz(sq, 0.4, -0.2, z);
  cplx carried = prop::field_xyz(sq, 0.4, -0.2, z, geom);
  CHECK(std::abs(carried - plain * std::exp(-kI * geom.carrier_exponent() * z)) <= 1e-12);
  CHECK(std::abs(std::abs(carried) - std::abs(plain)) <= 1e-13);

  CHECK_THROWS_AS(flattop::FlatTopOrder(3, 2), std::domain_error);
  CHECK_THROWS_AS(flattop::FlatTopOrder(2, -2), std::domain_error);
}

TEST_CASE("BeamGeometry consistency is enforced") {
  auto geom = prop::BeamGeometry::from_waist(10.0, 500.0);
  CHECK(geom.rayleigh_um == doctest::Approx(M_PI * 100.0 / 0.5).epsilon(1e-12));
  CHECK(geom.carrier_exponent() ==
        doctest::Approx(2.0 * geom.rayleigh_um * geom.rayleigh_um / 100.0).epsilon(1e-12));
  CHECK_NOTHROW(prop::BeamGeometry(10.0, M_PI * 100.0 / 0.5, 500.0));
  CHECK_THROWS_AS(prop::BeamGeometry(10.0, 600.0, 500.0), std::invalid_argument);
  CHECK_THROWS_AS(prop::BeamGeometry(-1.0, 628.0, 500.0), std::invalid_argument);
}

TEST_CASE("taylor_coefficients structure") {
  auto terms = prop::taylor_coefficients(2);
  REQUIRE(terms.size() == 5);
  CHECK(terms[0].alpha == 0);
  CHECK(terms[0].gamma == 0);
  CHECK(std::abs(terms[0].coeff - 1.0) == 0.0);
  // on-axis leading term 0.75 z^2
  bool found = false;
  for (const auto& t : terms) {
    if (t.alpha == 0 && t.beta == 0 && t.gamma == 2) {
      CHECK(t.coeff.real() == doctest::Approx(0.75).epsilon(1e-12));
      CHECK(std::fabs(t.coeff.imag()) <= 1e-15);
      found = true;
    }
  }
  CHECK(found);

  for (int order : {2, 4, 8, 16}) {
    auto ts = prop::taylor_coefficients(order);
    int min_onaxis_gamma = 1000;
    for (const auto& t : ts) {
      if (t.alpha == 0 && t.beta == 0 && t.gamma > 0 && std::abs(t.coeff) > 0.0) {
        min_onaxis_gamma = std::min(min_onaxis_gamma, t.gamma);
      }
      if (t.alpha + t.beta == 2) {
        // transverse pair x^2 + y^2 at total degree N/2 + 2
        CHECK(t.gamma == order / 2);
        CHECK(t.alpha + t.beta + t.gamma == order / 2 + 2);
      }
    }
    CHECK(min_onaxis_gamma == order / 2 + 1);
    CHECK(std::abs(ts[1].coeff - ts[2].coeff) <= 1e-15 * std::abs(ts[1].coeff));
  }
  CHECK_THROWS_AS(prop::taylor_coefficients(3), std::domain_error);
}

TEST_CASE("taylor_coefficients match contour-extracted series") {
  // on-axis z-series of E_NN via Cauchy integrals on |z| = 1/2
  for (int order : {2, 4, 8, 16}) {
    auto onaxis = [order](cplx z) {
      cplx e = field_c(order, 0.0, z);
      return e * e;
    };
    int half = order / 2;
    for (int k = 1; k <= half; ++k) {
      CHECK(std::abs(oracle::taylor_coefficient(onaxis, k, 0.5, 1024)) <= 1e-10);
    }
    auto terms = prop::taylor_coefficients(order);
    cplx a1, a2;
    for (const auto& t : terms) {
      if (t.alpha == 0 && t.beta == 0 && t.gamma == half + 1) a1 = t.coeff;
      if (t.alpha == 0 && t.beta == 0 && t.gamma == half + 2) a2 = t.coeff;
    }
    cplx got1 = oracle::taylor_coefficient(onaxis, half + 1, 0.5, 1024);
    cplx got2 = oracle::taylor_coefficient(onaxis, half + 2, 0.5, 1024);
    CHECK(std::abs(got1 - a1) <= 1e-9 * std::abs(a1));
    CHECK(std::abs(got2 - a2) <= 1e-9 * std::abs(a2));
  }

  // transverse coefficient: x^2-coefficient of E_NN(x, 0, z) behaves as
  // t * z^{N/2} near z = 0; extrapolate z -> 0 and compare
  for (int order : {2, 4, 8}) {
    auto terms = prop::taylor_coefficients(order);
    cplx want = terms[1].coeff;
    auto c2_of_z = [order](double z) {
      auto fx = [order, z](cplx x) {
        return field_c(order, x, z) * field_c(order, 0.0, z);
      };
      return oracle::taylor_coefficient(fx, 2, 1.0, 256);
    };
    int half = order / 2;
    auto t_of_z = [&](double z) { return c2_of_z(z) / std::pow(z, half); };
    cplx extrap = 2.0 * t_of_z(0.01) - t_of_z(0.02);
    CHECK(std::abs(extrap - want) <= 1e-2 * std::abs(want));
  }
}

TEST_CASE("near-focus truncation error scales at the next order") {
  for (int order : {2, 4, 8}) {
    auto terms = prop::taylor_coefficients(order);
    flattop::FlatTopOrder sq(order, order);
    std::vector<double> logz, logerr;
    for (double z = 0.02; z <= 0.125; z *= 1.2) {
      double err = std::abs(prop::field_xyz(sq, 0.0, 0.0, z) -
                            prop::eval_taylor(terms, 0.0, 0.0, z));
      logz.push_back(std::log(z));
      logerr.push_back(std::log(err));
    }
    double slope = oracle::fit_slope(logz, logerr);
    CHECK(slope == doctest::Approx(order / 2.0 + 3.0).epsilon(0.2 / (order / 2.0 + 3.0)));
  }
}

TEST_CASE("paraxial_residual validates the field and detects corruption") {
  std::vector<std::array<double, 3>> probes;
  for (double x : {-0.8, 0.0, 0.8}) {
    for (double y : {-0.5, 0.0, 0.5}) {
      for (double z : {-0.3, 0.0, 0.4}) probes.push_back({x, y, z});
    }
  }

  prop::FieldSampler gauss = [](double x, double y, double z) {
    return gaussian_xz(x, z) * gaussian_xz(y, z);
  };
  CHECK(prop::paraxial_residual(gauss, probes) <= 1e-6);

  flattop::FlatTopOrder sq(8, 8);
  prop::FieldSampler ft = [&sq](double x, double y, double z) {
    return prop::field_xyz(sq, x, y, z);
  };
  CHECK(prop::paraxial_residual(ft, probes) <= 1e-4);

  prop::FieldSampler corrupted = [](double x, double y, double z) {
    return std::conj(gaussian_xz(x, z) * gaussian_xz(y, z));
  };
  CHECK(prop::paraxial_residual(corrupted, probes) >= 1e-1);
}

TEST_CASE("SampledField binary and CSV round trips") {
  namespace fs = std::filesystem;
  SampledField f(-1.5, 0.25, 0.5, 0.125, 7, 5);
  for (int j = 0; j < f.ny(); ++j) {
    for (int i = 0; i < f.nx(); ++i) {
      f.at(i, j) = cplx(std::sin(i + 0.1 * j), std::cos(0.3 * i - j));
    }
  }
  fs::path path = fs::temp_directory_path() / "beamkit_sampled_field_test.bin";
  f.write_file(path.string());
  SampledField g = SampledField::read_file(path.string());
  REQUIRE(g.nx() == f.nx());
  REQUIRE(g.ny() == f.ny());
  CHECK(g.dx() == f.dx());
  CHECK(g.dy() == f.dy());
  CHECK(g.x(0) == f.x(0));
  CHECK(g.y(0) == f.y(0));
  for (size_t i = 0; i < f.values().size(); ++i) {
    CHECK(g.values()[i] == f.values()[i]);
  }
  fs::remove(path);

  SampledField line(-1.0, 0.5, 5);
  for (int i = 0; i < 5; ++i) line.at(i) = cplx(i, -i * 0.5);
  std::ostringstream csv;
  line.write_csv(csv);
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "x,re,im");
  std::getline(in, row);
  double x, re, im;
  REQUIRE(std::sscanf(row.c_str(), "%lf,%lf,%lf", &x, &re, &im) == 3);
  CHECK(x == -1.0);
  CHECK(re == 0.0);

  CHECK_THROWS_AS(f.write_csv(csv), std::logic_error);
  CHECK_THROWS_AS(SampledField(-1.0, 0.0, 5), std::invalid_argument);
  CHECK_THROWS_AS(SampledField::read_file("/nonexistent/beamkit.bin"), std::runtime_error);
}
