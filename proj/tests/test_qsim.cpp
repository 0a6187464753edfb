#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "beamkit/constants.hpp"
#include "beamkit/errors.hpp"
#include "beamkit/flattop.hpp"
#include "beamkit/qsim.hpp"

using namespace beamkit;
using namespace beamkit::qsim;
using std::complex;

namespace {

const complex<double> I1(0.0, 1.0);

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

// independent Kronecker product for cross-checking the library's
Matrix kron_oracle(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

}  // namespace

TEST_CASE("single-atom hamiltonian structure") {
  GateParams p;
  CHECK(build_hamiltonian_single(p).cwiseAbs().maxCoeff() == 0.0);

  p.omega_r = complex<double>(1.3e6, 0.4e6);
  p.omega_b = complex<double>(-2.0e6, 0.9e6);
  p.omega_two_photon = complex<double>(0.2e6, -0.1e6);
  p.delta_big = 2 * M_PI * 870e6;
  p.delta_small = -3.7e5;
  Matrix h = build_hamiltonian_single(p);
  CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(h(lvl_1, lvl_p) == p.omega_r / 2.0);
  CHECK(h(lvl_p, lvl_r) == p.omega_b / 2.0);
  CHECK(h(lvl_1, lvl_r) == p.omega_two_photon / 2.0);
  // blue detuning enters with a minus sign on the |p> diagonal
  CHECK(h(lvl_p, lvl_p).real() == doctest::Approx(-2 * M_PI * 870e6).epsilon(1e-14));
  CHECK(h(lvl_r, lvl_r).real() == doctest::Approx(3.7e5).epsilon(1e-14));
  CHECK(h(lvl_0, lvl_0) == complex<double>(0.0, 0.0));
  CHECK(h(lvl_loss, lvl_loss) == complex<double>(0.0, 0.0));
}

TEST_CASE("two-atom hamiltonian equals lifted sum plus interaction") {
  GateParams p1, p2;
  p1.omega_r = 1.0e6;
  p1.omega_b = complex<double>(2.0e6, 0.5e6);
  p1.delta_big = 3.0e6;
  p2.omega_r = complex<double>(0.0, 1.7e6);
  p2.delta_small = -0.4e6;
  double v = 5.0e6;

  Matrix h1 = build_hamiltonian_single(p1);
  Matrix h2 = build_hamiltonian_single(p2);
  Matrix eye = Matrix::Identity(n_levels, n_levels);
  Matrix expected = kron_oracle(h1, eye) + kron_oracle(eye, h2);
  int rr = lvl_r * n_levels + lvl_r;
  expected(rr, rr) += v;

  Matrix h = build_hamiltonian(p1, p2, v);
  CHECK(h.rows() == two_atom_dim);
  CHECK((h - expected).cwiseAbs().maxCoeff() == 0.0);
  CHECK((h - h.adjoint()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kron and lifts agree with the elementwise definition") {
  Matrix a = Matrix::Zero(n_levels, n_levels);
  Matrix b = Matrix::Zero(n_levels, n_levels);
  for (int i = 0; i < n_levels; ++i) {
    for (int j = 0; j < n_levels; ++j) {
      a(i, j) = complex<double>(i + 0.5, j - 1.0);
      b(i, j) = complex<double>(i * j, i - j);
    }
  }
  CHECK((kron(a, b) - kron_oracle(a, b)).cwiseAbs().maxCoeff() == 0.0);
  Matrix eye = Matrix::Identity(n_levels, n_levels);
  CHECK((lift_atom1(a) - kron_oracle(a, eye)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((lift_atom2(b) - kron_oracle(eye, b)).cwiseAbs().maxCoeff() == 0.0);

  CHECK(ketbra(lvl_loss, lvl_r)(lvl_loss, lvl_r) == complex<double>(1.0, 0.0));
  CHECK(ketbra(lvl_loss, lvl_r).cwiseAbs().sum() == 1.0);
  CHECK_THROWS_AS(ketbra(5, 0), std::out_of_range);
  CHECK_THROWS_AS(ketbra(0, -1), std::out_of_range);
}

TEST_CASE("jump operators: split, completeness, misprint flag, validation") {
  GateParams p;
  CHECK(jump_operators_single(p).empty());
  CHECK(jump_operators(p, p).empty());

  p.gamma_p = 3.6e7;
  p.gamma_r = 1.0e4;
  auto jumps = jump_operators_single(p);
  REQUIRE(jumps.size() == 4);
  // default branching reproduces the gamma/4, gamma/4, gamma/2 split
  CHECK(std::norm(jumps[0](lvl_0, lvl_p)) == doctest::Approx(p.gamma_p / 4).epsilon(1e-14));
  CHECK(std::norm(jumps[1](lvl_1, lvl_p)) == doctest::Approx(p.gamma_p / 4).epsilon(1e-14));
  CHECK(std::norm(jumps[2](lvl_loss, lvl_p)) == doctest::Approx(p.gamma_p / 2).epsilon(1e-14));
  CHECK(std::norm(jumps[3](lvl_loss, lvl_r)) == doctest::Approx(p.gamma_r).epsilon(1e-14));

  // completeness: sum J^dag J = gamma_p |p><p| + gamma_r |r><r|
  Matrix k = Matrix::Zero(n_levels, n_levels);
  for (const auto& j : jumps) k += j.adjoint() * j;
  CHECK(k(lvl_p, lvl_p).real() == doctest::Approx(p.gamma_p).epsilon(1e-14));
  CHECK(k(lvl_r, lvl_r).real() == doctest::Approx(p.gamma_r).epsilon(1e-14));
  CHECK((k - Matrix(k.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);

  // the printed form feeds |1> twice and leaves |0> unreachable, but the
  // total decay out of |p> is the same
  GateParams q = p;
  q.printed_jump_form = true;
  auto printed = jump_operators_single(q);
  REQUIRE(printed.size() == 4);
  CHECK(std::norm(printed[0](lvl_1, lvl_p)) == doctest::Approx(p.gamma_p / 4).epsilon(1e-14));
  CHECK(printed[0](lvl_0, lvl_p) == complex<double>(0.0, 0.0));
  Matrix kp = Matrix::Zero(n_levels, n_levels);
  for (const auto& j : printed) kp += j.adjoint() * j;
  CHECK((kp - k).cwiseAbs().maxCoeff() < 1e-18);

  // lifted: 4 per atom; spot-check atom-2 lifting
  auto pair = jump_operators(p, p);
  REQUIRE(pair.size() == 8);
  CHECK(pair[0].rows() == two_atom_dim);
  Matrix lifted = lift_atom2(jumps[3]);
  CHECK((pair[7] - lifted).cwiseAbs().maxCoeff() == 0.0);

  GateParams bad = p;
  bad.branch_to_0 = 0.5;  // sum now 1.25
  CHECK_THROWS_AS(jump_operators_single(bad), std::invalid_argument);
  bad = p;
  bad.branch_to_0 = -0.1;
  bad.branch_to_1 = 0.6;
  CHECK_THROWS_AS(jump_operators_single(bad), std::invalid_argument);
  bad = p;
  bad.gamma_p = -1.0;
  CHECK_THROWS_AS(jump_operators_single(bad), std::invalid_argument);
}

TEST_CASE("master equation: pure exponential decay") {
  double gamma_r = 2.0e6;
  Matrix j = std::sqrt(gamma_r) * ketbra(lvl_loss, lvl_r);
  Matrix rho0 = Matrix::Zero(n_levels, n_levels);
  rho0(lvl_r, lvl_r) = 1.0;
  HamiltonianFn h = [](double) { return Matrix::Zero(n_levels, n_levels); };
  auto times = linspace(0.0, 2.0e-6, 21);
  auto states = integrate_master(rho0, h, {j}, times);
  REQUIRE(states.size() == times.size());
  for (size_t i = 0; i < times.size(); ++i) {
    double expected = std::exp(-gamma_r * times[i]);
    CHECK(states[i](lvl_r, lvl_r).real() ==
          doctest::Approx(expected).epsilon(1e-6));
    CHECK(states[i](lvl_loss, lvl_loss).real() ==
          doctest::Approx(1.0 - expected).epsilon(1e-6));
  }
}

TEST_CASE("master equation: embedded two-level Rabi oscillation is exact") {
  GateParams p;
  p.omega_b = 2 * M_PI * 5e6;  // couples |p> <-> |r> only
  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  Matrix rho0 = Matrix::Zero(n_levels, n_levels);
  rho0(lvl_p, lvl_p) = 1.0;
  auto times = linspace(0.0, 0.6e-6, 31);
  auto states = integrate_master(rho0, h, {}, times);
  for (size_t i = 0; i < times.size(); ++i) {
    double s = std::sin(std::abs(p.omega_b) * times[i] / 2.0);
    CHECK(states[i](lvl_r, lvl_r).real() == doctest::Approx(s * s).epsilon(5e-8));
  }
}

TEST_CASE("master equation: adiabatic elimination oracle for the ladder drive") {
  // strong intermediate detuning: the ladder reduces to a two-level drive at
  // omega_r omega_b / (2 delta_big), with the resonance moved by the
  // difference of the two light shifts
  GateParams p;
  p.omega_r = 2 * M_PI * 20e6;
  p.omega_b = 2 * M_PI * 20e6;
  p.delta_big = 2 * M_PI * 870e6;
  p.delta_small = 0.0;  // equal Rabi rates: light shifts cancel
  double omega_bar = 2 * M_PI * 20e6 * 20e6 / (2 * 870e6);

  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  Matrix rho0 = Matrix::Zero(n_levels, n_levels);
  rho0(lvl_1, lvl_1) = 1.0;
  auto times = linspace(0.0, M_PI / omega_bar, 9);  // half effective period

  IntegratorOptions coarse;
  auto states = integrate_master(rho0, h, {}, times, coarse);
  // transfer nearly completes at the effective half period; residual is the
  // (omega / 2 delta)^2 intermediate-state contamination scale
  double leak = std::pow(20.0 / (2 * 870.0), 2);
  CHECK(states.back()(lvl_r, lvl_r).real() > 1.0 - 20 * leak);
  for (size_t i = 0; i < times.size(); ++i) {
    double s = std::sin(omega_bar * times[i] / 2.0);
    CHECK(std::abs(states[i](lvl_r, lvl_r).real() - s * s) < 10 * leak);
  }

  // the same run at twice finer tolerance must agree far better than the
  // model error above, pinning the integrator rather than the approximation
  IntegratorOptions fine;
  fine.rel_tol = coarse.rel_tol / 2;
  fine.abs_tol = coarse.abs_tol / 2;
  auto states2 = integrate_master(rho0, h, {}, times, fine);
  for (size_t i = 0; i < times.size(); ++i) {
    CHECK(std::abs(states[i](lvl_r, lvl_r).real() -
                   states2[i](lvl_r, lvl_r).real()) < 1e-7);
  }
}

TEST_CASE("master equation: trace, hermiticity, positivity along a noisy drive") {
  GateParams p;
  p.omega_r = 2 * M_PI * 30e6;
  p.omega_b = 2 * M_PI * 140e6;
  p.delta_big = 2 * M_PI * 870e6;
  p.gamma_p = 3.6e7;
  p.gamma_r = 1.0e4;
  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  std::vector<Matrix> jumps = jump_operators_single(p);
  Matrix rho0 = Matrix::Zero(n_levels, n_levels);
  rho0(lvl_1, lvl_1) = 0.5;
  rho0(lvl_0, lvl_0) = 0.5;
  rho0(lvl_0, lvl_1) = 0.25;
  rho0(lvl_1, lvl_0) = 0.25;
  auto times = linspace(0.0, 0.4e-6, 17);
  auto states = integrate_master(rho0, h, jumps, times);
  for (const Matrix& s : states) {
    CHECK(std::abs(s.trace().real() - 1.0) <= 1e-8);
    CHECK((s - s.adjoint()).cwiseAbs().maxCoeff() <= 1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    CHECK(es.eigenvalues().minCoeff() >= -1e-6);
  }
}

TEST_CASE("master equation input validation and failure modes") {
  Matrix rho0 = Matrix::Zero(n_levels, n_levels);
  rho0(0, 0) = 1.0;
  HamiltonianFn h = [](double) { return Matrix::Zero(n_levels, n_levels); };

  CHECK_THROWS_AS(integrate_master(rho0, h, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(integrate_master(rho0, h, {}, {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(integrate_master(rho0, h, {}, {1e-6, 0.0}), std::invalid_argument);

  Matrix bad = rho0;
  bad(0, 0) = 0.7;  // trace != 1
  CHECK_THROWS_AS(integrate_master(bad, h, {}, {0.0, 1e-6}), std::invalid_argument);
  bad = rho0;
  bad(0, 1) = 0.3;  // not Hermitian
  CHECK_THROWS_AS(integrate_master(bad, h, {}, {0.0, 1e-6}), std::invalid_argument);

  Matrix small_jump = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(integrate_master(rho0, h, {small_jump}, {0.0, 1e-6}),
                  std::invalid_argument);

  // a state with a negative eigenvalue passes the trace and hermiticity
  // screens but trips the positivity guard at the first sampled time
  Matrix neg = Matrix::Zero(n_levels, n_levels);
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  CHECK_THROWS_AS(integrate_master(neg, h, {}, {0.0, 1e-6}), StateError);

  // NaN dynamics cannot satisfy any tolerance: the step size underflows
  HamiltonianFn nan_h = [](double) {
    Matrix m = Matrix::Zero(n_levels, n_levels);
    m(0, 0) = std::nan("");
    return m;
  };
  CHECK_THROWS_AS(integrate_master(rho0, nan_h, {}, {0.0, 1e-5}), ConvergenceError);
}

TEST_CASE("mcwf: no jumps reproduces Schroedinger evolution exactly") {
  GateParams p;
  p.omega_two_photon = 2 * M_PI * 2.41e6;
  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  Vector psi0 = Vector::Zero(n_levels);
  psi0[lvl_1] = 1.0;
  auto times = linspace(0.0, 1.0e-6, 11);

  auto avg = mcwf_evolve(psi0, h, {}, times, 3, 42);
  auto master = integrate_master(psi0 * psi0.adjoint(), h, {}, times);
  REQUIRE(avg.size() == times.size());
  for (size_t i = 0; i < times.size(); ++i) {
    // averaged state stays pure: all trajectories are identical
    CHECK((avg[i] * avg[i] - avg[i]).cwiseAbs().maxCoeff() < 1e-7);
    CHECK((avg[i] - master[i]).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("mcwf: decay statistics match the analytic exponential within 3 sigma") {
  double gamma_r = 1.5e6;
  Matrix j = std::sqrt(gamma_r) * ketbra(lvl_loss, lvl_r);
  HamiltonianFn h = [](double) { return Matrix::Zero(n_levels, n_levels); };
  Vector psi0 = Vector::Zero(n_levels);
  psi0[lvl_r] = 1.0;
  const int n_traj = 2000;
  auto times = linspace(0.0, 1.5e-6, 7);
  auto avg = mcwf_evolve(psi0, h, {j}, times, n_traj, 7);
  for (size_t i = 1; i < times.size(); ++i) {
    double expect = std::exp(-gamma_r * times[i]);
    double sigma = std::sqrt(expect * (1.0 - expect) / n_traj);
    CHECK(std::abs(avg[i](lvl_r, lvl_r).real() - expect) <= 3.0 * sigma + 1e-9);
  }
}

TEST_CASE("mcwf agrees with the master equation on a driven dissipative ladder") {
  // three active levels: drive |1> -> |p> on resonance while |p> decays
  GateParams p;
  p.omega_r = 2 * M_PI * 4e6;
  p.gamma_p = 1.0e7;
  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  auto jumps = jump_operators_single(p);
  Vector psi0 = Vector::Zero(n_levels);
  psi0[lvl_1] = 1.0;
  const int n_traj = 2000;
  auto times = linspace(0.0, 0.8e-6, 9);
  auto avg = mcwf_evolve(psi0, h, jumps, times, n_traj, 12345);
  auto master = integrate_master(psi0 * psi0.adjoint(), h, jumps, times);
  for (size_t i = 0; i < times.size(); ++i) {
    for (int lvl : {lvl_0, lvl_1, lvl_p, lvl_loss}) {
      double pm = master[i](lvl, lvl).real();
      double sigma = std::sqrt(std::max(pm * (1.0 - pm), 1e-8) / n_traj);
      CHECK(std::abs(avg[i](lvl, lvl).real() - pm) <= 3.0 * sigma + 1e-4);
    }
  }
}

TEST_CASE("mcwf determinism: identical output for any worker count") {
  GateParams p;
  p.omega_r = 2 * M_PI * 4e6;
  p.gamma_p = 8.0e6;
  Matrix h0 = build_hamiltonian_single(p);
  HamiltonianFn h = [&](double) { return h0; };
  auto jumps = jump_operators_single(p);
  Vector psi0 = Vector::Zero(n_levels);
  psi0[lvl_1] = 1.0;
  auto times = linspace(0.0, 0.5e-6, 5);
  auto a = mcwf_evolve(psi0, h, jumps, times, 64, 99, {}, 1);
  auto b = mcwf_evolve(psi0, h, jumps, times, 64, 99, {}, 4);
  auto c = mcwf_evolve(psi0, h, jumps, times, 64, 99, {}, 3);
  for (size_t i = 0; i < times.size(); ++i) {
    CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a[i] - c[i]).cwiseAbs().maxCoeff() == 0.0);
  }
  // different seed must actually change something
  auto d = mcwf_evolve(psi0, h, jumps, times, 64, 100, {}, 1);
  CHECK((a.back() - d.back()).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(mcwf_evolve(psi0, h, jumps, times, 0, 1), std::invalid_argument);
  Vector unnorm = 2.0 * psi0;
  CHECK_THROWS_AS(mcwf_evolve(unnorm, h, jumps, times, 1, 1), std::invalid_argument);
}

TEST_CASE("blockade bound and its negative control") {
  double omega = 2 * M_PI * 1e6;
  GateParams p;
  p.omega_two_photon = omega;
  Matrix rho0 = Matrix::Zero(two_atom_dim, two_atom_dim);
  int idx11 = lvl_1 * n_levels + lvl_1;
  int idxrr = lvl_r * n_levels + lvl_r;
  rho0(idx11, idx11) = 1.0;
  auto times = linspace(0.0, 2.0 / 1e6, 81);  // two bare Rabi periods

  double v = 100.0 * omega;
  Matrix hb = build_hamiltonian(p, p, v);
  HamiltonianFn h = [&](double) { return hb; };
  auto states = integrate_master(rho0, h, {}, times);
  double prr_max = 0.0;
  for (const auto& s : states) prr_max = std::max(prr_max, s(idxrr, idxrr).real());
  double bound = 4.0 * std::pow(omega / (2.0 * v), 2);
  CHECK(prr_max <= bound);
  CHECK(prr_max > 0.01 * bound);  // the leakage is real, not underflow

  // V = 0: both atoms oscillate independently and |rr> fills up
  Matrix h0 = build_hamiltonian(p, p, 0.0);
  HamiltonianFn hfree = [&](double) { return h0; };
  auto free_states = integrate_master(rho0, hfree, {}, times);
  double prr_free = 0.0;
  for (const auto& s : free_states) prr_free = std::max(prr_free, s(idxrr, idxrr).real());
  CHECK(prr_free > 0.9);
}

TEST_CASE("trap frequencies: reference values and scaling laws") {
  TrapSpec trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 100.0,
                                        constants::mass_rb87);
  CHECK(trap.rayleigh_um == doctest::Approx(M_PI * 1.4 * 1.4 / 0.813).epsilon(1e-12));
  auto f = trap_frequencies(trap);
  CHECK(f.omega_r / (2 * M_PI) == doctest::Approx(62e3).epsilon(0.05));
  CHECK(f.omega_z / (2 * M_PI) == doctest::Approx(8e3).epsilon(0.05));

  TrapSpec deeper = trap;
  deeper.depth_uk *= 4.0;
  auto f4 = trap_frequencies(deeper);
  CHECK(f4.omega_r == doctest::Approx(2.0 * f.omega_r).epsilon(1e-12));
  CHECK(f4.omega_z == doctest::Approx(2.0 * f.omega_z).epsilon(1e-12));

  TrapSpec wider = TrapSpec::from_optics(800.0, 2.8, 813.0, 100.0,
                                         constants::mass_rb87);
  auto fw = trap_frequencies(wider);
  CHECK(fw.omega_r == doctest::Approx(0.5 * f.omega_r).epsilon(1e-12));
  CHECK(fw.omega_z == doctest::Approx(0.25 * f.omega_z).epsilon(1e-12));

  TrapSpec bad = trap;
  bad.depth_uk = 0.0;
  CHECK_THROWS_AS(trap_frequencies(bad), std::invalid_argument);
  bad = trap;
  bad.waist_um = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = trap;
  bad.temperature_uk = -5.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("trap potential: bottom, asymptote, and landmark points") {
  TrapSpec trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 100.0,
                                        constants::mass_rb87);
  CHECK(trap_potential_uk(trap, 0, 0, 0) == 0.0);
  CHECK(trap_potential_uk(trap, 0, 0, 1e6) == doctest::Approx(800.0).epsilon(1e-6));
  // on axis at one Rayleigh length the intensity halves
  CHECK(trap_potential_uk(trap, 0, 0, trap.rayleigh_um) ==
        doctest::Approx(400.0).epsilon(1e-12));
  // at the waist radius the intensity drops by e^-2
  CHECK(trap_potential_uk(trap, trap.waist_um, 0, 0) ==
        doctest::Approx(800.0 * (1.0 - std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("thermal samples: zero-temperature limit and harmonic statistics") {
  TrapSpec trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 0.0,
                                        constants::mass_rb87);
  auto cold = sample_thermal(trap, ThermalMode::harmonic, 10, 5);
  REQUIRE(cold.size() == 10);
  for (const auto& t : cold) {
    CHECK(t.r0_um == std::array<double, 3>{0.0, 0.0, 0.0});
    CHECK(t.v0_um_us == std::array<double, 3>{0.0, 0.0, 0.0});
  }

  trap.temperature_uk = 100.0;
  const int n = 10000;
  auto warm = sample_thermal(trap, ThermalMode::harmonic, n, 5);
  auto f = trap_frequencies(trap);
  double kt_over_m = constants::k_boltzmann * 100.0e-6 / constants::mass_rb87;
  double var_x_expect = kt_over_m / (f.omega_r * f.omega_r) * 1e12;  // um^2
  double var_v_expect = kt_over_m;  // (um/us)^2 numerically equals (m/s)^2

  double sx = 0, sx2 = 0, sv = 0, sv2 = 0;
  for (const auto& t : warm) {
    sx += t.r0_um[0];
    sx2 += t.r0_um[0] * t.r0_um[0];
    sv += t.v0_um_us[2];
    sv2 += t.v0_um_us[2] * t.v0_um_us[2];
  }
  double var_x = sx2 / n - (sx / n) * (sx / n);
  double var_v = sv2 / n - (sv / n) * (sv / n);
  // variance estimator has sd ~ var * sqrt(2/n)
  CHECK(std::abs(var_x - var_x_expect) <= 3.0 * var_x_expect * std::sqrt(2.0 / n));
  CHECK(std::abs(var_v - var_v_expect) <= 3.0 * var_v_expect * std::sqrt(2.0 / n));

  // determinism
  auto again = sample_thermal(trap, ThermalMode::harmonic, 5, 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(again[i].r0_um == warm[i].r0_um);
    CHECK(again[i].v0_um_us == warm[i].v0_um_us);
  }
}

namespace {

struct PositionVariances {
  double x = 0.0, z = 0.0;
};

// quadrature oracle: second moments of exp(-U/kT) over the documented
// confinement box (cutoff thermal widths + beam scale / 16, capped at w0/2
// and 3 z0/5), with the potential written out independently
PositionVariances boltzmann_box_variances(const TrapSpec& trap, double cutoff) {
  auto f = trap_frequencies(trap);
  double sig_v = std::sqrt(constants::k_boltzmann * trap.temperature_uk * 1e-6 /
                           trap.mass_kg);
  double sx = sig_v / f.omega_r * 1e6;
  double sz = sig_v / f.omega_z * 1e6;
  double bx = std::min(cutoff * sx + trap.waist_um / 16.0, 0.5 * trap.waist_um);
  double bz = std::min(cutoff * sz + trap.rayleigh_um / 16.0,
                       0.6 * trap.rayleigh_um);
  const int nx = 81, nz = 161;
  double mass = 0, mx2 = 0, mz2 = 0;
  for (int iz = 0; iz < nz; ++iz) {
    double z = -bz + 2.0 * bz * iz / (nz - 1);
    double wz = (iz == 0 || iz == nz - 1) ? 0.5 : 1.0;
    double zr2 = z * z / (trap.rayleigh_um * trap.rayleigh_um);
    double w2 = trap.waist_um * trap.waist_um * (1.0 + zr2);
    for (int ix = 0; ix < nx; ++ix) {
      double x = -bx + 2.0 * bx * ix / (nx - 1);
      double wx = (ix == 0 || ix == nx - 1) ? 0.5 : 1.0;
      for (int iy = 0; iy < nx; ++iy) {
        double y = -bx + 2.0 * bx * iy / (nx - 1);
        double wy = (iy == 0 || iy == nx - 1) ? 0.5 : 1.0;
        double u = trap.depth_uk *
                   (1.0 - std::exp(-2.0 * (x * x + y * y) / w2) / (1.0 + zr2));
        double d = wz * wx * wy * std::exp(-u / trap.temperature_uk);
        mass += d;
        mx2 += d * x * x;
        mz2 += d * z * z;
      }
    }
  }
  return {mx2 / mass, mz2 / mass};
}

}  // namespace

TEST_CASE("thermal samples: exact mode tracks its Boltzmann target and the harmonic law") {
  TrapSpec trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 100.0,
                                        constants::mass_rb87);

  // the confined Boltzmann distribution itself deviates from the harmonic
  // variances by less than 10% everywhere at or below 100 uK; quadrature
  // makes this check free of sampling noise
  for (double t_uk : {25.0, 50.0, 100.0}) {
    trap.temperature_uk = t_uk;
    auto f = trap_frequencies(trap);
    double kt_over_m =
        constants::k_boltzmann * t_uk * 1e-6 / constants::mass_rb87;
    double hx = kt_over_m / (f.omega_r * f.omega_r) * 1e12;
    double hz = kt_over_m / (f.omega_z * f.omega_z) * 1e12;
    PositionVariances q = boltzmann_box_variances(trap, 2.0);
    CHECK(std::abs(q.x - hx) / hx <= 0.10);
    CHECK(std::abs(q.z - hz) / hz <= 0.10);
  }

  // the Metropolis chain reproduces the quadrature moments of its target
  trap.temperature_uk = 100.0;
  PositionVariances q = boltzmann_box_variances(trap, 2.0);
  const int n = 20000;
  auto exact = sample_thermal(trap, ThermalMode::exact, n, 17);
  REQUIRE(exact.size() == n);
  double ax = 0, ax2 = 0, az = 0, az2 = 0;
  for (const auto& t : exact) {
    ax += t.r0_um[0];
    ax2 += t.r0_um[0] * t.r0_um[0];
    az += t.r0_um[2];
    az2 += t.r0_um[2] * t.r0_um[2];
  }
  double var_x = ax2 / n - (ax / n) * (ax / n);
  double var_z = az2 / n - (az / n) * (az / n);
  CHECK(std::abs(var_x - q.x) / q.x <= 0.05);
  CHECK(std::abs(var_z - q.z) / q.z <= 0.05);

  // direct sampled-vs-harmonic comparison at a temperature where finite
  // sampling noise cannot blur the 10% band
  trap.temperature_uk = 50.0;
  auto mid = sample_thermal(trap, ThermalMode::exact, n, 23);
  auto f50 = trap_frequencies(trap);
  double kt50 = constants::k_boltzmann * 50.0e-6 / constants::mass_rb87;
  double hx50 = kt50 / (f50.omega_r * f50.omega_r) * 1e12;
  double hz50 = kt50 / (f50.omega_z * f50.omega_z) * 1e12;
  double bx = 0, bx2 = 0, bz = 0, bz2 = 0;
  for (const auto& t : mid) {
    bx += t.r0_um[0];
    bx2 += t.r0_um[0] * t.r0_um[0];
    bz += t.r0_um[2];
    bz2 += t.r0_um[2] * t.r0_um[2];
  }
  CHECK(std::abs(bx2 / n - (bx / n) * (bx / n) - hx50) / hx50 <= 0.10);
  CHECK(std::abs(bz2 / n - (bz / n) * (bz / n) - hz50) / hz50 <= 0.10);

  // exact-mode determinism
  trap.temperature_uk = 100.0;
  auto again = sample_thermal(trap, ThermalMode::exact, 5, 17);
  for (int i = 0; i < 5; ++i) {
    CHECK(again[i].r0_um == exact[i].r0_um);
    CHECK(again[i].v0_um_us == exact[i].v0_um_us);
  }

  // far beyond the depth the walker cannot stay inside the capped box
  TrapSpec hot = trap;
  hot.temperature_uk = 1e6;
  CHECK_THROWS_AS(sample_thermal(hot, ThermalMode::exact, 100, 1),
                  ConvergenceError);
  CHECK_THROWS_AS(sample_thermal(trap, ThermalMode::exact, -1, 1),
                  std::invalid_argument);
}

TEST_CASE("trajectory parameters: constants at center, field sampling, Doppler, V") {
  DriveConfig cfg;
  cfg.mode = DriveMode::five_level;
  cfg.omega_r_peak = 2 * M_PI * 30e6;
  cfg.omega_b_peak = 2 * M_PI * 140e6;
  cfg.delta_big = 2 * M_PI * 870e6;
  cfg.delta_small = 2 * M_PI * 1e6;
  cfg.c6_rad_s_um6 = 2 * M_PI * 140e9;

  Trajectory still1;  // at origin
  Trajectory still2;
  still2.r0_um = {0.0, 3.6, 0.0};
  auto drive = params_from_trajectory(still1, still2, cfg);
  TwoAtomDrive d0 = drive(0.0);
  TwoAtomDrive d1 = drive(0.5e-6);
  CHECK(d0.atom1.omega_r == d1.atom1.omega_r);
  CHECK(d0.atom1.omega_b == d1.atom1.omega_b);
  CHECK(d0.atom1.delta_small == d1.atom1.delta_small);
  CHECK(std::abs(d0.atom1.omega_b) == doctest::Approx(cfg.omega_b_peak).epsilon(1e-12));
  CHECK(std::abs(d0.atom1.omega_r) == doctest::Approx(cfg.omega_r_peak).epsilon(1e-9));
  CHECK(d0.atom1.delta_big == cfg.delta_big);
  CHECK(d0.atom1.delta_small == doctest::Approx(cfg.delta_small).epsilon(1e-12));
  // V = C6 / separation^6
  CHECK(d0.v == doctest::Approx(2 * M_PI * 140e9 / std::pow(3.6, 6)).epsilon(1e-12));

  // addressing field sampled at the atom position: a flat-top profile whose
  // half-maximum sits at y = 3.0 um
  double y_scale = 3.0 / (flattop::fwhm(8) / 2.0);  // um per waist unit
  cfg.addressing = [y_scale](double, double y, double) {
    return complex<double>(flattop::flattop_profile(8, y / y_scale), 0.0);
  };
  Trajectory at_edge;
  at_edge.r0_um = {0.0, 3.0, 0.0};
  auto drive_edge = params_from_trajectory(at_edge, still2, cfg);
  double sampled = std::abs(cfg.addressing(0.0, 3.0, 0.0));
  CHECK(std::abs(drive_edge(0.0).atom1.omega_b) ==
        doctest::Approx(sampled * cfg.omega_b_peak).epsilon(1e-12));
  CHECK(sampled == doctest::Approx(0.5).epsilon(5e-3));

  // the global beam runs along x: displacement along x costs nothing, along
  // y it rolls off on the 570 um envelope
  Trajectory along_beam;
  along_beam.r0_um = {200.0, 0.0, 0.0};
  cfg.addressing = nullptr;
  auto d_beam = params_from_trajectory(along_beam, still2, cfg)(0.0);
  CHECK(std::abs(d_beam.atom1.omega_r) == doctest::Approx(cfg.omega_r_peak).epsilon(1e-9));
  Trajectory transverse;
  transverse.r0_um = {0.0, 200.0, 0.0};
  auto d_trans = params_from_trajectory(transverse, still2, cfg)(0.0);
  CHECK(std::abs(d_trans.atom1.omega_r) / cfg.omega_r_peak ==
        doctest::Approx(std::exp(-200.0 * 200.0 / (570.0 * 570.0))).epsilon(1e-9));

  // Doppler: (k1 - k2) . v with k1 along x and k2 along z
  Trajectory moving;
  moving.v0_um_us = {0.05, 0.0, 0.11};
  auto d_mov = params_from_trajectory(moving, still2, cfg)(0.0);
  double k1 = 2 * M_PI * 1e3 / 795.0, k2 = 2 * M_PI * 1e3 / 474.0;
  double expected_shift = (k1 * 0.05 - k2 * 0.11) * 1e6;
  CHECK(d_mov.atom1.delta_small - cfg.delta_small ==
        doctest::Approx(expected_shift).epsilon(1e-12));

  // V(t) follows the live separation as the atoms drift apart
  Trajectory receding = still2;
  receding.v0_um_us = {0.0, 0.2, 0.0};
  auto drive_rec = params_from_trajectory(still1, receding, cfg);
  double t_probe = 1e-6;  // 1 us -> separation 3.8 um
  CHECK(drive_rec(t_probe).v ==
        doctest::Approx(2 * M_PI * 140e9 / std::pow(3.8, 6)).epsilon(1e-12));

  // per-atom static light shifts
  cfg.light_shift = {2 * M_PI * 0.5e6, -2 * M_PI * 0.25e6};
  auto d_ls = params_from_trajectory(still1, still2, cfg)(0.0);
  CHECK(d_ls.atom1.delta_small - cfg.delta_small ==
        doctest::Approx(2 * M_PI * 0.5e6).epsilon(1e-12));
  CHECK(d_ls.atom2.delta_small - cfg.delta_small ==
        doctest::Approx(-2 * M_PI * 0.25e6).epsilon(1e-12));

  // two-photon mode folds everything into the direct drive
  cfg.mode = DriveMode::two_photon;
  cfg.omega_bar_peak = 2 * M_PI * 2.41e6;
  cfg.light_shift = {0.0, 0.0};
  auto d_tp = params_from_trajectory(still1, still2, cfg)(0.0);
  CHECK(std::abs(d_tp.atom1.omega_two_photon) ==
        doctest::Approx(2 * M_PI * 2.41e6).epsilon(1e-9));
  CHECK(d_tp.atom1.omega_r == complex<double>(0.0, 0.0));
}

TEST_CASE("rabi scan: cold resonant oscillation at the measured frequency") {
  RabiConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  double period = 1.0 / 2.41e6;  // 414.9 ns
  auto times = linspace(0.02e-6, 1.0e-6, 50);
  auto curves = rabi_scan(cfg, times, 1, 1);
  REQUIRE(curves.size() == 1);
  for (size_t i = 0; i < times.size(); ++i) {
    double c = std::cos(cfg.omega_bar * times[i] / 2.0);
    CHECK(curves[0][i] == doctest::Approx(c * c).epsilon(1e-6));
  }
  // explicit landmark: full revival one period in, full dip at half
  auto marks = rabi_scan(cfg, {period / 2.0, period}, 1, 1);
  CHECK(marks[0][0] < 1e-6);
  CHECK(marks[0][1] > 1.0 - 1e-6);
}

TEST_CASE("rabi scan: thermal motion damps the envelope") {
  RabiConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  cfg.thermal = true;
  cfg.trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 200.0, constants::mass_rb87);
  // two-photon wavevector magnitude for the orthogonal 795/474 beam pair
  cfg.k_eff_rad_um = std::hypot(2 * M_PI * 1e3 / 795.0, 2 * M_PI * 1e3 / 474.0);
  double period = 1.0 / 2.41e6;
  std::vector<double> revivals;
  for (int k = 1; k <= 12; ++k) revivals.push_back(k * period);
  auto curves = rabi_scan(cfg, revivals, 400, 3);
  // Doppler spread dephases the revivals: a clear drop accumulates by the
  // twelfth period, while the motionless reference stays at full contrast
  CHECK(curves[0][0] > 0.9);
  CHECK(curves[0][11] < curves[0][0] - 0.08);
  RabiConfig cold = cfg;
  cold.thermal = false;
  auto ref = rabi_scan(cold, revivals, 1, 3);
  CHECK(ref[0][11] > 1.0 - 1e-6);
}

TEST_CASE("rabi scan: detuned neighbor follows the damped-Rabi forward model") {
  RabiConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  cfg.atoms = {AtomSite{}, AtomSite{0.12, 2 * M_PI * 1.0e6}};
  auto times = linspace(0.05e-6, 2.0e-6, 40);
  auto curves = rabi_scan(cfg, times, 1, 1);
  REQUIRE(curves.size() == 2);
  double om0 = 0.12 * cfg.omega_bar;
  double delta = 2 * M_PI * 1.0e6;
  double omt = std::hypot(om0, delta);
  double amp_bound = om0 * om0 / (omt * omt);
  for (size_t i = 0; i < times.size(); ++i) {
    double model = 1.0 - 0.5 * amp_bound * (1.0 - std::cos(omt * times[i]));
    CHECK(curves[1][i] == doctest::Approx(model).epsilon(2e-6));
    CHECK(1.0 - curves[1][i] <= amp_bound + 1e-9);
  }
}

TEST_CASE("rabi scan: five-level drive with compensated light shift") {
  RabiConfig cfg;
  cfg.mode = DriveMode::five_level;
  cfg.omega_r = 2 * M_PI * 30e6;
  cfg.omega_b = 2 * M_PI * 139.83e6;
  cfg.delta_big = 2 * M_PI * 870e6;
  cfg.delta_small = (cfg.omega_b * cfg.omega_b - cfg.omega_r * cfg.omega_r) /
                    (4.0 * cfg.delta_big);
  cfg.integrator.rel_tol = 1e-6;
  cfg.integrator.abs_tol = 1e-9;
  double omega_bar = cfg.omega_r * cfg.omega_b / (2.0 * cfg.delta_big);
  auto curves = rabi_scan(cfg, {M_PI / omega_bar}, 1, 1);
  CHECK(curves[0][0] < 1e-3);  // nearly full transfer at the effective half period
}

TEST_CASE("rabi scan determinism and validation") {
  RabiConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  cfg.thermal = true;
  cfg.trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 100.0, constants::mass_rb87);
  cfg.k_eff_rad_um = 15.4;
  auto times = linspace(0.1e-6, 0.6e-6, 4);
  auto a = rabi_scan(cfg, times, 32, 11, 1);
  auto b = rabi_scan(cfg, times, 32, 11, 4);
  CHECK(a == b);
  CHECK_THROWS_AS(rabi_scan(cfg, {}, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(rabi_scan(cfg, {2e-6, 1e-6}, 1, 1), std::invalid_argument);
  RabiConfig empty = cfg;
  empty.atoms.clear();
  CHECK_THROWS_AS(rabi_scan(empty, times, 1, 1), std::invalid_argument);
}

TEST_CASE("protocol constants: published values are the derived optimum") {
  CzProtocol d = derive_protocol(0.377371);
  CHECK(d.omega_tau == doctest::Approx(4.29268).epsilon(1e-5));
  CHECK(d.xi == doctest::Approx(3.90242).epsilon(1e-5));
  CHECK(std::abs(protocol_phase_defect(d)) < 1e-5);

  CzProtocol o = optimize_protocol();
  CHECK(o.detuning_ratio == doctest::Approx(0.377371).epsilon(1e-5));
  CHECK(std::abs(protocol_phase_defect(o)) < 1e-10);

  // defect changes sign across the optimum, so it is a genuine root
  CHECK(protocol_phase_defect(derive_protocol(0.34)) *
            protocol_phase_defect(derive_protocol(0.41)) <
        0.0);

  // the defaults encode the same constants
  CzProtocol defaults;
  CHECK(defaults.detuning_ratio == doctest::Approx(o.detuning_ratio).epsilon(1e-5));
  CHECK(defaults.omega_tau == doctest::Approx(o.omega_tau).epsilon(1e-5));
  CHECK(defaults.xi == doctest::Approx(o.xi).epsilon(1e-5));

  CHECK_THROWS_AS(derive_protocol(0.0), std::invalid_argument);
  CHECK_THROWS_AS(derive_protocol(-1.0), std::invalid_argument);
}

TEST_CASE("cz gate: ideal blockade limit reaches the protocol fidelity") {
  CzConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  cfg.v = 1000.0 * cfg.omega_bar;
  CzResult r = cz_gate(cfg, CzProtocol{}, 1, 1);
  CHECK(1.0 - r.fidelity <= 1e-4);
  CHECK(r.budget.empty());  // no channels active
  // per-pulse duration: omega_tau / omega_bar
  CHECK(r.tau_s == doctest::Approx(4.29268 / (2 * M_PI * 2.41e6)).epsilon(1e-5));
  CHECK(r.tau_s == doctest::Approx(287e-9).epsilon(0.10));
}

TEST_CASE("cz gate: budget is additive at small error and deterministic") {
  CzConfig cfg;
  cfg.omega_bar = 2 * M_PI * 2.41e6;
  cfg.v = 100.0 * cfg.omega_bar;
  cfg.gamma_r = 5.0e4;
  cfg.thermal = true;
  cfg.trap = TrapSpec::from_optics(800.0, 1.4, 813.0, 25.0, constants::mass_rb87);
  cfg.k_eff_rad_um = std::hypot(2 * M_PI * 1e3 / 795.0, 2 * M_PI * 1e3 / 474.0);
  cfg.field_asymmetry = {1.004, 0.996};

  CzResult r = cz_gate(cfg, CzProtocol{}, 48, 21);
  REQUIRE(r.budget.count("decay") == 1);
  REQUIRE(r.budget.count("thermal") == 1);
  REQUIRE(r.budget.count("crosstalk") == 1);
  REQUIRE(r.budget.count("residual") == 1);
  double total = 1.0 - r.fidelity;
  double sum = r.budget.at("decay") + r.budget.at("thermal") +
               r.budget.at("crosstalk") + r.budget.at("residual");
  CHECK(std::abs(total - sum) <= 0.2 * total);

  CzResult again = cz_gate(cfg, CzProtocol{}, 48, 21, 3);
  CHECK(again.fidelity == r.fidelity);
  CHECK(again.budget.at("thermal") == r.budget.at("thermal"));

  CHECK_THROWS_AS(cz_gate(cfg, CzProtocol{}, 0, 1), std::invalid_argument);
  CzConfig bad = cfg;
  bad.omega_bar = 0.0;
  CHECK_THROWS_AS(cz_gate(bad, CzProtocol{}, 1, 1), std::invalid_argument);
}
