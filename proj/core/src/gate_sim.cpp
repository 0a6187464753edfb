#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "beamkit/errors.hpp"
#include "beamkit/qsim.hpp"
#include "beamkit/rng.hpp"
#include "dopri5.hpp"

namespace beamkit::qsim {

using std::complex;

namespace {

constexpr complex<double> kI(0.0, 1.0);

// ---- structured Lindblad right-hand sides ---------------------------------
//
// Every jump operator here is sqrt(rate) |a><b| on one atom, so J rho J^dag
// is a block copy and sum_k J^dag J is diagonal.  That turns the dissipator
// into O(dim^2) work and leaves the two dense commutator products as the
// only cubic cost.

struct JumpTerm {
  int a = 0, b = 0;
  double rate = 0.0;
};

std::vector<JumpTerm> jump_terms(const GateParams& p) {
  std::vector<JumpTerm> terms;
  auto add = [&](double rate, int to, int from) {
    if (rate > 0.0) terms.push_back({to, from, rate});
  };
  add(p.gamma_p * p.branch_to_0, p.printed_jump_form ? lvl_1 : lvl_0, lvl_p);
  add(p.gamma_p * p.branch_to_1, lvl_1, lvl_p);
  add(p.gamma_p * p.branch_to_loss, lvl_loss, lvl_p);
  add(p.gamma_r, lvl_loss, lvl_r);
  return terms;
}

struct HEntry {
  int a = 0, b = 0;
  complex<double> val{0.0, 0.0};
};

int fill_entries(const GateParams& p, HEntry* out) {
  int n = 0;
  auto pair = [&](int a, int b, complex<double> v) {
    if (v != complex<double>(0.0, 0.0)) {
      out[n++] = {a, b, v};
      out[n++] = {b, a, std::conj(v)};
    }
  };
  pair(lvl_1, lvl_p, p.omega_r / 2.0);
  pair(lvl_p, lvl_r, p.omega_b / 2.0);
  pair(lvl_1, lvl_r, p.omega_two_photon / 2.0);
  if (p.delta_big != 0.0) out[n++] = {lvl_p, lvl_p, -p.delta_big};
  if (p.delta_small != 0.0) out[n++] = {lvl_r, lvl_r, -p.delta_small};
  return n;
}

// Single atom, 5x5 density matrix.
struct SingleRhs {
  std::function<GateParams(double)> params;
  std::vector<JumpTerm> jumps;
  Eigen::Matrix<double, n_levels, 1> kdiag;
  mutable Matrix h = Matrix::Zero(n_levels, n_levels);

  void set_jumps(const GateParams& p) {
    jumps = jump_terms(p);
    kdiag.setZero();
    for (const auto& j : jumps) kdiag[j.b] += j.rate;
  }

  void operator()(double t, const Matrix& y, Matrix& out) const {
    GateParams p = params(t);
    HEntry e[8];
    int ne = fill_entries(p, e);
    h.setZero();
    for (int k = 0; k < ne; ++k) h(e[k].a, e[k].b) = e[k].val;
    out.noalias() = h * y;
    out.noalias() -= y * h;
    out *= -kI;
    for (int i = 0; i < n_levels; ++i) {
      for (int j = 0; j < n_levels; ++j) {
        out(i, j) -= 0.5 * (kdiag[i] + kdiag[j]) * y(i, j);
      }
    }
    for (const auto& j : jumps) out(j.a, j.a) += j.rate * y(j.b, j.b);
  }
};

// Two atoms, 25x25 density matrix.
struct PairRhs {
  DriveFn drive;
  std::vector<JumpTerm> j1, j2;
  Eigen::Matrix<double, two_atom_dim, 1> kdiag;
  mutable Matrix h = Matrix::Zero(two_atom_dim, two_atom_dim);

  void set_jumps(const GateParams& p1, const GateParams& p2) {
    j1 = jump_terms(p1);
    j2 = jump_terms(p2);
    kdiag.setZero();
    for (const auto& j : j1) {
      for (int i = 0; i < n_levels; ++i) kdiag[j.b * n_levels + i] += j.rate;
    }
    for (const auto& j : j2) {
      for (int i = 0; i < n_levels; ++i) kdiag[i * n_levels + j.b] += j.rate;
    }
  }

  void operator()(double t, const Matrix& y, Matrix& out) const {
    TwoAtomDrive d = drive(t);
    HEntry e[8];
    h.setZero();
    int ne = fill_entries(d.atom1, e);
    for (int k = 0; k < ne; ++k) {
      for (int i = 0; i < n_levels; ++i) {
        h(e[k].a * n_levels + i, e[k].b * n_levels + i) += e[k].val;
      }
    }
    ne = fill_entries(d.atom2, e);
    for (int k = 0; k < ne; ++k) {
      for (int i = 0; i < n_levels; ++i) {
        h(i * n_levels + e[k].a, i * n_levels + e[k].b) += e[k].val;
      }
    }
    int rr = lvl_r * n_levels + lvl_r;
    h(rr, rr) += d.v;

    out.noalias() = h * y;
    out.noalias() -= y * h;
    out *= -kI;
    for (int i = 0; i < two_atom_dim; ++i) {
      for (int j = 0; j < two_atom_dim; ++j) {
        out(i, j) -= 0.5 * (kdiag[i] + kdiag[j]) * y(i, j);
      }
    }
    for (const auto& j : j1) {
      int ar = j.a * n_levels, br = j.b * n_levels;
      for (int i = 0; i < n_levels; ++i) {
        for (int k = 0; k < n_levels; ++k) {
          out(ar + i, ar + k) += j.rate * y(br + i, br + k);
        }
      }
    }
    for (const auto& j : j2) {
      for (int i = 0; i < n_levels; ++i) {
        for (int k = 0; k < n_levels; ++k) {
          out(i * n_levels + j.a, k * n_levels + j.a) +=
              j.rate * y(i * n_levels + j.b, k * n_levels + j.b);
        }
      }
    }
  }
};

void check_trace(const Matrix& rho) {
  if (std::abs(rho.trace().real() - 1.0) > 1e-8) {
    throw StateError("gate simulation: trace drifted from 1 beyond 1e-8");
  }
}

void check_positivity(const Matrix& rho, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es((rho + rho.adjoint()) / 2.0);
  if (es.eigenvalues().minCoeff() < -tol) {
    throw StateError("gate simulation: state developed negative population");
  }
}

// ---- beam geometry helpers -------------------------------------------------

std::array<double, 3> normalize(const std::array<double, 3>& v) {
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(n > 0.0)) throw std::invalid_argument("beam direction must be nonzero");
  return {v[0] / n, v[1] / n, v[2] / n};
}

double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

}  // namespace

DriveFn params_from_trajectory(const Trajectory& t1, const Trajectory& t2,
                               const DriveConfig& config) {
  auto k1hat = normalize(config.k1_dir);
  auto k2hat = normalize(config.k2_dir);
  // rad/um; wavelengths arrive in nm
  double k1 = 2.0 * M_PI * 1e3 / config.lambda1_nm;
  double k2 = 2.0 * M_PI * 1e3 / config.lambda2_nm;
  // (k1 - k2) . v in rad/us equals 1e6 rad/s
  std::array<double, 3> kdiff = {k1 * k1hat[0] - k2 * k2hat[0],
                                 k1 * k1hat[1] - k2 * k2hat[1],
                                 k1 * k1hat[2] - k2 * k2hat[2]};
  DriveConfig cfg = config;
  std::array<Trajectory, 2> traj = {t1, t2};

  return [cfg, traj, kdiff, k1hat](double t_s) {
    TwoAtomDrive d;
    double t_us = t_s * 1e6;
    std::array<GateParams*, 2> par = {&d.atom1, &d.atom2};
    std::array<std::array<double, 3>, 2> pos;
    for (int i = 0; i < 2; ++i) {
      pos[i] = traj[i].position_um(t_us);
      const auto& v = traj[i].v0_um_us;
      // global beam: Gaussian envelope transverse to its axis
      double r2 = dot(pos[i], pos[i]);
      double axial = dot(pos[i], k1hat);
      double envelope =
          std::exp(-(r2 - axial * axial) / (cfg.global_waist_um * cfg.global_waist_um));
      complex<double> address =
          cfg.addressing ? cfg.addressing(pos[i][0], pos[i][1], pos[i][2])
                         : complex<double>(1.0, 0.0);
      double doppler = (kdiff[0] * v[0] + kdiff[1] * v[1] + kdiff[2] * v[2]) * 1e6;
      GateParams& p = *par[i];
      if (cfg.mode == DriveMode::five_level) {
        p.omega_r = cfg.omega_r_peak * envelope;
        p.omega_b = cfg.omega_b_peak * address;
        p.delta_big = cfg.delta_big;
      } else {
        p.omega_two_photon = cfg.omega_bar_peak * envelope * address;
      }
      p.delta_small = cfg.delta_small + cfg.light_shift[i] + doppler;
      p.gamma_p = cfg.gamma_p;
      p.gamma_r = cfg.gamma_r;
      p.branch_to_0 = cfg.branch_to_0;
      p.branch_to_1 = cfg.branch_to_1;
      p.branch_to_loss = cfg.branch_to_loss;
      p.printed_jump_form = cfg.printed_jump_form;
    }
    std::array<double, 3> sep = {pos[0][0] - pos[1][0], pos[0][1] - pos[1][1],
                                 pos[0][2] - pos[1][2]};
    double dist2 = dot(sep, sep);
    d.v = cfg.c6_rad_s_um6 / (dist2 * dist2 * dist2);
    return d;
  };
}

// ---- Rabi scans -------------------------------------------------------------

std::vector<std::vector<double>> rabi_scan(const RabiConfig& config,
                                           const std::vector<double>& times_s,
                                           int n_traj, std::uint64_t seed,
                                           int n_workers) {
  if (times_s.empty()) throw std::invalid_argument("rabi_scan: empty time grid");
  for (size_t i = 1; i < times_s.size(); ++i) {
    if (!(times_s[i] > times_s[i - 1])) {
      throw std::invalid_argument("rabi_scan: times must be strictly increasing");
    }
  }
  if (!times_s.empty() && times_s.front() < 0.0) {
    throw std::invalid_argument("rabi_scan: negative time");
  }
  const int n_sites = static_cast<int>(config.atoms.size());
  if (n_sites == 0) throw std::invalid_argument("rabi_scan: no atom sites");
  const bool thermal = config.thermal && config.trap.temperature_uk > 0.0;
  const int per_site = thermal ? std::max(1, n_traj) : 1;

  std::vector<Trajectory> samples;
  if (thermal) {
    samples = sample_thermal(config.trap, ThermalMode::harmonic, per_site * n_sites, seed);
  } else {
    samples.assign(static_cast<size_t>(n_sites), Trajectory{});
  }

  const size_t nt = times_s.size();
  const int total = per_site * n_sites;
  constexpr int block = 8;
  const int n_blocks = (total + block - 1) / block;
  std::vector<std::vector<double>> partial(n_blocks,
                                           std::vector<double>(n_sites * nt, 0.0));

  detail::run_blocks(total, block, n_workers, [&](int first, int last, int bidx) {
    for (int item = first; item < last; ++item) {
      const int site = item / per_site;
      const AtomSite& at = config.atoms[static_cast<size_t>(site)];
      const Trajectory traj = samples[static_cast<size_t>(item)];

      SingleRhs rhs;
      GateParams proto;
      proto.gamma_p = config.gamma_p;
      proto.gamma_r = config.gamma_r;
      proto.branch_to_0 = config.branch_to_0;
      proto.branch_to_1 = config.branch_to_1;
      proto.branch_to_loss = config.branch_to_loss;
      proto.printed_jump_form = config.printed_jump_form;
      rhs.set_jumps(proto);

      const RabiConfig& cfg = config;
      rhs.params = [&cfg, &at, traj, proto](double t_s) {
        GateParams p = proto;
        double t_us = t_s * 1e6;
        auto pos = traj.position_um(t_us);
        complex<double> address =
            cfg.addressing ? cfg.addressing(pos[0], pos[1], pos[2])
                           : complex<double>(1.0, 0.0);
        complex<double> amp = at.field_amplitude * address;
        double doppler = cfg.k_eff_rad_um * traj.v0_um_us[2] * 1e6;
        double noise = cfg.phase_noise ? cfg.phase_noise(t_s) : 0.0;
        if (cfg.mode == DriveMode::five_level) {
          p.omega_r = cfg.omega_r;
          p.omega_b = cfg.omega_b * amp;
          p.delta_big = cfg.delta_big;
        } else {
          p.omega_two_photon = cfg.omega_bar * amp;
        }
        p.delta_small = cfg.delta_small + at.extra_detuning + doppler + noise;
        return p;
      };

      Matrix rho = Matrix::Zero(n_levels, n_levels);
      rho(lvl_1, lvl_1) = 1.0;
      detail::Dopri5<SingleRhs&> stepper(rhs, config.integrator);
      stepper.start(0.0, rho);
      double* dst = partial[bidx].data() + static_cast<size_t>(site) * nt;
      for (size_t i = 0; i < nt; ++i) {
        stepper.advance_to(times_s[i], [&](double) { check_trace(stepper.state()); });
        check_positivity(stepper.state(), 1e-6);
        dst[i] += stepper.state()(lvl_1, lvl_1).real();
      }
    }
  });

  std::vector<std::vector<double>> curves(static_cast<size_t>(n_sites),
                                          std::vector<double>(nt, 0.0));
  for (int b = 0; b < n_blocks; ++b) {
    for (int s = 0; s < n_sites; ++s) {
      for (size_t i = 0; i < nt; ++i) {
        curves[static_cast<size_t>(s)][i] += partial[b][static_cast<size_t>(s) * nt + i];
      }
    }
  }
  for (auto& c : curves) {
    for (double& v : c) v /= static_cast<double>(per_site);
  }
  return curves;
}

// ---- two-pulse CZ protocol ---------------------------------------------------

namespace {

using Mat2 = Eigen::Matrix2cd;

// exp(-i H tau) for H = [[0, omega/2], [omega/2, -delta]] (real omega)
Mat2 pulse_propagator(double omega, double delta, double tau) {
  double c0 = -delta / 2.0;
  double cx = omega / 2.0;
  double cz = delta / 2.0;
  double norm = std::hypot(cx, cz);
  Mat2 u;
  double ct = std::cos(norm * tau), st = std::sin(norm * tau);
  complex<double> phase = std::exp(complex<double>(0.0, -c0 * tau));
  double nx = norm > 0.0 ? cx / norm : 0.0;
  double nz = norm > 0.0 ? cz / norm : 0.0;
  u(0, 0) = phase * complex<double>(ct, -st * nz);
  u(0, 1) = phase * complex<double>(0.0, -st * nx);
  u(1, 0) = phase * complex<double>(0.0, -st * nx);
  u(1, 1) = phase * complex<double>(ct, st * nz);
  return u;
}

// two pulses with a drive-phase jump xi between them, on a block with the
// given Rabi coupling; returns the full-sequence propagator
Mat2 two_pulse(double omega, double delta, double tau, double xi) {
  Mat2 u1 = pulse_propagator(omega, delta, tau);
  Mat2 p = Mat2::Zero();
  p(0, 0) = 1.0;
  p(1, 1) = std::exp(complex<double>(0.0, -xi));
  return p * u1 * p.adjoint() * u1;
}

double wrap_pi(double x) {
  double y = std::fmod(x + M_PI, 2.0 * M_PI);
  if (y < 0.0) y += 2.0 * M_PI;
  return y - M_PI;
}

}  // namespace

CzProtocol derive_protocol(double detuning_ratio) {
  if (!(detuning_ratio > 0.0)) {
    throw std::invalid_argument("derive_protocol: detuning ratio must be positive");
  }
  CzProtocol p;
  p.detuning_ratio = detuning_ratio;
  // |11> block: generalized Rabi sqrt(2 omega^2 + delta^2) completes one full
  // cycle per pulse, which fixes the pulse area
  p.omega_tau = 2.0 * M_PI / std::sqrt(2.0 + detuning_ratio * detuning_ratio);
  // |01> block: the phase jump must return the Bloch vector to |1> after the
  // second pulse; with u = exp(-iH tau) that reduces to e^{i xi} = -u00/u11
  Mat2 u = pulse_propagator(1.0, detuning_ratio, p.omega_tau);
  complex<double> ratio = -u(0, 0) / u(1, 1);
  double xi = std::arg(ratio);
  if (xi < 0.0) xi += 2.0 * M_PI;
  p.xi = xi;
  return p;
}

double protocol_phase_defect(const CzProtocol& protocol) {
  Mat2 u01 = two_pulse(1.0, protocol.detuning_ratio, protocol.omega_tau, protocol.xi);
  Mat2 u11 = two_pulse(std::sqrt(2.0), protocol.detuning_ratio, protocol.omega_tau,
                       protocol.xi);
  double phi01 = std::arg(u01(0, 0));
  double phi11 = std::arg(u11(0, 0));
  return wrap_pi(phi11 - 2.0 * phi01 - M_PI);
}

CzProtocol optimize_protocol() {
  // bracket the root of the phase defect in the detuning ratio
  double lo = 0.30, hi = 0.45;
  double flo = protocol_phase_defect(derive_protocol(lo));
  double fhi = protocol_phase_defect(derive_protocol(hi));
  if (flo * fhi > 0.0) {
    throw ConvergenceError("optimize_protocol: defect does not change sign in [0.30, 0.45]");
  }
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    double fmid = protocol_phase_defect(derive_protocol(mid));
    if (fmid == 0.0 || hi - lo < 1e-14) return derive_protocol(mid);
    if (flo * fmid <= 0.0) {
      hi = mid;
      fhi = fmid;
    } else {
      lo = mid;
      flo = fmid;
    }
  }
  return derive_protocol(0.5 * (lo + hi));
}

// ---- CZ gate ------------------------------------------------------------------

namespace {

// F(phi) = <t(phi)| rho |t(phi)> for the Bell target produced by CZ from |++>
double bell_overlap(const Matrix& rho, double phi) {
  const int idx[4] = {0, 1, n_levels, n_levels + 1};  // |00>,|01>,|10>,|11>
  complex<double> w[4];
  w[0] = 0.5;
  w[1] = 0.5 * std::exp(complex<double>(0.0, phi));
  w[2] = w[1];
  w[3] = -0.5 * std::exp(complex<double>(0.0, 2.0 * phi));
  complex<double> acc = 0.0;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      acc += std::conj(w[a]) * rho(idx[a], idx[b]) * w[b];
    }
  }
  return acc.real();
}

std::pair<double, double> bell_fidelity(const Matrix& rho) {
  const int n_grid = 2048;
  double best_phi = 0.0, best = -1.0;
  for (int i = 0; i < n_grid; ++i) {
    double phi = 2.0 * M_PI * i / n_grid;
    double f = bell_overlap(rho, phi);
    if (f > best) {
      best = f;
      best_phi = phi;
    }
  }
  double lo = best_phi - 2.0 * M_PI / n_grid;
  double hi = best_phi + 2.0 * M_PI / n_grid;
  for (int i = 0; i < 80; ++i) {
    double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (bell_overlap(rho, m1) < bell_overlap(rho, m2)) {
      lo = m1;
    } else {
      hi = m2;
    }
  }
  double phi = 0.5 * (lo + hi);
  return {bell_overlap(rho, phi), phi};
}

struct CzChannels {
  bool decay = false;
  bool thermal = false;
  bool crosstalk = false;
};

// One full protocol simulation; returns the trajectory-averaged final state.
Matrix run_cz(const CzConfig& config, const CzProtocol& protocol,
              const std::vector<Trajectory>& samples, const CzChannels& on,
              int n_traj, int n_workers, double* tau_out) {
  double omega_bar;
  double light_shift = 0.0;
  if (config.mode == DriveMode::five_level) {
    if (!(config.omega_r > 0.0) || !(config.omega_b > 0.0) || config.delta_big == 0.0) {
      throw std::invalid_argument("cz_gate: five-level drive needs omega_r, omega_b, delta_big");
    }
    omega_bar = config.omega_r * config.omega_b / (2.0 * config.delta_big);
    // second-order Stark shifts of |1> and |r> move the two-photon resonance
    light_shift = (config.omega_b * config.omega_b - config.omega_r * config.omega_r) /
                  (4.0 * config.delta_big);
  } else {
    if (!(config.omega_bar > 0.0)) {
      throw std::invalid_argument("cz_gate: omega_bar must be positive");
    }
    omega_bar = config.omega_bar;
  }
  const double tau = protocol.omega_tau / omega_bar;
  if (tau_out) *tau_out = tau;
  const double delta_protocol = protocol.detuning_ratio * omega_bar;
  double delta_static = delta_protocol + config.delta_small;
  if (config.mode == DriveMode::five_level && config.compensate_light_shift) {
    delta_static += light_shift;
  }

  const int runs = on.thermal ? n_traj : 1;
  std::array<double, 2> site_amp = {1.0, 1.0};
  if (on.crosstalk) site_amp = config.field_asymmetry;
  const std::array<std::array<double, 3>, 2> site = {
      {{0.0, -config.separation_um / 2.0, 0.0},
       {0.0, config.separation_um / 2.0, 0.0}}};

  constexpr int block = 4;
  const int n_blocks = (runs + block - 1) / block;
  std::vector<Matrix> partial(n_blocks, Matrix::Zero(two_atom_dim, two_atom_dim));

  detail::run_blocks(runs, block, n_workers, [&](int first, int last, int bidx) {
    for (int traj = first; traj < last; ++traj) {
      std::array<Trajectory, 2> tr;
      if (on.thermal) {
        tr = {samples[static_cast<size_t>(2 * traj)],
              samples[static_cast<size_t>(2 * traj + 1)]};
      }

      auto drive_at = [&, traj](double t_s, double phase) {
        TwoAtomDrive d;
        double t_us = t_s * 1e6;
        std::array<GateParams*, 2> par = {&d.atom1, &d.atom2};
        std::array<std::array<double, 3>, 2> pos;
        for (int i = 0; i < 2; ++i) {
          auto disp = tr[static_cast<size_t>(i)].position_um(t_us);
          pos[i] = {site[static_cast<size_t>(i)][0] + disp[0],
                    site[static_cast<size_t>(i)][1] + disp[1],
                    site[static_cast<size_t>(i)][2] + disp[2]};
          complex<double> address =
              config.addressing ? config.addressing(pos[i][0], pos[i][1], pos[i][2])
                                : complex<double>(1.0, 0.0);
          complex<double> amp = site_amp[static_cast<size_t>(i)] * address *
                                std::exp(complex<double>(0.0, phase));
          double doppler =
              config.k_eff_rad_um * tr[static_cast<size_t>(i)].v0_um_us[2] * 1e6;
          double noise = config.phase_noise ? config.phase_noise(t_s) : 0.0;
          GateParams& p = *par[i];
          if (config.mode == DriveMode::five_level) {
            p.omega_r = config.omega_r;
            p.omega_b = config.omega_b * amp;
            p.delta_big = config.delta_big;
          } else {
            p.omega_two_photon = config.omega_bar * amp;
          }
          p.delta_small = delta_static + doppler + noise;
          if (on.decay) {
            p.gamma_p = config.gamma_p;
            p.gamma_r = config.gamma_r;
          }
          p.branch_to_0 = config.branch_to_0;
          p.branch_to_1 = config.branch_to_1;
          p.branch_to_loss = config.branch_to_loss;
          p.printed_jump_form = config.printed_jump_form;
        }
        if (config.c6_rad_s_um6 != 0.0) {
          std::array<double, 3> sep = {pos[0][0] - pos[1][0], pos[0][1] - pos[1][1],
                                       pos[0][2] - pos[1][2]};
          double d2 = dot(sep, sep);
          d.v = config.c6_rad_s_um6 / (d2 * d2 * d2);
        } else {
          d.v = config.v;
        }
        return d;
      };

      PairRhs rhs;
      {
        GateParams proto;
        if (on.decay) {
          proto.gamma_p = config.gamma_p;
          proto.gamma_r = config.gamma_r;
        }
        proto.branch_to_0 = config.branch_to_0;
        proto.branch_to_1 = config.branch_to_1;
        proto.branch_to_loss = config.branch_to_loss;
        proto.printed_jump_form = config.printed_jump_form;
        rhs.set_jumps(proto, proto);
      }

      Vector psi = Vector::Zero(two_atom_dim);
      psi[0] = 0.5;
      psi[1] = 0.5;
      psi[n_levels] = 0.5;
      psi[n_levels + 1] = 0.5;
      Matrix rho = psi * psi.adjoint();

      detail::Dopri5<PairRhs&> stepper(rhs, config.integrator);
      rhs.drive = [&](double t) { return drive_at(t, 0.0); };
      stepper.start(0.0, rho);
      stepper.advance_to(tau, [&](double) { check_trace(stepper.state()); });
      Matrix mid = stepper.state();
      rhs.drive = [&](double t) { return drive_at(t, protocol.xi); };
      stepper.start(tau, mid);
      stepper.advance_to(2.0 * tau, [&](double) { check_trace(stepper.state()); });
      check_positivity(stepper.state(), 1e-6);
      partial[bidx] += stepper.state();
    }
  });

  Matrix avg = Matrix::Zero(two_atom_dim, two_atom_dim);
  for (const Matrix& p : partial) avg += p;
  return avg / static_cast<double>(runs);
}

}  // namespace

CzResult cz_gate(const CzConfig& config, const CzProtocol& protocol, int n_traj,
                 std::uint64_t seed, int n_workers) {
  if (n_traj <= 0) throw std::invalid_argument("cz_gate: n_traj must be positive");
  CzChannels active;
  active.decay = config.gamma_p > 0.0 || config.gamma_r > 0.0;
  active.thermal = config.thermal && config.trap.temperature_uk > 0.0;
  active.crosstalk =
      config.field_asymmetry[0] != 1.0 || config.field_asymmetry[1] != 1.0;

  std::vector<Trajectory> samples;
  if (active.thermal) {
    samples = sample_thermal(config.trap, ThermalMode::harmonic, 2 * n_traj, seed);
  }

  CzResult result;
  Matrix rho = run_cz(config, protocol, samples, active, n_traj, n_workers,
                      &result.tau_s);
  auto [fid, phi] = bell_fidelity(rho);
  result.fidelity = fid;
  result.best_phi = phi;

  // budget: toggle each active channel off, rerun with the same thermal
  // samples, and charge the fidelity recovery to that channel
  auto rerun = [&](CzChannels channels) {
    Matrix r = run_cz(config, protocol, samples, channels, n_traj, n_workers, nullptr);
    return bell_fidelity(r).first;
  };
  CzChannels none;
  bool any = false;
  if (active.decay) {
    CzChannels c = active;
    c.decay = false;
    result.budget["decay"] = rerun(c) - fid;
    any = true;
  }
  if (active.thermal) {
    CzChannels c = active;
    c.thermal = false;
    result.budget["thermal"] = rerun(c) - fid;
    any = true;
  }
  if (active.crosstalk) {
    CzChannels c = active;
    c.crosstalk = false;
    result.budget["crosstalk"] = rerun(c) - fid;
    any = true;
  }
  if (any) result.budget["residual"] = 1.0 - rerun(none);
  return result;
}

}  // namespace beamkit::qsim
