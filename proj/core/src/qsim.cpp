#include "beamkit/qsim.hpp"

#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "beamkit/errors.hpp"
#include "beamkit/rng.hpp"
#include "dopri5.hpp"

namespace beamkit::qsim {

using std::complex;
namespace {
constexpr complex<double> kI(0.0, 1.0);
}

Matrix ketbra(int i, int j) {
  if (i < 0 || j < 0 || i >= n_levels || j >= n_levels) {
    throw std::out_of_range("ketbra: level index outside the space");
  }
  Matrix m = Matrix::Zero(n_levels, n_levels);
  m(i, j) = 1.0;
  return m;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Matrix lift_atom1(const Matrix& op) {
  return kron(op, Matrix::Identity(op.rows(), op.cols()));
}

Matrix lift_atom2(const Matrix& op) {
  return kron(Matrix::Identity(op.rows(), op.cols()), op);
}

Matrix build_hamiltonian_single(const GateParams& p) {
  Matrix h = Matrix::Zero(n_levels, n_levels);
  h(lvl_1, lvl_p) = p.omega_r / 2.0;
  h(lvl_p, lvl_1) = std::conj(p.omega_r) / 2.0;
  h(lvl_p, lvl_r) = p.omega_b / 2.0;
  h(lvl_r, lvl_p) = std::conj(p.omega_b) / 2.0;
  h(lvl_1, lvl_r) = p.omega_two_photon / 2.0;
  h(lvl_r, lvl_1) = std::conj(p.omega_two_photon) / 2.0;
  h(lvl_p, lvl_p) = -p.delta_big;
  h(lvl_r, lvl_r) = -p.delta_small;
  return h;
}

Matrix build_hamiltonian(const GateParams& p1, const GateParams& p2, double v) {
  Matrix h = lift_atom1(build_hamiltonian_single(p1)) +
             lift_atom2(build_hamiltonian_single(p2));
  int rr = lvl_r * n_levels + lvl_r;
  h(rr, rr) += v;
  return h;
}

std::vector<Matrix> jump_operators_single(const GateParams& p) {
  if (p.branch_to_0 < 0.0 || p.branch_to_1 < 0.0 || p.branch_to_loss < 0.0 ||
      std::abs(p.branch_to_0 + p.branch_to_1 + p.branch_to_loss - 1.0) > 1e-12) {
    throw std::invalid_argument("jump_operators: branching ratios must be >= 0 and sum to 1");
  }
  if (p.gamma_p < 0.0 || p.gamma_r < 0.0) {
    throw std::invalid_argument("jump_operators: decay rates must be >= 0");
  }
  std::vector<Matrix> jumps;
  auto add = [&](double rate, int to, int from) {
    if (rate > 0.0) jumps.push_back(std::sqrt(rate) * ketbra(to, from));
  };
  // The branch that refills the qubit ground pair is routed to |1> when the
  // printed form is requested, to |0> otherwise; the populations it produces
  // differ but the total decay out of |p> does not.
  add(p.gamma_p * p.branch_to_0, p.printed_jump_form ? lvl_1 : lvl_0, lvl_p);
  add(p.gamma_p * p.branch_to_1, lvl_1, lvl_p);
  add(p.gamma_p * p.branch_to_loss, lvl_loss, lvl_p);
  add(p.gamma_r, lvl_loss, lvl_r);
  return jumps;
}

std::vector<Matrix> jump_operators(const GateParams& p1, const GateParams& p2) {
  std::vector<Matrix> jumps;
  for (const Matrix& j : jump_operators_single(p1)) jumps.push_back(lift_atom1(j));
  for (const Matrix& j : jump_operators_single(p2)) jumps.push_back(lift_atom2(j));
  return jumps;
}

namespace {

void check_times(const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("integrate: empty time grid");
  for (size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw std::invalid_argument("integrate: times must be strictly increasing");
    }
  }
}

// Dense Lindblad right-hand side.
struct MasterRhs {
  const HamiltonianFn* h;
  const std::vector<Matrix>* jumps;
  const std::vector<Matrix>* jdags;
  Matrix k;  // sum of J^dag J
  mutable Matrix hh, scratch;

  void operator()(double t, const Matrix& y, Matrix& out) const {
    hh = (*h)(t);
    out.noalias() = hh * y;
    out.noalias() -= y * hh;
    out *= -kI;
    scratch.noalias() = k * y;
    scratch.noalias() += y * k;
    out -= 0.5 * scratch;
    for (size_t i = 0; i < jumps->size(); ++i) {
      scratch.noalias() = (*jumps)[i] * y;
      out.noalias() += scratch * (*jdags)[i];
    }
  }
};

void check_density(const Matrix& rho, double neg_tol) {
  double tr = rho.trace().real();
  if (std::abs(rho.trace().imag()) > 1e-9 || std::abs(tr - 1.0) > 1e-8) {
    throw StateError("integrate_master: trace drifted from 1 beyond 1e-8");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es((rho + rho.adjoint()) / 2.0);
  if (es.eigenvalues().minCoeff() < -neg_tol) {
    throw StateError("integrate_master: state developed negative population");
  }
}

}  // namespace

std::vector<Matrix> integrate_master(const Matrix& rho0, const HamiltonianFn& h,
                                     const std::vector<Matrix>& jumps,
                                     const std::vector<double>& times,
                                     const IntegratorOptions& opt) {
  check_times(times);
  if (rho0.rows() != rho0.cols() || rho0.rows() == 0) {
    throw std::invalid_argument("integrate_master: state must be a square matrix");
  }
  if (std::abs(rho0.trace().real() - 1.0) > 1e-8 ||
      (rho0 - rho0.adjoint()).cwiseAbs().maxCoeff() > 1e-9) {
    throw std::invalid_argument("integrate_master: initial state is not a density matrix");
  }
  const Eigen::Index dim = rho0.rows();
  std::vector<Matrix> jdags;
  Matrix k = Matrix::Zero(dim, dim);
  for (const Matrix& j : jumps) {
    if (j.rows() != dim || j.cols() != dim) {
      throw std::invalid_argument("integrate_master: jump operator dimension mismatch");
    }
    jdags.push_back(j.adjoint());
    k.noalias() += jdags.back() * j;
  }

  MasterRhs rhs{&h, &jumps, &jdags, std::move(k), {}, {}};
  detail::Dopri5<MasterRhs&> stepper(rhs, opt);
  stepper.start(times.front(), rho0);

  std::vector<Matrix> out;
  out.reserve(times.size());
  out.push_back(rho0);
  for (size_t i = 1; i < times.size(); ++i) {
    stepper.advance_to(times[i], [&](double) {
      double tr = stepper.state().trace().real();
      if (std::abs(tr - 1.0) > 1e-8) {
        throw StateError("integrate_master: trace drifted from 1 beyond 1e-8");
      }
    });
    check_density(stepper.state(), 1e-6);
    out.push_back(stepper.state());
  }
  return out;
}

namespace detail {

void run_blocks(int n_items, int block_size, int n_workers,
                const std::function<void(int, int, int)>& work) {
  if (n_items <= 0) return;
  const int n_blocks = (n_items + block_size - 1) / block_size;
  if (n_workers <= 0) {
    n_workers = static_cast<int>(std::thread::hardware_concurrency());
    if (n_workers <= 0) n_workers = 1;
  }
  n_workers = std::min(n_workers, n_blocks);
  if (n_workers == 1) {
    for (int b = 0; b < n_blocks; ++b) {
      work(b * block_size, std::min(n_items, (b + 1) * block_size), b);
    }
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mx;
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int b = next.fetch_add(1);
        if (b >= n_blocks) return;
        try {
          work(b * block_size, std::min(n_items, (b + 1) * block_size), b);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mx);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

namespace {

// Non-Hermitian effective evolution of one unnormalized trajectory state.
struct McwfRhs {
  const HamiltonianFn* h;
  const Matrix* khalf;  // (1/2) sum J^dag J
  mutable Matrix hh;

  void operator()(double t, const Matrix& y, Matrix& out) const {
    // dpsi/dt = -i (H - i K/2) psi, so the norm decays at rate <K>.
    hh = (*h)(t);
    out.noalias() = hh * y;
    out *= -kI;
    out.noalias() -= (*khalf) * y;
  }
};

}  // namespace

std::vector<Matrix> mcwf_evolve(const Vector& psi0, const HamiltonianFn& h,
                                const std::vector<Matrix>& jumps,
                                const std::vector<double>& times, int n_traj,
                                std::uint64_t seed, const IntegratorOptions& opt,
                                int n_workers) {
  check_times(times);
  if (n_traj <= 0) throw std::invalid_argument("mcwf_evolve: n_traj must be positive");
  const Eigen::Index dim = psi0.size();
  if (dim == 0) throw std::invalid_argument("mcwf_evolve: empty state");
  if (std::abs(psi0.squaredNorm() - 1.0) > 1e-8) {
    throw std::invalid_argument("mcwf_evolve: initial state must be normalized");
  }
  std::vector<Matrix> jdags;
  Matrix khalf = Matrix::Zero(dim, dim);
  for (const Matrix& j : jumps) {
    if (j.rows() != dim || j.cols() != dim) {
      throw std::invalid_argument("mcwf_evolve: jump operator dimension mismatch");
    }
    jdags.push_back(j.adjoint());
    khalf.noalias() += 0.5 * jdags.back() * j;
  }
  const bool has_jumps = !jumps.empty();
  const size_t nt = times.size();

  constexpr int block = 16;
  const int n_blocks = (n_traj + block - 1) / block;
  std::vector<std::vector<Matrix>> partial(
      n_blocks, std::vector<Matrix>(nt, Matrix::Zero(dim, dim)));

  detail::run_blocks(n_traj, block, n_workers, [&](int first, int last, int bidx) {
    McwfRhs rhs{&h, &khalf, {}};
    Matrix psi0m = psi0;
    for (int traj = first; traj < last; ++traj) {
      rng::Stream stream(seed, static_cast<std::uint64_t>(traj));
      detail::Dopri5<McwfRhs&> stepper(rhs, opt);
      stepper.start(times.front(), psi0m);
      double threshold = has_jumps ? stream.uniform_positive() : 0.0;
      Matrix pre_state;
      auto record = [&](size_t idx) {
        const Matrix& psi = stepper.state();
        double n2 = psi.squaredNorm();
        partial[bidx][idx].noalias() += psi * psi.adjoint() / n2;
      };
      record(0);
      for (size_t i = 1; i < nt; ++i) {
        while (stepper.time() < times[i]) {
          double t_pre = stepper.time();
          pre_state = stepper.state();
          stepper.step_toward(times[i], [](double) {});
          if (has_jumps && stepper.state().squaredNorm() < threshold) {
            // Norm^2 decreases monotonically, so the crossing is bracketed by
            // this step; locate it by bisection on re-integrations from the
            // stored pre-step state.
            double lo = t_pre, hi = stepper.time();
            Matrix at_hi = stepper.state();
            detail::Dopri5<McwfRhs&> probe(rhs, opt);
            const double width_tol = 1e-6 * (hi - lo) + 1e-18;
            while (hi - lo > width_tol) {
              double mid = 0.5 * (lo + hi);
              probe.start(t_pre, pre_state);
              probe.advance_to(mid);
              if (probe.state().squaredNorm() < threshold) {
                hi = mid;
                at_hi = probe.state();
              } else {
                lo = mid;
              }
            }
            Matrix at_jump = at_hi;
            // Pick the channel by its instantaneous weight and collapse.
            double total = 0.0;
            std::vector<double> w(jumps.size());
            for (size_t kk = 0; kk < jumps.size(); ++kk) {
              w[kk] = (jumps[kk] * at_jump).squaredNorm();
              total += w[kk];
            }
            double u = stream.uniform() * total;
            size_t pick = 0;
            double acc = 0.0;
            for (size_t kk = 0; kk < jumps.size(); ++kk) {
              acc += w[kk];
              if (u <= acc || kk + 1 == jumps.size()) {
                pick = kk;
                break;
              }
            }
            Matrix collapsed = jumps[pick] * at_jump;
            collapsed /= std::sqrt(collapsed.squaredNorm());
            stepper.start(hi, collapsed);
            threshold = stream.uniform_positive();
          }
        }
        record(i);
      }
    }
  });

  std::vector<Matrix> out(nt, Matrix::Zero(dim, dim));
  for (int b = 0; b < n_blocks; ++b) {
    for (size_t i = 0; i < nt; ++i) out[i] += partial[b][i];
  }
  for (size_t i = 0; i < nt; ++i) out[i] /= static_cast<double>(n_traj);
  return out;
}

}  // namespace beamkit::qsim
