#pragma once

// Dormand-Prince 5(4) embedded pair over complex-matrix states, shared by
// the dense master-equation integrator, the structured gate-simulation
// right-hand sides, and the MCWF driver.  Not installed.

#include <algorithm>
#include <cmath>
#include <limits>

#include "beamkit/errors.hpp"
#include "beamkit/qsim.hpp"

namespace beamkit::qsim::detail {

// Rhs: void(double t, const Matrix& y, Matrix& dydt)
template <typename Rhs>
class Dopri5 {
 public:
  Dopri5(Rhs rhs, const IntegratorOptions& opt)
      : rhs_(std::forward<Rhs>(rhs)), opt_(opt) {}

  void start(double t0, const Matrix& y0) {
    t_ = t0;
    y_ = y0;
    rhs_(t_, y_, k1_);
    h_ = 0.0;
  }

  double time() const { return t_; }
  const Matrix& state() const { return y_; }

  // One accepted step, clamped to not overshoot t_limit.  Returns false once
  // t_limit is reached before stepping.  on_accept(t) runs after the step.
  template <typename Cb>
  bool step_toward(double t_limit, Cb&& on_accept) {
    if (t_ >= t_limit) return false;
    if (h_ == 0.0) h_ = initial_step(t_limit);
    bool just_rejected = false;
    for (int attempt = 0; attempt < 200; ++attempt) {
      double h = std::min(h_, t_limit - t_);
      if (opt_.max_step > 0.0) h = std::min(h, opt_.max_step);
      if (!(h > std::abs(t_) * 1e-14 + 1e-300)) {
        throw ConvergenceError("integrate: step size underflow");
      }
      double err = try_step(h);
      if (std::isnan(err) || err > 1.0) {
        h_ = h * std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10), -0.2));
        if (std::isnan(err)) h_ = h * 0.2;
        just_rejected = true;
        continue;
      }
      t_ += h;
      y_.swap(y5_);
      k1_.swap(k7_);  // first-same-as-last
      double grow = just_rejected ? 1.0 : 5.0;
      h_ = h * std::min(grow, std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10), -0.2)));
      on_accept(t_);
      return true;
    }
    throw ConvergenceError("integrate: repeated step rejection");
  }

  template <typename Cb>
  void advance_to(double t_target, Cb&& on_accept) {
    while (step_toward(t_target, on_accept)) {
    }
  }

  void advance_to(double t_target) {
    advance_to(t_target, [](double) {});
  }

 private:
  // Crude first guess; the controller corrects a bad one within a few steps.
  double initial_step(double t_limit) const {
    double ynorm = std::sqrt(y_.cwiseAbs2().sum() / y_.size());
    double fnorm = std::sqrt(k1_.cwiseAbs2().sum() / k1_.size());
    double scale = opt_.abs_tol + opt_.rel_tol * ynorm;
    double h = 0.01 * (ynorm + scale) / (fnorm + 1e-30);
    return std::min({h, t_limit - t_, opt_.max_step > 0.0
                                          ? opt_.max_step
                                          : std::numeric_limits<double>::infinity()});
  }

  // Returns the scaled error of the trial step; fills y5_ and k7_.
  double try_step(double h) {
    const double t = t_;
    tmp_ = y_ + (h * (1.0 / 5.0)) * k1_;
    rhs_(t + h / 5.0, tmp_, k2_);
    tmp_ = y_ + (h * (3.0 / 40.0)) * k1_ + (h * (9.0 / 40.0)) * k2_;
    rhs_(t + 3.0 * h / 10.0, tmp_, k3_);
    tmp_ = y_ + (h * (44.0 / 45.0)) * k1_ + (h * (-56.0 / 15.0)) * k2_ +
           (h * (32.0 / 9.0)) * k3_;
    rhs_(t + 4.0 * h / 5.0, tmp_, k4_);
    tmp_ = y_ + (h * (19372.0 / 6561.0)) * k1_ + (h * (-25360.0 / 2187.0)) * k2_ +
           (h * (64448.0 / 6561.0)) * k3_ + (h * (-212.0 / 729.0)) * k4_;
    rhs_(t + 8.0 * h / 9.0, tmp_, k5_);
    tmp_ = y_ + (h * (9017.0 / 3168.0)) * k1_ + (h * (-355.0 / 33.0)) * k2_ +
           (h * (46732.0 / 5247.0)) * k3_ + (h * (49.0 / 176.0)) * k4_ +
           (h * (-5103.0 / 18656.0)) * k5_;
    rhs_(t + h, tmp_, k6_);
    y5_ = y_ + (h * (35.0 / 384.0)) * k1_ + (h * (500.0 / 1113.0)) * k3_ +
          (h * (125.0 / 192.0)) * k4_ + (h * (-2187.0 / 6784.0)) * k5_ +
          (h * (11.0 / 84.0)) * k6_;
    rhs_(t + h, y5_, k7_);
    tmp_ = (h * (71.0 / 57600.0)) * k1_ + (h * (-71.0 / 16695.0)) * k3_ +
           (h * (71.0 / 1920.0)) * k4_ + (h * (-17253.0 / 339200.0)) * k5_ +
           (h * (22.0 / 525.0)) * k6_ + (h * (-1.0 / 40.0)) * k7_;

    double acc = 0.0;
    const auto* e = tmp_.data();
    const auto* y0 = y_.data();
    const auto* y1 = y5_.data();
    const Eigen::Index n = tmp_.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      double sc = opt_.abs_tol +
                  opt_.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
      double r = std::abs(e[i]) / sc;
      acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(n));
  }

  Rhs rhs_;
  IntegratorOptions opt_;
  double t_ = 0.0;
  double h_ = 0.0;
  Matrix y_, y5_, tmp_;
  Matrix k1_, k2_, k3_, k4_, k5_, k6_, k7_;
};

// Runs blocks of a trajectory loop on a pool of threads.  Work is split into
// fixed-size blocks regardless of the worker count and each block's results
// are combined in index order, so the reduction is bit-deterministic.
void run_blocks(int n_items, int block_size, int n_workers,
                const std::function<void(int first, int last, int block_index)>& work);

}  // namespace beamkit::qsim::detail
