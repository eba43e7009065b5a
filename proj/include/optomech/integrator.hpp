#pragma once

// Embedded Dormand-Prince 5(4) pair with PI step-size control, templated on
// any Eigen dense complex type (state vectors or density matrices).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>

#include <Eigen/Core>

#include "optomech/error.hpp"

namespace optomech {

struct IntegratorOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double h_initial = 0.0;  ///< 0 picks a step from the first derivative
  double h_max = std::numeric_limits<double>::infinity();
  double h_min = 1e-14;
  std::size_t max_steps = 50'000'000;
};

struct IntegratorStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_calls = 0;
  double last_step = 0.0;
};

template <class State>
class DormandPrince {
 public:
  /// dydt = f(t, y), written into the output argument.
  using Rhs = std::function<void(double, const State&, State&)>;
  /// Called after every accepted step. It may change y only at round-off
  /// level (the FSAL derivative is kept).
  using StepHook = std::function<void(double, State&)>;

  DormandPrince(Rhs rhs, IntegratorOptions opts) : rhs_(std::move(rhs)), opts_(opts) {}

  void set_step_hook(StepHook hook) { hook_ = std::move(hook); }
  const IntegratorStats& stats() const { return stats_; }
  const IntegratorOptions& options() const { return opts_; }

  /// Integrate y from t to t_end, landing exactly on t_end.
  void advance(double& t, State& y, double t_end) {
    if (t_end <= t) return;
    if (!have_k1_) {
      k1_.resizeLike(y);
      eval(t, y, k1_);
      have_k1_ = true;
      if (h_ <= 0.0) h_ = opts_.h_initial > 0.0 ? opts_.h_initial : initial_step(t, y);
    }
    while (t < t_end) {
      if (stats_.accepted + stats_.rejected >= opts_.max_steps) {
        throw Error(ErrorKind::IntegratorAccuracy, "step budget exhausted at t=" + std::to_string(t));
      }
      bool last = false;
      double h = std::min(h_, opts_.h_max);
      if (t + h >= t_end || t + 1.01 * h >= t_end) {
        h = t_end - t;
        last = true;
      }
      const double err = attempt(t, y, h);
      if (err <= 1.0) {
        // PI controller (Hairer's DOPRI5 constants)
        const double fac = std::clamp(std::pow(err, kExpo1) * std::pow(err_old_, -kBeta) / kSafety, 1.0 / 10.0, 5.0);
        const double h_next = h / std::max(fac, 1e-12);
        err_old_ = std::max(err, 1e-4);
        t = last ? t_end : t + h;
        y.swap(y_new_);
        k1_.swap(k7_);  // FSAL
        ++stats_.accepted;
        stats_.last_step = h;
        if (hook_) hook_(t, y);
        // a shortened landing step must not shrink the controller state
        h_ = last ? std::max(h_, h_next) : h_next;
      } else {
        ++stats_.rejected;
        h_ = h / std::min(5.0, std::pow(err, kExpo1) / kSafety);
        if (h_ < opts_.h_min) {
          throw Error(ErrorKind::IntegratorAccuracy, "step size underflow at t=" + std::to_string(t));
        }
      }
    }
  }

  /// Forget FSAL state (the RHS or state changed externally).
  void reset() {
    have_k1_ = false;
    err_old_ = 1e-4;
  }

 private:
  static constexpr double kBeta = 0.04;
  static constexpr double kExpo1 = 0.2 - kBeta * 0.75;
  static constexpr double kSafety = 0.9;

  void eval(double t, const State& y, State& out) {
    ++stats_.rhs_calls;
    rhs_(t, y, out);
  }

  double error_norm(const State& err, const State& y0, const State& y1) const {
    const auto scale = opts_.atol + opts_.rtol * y0.array().abs2().max(y1.array().abs2()).sqrt();
    const double sum = (err.array().abs2() / scale.square()).sum();
    return std::sqrt(sum / static_cast<double>(err.size()));
  }

  double initial_step(double t, const State& y) {
    const Eigen::ArrayXXd sc = opts_.atol + opts_.rtol * y.array().abs2().sqrt();
    const double d0 = std::sqrt((y.array().abs2() / sc.square()).sum() / y.size());
    const double d1 = std::sqrt((k1_.array().abs2() / sc.square()).sum() / y.size());
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, opts_.h_max);
    State y1 = y + h0 * k1_;
    State f1;
    f1.resizeLike(y);
    eval(t + h0, y1, f1);
    const double d2 = std::sqrt(((f1 - k1_).array().abs2() / sc.square()).sum() / y.size()) / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
    return std::min({100.0 * h0, h1, opts_.h_max});
  }

  double attempt(double t, const State& y, double h) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                            a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;

    tmp_.noalias() = y + (h * a21) * k1_;
    k2_.resizeLike(y);
    eval(t + c2 * h, tmp_, k2_);
    tmp_.noalias() = y + h * (a31 * k1_ + a32 * k2_);
    k3_.resizeLike(y);
    eval(t + c3 * h, tmp_, k3_);
    tmp_.noalias() = y + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
    k4_.resizeLike(y);
    eval(t + c4 * h, tmp_, k4_);
    tmp_.noalias() = y + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
    k5_.resizeLike(y);
    eval(t + c5 * h, tmp_, k5_);
    tmp_.noalias() = y + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    k6_.resizeLike(y);
    eval(t + h, tmp_, k6_);
    y_new_.noalias() = y + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
    k7_.resizeLike(y);
    eval(t + h, y_new_, k7_);
    tmp_.noalias() = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
    const double err = error_norm(tmp_, y, y_new_);
    return std::isfinite(err) ? err : 1e10;
  }

  Rhs rhs_;
  StepHook hook_;
  IntegratorOptions opts_;
  IntegratorStats stats_;
  bool have_k1_ = false;
  double h_ = 0.0;
  double err_old_ = 1e-4;
  State k1_, k2_, k3_, k4_, k5_, k6_, k7_, tmp_, y_new_;
};

}  // namespace optomech
