#pragma once

// Schroedinger and Lindblad time evolution, steady states by time marching,
// and the check of the static effective Hamiltonian against the rotating
// interaction-picture Hamiltonian it approximates.

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "optomech/hilbert.hpp"
#include "optomech/integrator.hpp"
#include "optomech/model.hpp"

namespace optomech {

struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t sample_count = 2;

  /// t1 >= t0, sample_count >= 1; a zero-length grid has one sample.
  void validate() const;
  std::vector<double> times() const;
};

/// H(t) = static + sum_k (A_k e^{i w_k t} + A_k^dag e^{-i w_k t}).
struct TimeDependentHamiltonian {
  struct Term {
    QOperator op;
    double frequency = 0.0;
  };

  QOperator static_part;
  std::vector<Term> oscillating;

  QOperator at(double t) const;
  const CompositeSpace& space() const { return static_part.space(); }
};

/// Named scalar evaluated on every grid sample.
struct Observable {
  std::string name;
  std::function<cplx(const QState&)> eval;
};

struct EvolveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double h_max = 0.0;  ///< 0 = unbounded
  /// Keep every n-th grid sample as a stored snapshot (0 keeps none except
  /// the final state). Stored snapshots are certified for positivity.
  std::size_t snapshot_stride = 1;
  bool check_positivity = true;
};

struct EvolutionDiagnostics {
  double max_norm_drift = 0.0;   ///< |norm-1| (vector) or |Tr-1| (density)
  double max_asymmetry = 0.0;    ///< largest symmetrization correction
  double min_eigenvalue = 1.0;   ///< over certified snapshots (1 when none)
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_calls = 0;
  std::vector<std::string> warnings;
};

struct EvolutionResult {
  std::vector<double> times;
  std::vector<double> snapshot_times;
  std::vector<QState> states;
  std::vector<std::pair<std::string, std::vector<cplx>>> observables;
  EvolutionDiagnostics diagnostics;

  const std::vector<cplx>& series(const std::string& name) const;
  std::vector<double> real_series(const std::string& name) const;
};

inline constexpr double kNormDriftTarget = 1e-7;
inline constexpr double kNormDriftLimit = 1e-5;
inline constexpr double kPositivityWarn = -1e-5;

EvolutionResult evolve_vector(const QOperator& h, const QState& psi0, const TimeGrid& grid,
                              const std::vector<Observable>& observers = {}, const EvolveOptions& opts = {});
EvolutionResult evolve_vector(const TimeDependentHamiltonian& h, const QState& psi0, const TimeGrid& grid,
                              const std::vector<Observable>& observers = {}, const EvolveOptions& opts = {});

/// Right-hand side of the master equation, applied without forming the
/// superoperator: -i[H, rho] + sum_k Gamma_k (O rho O^dag - {O^dag O, rho}/2).
class Liouvillian {
 public:
  using ColSparse = Eigen::SparseMatrix<cplx, Eigen::ColMajor>;

  Liouvillian(const QOperator& h, const DissipatorSpec& dissipators);

  Index dim() const { return dim_; }
  /// General input (need not be Hermitian).
  void apply(const DenseMatrix& rho, DenseMatrix& out) const;
  /// Faster path valid for Hermitian rho; output is Hermitian to rounding.
  void apply_hermitian(const DenseMatrix& rho, DenseMatrix& out) const;
  /// Smallest strictly positive channel rate (0 when there is none).
  double min_rate() const { return min_rate_; }
  bool dissipative() const { return !jumps_.empty(); }

  /// H - (i/2) sum Gamma O^dag O
  const ColSparse& effective_hamiltonian() const { return h_eff_; }
  /// sqrt(Gamma) O for every channel with nonzero rate.
  const std::vector<SparseMatrix>& jumps() const { return jumps_; }

 private:
  // Jump with at most one entry per row:
  // (J rho J^dag)(i, k) = w_i conj(w_k) rho(s_i, s_k).
  struct Monomial {
    std::vector<Index> row, src;
    std::vector<cplx> w;
    std::vector<double> real_w;  // filled when every weight is real
  };

  void add_jumps(const DenseMatrix& rho, DenseMatrix& out) const;
  // out = -i H_eff x, column by column from CSR storage
  void coherent(const DenseMatrix& x, DenseMatrix& out) const;

  Index dim_;
  ColSparse h_eff_;
  std::vector<Index> csr_ptr_, csr_col_;
  std::vector<cplx> csr_val_;  // -i H_eff
  std::vector<SparseMatrix> jumps_;
  std::vector<Monomial> monomials_;
  std::vector<std::size_t> general_;  // indices into jumps_ without monomial form
  double min_rate_ = 0.0;
  mutable DenseMatrix scratch_, scratch2_;
};

DenseMatrix liouvillian_apply(const QOperator& h, const DissipatorSpec& dissipators, const DenseMatrix& rho);

EvolutionResult evolve_density(const QOperator& h, const DissipatorSpec& dissipators, const QState& rho0,
                               const TimeGrid& grid, const std::vector<Observable>& observers = {},
                               EvolveOptions opts = {.rtol = 1e-7, .atol = 1e-10});

enum class SteadyStateMethod {
  March,   ///< explicit time marching until the criteria hold
  Krylov,  ///< restarted GMRES on L(rho) = 0, then an optional marching check
};

struct SteadyStateCriteria {
  SteadyStateMethod method = SteadyStateMethod::Krylov;
  double residual_tol = 1e-8;     ///< max-norm of d(rho)/dt
  double observable_tol = 1e-6;   ///< allowed change over the trailing window
  /// Trailing window length. March: unset means 50 / (smallest rate).
  /// Krylov: length of the marching check after the solve; unset skips it.
  std::optional<double> window;
  double max_time = 1e5;
  /// Residual is sampled every `check_interval` time units when marching.
  double check_interval = 1.0;
  double rtol = 1e-7;
  double atol = 1e-11;
  int krylov_dim = 30;
  int max_restarts = 400;
};

struct SteadyStateResult {
  QState state;
  double residual = 0.0;
  double time = 0.0;
  std::vector<std::pair<double, double>> residual_trajectory;
  std::vector<std::pair<std::string, cplx>> observables;
  EvolutionDiagnostics diagnostics;
  std::size_t krylov_iterations = 0;
};

/// Convergence failure carrying the residual trajectory.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<std::pair<double, double>> trajectory)
      : Error(ErrorKind::Convergence, what), trajectory_(std::move(trajectory)) {}
  const std::vector<std::pair<double, double>>& trajectory() const { return trajectory_; }

 private:
  std::vector<std::pair<double, double>> trajectory_;
};

SteadyStateResult steady_state(const QOperator& h, const DissipatorSpec& dissipators, const QState& rho_guess,
                               const SteadyStateCriteria& criteria = {},
                               const std::vector<Observable>& observers = {});

/// Base decay rate used for the default trailing window: the smallest
/// positive gamma21, gamma10, kappa_a, kappa_b.
double slowest_decay_rate(const SystemParams& p);

/// Interaction-picture Hamiltonian before the rotating-wave step, in the
/// blue-detuned regime: static tripartite part plus terms rotating at w_m
/// and 2 w_m.
TimeDependentHamiltonian build_rotating_hamiltonian(const SystemParams& p, const CompositeSpace& space);

struct RwaReport {
  std::vector<double> times;
  std::vector<double> fidelity;
  double min_fidelity = 1.0;
};

/// Evolve psi0 under the rotating and the static effective Hamiltonian and
/// report the pointwise overlap |<psi_rot|psi_eff>|.
RwaReport validate_effective_hamiltonian(const SystemParams& p, const QState& psi0, const TimeGrid& grid,
                                         const EvolveOptions& opts = {});

}  // namespace optomech
