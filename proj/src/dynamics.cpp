#include "optomech/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace optomech {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

IntegratorOptions integrator_options(const EvolveOptions& opts) {
  IntegratorOptions io;
  io.rtol = opts.rtol;
  io.atol = opts.atol;
  if (opts.h_max > 0.0) io.h_max = opts.h_max;
  return io;
}

bool keep_snapshot(std::size_t sample, std::size_t count, std::size_t stride) {
  if (sample + 1 == count) return true;
  return stride > 0 && sample % stride == 0;
}

void record(EvolutionResult& out, const std::vector<Observable>& observers, const QState& state) {
  for (std::size_t k = 0; k < observers.size(); ++k) out.observables[k].second.push_back(observers[k].eval(state));
}

void init_series(EvolutionResult& out, const std::vector<Observable>& observers) {
  out.observables.clear();
  for (const auto& o : observers) out.observables.emplace_back(o.name, std::vector<cplx>{});
}

// Symmetrize in place; returns the largest correction applied.
double symmetrize(DenseMatrix& rho) {
  double worst = 0.0;
  const Index n = rho.rows();
  for (Index c = 0; c < n; ++c) {
    for (Index r = 0; r < c; ++r) {
      const cplx avg = 0.5 * (rho(r, c) + std::conj(rho(c, r)));
      worst = std::max(worst, std::abs(rho(r, c) - avg));
      rho(r, c) = avg;
      rho(c, r) = std::conj(avg);
    }
    worst = std::max(worst, std::abs(rho(c, c).imag()));
    rho(c, c) = rho(c, c).real();
  }
  return worst;
}

template <class Rhs>
EvolutionResult evolve_vector_impl(Rhs rhs, const QState& psi0, const TimeGrid& grid,
                                   const std::vector<Observable>& observers, const EvolveOptions& opts) {
  grid.validate();
  const CompositeSpace& space = psi0.space();
  Ket psi = psi0.ket();
  EvolutionResult out;
  init_series(out, observers);
  DormandPrince<Ket> solver(std::move(rhs), integrator_options(opts));
  double drift = 0.0;
  solver.set_step_hook([&](double t, Ket& y) {
    drift = std::max(drift, std::abs(y.norm() - 1.0));
    if (drift > kNormDriftLimit) {
      throw Error(ErrorKind::IntegratorAccuracy, "norm drift " + fmt(drift) + " at t=" + fmt(t) +
                                                     "; rerun with rtol below " + fmt(opts.rtol / 10));
    }
  });

  const auto times = grid.times();
  double t = grid.t0;
  for (std::size_t s = 0; s < times.size(); ++s) {
    solver.advance(t, psi, times[s]);
    const QState state = QState::vector(space, psi, kNormDriftLimit);
    out.times.push_back(times[s]);
    record(out, observers, state);
    if (keep_snapshot(s, times.size(), opts.snapshot_stride)) {
      out.snapshot_times.push_back(times[s]);
      out.states.push_back(state);
    }
  }
  out.diagnostics.max_norm_drift = drift;
  if (drift > kNormDriftTarget) {
    out.diagnostics.warnings.push_back("norm drift " + fmt(drift) + " exceeds " + fmt(kNormDriftTarget));
  }
  out.diagnostics.accepted_steps = solver.stats().accepted;
  out.diagnostics.rejected_steps = solver.stats().rejected;
  out.diagnostics.rhs_calls = solver.stats().rhs_calls;
  return out;
}

void require_vector(const QState& s, const CompositeSpace& space) {
  if (!s.is_vector()) throw Error(ErrorKind::WrongKind, "vector evolution needs a state vector");
  if (!(s.space() == space)) throw Error(ErrorKind::SpaceMismatch, "Hamiltonian and state live on different spaces");
}

}  // namespace

// ---------------------------------------------------------------------------

void TimeGrid::validate() const {
  if (!std::isfinite(t0) || !std::isfinite(t1) || t1 < t0) {
    throw Error(ErrorKind::InvalidArgument, "time grid needs finite t1 >= t0");
  }
  if (sample_count == 0) throw Error(ErrorKind::InvalidArgument, "time grid needs at least one sample");
  if (t1 > t0 && sample_count < 2) throw Error(ErrorKind::InvalidArgument, "a nonzero time span needs >= 2 samples");
}

std::vector<double> TimeGrid::times() const {
  validate();
  if (t1 == t0) return {t0};
  std::vector<double> out(sample_count);
  const double dt = (t1 - t0) / static_cast<double>(sample_count - 1);
  for (std::size_t i = 0; i < sample_count; ++i) out[i] = t0 + dt * static_cast<double>(i);
  out.back() = t1;
  return out;
}

QOperator TimeDependentHamiltonian::at(double t) const {
  QOperator h = static_part;
  for (const auto& term : oscillating) {
    const cplx phase = std::exp(kI * term.frequency * t);
    h += phase * term.op;
    h += std::conj(phase) * dag(term.op);
  }
  return h;
}

const std::vector<cplx>& EvolutionResult::series(const std::string& name) const {
  for (const auto& [n, v] : observables) {
    if (n == name) return v;
  }
  throw Error(ErrorKind::InvalidArgument, "no observable named '" + name + "'");
}

std::vector<double> EvolutionResult::real_series(const std::string& name) const {
  const auto& s = series(name);
  std::vector<double> out(s.size());
  std::transform(s.begin(), s.end(), out.begin(), [](cplx z) { return z.real(); });
  return out;
}

// ---------------------------------------------------------------------------
// Pure-state evolution

EvolutionResult evolve_vector(const QOperator& h, const QState& psi0, const TimeGrid& grid,
                              const std::vector<Observable>& observers, const EvolveOptions& opts) {
  require_vector(psi0, h.space());
  const SparseMatrix& m = h.matrix();
  auto rhs = [&m](double, const Ket& y, Ket& dy) { dy.noalias() = -kI * (m * y); };
  return evolve_vector_impl(rhs, psi0, grid, observers, opts);
}

EvolutionResult evolve_vector(const TimeDependentHamiltonian& h, const QState& psi0, const TimeGrid& grid,
                              const std::vector<Observable>& observers, const EvolveOptions& opts) {
  require_vector(psi0, h.space());
  struct Rotating {
    SparseMatrix op, op_dag;
    double frequency;
  };
  std::vector<Rotating> terms;
  for (const auto& term : h.oscillating) {
    if (!(term.op.space() == h.space())) throw Error(ErrorKind::SpaceMismatch, "oscillating term on another space");
    terms.push_back({term.op.matrix(), SparseMatrix(term.op.matrix().adjoint()), term.frequency});
  }
  const SparseMatrix& s = h.static_part.matrix();
  auto rhs = [&s, &terms](double t, const Ket& y, Ket& dy) {
    dy.noalias() = s * y;
    for (const auto& term : terms) {
      const cplx phase = std::exp(kI * term.frequency * t);
      dy.noalias() += phase * (term.op * y);
      dy.noalias() += std::conj(phase) * (term.op_dag * y);
    }
    dy *= -kI;
  };
  return evolve_vector_impl(rhs, psi0, grid, observers, opts);
}

// ---------------------------------------------------------------------------
// Master equation

Liouvillian::Liouvillian(const QOperator& h, const DissipatorSpec& dissipators) : dim_(h.dim()) {
  SparseMatrix heff = h.matrix();
  double min_rate = std::numeric_limits<double>::infinity();
  for (const auto& ch : dissipators) {
    if (!(ch.op.space() == h.space())) {
      throw Error(ErrorKind::SpaceMismatch, "dissipator '" + ch.name + "' lives on another space");
    }
    if (!(ch.rate >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative dissipator rate for '" + ch.name + "'");
    if (ch.rate == 0.0) continue;
    const SparseMatrix& o = ch.op.matrix();
    SparseMatrix odo = SparseMatrix(o.adjoint()) * o;
    heff -= (cplx(0.0, 0.5) * ch.rate) * odo;
    jumps_.push_back(std::sqrt(ch.rate) * o);
    min_rate = std::min(min_rate, ch.rate);
  }
  heff.prune(cplx(0.0));
  h_eff_ = heff;
  h_eff_.makeCompressed();
  heff.makeCompressed();
  csr_ptr_.assign(heff.outerIndexPtr(), heff.outerIndexPtr() + dim_ + 1);
  csr_col_.assign(heff.innerIndexPtr(), heff.innerIndexPtr() + heff.nonZeros());
  csr_val_.resize(static_cast<std::size_t>(heff.nonZeros()));
  for (Index k = 0; k < heff.nonZeros(); ++k) csr_val_[k] = -kI * heff.valuePtr()[k];
  min_rate_ = jumps_.empty() ? 0.0 : min_rate;

  for (std::size_t k = 0; k < jumps_.size(); ++k) {
    const SparseMatrix& j = jumps_[k];
    Monomial m;
    bool ok = true;
    for (Index r = 0; r < j.outerSize() && ok; ++r) {
      int count = 0;
      for (SparseMatrix::InnerIterator it(j, r); it; ++it) {
        if (it.value() == 0.0) continue;
        if (++count > 1) {
          ok = false;
          break;
        }
        m.row.push_back(r);
        m.src.push_back(it.col());
        m.w.push_back(it.value());
      }
    }
    if (ok) {
      if (std::all_of(m.w.begin(), m.w.end(), [](cplx v) { return v.imag() == 0.0; })) {
        for (cplx v : m.w) m.real_w.push_back(v.real());
      }
      monomials_.push_back(std::move(m));
    } else {
      general_.push_back(k);
    }
  }
}

namespace {

// out(i, k) = x(i, k) + conj(x(k, i))
void hermitian_part(const DenseMatrix& x, DenseMatrix& out) { out.noalias() = x + x.adjoint(); }

}  // namespace

void Liouvillian::add_jumps(const DenseMatrix& rho, DenseMatrix& out) const {
  for (const auto& m : monomials_) {
    const std::size_t count = m.row.size();
    const Index* rows = m.row.data();
    const Index* src = m.src.data();
    if (!m.real_w.empty()) {
      const double* w = m.real_w.data();
      for (std::size_t b = 0; b < count; ++b) {
        const cplx* col = rho.col(src[b]).data();
        cplx* o = out.col(rows[b]).data();
        const double wb = w[b];
        for (std::size_t a = 0; a < count; ++a) o[rows[a]] += (w[a] * wb) * col[src[a]];
      }
      continue;
    }
    const cplx* w = m.w.data();
    for (std::size_t b = 0; b < count; ++b) {
      const cplx c = std::conj(w[b]);
      const cplx* col = rho.col(src[b]).data();
      cplx* o = out.col(rows[b]).data();
      for (std::size_t a = 0; a < count; ++a) o[rows[a]] += (w[a] * c) * col[src[a]];
    }
  }
  for (std::size_t k : general_) {
    const SparseMatrix& j = jumps_[k];
    scratch2_.noalias() = j * rho.adjoint();  // (rho J^dag)^dag
    out.noalias() += j * scratch2_.adjoint();
  }
}

void Liouvillian::coherent(const DenseMatrix& x, DenseMatrix& out) const {
  out.resize(dim_, dim_);
  const Index* ptr = csr_ptr_.data();
  const Index* col = csr_col_.data();
  const cplx* val = csr_val_.data();
  for (Index c = 0; c < dim_; ++c) {
    const cplx* xc = x.col(c).data();
    cplx* oc = out.col(c).data();
    for (Index i = 0; i < dim_; ++i) {
      cplx acc(0.0, 0.0);
      for (Index k = ptr[i]; k < ptr[i + 1]; ++k) acc += val[k] * xc[col[k]];
      oc[i] = acc;
    }
  }
}

void Liouvillian::apply(const DenseMatrix& rho, DenseMatrix& out) const {
  if (rho.rows() != dim_ || rho.cols() != dim_) {
    throw Error(ErrorKind::InvalidDimension, "liouvillian: rho shape does not match the Hamiltonian");
  }
  // -i H_eff rho + i rho H_eff^dag, with i rho H_eff^dag = (-i H_eff rho^dag)^dag
  scratch2_ = rho.adjoint();
  coherent(scratch2_, scratch_);
  coherent(rho, out);
  out += scratch_.adjoint();
  add_jumps(rho, out);
}

void Liouvillian::apply_hermitian(const DenseMatrix& rho, DenseMatrix& out) const {
  coherent(rho, scratch_);
  hermitian_part(scratch_, out);
  add_jumps(rho, out);
}

DenseMatrix liouvillian_apply(const QOperator& h, const DissipatorSpec& dissipators, const DenseMatrix& rho) {
  const Liouvillian l(h, dissipators);
  DenseMatrix out;
  l.apply(rho, out);
  return out;
}

namespace {

struct DensityMonitor {
  double max_trace_drift = 0.0;
  double max_asymmetry = 0.0;

  void operator()(double t, DenseMatrix& rho) {
    max_asymmetry = std::max(max_asymmetry, symmetrize(rho));
    const double drift = std::abs(rho.trace().real() - 1.0);
    max_trace_drift = std::max(max_trace_drift, drift);
    if (drift > kNormDriftLimit) {
      throw Error(ErrorKind::IntegratorAccuracy,
                  "trace drift " + fmt(drift) + " at t=" + fmt(t) + "; tighten the integrator tolerance");
    }
  }
};

QState density_snapshot(const CompositeSpace& space, const DenseMatrix& rho) {
  return QState::density(space, rho, QState::Check::Basic, kNormDriftLimit);
}

void certify(const QState& state, double t, EvolutionDiagnostics& diag) {
  const double lo = state.min_eigenvalue();
  diag.min_eigenvalue = std::min(diag.min_eigenvalue, lo);
  if (lo < kPositivityWarn) {
    diag.warnings.push_back("positivity loss: eigenvalue " + fmt(lo) + " at t=" + fmt(t));
  }
}

}  // namespace

EvolutionResult evolve_density(const QOperator& h, const DissipatorSpec& dissipators, const QState& rho0,
                               const TimeGrid& grid, const std::vector<Observable>& observers, EvolveOptions opts) {
  grid.validate();
  if (rho0.is_vector()) throw Error(ErrorKind::WrongKind, "density evolution needs a density matrix");
  if (!(rho0.space() == h.space())) throw Error(ErrorKind::SpaceMismatch, "Hamiltonian and state live on different spaces");
  const CompositeSpace& space = rho0.space();
  const Liouvillian l(h, dissipators);
  DenseMatrix rho = rho0.rho();

  EvolutionResult out;
  init_series(out, observers);
  DormandPrince<DenseMatrix> solver([&l](double, const DenseMatrix& y, DenseMatrix& dy) { l.apply_hermitian(y, dy); },
                                    integrator_options(opts));
  DensityMonitor monitor;
  solver.set_step_hook(std::ref(monitor));

  const auto times = grid.times();
  double t = grid.t0;
  for (std::size_t s = 0; s < times.size(); ++s) {
    solver.advance(t, rho, times[s]);
    const QState state = density_snapshot(space, rho);
    out.times.push_back(times[s]);
    record(out, observers, state);
    if (keep_snapshot(s, times.size(), opts.snapshot_stride)) {
      if (opts.check_positivity) certify(state, times[s], out.diagnostics);
      out.snapshot_times.push_back(times[s]);
      out.states.push_back(state);
    }
  }
  out.diagnostics.max_norm_drift = monitor.max_trace_drift;
  out.diagnostics.max_asymmetry = monitor.max_asymmetry;
  if (monitor.max_trace_drift > kNormDriftTarget) {
    out.diagnostics.warnings.push_back("trace drift " + fmt(monitor.max_trace_drift) + " exceeds " +
                                       fmt(kNormDriftTarget));
  }
  out.diagnostics.accepted_steps = solver.stats().accepted;
  out.diagnostics.rejected_steps = solver.stats().rejected;
  out.diagnostics.rhs_calls = solver.stats().rhs_calls;
  return out;
}

// ---------------------------------------------------------------------------
// Steady state

double slowest_decay_rate(const SystemParams& p) {
  double lo = std::numeric_limits<double>::infinity();
  auto consider = [&lo](double r) {
    if (r > 0.0) lo = std::min(lo, r);
  };
  for (std::size_t j = 0; j < 2; ++j) {
    consider(p.gamma21[j]);
    consider(p.gamma10[j]);
    consider(p.kappa_a[j]);
  }
  consider(p.kappa_b);
  return std::isfinite(lo) ? lo : 0.0;
}

namespace {

struct ObservableHistory {
  const std::vector<Observable>& observers;
  std::vector<std::pair<double, std::vector<cplx>>> samples;

  void add(double t, const QState& state) {
    std::vector<cplx> values;
    values.reserve(observers.size());
    for (const auto& o : observers) values.push_back(o.eval(state));
    samples.emplace_back(t, std::move(values));
  }
  void drop_before(double t) {
    while (!samples.empty() && samples.front().first < t - 1e-9) samples.erase(samples.begin());
  }
  /// Largest spread of any observable (real or imaginary part) over the kept samples.
  double spread() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < observers.size(); ++k) {
      double lo_re = std::numeric_limits<double>::infinity(), hi_re = -lo_re;
      double lo_im = lo_re, hi_im = -lo_re;
      for (const auto& [t, vals] : samples) {
        lo_re = std::min(lo_re, vals[k].real());
        hi_re = std::max(hi_re, vals[k].real());
        lo_im = std::min(lo_im, vals[k].imag());
        hi_im = std::max(hi_im, vals[k].imag());
      }
      worst = std::max({worst, hi_re - lo_re, hi_im - lo_im});
    }
    return worst;
  }
};

SteadyStateResult finish(const CompositeSpace& space, const DenseMatrix& rho, double residual, double t,
                         std::vector<std::pair<double, double>> trajectory, const std::vector<Observable>& observers) {
  SteadyStateResult res{density_snapshot(space, rho), residual, t, std::move(trajectory), {}, {}};
  for (const auto& o : observers) res.observables.emplace_back(o.name, o.eval(res.state));
  certify(res.state, t, res.diagnostics);
  return res;
}

// March from rho for `window` time units; returns the observable spread.
double march_window(const Liouvillian& l, const CompositeSpace& space, DenseMatrix rho, double window,
                    double interval, const SteadyStateCriteria& criteria, const std::vector<Observable>& observers,
                    EvolutionDiagnostics& diag) {
  IntegratorOptions io;
  io.rtol = criteria.rtol;
  io.atol = criteria.atol;
  DormandPrince<DenseMatrix> solver([&l](double, const DenseMatrix& y, DenseMatrix& dy) { l.apply_hermitian(y, dy); },
                                    io);
  DensityMonitor monitor;
  solver.set_step_hook(std::ref(monitor));
  ObservableHistory history{observers, {}};
  history.add(0.0, density_snapshot(space, rho));
  double t = 0.0;
  while (t < window) {
    solver.advance(t, rho, std::min(window, t + interval));
    history.add(t, density_snapshot(space, rho));
  }
  diag.max_norm_drift = std::max(diag.max_norm_drift, monitor.max_trace_drift);
  diag.max_asymmetry = std::max(diag.max_asymmetry, monitor.max_asymmetry);
  diag.accepted_steps += solver.stats().accepted;
  diag.rejected_steps += solver.stats().rejected;
  diag.rhs_calls += solver.stats().rhs_calls;
  return history.spread();
}

SteadyStateResult march_steady_state(const Liouvillian& l, const CompositeSpace& space, DenseMatrix rho,
                                     const SteadyStateCriteria& criteria,
                                     const std::vector<Observable>& observers) {
  const double window = criteria.window.value_or(50.0 / l.min_rate());
  const double interval = std::max(criteria.check_interval, 1e-6);
  IntegratorOptions io;
  io.rtol = criteria.rtol;
  io.atol = criteria.atol;
  DormandPrince<DenseMatrix> solver([&l](double, const DenseMatrix& y, DenseMatrix& dy) { l.apply_hermitian(y, dy); },
                                    io);
  DensityMonitor monitor;
  solver.set_step_hook(std::ref(monitor));

  std::vector<std::pair<double, double>> trajectory;
  ObservableHistory history{observers, {}};
  DenseMatrix drho;
  double t = 0.0;
  for (;;) {
    solver.advance(t, rho, t + interval);
    l.apply_hermitian(rho, drho);
    const double residual = max_abs(drho);
    trajectory.emplace_back(t, residual);
    history.add(t, density_snapshot(space, rho));
    history.drop_before(t - window);

    if (residual < criteria.residual_tol && t >= window - 1e-9 && history.spread() < criteria.observable_tol) {
      SteadyStateResult res = finish(space, rho, residual, t, std::move(trajectory), observers);
      res.diagnostics.max_norm_drift = monitor.max_trace_drift;
      res.diagnostics.max_asymmetry = monitor.max_asymmetry;
      res.diagnostics.accepted_steps = solver.stats().accepted;
      res.diagnostics.rejected_steps = solver.stats().rejected;
      res.diagnostics.rhs_calls = solver.stats().rhs_calls;
      return res;
    }
    if (t >= criteria.max_time) {
      throw ConvergenceError("steady state not reached by t=" + fmt(t) + " (residual " + fmt(residual) + ")",
                             std::move(trajectory));
    }
  }
}

DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

// Right preconditioner: the Liouvillian of the leading atomic factor, exact,
// plus the diagonal of the bosonic damping; one dense block per pair of
// bosonic basis indices, grouped by the block's scalar shift.
class AtomBlockPreconditioner {
 public:
  AtomBlockPreconditioner(const Liouvillian& l, const CompositeSpace& space) {
    da_ = 1;
    for (const auto& part : space.parts()) {
      if (part.is_boson()) break;
      da_ *= part.size;
    }
    db_ = space.dim() / da_;
    const auto& h = l.effective_hamiltonian();

    DenseMatrix h0(da_, da_);
    for (Index a = 0; a < da_; ++a) {
      for (Index b = 0; b < da_; ++b) h0(a, b) = h.coeff(a * db_, b * db_);
    }
    std::vector<cplx> d(static_cast<std::size_t>(db_), 0.0);
    for (Index n = 0; n < db_; ++n) {
      cplx acc = 0.0;
      for (Index a = 0; a < da_; ++a) acc += h.coeff(a * db_ + n, a * db_ + n) - h0(a, a);
      d[n] = acc / static_cast<double>(da_);
    }

    const DenseMatrix eye = DenseMatrix::Identity(da_, da_);
    DenseMatrix la = -kI * kron(eye, h0) + kI * kron(h0.conjugate(), eye);
    for (const auto& j : l.jumps()) {
      bool local = true;
      for (Index r = 0; r < j.outerSize() && local; ++r) {
        for (SparseMatrix::InnerIterator it(j, r); it; ++it) {
          if (it.row() % db_ != it.col() % db_) {
            local = false;
            break;
          }
        }
      }
      if (!local) continue;
      DenseMatrix ja(da_, da_);
      for (Index a = 0; a < da_; ++a) {
        for (Index b = 0; b < da_; ++b) ja(a, b) = j.coeff(a * db_, b * db_);
      }
      la += kron(ja.conjugate(), ja);
    }
    const double scale = std::max(1.0, la.cwiseAbs().maxCoeff());

    std::map<std::pair<long long, long long>, std::size_t> index;
    for (Index n = 0; n < db_; ++n) {
      for (Index m = 0; m < db_; ++m) {
        cplx shift = -kI * d[n] + kI * std::conj(d[m]);
        const auto key = std::make_pair(std::llround(shift.real() * 1e9), std::llround(shift.imag() * 1e9));
        auto it = index.find(key);
        if (it == index.end()) {
          // keep the block invertible where the atomic factor alone is singular
          if (std::abs(shift) < 1e-6 * scale) shift -= 1e-6 * scale;
          DenseMatrix block = la;
          block.diagonal().array() += shift;
          it = index.emplace(key, groups_.size()).first;
          groups_.push_back({Eigen::PartialPivLU<DenseMatrix>(block), {}});
        }
        groups_[it->second].blocks.emplace_back(n, m);
      }
    }
  }

  void apply(const DenseMatrix& x, DenseMatrix& y) const {
    y.resize(x.rows(), x.cols());
    DenseMatrix gathered;
    for (const auto& g : groups_) {
      gathered.resize(da_ * da_, static_cast<Index>(g.blocks.size()));
      for (std::size_t c = 0; c < g.blocks.size(); ++c) {
        const auto [n, m] = g.blocks[c];
        for (Index ap = 0; ap < da_; ++ap) {
          for (Index a = 0; a < da_; ++a) gathered(a + da_ * ap, c) = x(a * db_ + n, ap * db_ + m);
        }
      }
      const DenseMatrix solved = g.lu.solve(gathered);
      for (std::size_t c = 0; c < g.blocks.size(); ++c) {
        const auto [n, m] = g.blocks[c];
        for (Index ap = 0; ap < da_; ++ap) {
          for (Index a = 0; a < da_; ++a) y(a * db_ + n, ap * db_ + m) = solved(a + da_ * ap, c);
        }
      }
    }
  }

 private:
  struct Group {
    Eigen::PartialPivLU<DenseMatrix> lu;
    std::vector<std::pair<Index, Index>> blocks;
  };
  Index da_ = 1, db_ = 1;
  std::vector<Group> groups_;
};

cplx inner(const DenseMatrix& a, const DenseMatrix& b) {
  return Eigen::Map<const Ket>(a.data(), a.size()).dot(Eigen::Map<const Ket>(b.data(), b.size()));
}

SteadyStateResult krylov_steady_state(const Liouvillian& l, const CompositeSpace& space, DenseMatrix rho,
                                      const SteadyStateCriteria& criteria,
                                      const std::vector<Observable>& observers) {
  const AtomBlockPreconditioner precond(l, space);
  const int m = std::max(criteria.krylov_dim, 2);
  std::vector<DenseMatrix> v(static_cast<std::size_t>(m + 1));
  DenseMatrix hess = DenseMatrix::Zero(m + 1, m);
  Ket g(m + 1), cs(m), sn(m);
  DenseMatrix r, w, z;
  std::vector<std::pair<double, double>> trajectory;
  std::size_t iterations = 0;

  for (int restart = 0;; ++restart) {
    symmetrize(rho);
    rho /= rho.trace().real();
    l.apply_hermitian(rho, r);
    const double residual = max_abs(r);
    trajectory.emplace_back(static_cast<double>(iterations), residual);
    if (residual < criteria.residual_tol) {
      SteadyStateResult res = finish(space, rho, residual, 0.0, std::move(trajectory), observers);
      res.krylov_iterations = iterations;
      if (criteria.window && *criteria.window > 0.0) {
        const double spread = march_window(l, space, rho, *criteria.window, std::max(criteria.check_interval, 1e-6),
                                           criteria, observers, res.diagnostics);
        res.time = *criteria.window;
        if (spread >= criteria.observable_tol) {
          throw ConvergenceError("observables drift by " + fmt(spread) + " over the check window",
                                 std::move(res.residual_trajectory));
        }
      }
      return res;
    }
    if (restart >= criteria.max_restarts) {
      throw ConvergenceError("GMRES stalled at residual " + fmt(residual) + " after " +
                                 std::to_string(iterations) + " iterations",
                             std::move(trajectory));
    }

    r = -r;
    const double beta = r.norm();
    v[0] = r / beta;
    g.setZero();
    g(0) = beta;
    hess.setZero();
    int k = 0;
    for (; k < m; ++k) {
      precond.apply(v[k], z);
      symmetrize(z);
      l.apply_hermitian(z, w);
      ++iterations;
      for (int i = 0; i <= k; ++i) {
        hess(i, k) = inner(v[i], w);
        w -= hess(i, k) * v[i];
      }
      const double wn = w.norm();
      hess(k + 1, k) = wn;
      for (int i = 0; i < k; ++i) {
        const cplx t = cs(i) * hess(i, k) + sn(i) * hess(i + 1, k);
        hess(i + 1, k) = -std::conj(sn(i)) * hess(i, k) + cs(i) * hess(i + 1, k);
        hess(i, k) = t;
      }
      // complex Givens rotation with real cosine
      const cplx a = hess(k, k);
      const double denom = std::hypot(std::abs(a), wn);
      if (std::abs(a) == 0.0) {
        cs(k) = 0.0;
        sn(k) = 1.0;
      } else {
        cs(k) = std::abs(a) / denom;
        sn(k) = (a / std::abs(a)) * wn / denom;
      }
      hess(k, k) = cs(k) * a + sn(k) * wn;
      hess(k + 1, k) = 0.0;
      g(k + 1) = -std::conj(sn(k)) * g(k);
      g(k) = cs(k) * g(k);
      if (wn > 0.0) v[k + 1] = w / wn;
      if (std::abs(g(k + 1)) < 0.1 * criteria.residual_tol || wn == 0.0) {
        ++k;
        break;
      }
    }
    const Ket y = hess.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    DenseMatrix u = DenseMatrix::Zero(rho.rows(), rho.cols());
    for (int i = 0; i < k; ++i) u += y(i) * v[i];
    precond.apply(u, z);
    rho += z;
  }
}

}  // namespace

SteadyStateResult steady_state(const QOperator& h, const DissipatorSpec& dissipators, const QState& rho_guess,
                               const SteadyStateCriteria& criteria, const std::vector<Observable>& observers) {
  const Liouvillian l(h, dissipators);
  if (!l.dissipative()) {
    throw Error(ErrorKind::IllPosed, "steady state needs at least one dissipative channel");
  }
  if (!(rho_guess.space() == h.space())) throw Error(ErrorKind::SpaceMismatch, "guess lives on another space");
  DenseMatrix rho = rho_guess.density_matrix();
  if (criteria.method == SteadyStateMethod::March) {
    return march_steady_state(l, rho_guess.space(), std::move(rho), criteria, observers);
  }
  return krylov_steady_state(l, rho_guess.space(), std::move(rho), criteria, observers);
}

// ---------------------------------------------------------------------------
// Rotating-wave check

TimeDependentHamiltonian build_rotating_hamiltonian(const SystemParams& p, const CompositeSpace& space) {
  const NetworkOperators ops = network_operators(space);
  for (std::size_t j = 0; j < 2; ++j) {
    if (std::abs(p.Delta[j] + p.omega_m) > 1e-12) {
      throw Error(ErrorKind::ModelRegime, "rotating Hamiltonian is written for Delta = -omega_m");
    }
    if (p.Lambda_override[j]) {
      throw Error(ErrorKind::ModelRegime, "rotating Hamiltonian needs Lambda derived from g and lambda");
    }
  }
  const QOperator bd = dag(ops.b);
  TimeDependentHamiltonian h{build_effective_hamiltonian(p, space), {}};
  for (std::size_t j = 0; j < 2; ++j) {
    const QOperator& a = j == 0 ? ops.a1 : ops.a2;
    const QOperator pair = a * ops.sigma(j, 2, 1);  // a_j sigma+_{21,j}
    const double sign = j == 0 ? -1.0 : 1.0;        // (-1)^j
    const double lam = p.Lambda(j);
    // rotating at -w_m: g a sigma+ + (-1)^j Lambda a sigma+ (b^dag - b)
    QOperator slow = p.g[j] * pair + (sign * lam) * (pair * (bd - ops.b));
    h.oscillating.push_back({std::move(slow), -p.omega_m});
    // rotating at -2 w_m: (-1)^j Lambda a sigma+ b
    h.oscillating.push_back({(sign * lam) * (pair * ops.b), -2.0 * p.omega_m});
  }
  return h;
}

RwaReport validate_effective_hamiltonian(const SystemParams& p, const QState& psi0, const TimeGrid& grid,
                                         const EvolveOptions& opts) {
  if (p.lambda > 0.05 * p.omega_m) {
    throw Error(ErrorKind::ModelRegime, "rotating-wave check needs lambda/omega_m <= 0.05");
  }
  if (psi0.dim() > 2000) {
    throw Error(ErrorKind::InvalidDimension, "rotating-wave check is limited to dimension <= 2000");
  }
  const TimeDependentHamiltonian rotating = build_rotating_hamiltonian(p, psi0.space());
  EvolveOptions o = opts;
  o.snapshot_stride = 1;
  const EvolutionResult a = evolve_vector(rotating, psi0, grid, {}, o);
  const EvolutionResult b = evolve_vector(rotating.static_part, psi0, grid, {}, o);
  RwaReport report;
  report.times = a.snapshot_times;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    const double f = std::abs(a.states[i].ket().dot(b.states[i].ket()));
    report.fidelity.push_back(f);
    report.min_fidelity = std::min(report.min_fidelity, f);
  }
  return report;
}

}  // namespace optomech
