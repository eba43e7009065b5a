#include "optomech/model.hpp"

#include <cmath>
#include <unsupported/Eigen/MatrixFunctions>

namespace optomech {

namespace {

constexpr double kRegimeTol = 1e-12;

void require_nonnegative(double v, const std::string& name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw Error(ErrorKind::Config, "params." + name + " must be finite and non-negative (got " + std::to_string(v) + ")");
  }
}

void require_nonnegative(const std::array<double, 2>& v, const std::string& name) {
  for (std::size_t j = 0; j < 2; ++j) require_nonnegative(v[j], name + "[" + std::to_string(j) + "]");
}

}  // namespace

CompositeSpace network_space(int cavity1_truncation, int mo_truncation, int cavity2_truncation) {
  return CompositeSpace({
      SubsystemSpec::atom(3, std::string(kSubsystemLabels[kAtom1])),
      SubsystemSpec::atom(3, std::string(kSubsystemLabels[kAtom2])),
      SubsystemSpec::boson(cavity1_truncation, std::string(kSubsystemLabels[kCavity1])),
      SubsystemSpec::boson(mo_truncation, std::string(kSubsystemLabels[kMO])),
      SubsystemSpec::boson(cavity2_truncation, std::string(kSubsystemLabels[kCavity2])),
  });
}

std::size_t boson_slot(std::size_t subsystem) {
  switch (subsystem) {
    case kCavity1: return 0;
    case kMO: return 1;
    case kCavity2: return 2;
    default: throw Error(ErrorKind::InvalidTarget, "subsystem " + std::to_string(subsystem) + " is not a bosonic mode");
  }
}

void require_network_space(const CompositeSpace& space) {
  if (space.size() != 5) {
    throw Error(ErrorKind::SpaceShape, "network space needs five subsystems, got " + std::to_string(space.size()));
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& part = space.part(i);
    const bool want_atom = i == kAtom1 || i == kAtom2;
    if (want_atom && (part.is_boson() || part.size != 3)) {
      throw Error(ErrorKind::SpaceShape, "subsystem " + std::to_string(i) + " must be a three-level atom");
    }
    if (!want_atom && !part.is_boson()) {
      throw Error(ErrorKind::SpaceShape, "subsystem " + std::to_string(i) + " must be a bosonic mode");
    }
  }
}

// ---------------------------------------------------------------------------
// SystemParams

double SystemParams::Lambda(std::size_t j) const {
  if (Lambda_override.at(j)) return *Lambda_override[j];
  return g.at(j) * lambda / omega_m;
}

void SystemParams::validate() const {
  if (!(omega_m > 0.0)) throw Error(ErrorKind::Config, "params.omega_m must be positive");
  require_nonnegative(g, "g");
  require_nonnegative(lambda, "lambda");
  require_nonnegative(Omega1, "Omega1");
  require_nonnegative(Omega2, "Omega2");
  require_nonnegative(q, "q");
  require_nonnegative(q_prime, "q_prime");
  require_nonnegative(gamma21, "gamma21");
  require_nonnegative(gamma10, "gamma10");
  require_nonnegative(kappa_a, "kappa_a");
  require_nonnegative(kappa_b, "kappa_b");
  require_nonnegative(nbar_a, "nbar_a");
  require_nonnegative(nbar_c, "nbar_c");
  require_nonnegative(nbar_m, "nbar_m");
  for (std::size_t j = 0; j < 2; ++j) {
    if (Lambda_override[j]) require_nonnegative(*Lambda_override[j], "Lambda[" + std::to_string(j) + "]");
    const double derived = omega_atom[j][2] - omega_atom[j][1] - omega_c[j];
    if (std::abs(derived - Delta[j]) > 1e-9) {
      throw Error(ErrorKind::Config, "params.Delta[" + std::to_string(j) + "] = " + std::to_string(Delta[j]) +
                                         " disagrees with omega_atom/omega_c (" + std::to_string(derived) + ")");
    }
  }
}

bool SystemParams::any_dissipation() const {
  for (std::size_t j = 0; j < 2; ++j) {
    if (gamma21[j] > 0 || gamma10[j] > 0 || kappa_a[j] > 0) return true;
  }
  return kappa_b > 0;
}

// ---------------------------------------------------------------------------
// States

bool StateRecipe::has_mixed_factor() const {
  for (const auto& f : factors) {
    if (std::holds_alternative<Thermal>(f) && std::get<Thermal>(f).nbar > 0.0) return true;
  }
  return false;
}

StateRecipe StateRecipe::thermal_as_vacuum(double* max_nbar) const {
  StateRecipe out = *this;
  double worst = 0.0;
  for (auto& f : out.factors) {
    if (const auto* th = std::get_if<Thermal>(&f)) {
      worst = std::max(worst, th->nbar);
      f = Ground{};
    }
  }
  if (max_nbar) *max_nbar = worst;
  return out;
}

double squeezed_tail(int truncation, cplx xi) {
  const double r = std::abs(xi);
  if (r == 0.0) return 0.0;
  const double t = std::tanh(r);
  // |c_{2n}|^2 = (2n)! / (2^n n!)^2 * tanh^{2n} r / cosh r
  double kept = 0.0;
  for (int n = 0; 2 * n < truncation; ++n) {
    const double log_p = std::lgamma(2.0 * n + 1.0) - 2.0 * (n * std::log(2.0) + std::lgamma(n + 1.0)) +
                         2.0 * n * std::log(t) - std::log(std::cosh(r));
    kept += std::exp(log_p);
  }
  return std::max(0.0, 1.0 - kept);
}

double cat_tail(int truncation, cplx alpha) {
  const double a2 = std::norm(alpha);
  if (a2 == 0.0) return 0.0;
  // even n only: |u_n|^2 = 4 e^{-|a|^2} |a|^{2n} / n!, total 2(1 + e^{-2|a|^2})
  const double norm2 = 2.0 * (1.0 + std::exp(-2.0 * a2));
  double kept = 0.0;
  for (int n = 0; n < truncation; n += 2) {
    kept += 4.0 * std::exp(-a2 + n * std::log(a2) - std::lgamma(n + 1.0));
  }
  return std::max(0.0, 1.0 - kept / norm2);
}

QState squeezed_vacuum(int truncation, cplx xi, double tail_tolerance) {
  const QOperator a = destroy(truncation);
  const double tail = squeezed_tail(truncation, xi);
  if (tail > tail_tolerance) {
    throw Error(ErrorKind::TruncationTooSmall, "squeezed state |xi|=" + std::to_string(std::abs(xi)) +
                                                   " loses population " + std::to_string(tail) + " beyond truncation " +
                                                   std::to_string(truncation));
  }
  const DenseMatrix am = DenseMatrix(a.matrix());
  const DenseMatrix gen = 0.5 * (std::conj(xi) * am * am - xi * am.adjoint() * am.adjoint());
  const DenseMatrix u = gen.exp();
  Ket psi = u.col(0);
  // odd amplitudes vanish analytically; remove rounding residue
  for (Index n = 1; n < psi.size(); n += 2) psi(n) = 0.0;
  psi.normalize();
  return QState::vector(a.space(), std::move(psi));
}

QState cat_state(int truncation, cplx alpha, double tail_tolerance) {
  const QOperator a = destroy(truncation);
  const double tail = cat_tail(truncation, alpha);
  if (tail > tail_tolerance) {
    throw Error(ErrorKind::TruncationTooSmall, "cat state |alpha|=" + std::to_string(std::abs(alpha)) +
                                                   " loses population " + std::to_string(tail) + " beyond truncation " +
                                                   std::to_string(truncation));
  }
  Ket psi = Ket::Zero(truncation);
  cplx amp = std::exp(-0.5 * std::norm(alpha));  // coherent amplitude for n = 0
  for (int n = 0; n < truncation; ++n) {
    if (n > 0) amp *= alpha / std::sqrt(static_cast<double>(n));
    if (n % 2 == 0) psi(n) = 2.0 * amp;
  }
  psi.normalize();
  return QState::vector(a.space(), std::move(psi));
}

QState thermal_state(int truncation, double nbar) {
  const QOperator a = destroy(truncation);
  if (!(nbar >= 0.0)) throw Error(ErrorKind::Domain, "thermal_state: nbar must be non-negative");
  DenseMatrix rho = DenseMatrix::Zero(truncation, truncation);
  const double ratio = nbar / (1.0 + nbar);
  double p = 1.0 / (1.0 + nbar);
  double total = 0.0;
  for (int n = 0; n < truncation; ++n) {
    rho(n, n) = p;
    total += p;
    p *= ratio;
  }
  rho /= total;
  return QState::density(a.space(), std::move(rho), QState::Check::Basic);
}

double thermal_occupation(double omega, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::Domain, "thermal_occupation: temperature must be positive");
  if (!(omega > 0.0)) throw Error(ErrorKind::Domain, "thermal_occupation: frequency must be positive");
  return 1.0 / std::expm1(omega / temperature);
}

QState assemble_initial_state(const StateRecipe& recipe, const CompositeSpace& space) {
  if (space.size() != recipe.factors.size()) {
    throw Error(ErrorKind::SpaceShape, "recipe has " + std::to_string(recipe.factors.size()) +
                                           " factors for a space of " + std::to_string(space.size()));
  }
  std::vector<QState> factors;
  factors.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const SubsystemSpec& part = space.part(i);
    const int d = part.size;
    const CompositeSpace local({part});
    auto relabel = [&](const QState& s) {
      return s.is_vector() ? QState::vector(local, s.ket()) : QState::density(local, s.rho(), QState::Check::Basic);
    };
    const FactorRecipe& f = recipe.factors[i];
    if (std::holds_alternative<Ground>(f)) {
      factors.push_back(QState::vector(local, basis_ket(local, std::vector<int>{0})));
    } else if (const auto* fock = std::get_if<Fock>(&f)) {
      if (fock->n < 0 || fock->n >= d) {
        throw Error(ErrorKind::TruncationTooSmall, "Fock level " + std::to_string(fock->n) + " does not fit in '" +
                                                       part.label + "' (dimension " + std::to_string(d) + ")");
      }
      factors.push_back(QState::vector(local, basis_ket(local, std::vector<int>{fock->n})));
    } else {
      if (!part.is_boson()) {
        throw Error(ErrorKind::InvalidTarget, "only Ground or Fock recipes apply to atom '" + part.label + "'");
      }
      if (const auto* sq = std::get_if<Squeezed>(&f)) {
        factors.push_back(relabel(squeezed_vacuum(d, sq->xi, recipe.tail_tolerance)));
      } else if (const auto* cat = std::get_if<Cat>(&f)) {
        factors.push_back(relabel(cat_state(d, cat->alpha, recipe.tail_tolerance)));
      } else {
        factors.push_back(relabel(thermal_state(d, std::get<Thermal>(f).nbar)));
      }
    }
  }
  return tensor(factors);
}

// ---------------------------------------------------------------------------
// Operators

QOperator NetworkOperators::sigma(std::size_t j, int k, int l) const {
  return embed(atomic_sigma(3, k, l), j == 0 ? kAtom1 : kAtom2, space());
}

NetworkOperators network_operators(const CompositeSpace& space) {
  require_network_space(space);
  return NetworkOperators{
      embed(destroy(space.part(kCavity1).size), kCavity1, space),
      embed(destroy(space.part(kCavity2).size), kCavity2, space),
      embed(destroy(space.part(kMO).size), kMO, space),
  };
}

QOperator build_full_hamiltonian(const SystemParams& p, const CompositeSpace& space) {
  const NetworkOperators ops = network_operators(space);
  const QOperator bd = dag(ops.b);
  const QOperator x = ops.b + bd;
  QOperator h = p.omega_m * (bd * ops.b);
  for (std::size_t j = 0; j < 2; ++j) {
    const QOperator& a = j == 0 ? ops.a1 : ops.a2;
    const QOperator ad = dag(a);
    const QOperator n = ad * a;
    h += p.omega_c[j] * n;
    for (int i = 0; i < 3; ++i) h += p.omega_atom[j][i] * ops.sigma(j, i, i);
    const QOperator jc = a * ops.sigma(j, 2, 1);  // a sigma+_{21}
    h += p.g[j] * (jc + dag(jc));
    // (-1)^j with j = 1, 2
    const double sign = j == 0 ? -1.0 : 1.0;
    h += (sign * p.lambda) * (n * x);
  }
  return h;
}

QOperator build_effective_hamiltonian(const SystemParams& p, const CompositeSpace& space) {
  const NetworkOperators ops = network_operators(space);
  for (std::size_t j = 0; j < 2; ++j) {
    if (std::abs(p.Delta[j] + p.omega_m) > kRegimeTol) {
      throw Error(ErrorKind::ModelRegime, "effective Hamiltonian needs the blue-detuned regime Delta[" +
                                              std::to_string(j) + "] = -omega_m, got " + std::to_string(p.Delta[j]));
    }
  }
  const QOperator bd = dag(ops.b);
  QOperator h = QOperator::zero(space);
  for (std::size_t j = 0; j < 2; ++j) {
    const QOperator& a = j == 0 ? ops.a1 : ops.a2;
    // (-1)^{j+1}: + for the first cavity, - for the second
    const double sign = j == 0 ? 1.0 : -1.0;
    const QOperator term = (sign * p.Lambda(j)) * (a * ops.sigma(j, 2, 1) * bd);
    h += term + dag(term);
  }
  return h;
}

QOperator build_drive_hamiltonian(const SystemParams& p, const CompositeSpace& space) {
  const NetworkOperators ops = network_operators(space);
  QOperator h = QOperator::zero(space);
  for (std::size_t j = 0; j < 2; ++j) {
    if (p.Omega1[j] != 0.0) h += p.Omega1[j] * (ops.sigma(j, 0, 2) + ops.sigma(j, 2, 0));
    if (p.Omega2[j] != 0.0) h += p.Omega2[j] * (ops.sigma(j, 0, 1) + ops.sigma(j, 1, 0));
  }
  return h;
}

PumpTarget parse_pump_target(std::string_view name) {
  if (name == "mo" || name == "MO") return PumpTarget::MO;
  if (name == "cavity1" || name == "C1" || name == "c1") return PumpTarget::Cavity1;
  throw Error(ErrorKind::InvalidTarget, "unknown squeeze-pump target '" + std::string(name) + "'");
}

std::string_view to_string(PumpTarget target) { return target == PumpTarget::MO ? "mo" : "cavity1"; }

QOperator build_squeeze_pump(const SystemParams& p, const CompositeSpace& space, PumpTarget target) {
  const NetworkOperators ops = network_operators(space);
  const double amp = target == PumpTarget::MO ? p.q : p.q_prime;
  if (!(amp >= 0.0)) throw Error(ErrorKind::InvalidArgument, "squeeze-pump amplitude must be non-negative");
  const QOperator& mode = target == PumpTarget::MO ? ops.b : ops.a1;
  const QOperator sq = mode * mode;
  return amp * (sq + dag(sq));
}

DissipatorSpec build_dissipators(const SystemParams& p, const CompositeSpace& space) {
  const NetworkOperators ops = network_operators(space);
  DissipatorSpec out;
  auto add = [&](const QOperator& op, double rate, std::string name) {
    if (rate > 0.0) out.push_back(Channel{op, rate, std::move(name)});
  };
  for (std::size_t j = 0; j < 2; ++j) {
    const std::string sfx = std::to_string(j + 1);
    add(ops.sigma(j, 1, 2), p.gamma21[j] * (1.0 + p.nbar_a[j]), "atom" + sfx + ".decay21");
    add(ops.sigma(j, 2, 1), p.gamma21[j] * p.nbar_a[j], "atom" + sfx + ".excite21");
    add(ops.sigma(j, 0, 1), p.gamma10[j] * (1.0 + p.nbar_a[j]), "atom" + sfx + ".decay10");
    add(ops.sigma(j, 1, 0), p.gamma10[j] * p.nbar_a[j], "atom" + sfx + ".excite10");
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const std::string sfx = std::to_string(j + 1);
    const QOperator& a = j == 0 ? ops.a1 : ops.a2;
    add(a, p.kappa_a[j] * (1.0 + p.nbar_c[j]), "cavity" + sfx + ".loss");
    add(dag(a), p.kappa_a[j] * p.nbar_c[j], "cavity" + sfx + ".gain");
  }
  add(ops.b, p.kappa_b * (1.0 + p.nbar_m), "mo.loss");
  add(dag(ops.b), p.kappa_b * p.nbar_m, "mo.gain");
  return out;
}

}  // namespace optomech
