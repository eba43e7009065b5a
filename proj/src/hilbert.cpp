#include "optomech/hilbert.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace optomech {

namespace {

std::string dims_string(Index a, Index b) {
  std::ostringstream os;
  os << a << " vs " << b;
  return os.str();
}

void require_same_space(const CompositeSpace& a, const CompositeSpace& b, std::string_view what) {
  if (!(a == b)) {
    throw Error(ErrorKind::SpaceMismatch, std::string(what) + ": operands live on different spaces (dim " +
                                              dims_string(a.dim(), b.dim()) + ")");
  }
}

CompositeSpace single(SubsystemSpec spec) { return CompositeSpace({std::move(spec)}); }

}  // namespace

// ---------------------------------------------------------------------------
// SubsystemSpec / CompositeSpace

SubsystemSpec SubsystemSpec::atom(int levels, std::string label) {
  if (levels < 2) throw Error(ErrorKind::InvalidDimension, "atom needs at least 2 levels");
  return {Kind::Atom, levels, std::move(label)};
}

SubsystemSpec SubsystemSpec::boson(int truncation, std::string label) {
  if (truncation < 2) throw Error(ErrorKind::InvalidDimension, "boson truncation must be >= 2");
  return {Kind::Boson, truncation, std::move(label)};
}

CompositeSpace::CompositeSpace(std::vector<SubsystemSpec> parts) : parts_(std::move(parts)) {
  if (parts_.empty()) throw Error(ErrorKind::InvalidDimension, "composite space needs at least one part");
  std::set<std::string> labels;
  for (const auto& p : parts_) {
    if (p.size < 2) throw Error(ErrorKind::InvalidDimension, "subsystem '" + p.label + "' has dimension < 2");
    if (!labels.insert(p.label).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate subsystem label '" + p.label + "'");
    }
  }
  strides_.assign(parts_.size(), 1);
  dim_ = 1;
  for (std::size_t i = parts_.size(); i-- > 0;) {
    strides_[i] = dim_;
    dim_ *= parts_[i].size;
  }
}

std::size_t CompositeSpace::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (parts_[i].label == label) return i;
  }
  throw Error(ErrorKind::InvalidIndex, "no subsystem labelled '" + std::string(label) + "'");
}

CompositeSpace CompositeSpace::subspace(std::span<const std::size_t> keep) const {
  std::vector<std::size_t> sorted(keep.begin(), keep.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<SubsystemSpec> out;
  for (auto i : sorted) {
    if (i >= parts_.size()) throw Error(ErrorKind::InvalidIndex, "subsystem index out of range");
    out.push_back(parts_[i]);
  }
  return CompositeSpace(std::move(out));
}

Index CompositeSpace::flat_index(std::span<const int> digits) const {
  if (digits.size() != parts_.size()) {
    throw Error(ErrorKind::InvalidIndex, "label length does not match subsystem count");
  }
  Index flat = 0;
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    if (digits[i] < 0 || digits[i] >= parts_[i].size) {
      throw Error(ErrorKind::InvalidIndex,
                  "level " + std::to_string(digits[i]) + " out of range for '" + parts_[i].label + "'");
    }
    flat += digits[i] * strides_[i];
  }
  return flat;
}

std::vector<int> CompositeSpace::digits(Index flat) const {
  if (flat < 0 || flat >= dim_) throw Error(ErrorKind::InvalidIndex, "flat index out of range");
  std::vector<int> out(parts_.size());
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    out[i] = static_cast<int>(flat / strides_[i]);
    flat %= strides_[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// QOperator

QOperator::QOperator(CompositeSpace space, SparseMatrix matrix)
    : space_(std::move(space)), matrix_(std::move(matrix)) {
  if (matrix_.rows() != space_.dim() || matrix_.cols() != space_.dim()) {
    throw Error(ErrorKind::InvalidDimension,
                "operator shape does not match space dimension " + std::to_string(space_.dim()));
  }
  matrix_.makeCompressed();
}

QOperator QOperator::zero(const CompositeSpace& space) {
  return QOperator(space, SparseMatrix(space.dim(), space.dim()));
}

QOperator QOperator::identity(const CompositeSpace& space) {
  SparseMatrix id(space.dim(), space.dim());
  id.setIdentity();
  return QOperator(space, std::move(id));
}

double QOperator::hermiticity_defect() const {
  SparseMatrix diff = matrix_ - SparseMatrix(matrix_.adjoint());
  double worst = 0.0;
  for (Index k = 0; k < diff.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  }
  return worst;
}

bool QOperator::is_hermitian(double tol) const { return hermiticity_defect() <= tol; }

QOperator& QOperator::operator+=(const QOperator& rhs) {
  require_same_space(space_, rhs.space_, "add");
  matrix_ += rhs.matrix_;
  matrix_.makeCompressed();
  return *this;
}

QOperator& QOperator::operator-=(const QOperator& rhs) {
  require_same_space(space_, rhs.space_, "subtract");
  matrix_ -= rhs.matrix_;
  matrix_.makeCompressed();
  return *this;
}

QOperator& QOperator::operator*=(cplx weight) {
  matrix_ *= weight;
  return *this;
}

QOperator operator+(QOperator lhs, const QOperator& rhs) { return lhs += rhs; }
QOperator operator-(QOperator lhs, const QOperator& rhs) { return lhs -= rhs; }
QOperator operator*(const QOperator& lhs, const QOperator& rhs) { return multiply(lhs, rhs); }
QOperator operator*(cplx weight, QOperator op) { return op *= weight; }

// ---------------------------------------------------------------------------
// QState

QState::QState(CompositeSpace space, Kind kind, std::variant<Ket, DenseMatrix> data)
    : space_(std::move(space)), kind_(kind), data_(std::move(data)) {}

QState QState::vector(CompositeSpace space, Ket psi, double norm_tol) {
  if (psi.size() != space.dim()) {
    throw Error(ErrorKind::InvalidDimension, "state vector length does not match space dimension");
  }
  const double drift = std::abs(psi.norm() - 1.0);
  if (drift > norm_tol) {
    throw Error(ErrorKind::NumericValidity, "state vector not normalized (|norm-1| = " + std::to_string(drift) + ")");
  }
  return QState(std::move(space), Kind::Vector, std::move(psi));
}

QState QState::density(CompositeSpace space, DenseMatrix rho, Check check, double tol) {
  if (rho.rows() != space.dim() || rho.cols() != space.dim()) {
    throw Error(ErrorKind::InvalidDimension, "density matrix shape does not match space dimension");
  }
  if (check != Check::None) {
    const double tr_err = std::abs(rho.trace() - cplx(1.0));
    if (tr_err > tol) {
      throw Error(ErrorKind::NumericValidity, "density matrix trace deviates from 1 by " + std::to_string(tr_err));
    }
    const double herm = hermiticity_defect(rho);
    if (herm > tol) {
      throw Error(ErrorKind::NumericValidity, "density matrix not Hermitian (defect " + std::to_string(herm) + ")");
    }
  }
  if (check == Check::Full) {
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(rho, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    if (lo < -kPositivityTol) {
      throw Error(ErrorKind::NumericValidity, "density matrix has eigenvalue " + std::to_string(lo));
    }
  }
  return QState(std::move(space), Kind::DensityMatrix, std::move(rho));
}

const Ket& QState::ket() const {
  if (kind_ != Kind::Vector) throw Error(ErrorKind::WrongKind, "state is a density matrix, not a vector");
  return std::get<Ket>(data_);
}

const DenseMatrix& QState::rho() const {
  if (kind_ != Kind::DensityMatrix) throw Error(ErrorKind::WrongKind, "state is a vector, not a density matrix");
  return std::get<DenseMatrix>(data_);
}

DenseMatrix QState::density_matrix() const {
  if (kind_ == Kind::DensityMatrix) return std::get<DenseMatrix>(data_);
  const Ket& psi = std::get<Ket>(data_);
  return psi * psi.adjoint();
}

QState QState::as_density() const {
  if (kind_ == Kind::DensityMatrix) return *this;
  return QState(space_, Kind::DensityMatrix, density_matrix());
}

double QState::trace_or_norm2() const {
  if (kind_ == Kind::Vector) return std::get<Ket>(data_).squaredNorm();
  return std::get<DenseMatrix>(data_).trace().real();
}

double QState::min_eigenvalue() const {
  if (kind_ == Kind::Vector) return 0.0;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(std::get<DenseMatrix>(data_), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Building blocks

QOperator destroy(int truncation) {
  if (truncation < 2) throw Error(ErrorKind::InvalidDimension, "destroy: truncation must be >= 2");
  SparseMatrix a(truncation, truncation);
  a.reserve(Eigen::VectorXi::Constant(truncation, 1));
  for (int n = 1; n < truncation; ++n) a.insert(n - 1, n) = std::sqrt(static_cast<double>(n));
  return QOperator(single(SubsystemSpec::boson(truncation, "mode")), std::move(a));
}

QOperator number_operator(int truncation) {
  const QOperator a = destroy(truncation);
  return multiply(dag(a), a);
}

QOperator atomic_sigma(int levels, int k, int l) {
  if (levels < 2) throw Error(ErrorKind::InvalidDimension, "atomic_sigma: levels must be >= 2");
  if (k < 0 || l < 0 || k >= levels || l >= levels) {
    throw Error(ErrorKind::InvalidIndex, "atomic_sigma: level index out of range");
  }
  SparseMatrix s(levels, levels);
  s.insert(k, l) = 1.0;
  return QOperator(single(SubsystemSpec::atom(levels, "atom")), std::move(s));
}

QOperator embed(const QOperator& op, std::size_t index, const CompositeSpace& space) {
  if (index >= space.size()) throw Error(ErrorKind::InvalidEmbedding, "embed: subsystem index out of range");
  const Index d = space.part_dim(index);
  if (op.dim() != d) {
    throw Error(ErrorKind::InvalidEmbedding, "embed: operator dimension " + std::to_string(op.dim()) +
                                                 " does not match subsystem dimension " + std::to_string(d));
  }
  Index left = 1;
  for (std::size_t i = 0; i < index; ++i) left *= space.part_dim(i);
  Index right = 1;
  for (std::size_t i = index + 1; i < space.size(); ++i) right *= space.part_dim(i);

  std::vector<Eigen::Triplet<cplx>> trips;
  trips.reserve(static_cast<std::size_t>(op.matrix().nonZeros() * left * right));
  for (Index k = 0; k < op.matrix().outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(op.matrix(), k); it; ++it) {
      for (Index l = 0; l < left; ++l) {
        const Index row0 = (l * d + it.row()) * right;
        const Index col0 = (l * d + it.col()) * right;
        for (Index r = 0; r < right; ++r) trips.emplace_back(row0 + r, col0 + r, it.value());
      }
    }
  }
  SparseMatrix m(space.dim(), space.dim());
  m.setFromTriplets(trips.begin(), trips.end());
  return QOperator(space, std::move(m));
}

QOperator compose(std::span<const QOperator> ops, std::span<const cplx> weights) {
  if (ops.empty()) throw Error(ErrorKind::InvalidArgument, "compose: empty operator list");
  if (ops.size() != weights.size()) throw Error(ErrorKind::InvalidArgument, "compose: weight count mismatch");
  QOperator out = QOperator::zero(ops.front().space());
  for (std::size_t i = 0; i < ops.size(); ++i) {
    require_same_space(out.space(), ops[i].space(), "compose");
    out += weights[i] * ops[i];
  }
  return out;
}

QOperator multiply(const QOperator& a, const QOperator& b) {
  require_same_space(a.space(), b.space(), "multiply");
  SparseMatrix m = (a.matrix() * b.matrix()).pruned();
  return QOperator(a.space(), std::move(m));
}

QOperator dag(const QOperator& a) { return QOperator(a.space(), SparseMatrix(a.matrix().adjoint())); }

cplx expectation(const QOperator& op, const QState& state) {
  require_same_space(op.space(), state.space(), "expectation");
  if (state.is_vector()) {
    const Ket& psi = state.ket();
    return psi.dot(op.matrix() * psi);
  }
  // Tr(rho A) = sum_ij rho_ji A_ij over the nonzeros of A.
  const DenseMatrix& rho = state.rho();
  cplx acc = 0.0;
  const SparseMatrix& m = op.matrix();
  for (Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) acc += rho(it.col(), it.row()) * it.value();
  }
  return acc;
}

Ket basis_ket(const CompositeSpace& space, std::span<const int> digits) {
  Ket psi = Ket::Zero(space.dim());
  psi(space.flat_index(digits)) = 1.0;
  return psi;
}

QState basis_state(const CompositeSpace& space, std::initializer_list<int> digits) {
  return QState::vector(space, basis_ket(space, std::span<const int>(digits.begin(), digits.size())));
}

QState tensor(std::span<const QState> factors) {
  if (factors.empty()) throw Error(ErrorKind::InvalidArgument, "tensor: no factors");
  std::vector<SubsystemSpec> parts;
  bool any_density = false;
  for (const auto& f : factors) {
    parts.insert(parts.end(), f.space().parts().begin(), f.space().parts().end());
    any_density = any_density || !f.is_vector();
  }
  CompositeSpace space(std::move(parts));
  if (!any_density) {
    Ket psi = factors.front().ket();
    for (std::size_t i = 1; i < factors.size(); ++i) {
      const Ket& next = factors[i].ket();
      Ket out(psi.size() * next.size());
      for (Index a = 0; a < psi.size(); ++a) out.segment(a * next.size(), next.size()) = psi(a) * next;
      psi = std::move(out);
    }
    return QState::vector(std::move(space), std::move(psi), 1e-8);
  }
  DenseMatrix rho = factors.front().density_matrix();
  for (std::size_t i = 1; i < factors.size(); ++i) {
    const DenseMatrix next = factors[i].density_matrix();
    const Index n = next.rows();
    DenseMatrix out(rho.rows() * n, rho.cols() * n);
    for (Index c = 0; c < rho.cols(); ++c) {
      for (Index r = 0; r < rho.rows(); ++r) out.block(r * n, c * n, n, n) = rho(r, c) * next;
    }
    rho = std::move(out);
  }
  // Factors are individually validated; positivity of the product follows.
  return QState::density(std::move(space), std::move(rho), QState::Check::Basic, 1e-8);
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct Split {
  std::vector<Index> kept;    // kept-subspace index of each flat index
  std::vector<Index> traced;  // traced-subspace index of each flat index
  Index kept_dim = 1;
  Index traced_dim = 1;
};

Split split_indices(const CompositeSpace& space, const std::vector<bool>& keep_mask) {
  Split s;
  for (std::size_t i = 0; i < space.size(); ++i) (keep_mask[i] ? s.kept_dim : s.traced_dim) *= space.part_dim(i);
  s.kept.resize(static_cast<std::size_t>(space.dim()));
  s.traced.resize(static_cast<std::size_t>(space.dim()));
  std::vector<int> digits(space.size(), 0);
  for (Index flat = 0; flat < space.dim(); ++flat) {
    Index k = 0;
    Index t = 0;
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (keep_mask[i]) {
        k = k * space.part_dim(i) + digits[i];
      } else {
        t = t * space.part_dim(i) + digits[i];
      }
    }
    s.kept[static_cast<std::size_t>(flat)] = k;
    s.traced[static_cast<std::size_t>(flat)] = t;
    // odometer increment, last part fastest
    for (std::size_t i = space.size(); i-- > 0;) {
      if (++digits[i] < space.part_dim(i)) break;
      digits[i] = 0;
    }
  }
  return s;
}

}  // namespace

QState partial_trace(const QState& state, std::span<const std::size_t> keep) {
  if (keep.empty()) throw Error(ErrorKind::InvalidArgument, "partial_trace: empty keep set");
  const CompositeSpace& space = state.space();
  std::vector<bool> mask(space.size(), false);
  for (auto i : keep) {
    if (i >= space.size()) throw Error(ErrorKind::InvalidIndex, "partial_trace: subsystem index out of range");
    mask[i] = true;
  }
  CompositeSpace reduced = space.subspace(keep);
  const Split s = split_indices(space, mask);

  if (state.is_vector()) {
    const Ket& psi = state.ket();
    DenseMatrix m = DenseMatrix::Zero(s.kept_dim, s.traced_dim);
    for (Index i = 0; i < space.dim(); ++i) {
      m(s.kept[static_cast<std::size_t>(i)], s.traced[static_cast<std::size_t>(i)]) = psi(i);
    }
    DenseMatrix rho = m * m.adjoint();
    return QState::density(std::move(reduced), std::move(rho), QState::Check::None);
  }

  const DenseMatrix& rho = state.rho();
  // Group flat indices by their traced coordinate.
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(s.traced_dim));
  for (Index i = 0; i < space.dim(); ++i) groups[static_cast<std::size_t>(s.traced[static_cast<std::size_t>(i)])].push_back(i);
  DenseMatrix out = DenseMatrix::Zero(s.kept_dim, s.kept_dim);
  for (const auto& g : groups) {
    for (Index col : g) {
      const Index kc = s.kept[static_cast<std::size_t>(col)];
      for (Index row : g) out(s.kept[static_cast<std::size_t>(row)], kc) += rho(row, col);
    }
  }
  return QState::density(std::move(reduced), std::move(out), QState::Check::None);
}

QState partial_trace(const QState& state, std::initializer_list<std::size_t> keep) {
  return partial_trace(state, std::span<const std::size_t>(keep.begin(), keep.size()));
}

DenseMatrix partial_transpose(const QState& state, std::size_t part) {
  if (state.is_vector()) throw Error(ErrorKind::WrongKind, "partial_transpose: needs a density matrix");
  const CompositeSpace& space = state.space();
  if (part >= space.size()) throw Error(ErrorKind::InvalidIndex, "partial_transpose: subsystem index out of range");
  const DenseMatrix& rho = state.rho();
  Index stride = 1;
  for (std::size_t i = part + 1; i < space.size(); ++i) stride *= space.part_dim(i);
  const Index d = space.part_dim(part);
  const Index n = space.dim();
  DenseMatrix out(n, n);
  for (Index col = 0; col < n; ++col) {
    const Index dc = (col / stride) % d;
    const Index col_base = col - dc * stride;
    for (Index row = 0; row < n; ++row) {
      const Index dr = (row / stride) % d;
      const Index row_base = row - dr * stride;
      // swap the chosen subsystem's digits between row and column
      out(row, col) = rho(row_base + dc * stride, col_base + dr * stride);
    }
  }
  return out;
}

double max_abs(const DenseMatrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double hermiticity_defect(const DenseMatrix& m) { return max_abs(m - m.adjoint()); }

RealVector eig_hermitian(const DenseMatrix& m, double herm_tol) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::NumericValidity, "eig_hermitian: matrix not square");
  const double defect = hermiticity_defect(m);
  if (defect > herm_tol) {
    throw Error(ErrorKind::NumericValidity, "eig_hermitian: non-Hermitian input (defect " + std::to_string(defect) + ")");
  }
  const DenseMatrix h = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double trace_norm(const DenseMatrix& m, double herm_tol) { return eig_hermitian(m, herm_tol).cwiseAbs().sum(); }

}  // namespace optomech
