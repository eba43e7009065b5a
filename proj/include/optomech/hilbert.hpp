#pragma once

// Tensor-product Hilbert spaces of three-level atoms and truncated bosonic
// modes, with the sparse operator algebra and the reductions (partial trace,
// partial transpose) needed by the entanglement measures.

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "optomech/error.hpp"

namespace optomech {

using cplx = std::complex<double>;
using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
using DenseMatrix = Eigen::MatrixXcd;
using Ket = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

inline constexpr cplx kI{0.0, 1.0};

struct SubsystemSpec {
  enum class Kind { Atom, Boson };

  Kind kind = Kind::Boson;
  int size = 2;  ///< atomic level count or Fock truncation
  std::string label;

  static SubsystemSpec atom(int levels, std::string label);
  static SubsystemSpec boson(int truncation, std::string label);

  bool is_boson() const { return kind == Kind::Boson; }
  bool operator==(const SubsystemSpec&) const = default;
};

/// Ordered tensor product of subsystems. Flat indices follow the Kronecker
/// convention: the first part is the most significant digit.
class CompositeSpace {
 public:
  CompositeSpace() = default;
  explicit CompositeSpace(std::vector<SubsystemSpec> parts);

  const std::vector<SubsystemSpec>& parts() const { return parts_; }
  const SubsystemSpec& part(std::size_t i) const { return parts_.at(i); }
  std::size_t size() const { return parts_.size(); }
  Index dim() const { return dim_; }
  Index part_dim(std::size_t i) const { return parts_.at(i).size; }

  /// Position of the part with the given label; throws InvalidIndex.
  std::size_t index_of(std::string_view label) const;

  /// Space made of the listed parts, kept in canonical (ascending) order.
  CompositeSpace subspace(std::span<const std::size_t> keep) const;

  Index flat_index(std::span<const int> digits) const;
  std::vector<int> digits(Index flat) const;

  bool operator==(const CompositeSpace& other) const { return parts_ == other.parts_; }

 private:
  std::vector<SubsystemSpec> parts_;
  std::vector<Index> strides_;
  Index dim_ = 1;
};

/// Sparse operator tagged with the space it acts on.
class QOperator {
 public:
  QOperator(CompositeSpace space, SparseMatrix matrix);

  static QOperator zero(const CompositeSpace& space);
  static QOperator identity(const CompositeSpace& space);

  const CompositeSpace& space() const { return space_; }
  const SparseMatrix& matrix() const { return matrix_; }
  Index dim() const { return space_.dim(); }

  bool is_hermitian(double tol = 1e-12) const;
  /// max |A_ij - conj(A_ji)|
  double hermiticity_defect() const;

  QOperator& operator+=(const QOperator& rhs);
  QOperator& operator-=(const QOperator& rhs);
  QOperator& operator*=(cplx weight);

 private:
  CompositeSpace space_;
  SparseMatrix matrix_;
};

QOperator operator+(QOperator lhs, const QOperator& rhs);
QOperator operator-(QOperator lhs, const QOperator& rhs);
QOperator operator*(const QOperator& lhs, const QOperator& rhs);
QOperator operator*(cplx weight, QOperator op);

/// Pure state or density matrix on a CompositeSpace.
class QState {
 public:
  enum class Kind { Vector, DensityMatrix };

  /// Validation level for density matrices. Full adds the eigenvalue
  /// positivity check, which costs a dense diagonalization.
  enum class Check { None, Basic, Full };

  static constexpr double kNormTol = 1e-9;
  static constexpr double kPositivityTol = 1e-8;

  static QState vector(CompositeSpace space, Ket psi, double norm_tol = kNormTol);
  static QState density(CompositeSpace space, DenseMatrix rho, Check check = Check::Full,
                        double tol = kNormTol);

  Kind kind() const { return kind_; }
  bool is_vector() const { return kind_ == Kind::Vector; }
  const CompositeSpace& space() const { return space_; }
  Index dim() const { return space_.dim(); }

  /// Throw WrongKind when the state has the other representation.
  const Ket& ket() const;
  const DenseMatrix& rho() const;

  /// Density matrix of this state (outer product for vectors).
  DenseMatrix density_matrix() const;
  QState as_density() const;

  double trace_or_norm2() const;
  /// Smallest eigenvalue (0 for vectors).
  double min_eigenvalue() const;

 private:
  QState(CompositeSpace space, Kind kind, std::variant<Ket, DenseMatrix> data);

  CompositeSpace space_;
  Kind kind_;
  std::variant<Ket, DenseMatrix> data_;
};

// Single-subsystem building blocks.
QOperator destroy(int truncation);
QOperator number_operator(int truncation);
/// |k><l| on one atom.
QOperator atomic_sigma(int levels, int k, int l);

/// I x ... x op x ... x I with op placed at `index`.
QOperator embed(const QOperator& op, std::size_t index, const CompositeSpace& space);

QOperator compose(std::span<const QOperator> ops, std::span<const cplx> weights);
QOperator multiply(const QOperator& a, const QOperator& b);
QOperator dag(const QOperator& a);

/// Tr(rho op) or <psi|op|psi>. The imaginary part is returned as computed.
cplx expectation(const QOperator& op, const QState& state);

/// Product-basis ket |d0, d1, ...>.
Ket basis_ket(const CompositeSpace& space, std::span<const int> digits);
QState basis_state(const CompositeSpace& space, std::initializer_list<int> digits);

/// Tensor product of states; the result is a DensityMatrix if any factor is.
QState tensor(std::span<const QState> factors);

/// Reduced state on the kept subsystems (canonical order). Vectors are
/// reduced without forming the full density matrix.
QState partial_trace(const QState& state, std::span<const std::size_t> keep);
QState partial_trace(const QState& state, std::initializer_list<std::size_t> keep);

/// Transpose of the indices belonging to subsystem `part`.
DenseMatrix partial_transpose(const QState& rho, std::size_t part);

/// Ascending spectrum of a Hermitian matrix; NumericValidity if the input
/// deviates from Hermitian by more than `herm_tol`.
RealVector eig_hermitian(const DenseMatrix& m, double herm_tol = 1e-8);
double trace_norm(const DenseMatrix& m, double herm_tol = 1e-8);

double max_abs(const DenseMatrix& m);
double hermiticity_defect(const DenseMatrix& m);

}  // namespace optomech
