#pragma once

// Figures of merit on states of the network: Uhlmann fidelity, negativity,
// residual contangle, quadrature fluctuations, Wigner grids and Fock-label
// populations.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "optomech/hilbert.hpp"

namespace optomech {

/// Tr sqrt(sqrt(a) b sqrt(a)); both states on the same space.
double fidelity(const QState& a, const QState& b);

/// Fidelity between a single-mode reference and subsystem `part` of `state`
/// (reduced first). The truncations must match.
double mode_fidelity(const QState& reference, const QState& state, std::size_t part);

/// Sum of |negative eigenvalues| of the partial transpose over `part`;
/// the state must live on exactly two subsystems.
double negativity(const QState& rho, std::size_t part);

/// [log2 ||rho^{T_part}||_1]^2
double contangle(const QState& rho, std::size_t part);

struct ContangleReport {
  double minimum = 0.0;
  std::array<double, 3> residual{};  ///< per root subsystem
  std::array<double, 3> rooted{};    ///< E^{A|(BC)}
  /// pairwise[a][b] = E^{a|b}
  std::array<std::array<double, 3>, 3> pairwise{};
};

/// Residual contangle of a three-subsystem state, minimized over the root.
ContangleReport residual_contangle(const QState& rho);

enum class Quadrature { X, Y };

struct QuadratureSpec {
  std::size_t mode = 0;
  double phase = 0.0;
  Quadrature quadrature = Quadrature::X;
};

/// X = (O e^{i phi} + O^dag e^{-i phi})/2, Y = (O e^{i phi} - O^dag e^{-i phi})/(2i).
double quadrature_variance(const QState& state, const QuadratureSpec& spec);

struct WignerSpec {
  double x_min = -4.0, x_max = 4.0;
  double p_min = -4.0, p_max = 4.0;
  int resolution = 128;

  bool operator==(const WignerSpec&) const = default;
};

struct WignerGrid {
  WignerSpec spec;
  std::vector<double> x, p;
  /// values(ix, ip)
  Eigen::MatrixXd values;

  double integral() const;
  double max() const { return values.maxCoeff(); }
  double min() const { return values.minCoeff(); }
  /// Value at the grid point nearest (x0, p0).
  double nearest(double x0, double p0) const;
};

/// Wigner function with alpha = (x + i p)/sqrt(2); vacuum peaks at 1/pi.
/// Kernels are cached per (truncation, spec).
WignerGrid wigner(const QState& single_mode, const WignerSpec& spec = {});

/// |<label|psi>|^2 or <label|rho|label>.
double population(const QState& state, std::span<const int> label);
double population(const QState& state, std::initializer_list<int> label);

/// Total population of basis states whose `part` digit equals `level`.
double level_population(const QState& state, std::size_t part, int level);

}  // namespace optomech
