#pragma once

// Hamiltonians, dissipators and initial states of the two-cavity network:
// atom1, atom2 (three levels each), cavity1, mechanical oscillator, cavity2.
// All frequencies and rates are in units of the mechanical frequency.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optomech/hilbert.hpp"

namespace optomech {

/// Canonical subsystem positions.
enum Subsystem : std::size_t { kAtom1 = 0, kAtom2 = 1, kCavity1 = 2, kMO = 3, kCavity2 = 4 };
inline constexpr std::array<std::string_view, 5> kSubsystemLabels{"atom1", "atom2", "cavity1", "mo", "cavity2"};

/// (atom1, atom2, cavity1, MO, cavity2) with three-level atoms.
CompositeSpace network_space(int cavity1_truncation, int mo_truncation, int cavity2_truncation);

/// Index of one of the three bosonic modes in the canonical ordering
/// (cavity1, mo, cavity2) -> (0, 1, 2) for per-mode parameter arrays.
std::size_t boson_slot(std::size_t subsystem);

struct SystemParams {
  double omega_m = 1.0;
  std::array<double, 2> omega_c{10.0, 10.0};
  /// Level energies omega_{i,j}; defaults give Delta_j = -omega_m.
  std::array<std::array<double, 3>, 2> omega_atom{{{0.0, 5.0, 14.0}, {0.0, 5.0, 14.0}}};
  std::array<double, 2> g{100.0, 100.0};
  double lambda = 0.01;
  /// When set, replaces g_j * lambda / omega_m.
  std::array<std::optional<double>, 2> Lambda_override{};
  std::array<double, 2> Omega1{0.0, 0.0};
  std::array<double, 2> Omega2{0.0, 0.0};
  /// Declared detuning omega_{2,j} - omega_{1,j} - omega_{c_j}.
  std::array<double, 2> Delta{-1.0, -1.0};
  double q = 0.0;
  double q_prime = 0.0;
  std::array<double, 2> gamma21{0.0, 0.0};
  std::array<double, 2> gamma10{0.0, 0.0};
  std::array<double, 2> kappa_a{0.0, 0.0};
  double kappa_b = 0.0;
  std::array<double, 2> nbar_a{0.0, 0.0};
  std::array<double, 2> nbar_c{0.0, 0.0};
  double nbar_m = 0.0;
  /// Quadrature phases for (cavity1, mo, cavity2).
  std::array<double, 3> phi{0.0, 0.0, 0.0};

  /// Tripartite coupling of atom/cavity j (0-based).
  double Lambda(std::size_t j) const;

  /// Non-negativity of rates, drives, pumps and occupations, and agreement
  /// of Delta with the level energies. Throws Config naming the field.
  void validate() const;

  bool any_dissipation() const;
};

// ---------------------------------------------------------------------------
// Initial states

struct Ground {
  bool operator==(const Ground&) const = default;
};
struct Fock {
  int n = 0;
  bool operator==(const Fock&) const = default;
};
struct Squeezed {
  cplx xi{0.0, 0.0};
  bool operator==(const Squeezed&) const = default;
};
struct Cat {
  cplx alpha{0.0, 0.0};
  bool operator==(const Cat&) const = default;
};
struct Thermal {
  double nbar = 0.0;
  bool operator==(const Thermal&) const = default;
};

using FactorRecipe = std::variant<Ground, Fock, Squeezed, Cat, Thermal>;

struct StateRecipe {
  /// One factor per canonical subsystem.
  std::array<FactorRecipe, 5> factors{Ground{}, Ground{}, Ground{}, Ground{}, Ground{}};
  /// Largest Fock population allowed beyond the truncation.
  double tail_tolerance = 1e-4;

  bool has_mixed_factor() const;
  /// Copy with every Thermal factor replaced by vacuum; `max_nbar` receives
  /// the largest replaced occupation (bound on the fidelity error).
  StateRecipe thermal_as_vacuum(double* max_nbar = nullptr) const;

  bool operator==(const StateRecipe&) const = default;
};

/// exp[(xi* a^2 - xi a^dag^2)/2]|0> on the truncated space, renormalized.
QState squeezed_vacuum(int truncation, cplx xi, double tail_tolerance = 1e-4);
/// N(|alpha> + |-alpha>) on the truncated space.
QState cat_state(int truncation, cplx alpha, double tail_tolerance = 1e-4);
/// Fock-diagonal thermal state, renormalized over the truncated space.
QState thermal_state(int truncation, double nbar);
/// Bose-Einstein occupation with hbar = k_B = 1.
double thermal_occupation(double omega, double temperature);

/// Population beyond `truncation` of the exact (untruncated) squeezed or cat
/// state; used by the tail check.
double squeezed_tail(int truncation, cplx xi);
double cat_tail(int truncation, cplx alpha);

QState assemble_initial_state(const StateRecipe& recipe, const CompositeSpace& space);

// ---------------------------------------------------------------------------
// Hamiltonians and dissipators

QOperator build_full_hamiltonian(const SystemParams& p, const CompositeSpace& space);
QOperator build_effective_hamiltonian(const SystemParams& p, const CompositeSpace& space);
QOperator build_drive_hamiltonian(const SystemParams& p, const CompositeSpace& space);

enum class PumpTarget { MO, Cavity1 };
PumpTarget parse_pump_target(std::string_view name);
std::string_view to_string(PumpTarget target);
QOperator build_squeeze_pump(const SystemParams& p, const CompositeSpace& space, PumpTarget target);

/// Jump operator with rate Gamma; contributes (Gamma/2) L[O] with
/// L[O] = 2 O rho O^dag - O^dag O rho - rho O^dag O.
struct Channel {
  QOperator op;
  double rate = 0.0;
  std::string name;

  double prefactor() const { return 0.5 * rate; }
};

using DissipatorSpec = std::vector<Channel>;

/// All atomic, cavity and mechanical channels with nonzero rate.
DissipatorSpec build_dissipators(const SystemParams& p, const CompositeSpace& space);

/// Local operators of the canonical space, embedded.
struct NetworkOperators {
  QOperator a1, a2, b;
  /// sigma_{kl,j} = |k><l| on atom j.
  QOperator sigma(std::size_t j, int k, int l) const;
  const CompositeSpace& space() const { return a1.space(); }
};
NetworkOperators network_operators(const CompositeSpace& space);

/// Throws SpaceShape unless `space` has the canonical five-part layout.
void require_network_space(const CompositeSpace& space);

}  // namespace optomech
