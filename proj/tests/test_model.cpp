#include <doctest.h>

#include <cmath>

#include "oracle.hpp"
#include "optomech/measures.hpp"
#include "optomech/model.hpp"

using namespace optomech;
using oracle::Mat;
using oracle::Vec;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Io;
}

// Dense single-site operators placed into (atom1, atom2, c1, mo, c2).
struct DenseNetwork {
  int n1, nb, n2;
  Mat place(const Mat& op, int slot) const {
    std::vector<Mat> f{oracle::eye(3), oracle::eye(3), oracle::eye(n1), oracle::eye(nb), oracle::eye(n2)};
    f[slot] = op;
    return oracle::kron({f[0], f[1], f[2], f[3], f[4]});
  }
  Mat a(int j) const { return place(oracle::lower(j == 0 ? n1 : n2), j == 0 ? 2 : 4); }
  Mat b() const { return place(oracle::lower(nb), 3); }
  Mat s(int j, int k, int l) const { return place(oracle::unit(3, k, l), j); }
};

SystemParams generic_params() {
  SystemParams p;
  p.omega_c = {9.3, 11.7};
  p.omega_atom = {{{0.1, 4.0, 12.3}, {-0.2, 5.5, 16.2}}};
  p.Delta = {12.3 - 4.0 - 9.3, 16.2 - 5.5 - 11.7};
  p.g = {1.7, 2.9};
  p.lambda = 0.37;
  return p;
}

// Analytic amplitudes of S(xi)|0> for xi = r e^{i theta}.
Vec squeezed_amplitudes(int n, double r, double theta) {
  Vec v = Vec::Zero(n);
  const cplx ratio = -std::exp(cplx(0, theta)) * std::tanh(r);
  for (int m = 0; 2 * m < n; ++m) {
    const double comb = std::exp(0.5 * std::lgamma(2 * m + 1.0) - m * std::log(2.0) - std::lgamma(m + 1.0));
    v(2 * m) = std::pow(ratio, m) * comb / std::sqrt(std::cosh(r));
  }
  return v;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("full Hamiltonian against a dense construction") {
  const SystemParams p = generic_params();
  const int n1 = 3, nb = 3, n2 = 2;
  const CompositeSpace space = network_space(n1, nb, n2);
  const DenseNetwork d{n1, nb, n2};
  const Mat bd = d.b().adjoint();
  Mat h = p.omega_m * bd * d.b();
  for (int j = 0; j < 2; ++j) {
    const Mat a = d.a(j), ad = a.adjoint();
    h += p.omega_c[j] * ad * a;
    for (int i = 0; i < 3; ++i) h += p.omega_atom[j][i] * d.s(j, i, i);
    h += p.g[j] * (a * d.s(j, 2, 1) + ad * d.s(j, 1, 2));
    h += std::pow(-1.0, j + 1) * p.lambda * ad * a * (d.b() + bd);
  }
  const QOperator built = build_full_hamiltonian(p, space);
  CHECK(oracle::max_abs(oracle::dense(built) - h) < 1e-13);
  CHECK(built.is_hermitian(1e-12));

  // first cavity carries -lambda, the second +lambda
  const Mat hb = oracle::dense(built);
  const Index i1 = space.flat_index(std::vector<int>{0, 0, 1, 0, 0});
  const Index j1 = space.flat_index(std::vector<int>{0, 0, 1, 1, 0});
  const Index i2 = space.flat_index(std::vector<int>{0, 0, 0, 0, 1});
  const Index j2 = space.flat_index(std::vector<int>{0, 0, 0, 1, 1});
  CHECK(hb(i1, j1).real() == doctest::Approx(-p.lambda));
  CHECK(hb(i2, j2).real() == doctest::Approx(p.lambda));
}

TEST_CASE("full Hamiltonian diagonal cases") {
  SystemParams p;
  p.g = {0, 0};
  p.lambda = 0;
  const CompositeSpace space = network_space(4, 3, 3);
  const Mat h = oracle::dense(build_full_hamiltonian(p, space));
  CHECK(oracle::max_abs(h - Mat(h.diagonal().asDiagonal())) == 0.0);

  SystemParams q;
  const Index k = space.flat_index(std::vector<int>{0, 0, 2, 0, 0});
  const Mat hq = oracle::dense(build_full_hamiltonian(q, space));
  CHECK(hq(k, k).real() == doctest::Approx(2 * q.omega_c[0] + q.omega_atom[0][0] + q.omega_atom[1][0]));

  const CompositeSpace three({SubsystemSpec::atom(3, "a"), SubsystemSpec::boson(3, "c"), SubsystemSpec::boson(3, "b")});
  CHECK(kind_of([&] { (void)build_full_hamiltonian(q, three); }) == ErrorKind::SpaceShape);
}

TEST_CASE("effective Hamiltonian matrix elements and signs") {
  SystemParams p;
  p.Lambda_override = {0.7, 1.3};
  const int n1 = 4, nb = 4, n2 = 4;
  const CompositeSpace space = network_space(n1, nb, n2);
  const DenseNetwork d{n1, nb, n2};
  Mat h = Mat::Zero(space.dim(), space.dim());
  for (int j = 0; j < 2; ++j) {
    const Mat t = std::pow(-1.0, j) * p.Lambda(j) * d.a(j) * d.s(j, 2, 1) * d.b().adjoint();
    h += t + t.adjoint();
  }
  const QOperator built = build_effective_hamiltonian(p, space);
  CHECK(oracle::max_abs(oracle::dense(built) - h) < 1e-13);
  CHECK(built.is_hermitian());

  const Mat hb = oracle::dense(built);
  for (int nc = 1; nc < n1; ++nc)
    for (int b = 0; b + 1 < nb; ++b) {
      const Index from = space.flat_index(std::vector<int>{1, 0, nc, b, 0});
      const Index to = space.flat_index(std::vector<int>{2, 0, nc - 1, b + 1, 0});
      CHECK(hb(to, from).real() == doctest::Approx(0.7 * std::sqrt(double(nc)) * std::sqrt(b + 1.0)));
      const Index from2 = space.flat_index(std::vector<int>{0, 1, 0, b, nc});
      const Index to2 = space.flat_index(std::vector<int>{0, 2, 0, b + 1, nc - 1});
      CHECK(hb(to2, from2).real() == doctest::Approx(-1.3 * std::sqrt(double(nc)) * std::sqrt(b + 1.0)));
    }

  SystemParams zero;
  zero.Lambda_override = {0.0, 0.0};
  CHECK(build_effective_hamiltonian(zero, space).matrix().norm() == 0.0);

  SystemParams derived;
  CHECK(derived.Lambda(0) == doctest::Approx(100 * 0.01));

  SystemParams off;
  off.Delta = {0.0, -1.0};
  CHECK(kind_of([&] { (void)build_effective_hamiltonian(off, space); }) == ErrorKind::ModelRegime);
}

TEST_CASE("effective Hamiltonian only exchanges (+1,-1,+1) excitations") {
  SystemParams p;
  p.Lambda_override = {1.0, 0.0};
  const CompositeSpace space = network_space(4, 4, 3);
  const SparseMatrix m = build_effective_hamiltonian(p, space).matrix();
  for (Index r = 0; r < m.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      if (std::abs(it.value()) == 0.0) continue;
      const auto to = space.digits(it.row());
      const auto from = space.digits(it.col());
      const int da = to[0] - from[0], dc = to[2] - from[2], db = to[3] - from[3];
      const bool forward = da == 1 && dc == -1 && db == 1;
      const bool back = da == -1 && dc == 1 && db == -1;
      CHECK((forward || back));
      CHECK(to[1] == from[1]);
      CHECK(to[4] == from[4]);
    }
}

TEST_CASE("drive Hamiltonian") {
  SystemParams p;
  const CompositeSpace space = network_space(2, 2, 2);
  CHECK(build_drive_hamiltonian(p, space).matrix().norm() == 0.0);
  p.Omega1 = {3.0, 0.5};
  p.Omega2 = {2.0, 0.25};
  const QOperator h = build_drive_hamiltonian(p, space);
  CHECK(h.is_hermitian());
  const Ket out = h.matrix() * basis_ket(space, std::vector<int>{0, 0, 0, 0, 0});
  CHECK(std::abs(out(space.flat_index(std::vector<int>{2, 0, 0, 0, 0})) - 3.0) < 1e-15);
  CHECK(std::abs(out(space.flat_index(std::vector<int>{1, 0, 0, 0, 0})) - 2.0) < 1e-15);
  CHECK(std::abs(out(space.flat_index(std::vector<int>{0, 2, 0, 0, 0})) - 0.5) < 1e-15);
  CHECK(std::abs(out(space.flat_index(std::vector<int>{0, 1, 0, 0, 0})) - 0.25) < 1e-15);
  CHECK(out.norm() == doctest::Approx(std::sqrt(9 + 4 + 0.25 + 0.0625)));
}

TEST_CASE("squeeze pumps") {
  SystemParams p;
  const CompositeSpace space = network_space(5, 6, 2);
  CHECK(build_squeeze_pump(p, space, PumpTarget::MO).matrix().norm() == 0.0);
  p.q = 0.01;
  p.q_prime = 0.02;
  const Mat hm = oracle::dense(build_squeeze_pump(p, space, PumpTarget::MO));
  const Mat hc = oracle::dense(build_squeeze_pump(p, space, PumpTarget::Cavity1));
  CHECK(oracle::max_abs(hm - hm.adjoint()) == 0.0);
  CHECK(oracle::max_abs(hc - hc.adjoint()) == 0.0);
  for (int n = 0; n + 2 < 6; ++n) {
    const Index from = space.flat_index(std::vector<int>{0, 0, 0, n, 0});
    const Index to = space.flat_index(std::vector<int>{0, 0, 0, n + 2, 0});
    CHECK(hm(to, from).real() == doctest::Approx(0.01 * std::sqrt((n + 1.0) * (n + 2.0))));
  }
  for (int n = 0; n + 2 < 5; ++n) {
    const Index from = space.flat_index(std::vector<int>{0, 0, n, 0, 0});
    const Index to = space.flat_index(std::vector<int>{0, 0, n + 2, 0, 0});
    CHECK(hc(to, from).real() == doctest::Approx(0.02 * std::sqrt((n + 1.0) * (n + 2.0))));
  }
  CHECK(parse_pump_target("mo") == PumpTarget::MO);
  CHECK(parse_pump_target("cavity1") == PumpTarget::Cavity1);
  CHECK(kind_of([] { (void)parse_pump_target("cavity2"); }) == ErrorKind::InvalidTarget);
}

TEST_CASE("dissipator channels") {
  const CompositeSpace space = network_space(2, 2, 2);
  SystemParams p;
  CHECK(build_dissipators(p, space).empty());

  p.kappa_a = {0.2, 0.2};
  p.nbar_c = {0.001, 0.001};
  auto ch = build_dissipators(p, space);
  REQUIRE(ch.size() == 4);
  CHECK(ch[0].prefactor() == doctest::Approx(0.2 * 1.001 / 2));
  CHECK(ch[1].prefactor() == doctest::Approx(0.2 * 0.001 / 2));
  CHECK(oracle::max_abs(oracle::dense(ch[0].op) - oracle::dense(network_operators(space).a1)) == 0.0);

  p.gamma21 = {1, 2};
  p.gamma10 = {3, 4};
  p.nbar_a = {0.1, 0.2};
  p.kappa_b = 0.01;
  p.nbar_m = 0.5;
  ch = build_dissipators(p, space);
  CHECK(ch.size() == 14);
  double total = 0;
  for (const auto& c : ch) total += c.rate;
  const double expect = (1 + 3) * 1.2 + (2 + 4) * 1.4 + 2 * 0.2 * 1.002 + 0.01 * 2.0;
  CHECK(total == doctest::Approx(expect));
}

TEST_CASE("parameter validation") {
  SystemParams p;
  CHECK_NOTHROW(p.validate());
  p.kappa_b = -1;
  CHECK(kind_of([&] { p.validate(); }) == ErrorKind::Config);
  SystemParams d;
  d.Delta = {0.0, -1.0};
  CHECK(kind_of([&] { d.validate(); }) == ErrorKind::Config);
}

TEST_CASE("squeezed vacuum against analytic amplitudes") {
  CHECK(oracle::max_abs(Vec(squeezed_vacuum(6, 0.0).ket()) - oracle::fock(6, 0)) < 1e-15);
  for (double r : {0.1, 0.3, 0.5}) {
    const QState s = squeezed_vacuum(30, r);
    CHECK(oracle::max_abs(Vec(s.ket()) - squeezed_amplitudes(30, r, 0.0)) < 1e-5);
    const QState wide = squeezed_vacuum(80, r);
    CHECK(oracle::max_abs(Vec(wide.ket().head(30)) - squeezed_amplitudes(30, r, 0.0)) < 1e-10);
    for (int n = 1; n < 30; n += 2) CHECK(s.ket()(n) == cplx(0.0));
  }
  const cplx xi = std::polar(0.4, 1.1);
  CHECK(oracle::max_abs(Vec(squeezed_vacuum(80, xi).ket().head(30)) - squeezed_amplitudes(30, 0.4, 1.1)) < 1e-10);

  const QuadratureSpec x0{0, 0.0, Quadrature::X};
  const double var = quadrature_variance(squeezed_vacuum(24, 0.5), x0);
  CHECK(var == doctest::Approx(std::exp(-1.0) / 4).epsilon(1e-6));

  CHECK(kind_of([] { (void)squeezed_vacuum(4, 0.5); }) == ErrorKind::TruncationTooSmall);
  CHECK(squeezed_tail(8, 0.5) < 1e-3);
}

TEST_CASE("cat state normalization and parity") {
  CHECK(oracle::max_abs(Vec(cat_state(6, 0.0).ket()) - oracle::fock(6, 0)) < 1e-15);
  const int n = 40;
  const cplx alpha = 2.0;
  const QState c = cat_state(n, alpha);
  for (int k = 1; k < n; k += 2) CHECK(c.ket()(k) == cplx(0.0));
  // N^2 from the coherent-state overlap <alpha|-alpha> = e^{-2|alpha|^2}
  const double n2 = 1.0 / (2.0 * (1.0 + std::exp(-2.0 * std::norm(alpha))));
  Vec coh(n);
  for (int k = 0; k < n; ++k)
    coh(k) = std::exp(-0.5 * std::norm(alpha)) * std::pow(alpha, k) / std::exp(0.5 * std::lgamma(k + 1.0));
  Vec minus = coh;
  for (int k = 1; k < n; k += 2) minus(k) = -minus(k);
  CHECK(std::abs(minus.dot(coh) - std::exp(-2.0 * std::norm(alpha))) < 1e-12);
  const Vec expect = std::sqrt(n2) * (coh + minus);
  CHECK(oracle::max_abs(Vec(c.ket()) - expect) < 1e-12);

  const QState ci = cat_state(30, cplx(0.0, 1.5));
  for (int k = 1; k < 30; k += 2) CHECK(ci.ket()(k) == cplx(0.0));
  CHECK(kind_of([] { (void)cat_state(8, 2.0); }) == ErrorKind::TruncationTooSmall);
  CHECK(cat_tail(12, 1.5) < 1e-4);
}

TEST_CASE("thermal states") {
  CHECK(oracle::max_abs(thermal_state(5, 0.0).rho() - Mat(oracle::unit(5, 0, 0))) == 0.0);
  CHECK(thermal_state(6, 0.001).rho()(0, 0).real() == doctest::Approx(1 / 1.001).epsilon(1e-9));

  for (int trunc : {12, 16, 24})
    for (double nbar : {0.001, 0.1, 0.25, 0.5}) {
      const QState t = thermal_state(trunc, nbar);
      // truncated geometric series, renormalized
      double z = 0, mean = 0;
      for (int k = 0; k < trunc; ++k) {
        const double pk = std::pow(nbar, k) / std::pow(1 + nbar, k + 1);
        z += pk;
        mean += k * pk;
      }
      double m = 0;
      for (int k = 0; k < trunc; ++k) m += k * t.rho()(k, k).real();
      CHECK(m == doctest::Approx(mean / z).epsilon(1e-12));
      for (int k = 1; k < trunc; ++k) CHECK(t.rho()(k, k).real() < t.rho()(k - 1, k - 1).real());
      CHECK(oracle::max_abs(t.rho() - Mat(t.rho().diagonal().asDiagonal())) == 0.0);
    }
  // untruncated mean within 1e-6 once the tail is negligible
  for (auto [trunc, nbar] : {std::pair{12, 0.001}, {12, 0.1}, {12, 0.25}, {20, 0.5}}) {
    const QState t = thermal_state(trunc, nbar);
    double m = 0;
    for (int k = 0; k < trunc; ++k) m += k * t.rho()(k, k).real();
    CHECK(std::abs(m - nbar) < 1e-6);
  }
}

TEST_CASE("thermal occupation") {
  CHECK(thermal_occupation(std::log(2.0), 1.0) == doctest::Approx(1.0));
  CHECK(thermal_occupation(500.0, 1.0) < 1e-200);
  CHECK(thermal_occupation(9.2, 1.0) == doctest::Approx(1.0 / (std::exp(9.2) - 1.0)).epsilon(1e-12));
  CHECK(thermal_occupation(9.2, 1.0) == doctest::Approx(1.0e-4).epsilon(0.02));
  CHECK(kind_of([] { (void)thermal_occupation(1.0, 0.0); }) == ErrorKind::Domain);
  CHECK(kind_of([] { (void)thermal_occupation(1.0, -2.0); }) == ErrorKind::Domain);
}

TEST_CASE("initial state assembly") {
  const CompositeSpace space = network_space(4, 3, 4);
  const QState g = assemble_initial_state(StateRecipe{}, space);
  REQUIRE(g.is_vector());
  CHECK(std::abs(g.ket()(0) - 1.0) == 0.0);
  CHECK(g.ket().norm() == doctest::Approx(1.0));

  StateRecipe fig2;
  fig2.factors[kCavity1] = Squeezed{0.5};
  fig2.factors[kMO] = Thermal{0.001};
  fig2.factors[kCavity2] = Thermal{0.001};
  fig2.tail_tolerance = 1e-2;
  const CompositeSpace s2 = network_space(6, 3, 3);
  const QState rho = assemble_initial_state(fig2, s2);
  REQUIRE_FALSE(rho.is_vector());
  CHECK(std::abs(rho.rho().trace() - 1.0) < 1e-9);
  CHECK(hermiticity_defect(rho.rho()) < 1e-12);
  CHECK(rho.min_eigenvalue() > -1e-12);
  const Mat c1 = partial_trace(rho, {kCavity1}).rho();
  const Vec sq = squeezed_vacuum(6, 0.5, 1e-2).ket();
  CHECK(oracle::max_abs(c1 - sq * sq.adjoint()) < 1e-12);
  CHECK(oracle::max_abs(partial_trace(rho, {kMO}).rho() - thermal_state(3, 0.001).rho()) < 1e-12);

  double worst = 0;
  const StateRecipe pure = fig2.thermal_as_vacuum(&worst);
  CHECK(worst == 0.001);
  CHECK_FALSE(pure.has_mixed_factor());
  CHECK(assemble_initial_state(pure, s2).is_vector());

  StateRecipe fock;
  fock.factors[kCavity1] = Fock{2};
  CHECK(population(assemble_initial_state(fock, space), {0, 0, 2, 0, 0}) == doctest::Approx(1.0));
  fock.factors[kCavity1] = Fock{4};
  CHECK(kind_of([&] { (void)assemble_initial_state(fock, space); }) == ErrorKind::TruncationTooSmall);
  StateRecipe bad;
  bad.factors[kAtom1] = Squeezed{0.1};
  CHECK(kind_of([&] { (void)assemble_initial_state(bad, space); }) == ErrorKind::InvalidTarget);
}

}  // TEST_SUITE
