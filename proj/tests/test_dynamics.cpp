#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracle.hpp"
#include "optomech/dynamics.hpp"
#include "optomech/measures.hpp"

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

CompositeSpace cavity(int n) { return destroy(n).space(); }
CompositeSpace qubit() { return atomic_sigma(2, 0, 0).space(); }

DissipatorSpec damped(int n, double kappa, double nbar) {
  DissipatorSpec d{{destroy(n), kappa * (1 + nbar), "loss"}};
  if (nbar > 0) d.push_back({dag(destroy(n)), kappa * nbar, "gain"});
  return d;
}

Observable mean_number(int n) {
  return {"n", [n](const QState& s) { return expectation(number_operator(n), s); }};
}

Mat lindblad_oracle(const Mat& h, const std::vector<std::pair<Mat, double>>& ch, const Mat& rho) {
  Mat out = cplx(0, -1) * (h * rho - rho * h);
  for (const auto& [o, g] : ch) {
    const Mat od = o.adjoint();
    out += g * (o * rho * od - 0.5 * (od * o * rho + rho * od * o));
  }
  return out;
}

Mat thermal_oracle(int n, double nbar) {
  Mat r = Mat::Zero(n, n);
  for (int k = 0; k < n; ++k) r(k, k) = std::pow(nbar / (1 + nbar), k);
  return r / r.trace();
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("time grid") {
  const auto t = TimeGrid{0.0, 1.0, 5}.times();
  REQUIRE(t.size() == 5);
  CHECK(t[2] == doctest::Approx(0.5));
  CHECK(t.back() == 1.0);
  CHECK(TimeGrid{2.0, 2.0, 1}.times() == std::vector<double>{2.0});
  CHECK(kind_of([] { TimeGrid{1.0, 0.0, 3}.validate(); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { TimeGrid{0.0, 1.0, 1}.validate(); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("vector evolution: trivial and eigenstate cases") {
  std::mt19937 rng(3);
  const QState psi = QState::vector(cavity(4), oracle::random_ket(4, rng));
  const auto zero = evolve_vector(QOperator::zero(cavity(4)), psi, {0, 3, 4});
  for (const auto& s : zero.states) CHECK(oracle::max_abs(Vec(s.ket() - psi.ket())) < 1e-14);

  const double w = 1.7;
  const QOperator h = w * number_operator(5);
  const QState one = basis_state(cavity(5), {1});
  const auto res = evolve_vector(h, one, {0, 4, 9}, {}, {.rtol = 1e-10, .atol = 1e-12});
  for (std::size_t i = 0; i < res.states.size(); ++i) {
    const cplx expect = std::exp(cplx(0, -w * res.snapshot_times[i]));
    CHECK(std::abs(res.states[i].ket()(1) - expect) < 1e-8);
    CHECK(std::abs(population(res.states[i], {1}) - 1.0) < 1e-8);
  }
}

TEST_CASE("vector evolution: Rabi oscillation") {
  const double omega = 2.3;
  const QOperator h = omega * (atomic_sigma(2, 1, 0) + atomic_sigma(2, 0, 1));
  const QState g = basis_state(qubit(), {0});
  std::vector<Observable> obs{{"pe", [](const QState& s) { return cplx(population(s, {1})); }}};
  const auto res = evolve_vector(h, g, {0, 5, 51}, obs, {.rtol = 1e-10, .atol = 1e-12});
  const auto pe = res.real_series("pe");
  for (std::size_t i = 0; i < pe.size(); ++i) CHECK(std::abs(pe[i] - std::pow(std::sin(omega * res.times[i]), 2)) < 1e-8);
  CHECK(res.diagnostics.max_norm_drift < kNormDriftTarget);

  // step-halving at the default tolerance
  const auto coarse = evolve_vector(h, g, {0, 5, 2});
  const auto fine = evolve_vector(h, g, {0, 5, 2}, {}, {.rtol = 1e-9, .atol = 1e-11});
  CHECK(1.0 - fidelity(coarse.states.back(), fine.states.back()) < 1e-6);
}

TEST_CASE("vector evolution: oscillating Hamiltonian") {
  // H = W(s+ e^{i w t} + s- e^{-i w t}) is a detuned Rabi problem in the rotating frame
  const double big_w = 1.3, w = 2.0;
  const TimeDependentHamiltonian h{QOperator::zero(qubit()), {{big_w * atomic_sigma(2, 1, 0), w}}};
  CHECK(h.at(0.37).is_hermitian());
  const double rabi = std::sqrt(big_w * big_w + w * w / 4);
  std::vector<Observable> obs{{"pe", [](const QState& s) { return cplx(population(s, {1})); }}};
  const auto res = evolve_vector(h, basis_state(qubit(), {0}), {0, 6, 31}, obs, {.rtol = 1e-10, .atol = 1e-12});
  const auto pe = res.real_series("pe");
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const double expect = big_w * big_w / (rabi * rabi) * std::pow(std::sin(rabi * res.times[i]), 2);
    CHECK(std::abs(pe[i] - expect) < 1e-7);
  }
}

TEST_CASE("vector evolution errors") {
  const QState rho = basis_state(cavity(3), {0}).as_density();
  CHECK(kind_of([&] { (void)evolve_vector(number_operator(3), rho, {0, 1, 2}); }) == ErrorKind::WrongKind);
  CHECK(kind_of([&] { (void)evolve_vector(number_operator(4), basis_state(cavity(3), {0}), {0, 1, 2}); }) ==
        ErrorKind::SpaceMismatch);
  // a loose tolerance on a long fast rotation drifts past the limit
  const QOperator h = 40.0 * (atomic_sigma(2, 1, 0) + atomic_sigma(2, 0, 1));
  CHECK(kind_of([&] {
          (void)evolve_vector(h, basis_state(qubit(), {0}), {0, 200, 2}, {}, {.rtol = 1e-2, .atol = 1e-2});
        }) == ErrorKind::IntegratorAccuracy);
}

TEST_CASE("Liouvillian against a dense oracle") {
  std::mt19937 rng(5);
  const CompositeSpace s({SubsystemSpec::atom(3, "a"), SubsystemSpec::boson(3, "c")});
  const QOperator a = embed(destroy(3), 1, s);
  const QOperator sig = embed(atomic_sigma(3, 0, 2), 0, s);
  const QOperator h = 1.3 * multiply(dag(a), a) + 0.7 * (multiply(a, embed(atomic_sigma(3, 2, 1), 0, s)) +
                                                          dag(multiply(a, embed(atomic_sigma(3, 2, 1), 0, s))));
  // a general (non-monomial) jump exercises the generic path
  const QOperator mixed = a + 0.5 * sig;
  const DissipatorSpec d{{a, 0.4, "a"}, {sig, 1.1, "s"}, {dag(a), 0.05, "ad"}, {mixed, 0.3, "mixed"}};
  std::vector<std::pair<Mat, double>> dense;
  for (const auto& c : d) dense.push_back({oracle::dense(c.op), c.rate});

  for (int trial = 0; trial < 4; ++trial) {
    const Mat rho = oracle::random_density(9, rng, 1 + trial);
    const Mat out = liouvillian_apply(h, d, rho);
    CHECK(oracle::max_abs(out - lindblad_oracle(oracle::dense(h), dense, rho)) < 1e-12);
    CHECK(std::abs(out.trace()) < 1e-10);
    CHECK(oracle::max_abs(out - out.adjoint()) < 1e-10);

    const Liouvillian l(h, d);
    DenseMatrix herm;
    l.apply_hermitian(rho, herm);
    CHECK(oracle::max_abs(herm - out) < 1e-12);
    CHECK(oracle::max_abs(herm - herm.adjoint()) < 1e-15);
  }

  // linearity on non-Hermitian inputs
  Mat x = Mat::Random(9, 9), y = Mat::Random(9, 9);
  const cplx al(0.3, -1.2), be(-0.7, 0.4);
  const Mat lhs = liouvillian_apply(h, d, al * x + be * y);
  const Mat rhs = al * liouvillian_apply(h, d, x) + be * liouvillian_apply(h, d, y);
  CHECK(oracle::max_abs(lhs - rhs) < 1e-10);
  CHECK(oracle::max_abs(liouvillian_apply(h, d, x) - lindblad_oracle(oracle::dense(h), dense, x)) < 1e-12);

  CHECK(oracle::max_abs(liouvillian_apply(QOperator::zero(s), {}, x)) == 0.0);
  CHECK(kind_of([&] { (void)liouvillian_apply(h, d, Mat::Identity(4, 4)); }) == ErrorKind::InvalidDimension);
}

TEST_CASE("thermal fixed point of a damped cavity") {
  const int n = 10;
  const double kappa = 0.6, nbar = 0.3;
  const Mat fixed = thermal_oracle(n, nbar);
  CHECK(oracle::max_abs(liouvillian_apply(number_operator(n), damped(n, kappa, nbar), fixed)) < 1e-8);
  CHECK(oracle::max_abs(thermal_state(n, nbar).rho() - fixed) < 1e-14);
}

TEST_CASE("damped cavity decay") {
  const int n = 16;
  const double kappa = 0.5, nbar = 0.1, n0 = 2;
  const QState rho0 = basis_state(cavity(n), {2}).as_density();
  const auto res = evolve_density(2.0 * number_operator(n), damped(n, kappa, nbar), rho0, {0, 8, 33}, {mean_number(n)},
                                  {.rtol = 1e-9, .atol = 1e-12});
  const auto m = res.real_series("n");
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double expect = nbar + (n0 - nbar) * std::exp(-kappa * res.times[i]);
    CHECK(std::abs(m[i] - expect) / expect < 1e-5);
  }
  CHECK(res.diagnostics.max_norm_drift < kNormDriftTarget);
  for (const auto& s : res.states) {
    CHECK(std::abs(s.rho().trace() - 1.0) < 1e-7);
    CHECK(hermiticity_defect(s.rho()) < 1e-9);
    CHECK(s.min_eigenvalue() > -1e-8);
  }

  const auto coarse = evolve_density(QOperator::zero(cavity(n)), damped(n, kappa, nbar), rho0, {0, 4, 2}, {},
                                     {.rtol = 1e-7, .atol = 1e-10});
  const auto fine = evolve_density(QOperator::zero(cavity(n)), damped(n, kappa, nbar), rho0, {0, 4, 2}, {},
                                   {.rtol = 1e-8, .atol = 1e-11});
  CHECK(1.0 - fidelity(coarse.states.back(), fine.states.back()) < 1e-6);
}

TEST_CASE("density evolution without loss matches the vector path") {
  std::mt19937 rng(7);
  const CompositeSpace s({SubsystemSpec::atom(3, "a"), SubsystemSpec::boson(4, "c")});
  const QOperator a = embed(destroy(4), 1, s);
  const QOperator h = multiply(dag(a), a) + 2.0 * (multiply(a, embed(atomic_sigma(3, 2, 1), 0, s)) +
                                                   dag(multiply(a, embed(atomic_sigma(3, 2, 1), 0, s)))) +
                      1.5 * (embed(atomic_sigma(3, 0, 1), 0, s) + embed(atomic_sigma(3, 1, 0), 0, s));
  const QState psi = QState::vector(s, oracle::random_ket(12, rng));
  const TimeGrid grid{0, 3, 7};
  const auto v = evolve_vector(h, psi, grid, {}, {.rtol = 1e-10, .atol = 1e-12});
  const auto r = evolve_density(h, {}, psi.as_density(), grid, {}, {.rtol = 1e-10, .atol = 1e-12});
  REQUIRE(v.states.size() == r.states.size());
  for (std::size_t i = 0; i < v.states.size(); ++i) {
    CHECK(fidelity(v.states[i], r.states[i]) >= 1 - 1e-8);
    const Mat rho = r.states[i].rho();
    CHECK(std::abs((rho * rho).trace().real() - 1.0) < 1e-7);
  }
  CHECK(kind_of([&] { (void)evolve_density(h, {}, psi, grid); }) == ErrorKind::WrongKind);
}

TEST_CASE("steady state of a damped thermal cavity") {
  const int n = 12;
  const double kappa = 0.4, nbar = 0.2;
  const QOperator h = 0.5 * number_operator(n);
  const auto d = damped(n, kappa, nbar);
  const QState target = thermal_state(n, nbar);

  const QState vac = basis_state(cavity(n), {0}).as_density();
  const QState excited = basis_state(cavity(n), {3}).as_density();
  SteadyStateCriteria krylov;
  const auto k1 = steady_state(h, d, vac, krylov);
  const auto k2 = steady_state(h, d, excited, krylov);
  CHECK(fidelity(k1.state, target) >= 1 - 1e-6);
  CHECK(fidelity(k1.state, k2.state) >= 1 - 1e-5);
  CHECK(k1.residual < 1e-8);
  CHECK(oracle::max_abs(liouvillian_apply(h, d, k1.state.rho())) < 1e-8);

  SteadyStateCriteria march;
  march.method = SteadyStateMethod::March;
  march.max_time = 2000;
  std::vector<Observable> obs{mean_number(n)};
  const auto m = steady_state(h, d, excited, march, obs);
  CHECK(fidelity(m.state, target) >= 1 - 1e-6);
  CHECK(m.residual < 1e-8);
  REQUIRE(m.observables.size() == 1);
  CHECK(m.observables[0].second.real() == doctest::Approx(nbar).epsilon(1e-5));
  CHECK_FALSE(m.residual_trajectory.empty());
}

TEST_CASE("steady state errors") {
  const int n = 6;
  const QState vac = basis_state(cavity(n), {0}).as_density();
  CHECK(kind_of([&] { (void)steady_state(number_operator(n), {}, vac); }) == ErrorKind::IllPosed);

  SteadyStateCriteria short_run;
  short_run.method = SteadyStateMethod::March;
  short_run.max_time = 3;
  try {
    (void)steady_state(number_operator(n), damped(n, 0.01, 0.5), vac, short_run);
    FAIL("expected non-convergence");
  } catch (const ConvergenceError& e) {
    CHECK(e.kind() == ErrorKind::Convergence);
    CHECK_FALSE(e.trajectory().empty());
  }
}

TEST_CASE("slowest decay rate") {
  SystemParams p;
  p.gamma10 = {20, 20};
  p.kappa_a = {0.2, 0.2};
  p.kappa_b = 0.002;
  CHECK(slowest_decay_rate(p) == doctest::Approx(0.002));
  CHECK(slowest_decay_rate(SystemParams{}) == 0.0);
}

TEST_CASE("rotating-wave check") {
  SystemParams p;
  p.lambda = 0.0;
  const CompositeSpace s = network_space(3, 3, 3);
  StateRecipe rec;
  rec.factors[kAtom1] = Fock{1};
  rec.factors[kCavity1] = Fock{1};
  const QState psi = assemble_initial_state(rec, s);
  // lambda = 0 leaves only the carrier term; the static part vanishes
  SystemParams trivial = p;
  trivial.g = {0, 0};
  const RwaReport r = validate_effective_hamiltonian(trivial, psi, {0, 2, 5});
  for (double f : r.fidelity) CHECK(f == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.fidelity.size() == 5);

  const TimeDependentHamiltonian rot = build_rotating_hamiltonian(SystemParams{}, s);
  for (double t : {0.0, 0.3, 2.1}) CHECK(rot.at(t).is_hermitian(1e-12));
  CHECK(oracle::max_abs(oracle::dense(rot.static_part) - oracle::dense(build_effective_hamiltonian(SystemParams{}, s))) == 0.0);

  SystemParams strong;
  strong.lambda = 0.2;
  CHECK(kind_of([&] { (void)validate_effective_hamiltonian(strong, psi, {0, 1, 2}); }) == ErrorKind::ModelRegime);
}

}  // TEST_SUITE
