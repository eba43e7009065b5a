#include "optomech/measures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace optomech {

namespace {

constexpr double kClampTol = 1e-10;
constexpr double kSupportTol = 1e-13;

Index support_rank(const RealVector& ev) {
  const double cut = kSupportTol * std::max(ev.maxCoeff(), 0.0);
  return (ev.array() > cut).count();
}

// sum of sqrt eigenvalues of sqrt(a) b sqrt(a), restricted to the support of a
double root_fidelity(const Eigen::SelfAdjointEigenSolver<DenseMatrix>& ea, const DenseMatrix& b) {
  const RealVector& w = ea.eigenvalues();
  const Index k = support_rank(w);
  const DenseMatrix u = ea.eigenvectors().rightCols(k);
  const RealVector root = w.tail(k).cwiseSqrt();
  DenseMatrix m = root.asDiagonal() * (u.adjoint() * b * u) * root.asDiagonal();
  m = 0.5 * (m + m.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::NumericValidity, "eigen-decomposition failed");
  double f = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev < -kClampTol) {
      throw Error(ErrorKind::NumericValidity, "fidelity: eigenvalue " + std::to_string(ev) + " below tolerance");
    }
    f += std::sqrt(std::max(ev, 0.0));
  }
  return f;
}

double clamp_unit(double f) { return std::clamp(f, 0.0, 1.0); }

void require_same_space(const QState& a, const QState& b) {
  if (!(a.space() == b.space())) {
    throw Error(ErrorKind::SpaceMismatch, "fidelity: states live on different spaces");
  }
}

QState reduce_to(const QState& state, std::size_t part) {
  if (part >= state.space().size()) throw Error(ErrorKind::InvalidIndex, "subsystem index out of range");
  if (state.space().size() == 1) return state;
  return partial_trace(state, {part});
}

}  // namespace

double fidelity(const QState& a, const QState& b) {
  require_same_space(a, b);
  if (a.is_vector() && b.is_vector()) return clamp_unit(std::abs(a.ket().dot(b.ket())));
  if (a.is_vector() || b.is_vector()) {
    const Ket& psi = a.is_vector() ? a.ket() : b.ket();
    const DenseMatrix& rho = a.is_vector() ? b.rho() : a.rho();
    const double overlap = psi.dot(rho * psi).real();
    if (overlap < -kClampTol) throw Error(ErrorKind::NumericValidity, "fidelity: negative overlap");
    return clamp_unit(std::sqrt(std::max(overlap, 0.0)));
  }
  const Eigen::SelfAdjointEigenSolver<DenseMatrix> ea(a.rho()), eb(b.rho());
  if (ea.info() != Eigen::Success || eb.info() != Eigen::Success) {
    throw Error(ErrorKind::NumericValidity, "eigen-decomposition failed");
  }
  const Index ra = support_rank(ea.eigenvalues()), rb = support_rank(eb.eigenvalues());
  if (ra < rb) return clamp_unit(root_fidelity(ea, b.rho()));
  if (rb < ra) return clamp_unit(root_fidelity(eb, a.rho()));
  return clamp_unit(0.5 * (root_fidelity(ea, b.rho()) + root_fidelity(eb, a.rho())));
}

double mode_fidelity(const QState& reference, const QState& state, std::size_t part) {
  const QState reduced = reduce_to(state, part);
  if (reference.space().size() != 1 || reference.space().part(0).size != reduced.space().part(0).size) {
    throw Error(ErrorKind::SpaceMismatch, "mode fidelity needs matching single-mode truncations");
  }
  // compare on the reference's labelling
  const QState target = reduced.is_vector() ? QState::vector(reference.space(), reduced.ket(), 1e-5)
                                            : QState::density(reference.space(), reduced.rho(), QState::Check::None);
  return fidelity(reference, target);
}

double negativity(const QState& rho, std::size_t part) {
  if (rho.space().size() != 2) throw Error(ErrorKind::SpaceShape, "negativity needs a two-subsystem state");
  const QState dm = rho.is_vector() ? rho.as_density() : rho;
  const RealVector ev = eig_hermitian(partial_transpose(dm, part));
  double n = 0.0;
  for (Index i = 0; i < ev.size(); ++i) n += 0.5 * (std::abs(ev(i)) - ev(i));
  return n;
}

double contangle(const QState& rho, std::size_t part) {
  const QState dm = rho.is_vector() ? rho.as_density() : rho;
  const double l = std::log2(trace_norm(partial_transpose(dm, part)));
  return l * l;
}

ContangleReport residual_contangle(const QState& rho) {
  if (rho.space().size() != 3) throw Error(ErrorKind::SpaceShape, "residual contangle needs three subsystems");
  const QState dm = rho.is_vector() ? rho.as_density() : rho;
  ContangleReport r;
  for (std::size_t a = 0; a < 3; ++a) r.rooted[a] = contangle(dm, a);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      const QState pair = partial_trace(dm, {a, b});
      // spectra of the two partial transposes coincide
      r.pairwise[a][b] = r.pairwise[b][a] = contangle(pair, 0);
    }
  }
  r.minimum = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t b = (a + 1) % 3, c = (a + 2) % 3;
    r.residual[a] = r.rooted[a] - r.pairwise[a][b] - r.pairwise[a][c];
    r.minimum = std::min(r.minimum, r.residual[a]);
  }
  return r;
}

double quadrature_variance(const QState& state, const QuadratureSpec& spec) {
  if (spec.mode >= state.space().size() || !state.space().part(spec.mode).is_boson()) {
    throw Error(ErrorKind::InvalidTarget, "quadrature needs a bosonic mode");
  }
  const QState reduced = reduce_to(state, spec.mode);
  const DenseMatrix rho = reduced.density_matrix();
  const int n = state.space().part(spec.mode).size;
  const DenseMatrix a = DenseMatrix(destroy(n).matrix());
  const cplx phase = std::exp(kI * spec.phase);
  DenseMatrix q = phase * a;
  if (spec.quadrature == Quadrature::X) {
    q += std::conj(phase) * a.adjoint();
    q *= 0.5;
  } else {
    q -= std::conj(phase) * a.adjoint();
    q *= 1.0 / (2.0 * kI);
  }
  const double mean = (rho * q).trace().real();
  const double second = (rho * q * q).trace().real();
  return std::max(second - mean * mean, 0.0);
}

// ---------------------------------------------------------------------------
// Wigner

namespace {

struct WignerKernel {
  int n = 0;
  // kernel[m][n - m] over the grid, flattened as ix * res + ip
  std::vector<std::vector<Eigen::VectorXcd>> terms;
};

std::vector<double> axis(double lo, double hi, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
  return out;
}

std::shared_ptr<const WignerKernel> build_kernel(int n, const WignerSpec& spec) {
  auto k = std::make_shared<WignerKernel>();
  k->n = n;
  const auto xs = axis(spec.x_min, spec.x_max, spec.resolution);
  const auto ps = axis(spec.p_min, spec.p_max, spec.resolution);
  const Index points = static_cast<Index>(xs.size() * ps.size());
  k->terms.resize(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    for (int d = 0; m + d < n; ++d) {
      Eigen::VectorXcd v(points);
      // sqrt(m!/(m+d)!) via lgamma
      const double ratio = std::exp(0.5 * (std::lgamma(m + 1.0) - std::lgamma(m + d + 1.0)));
      const double sign = (m % 2 == 0) ? 1.0 : -1.0;
      Index idx = 0;
      for (double x : xs) {
        for (double p : ps) {
          const cplx a2 = std::sqrt(2.0) * cplx(x, p);
          const double b = std::norm(a2);
          const double lag = std::assoc_laguerre(static_cast<unsigned>(m), static_cast<unsigned>(d), b);
          v(idx++) = sign * ratio * std::pow(a2, d) * lag * std::exp(-0.5 * b) / M_PI;
        }
      }
      k->terms[m].push_back(std::move(v));
    }
  }
  return k;
}

std::shared_ptr<const WignerKernel> cached_kernel(int n, const WignerSpec& spec) {
  static std::mutex mu;
  static std::map<std::tuple<int, double, double, double, double, int>, std::shared_ptr<const WignerKernel>> cache;
  const auto key = std::make_tuple(n, spec.x_min, spec.x_max, spec.p_min, spec.p_max, spec.resolution);
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  auto k = build_kernel(n, spec);
  std::lock_guard<std::mutex> lock(mu);
  if (cache.size() > 16) cache.clear();
  return cache.emplace(key, std::move(k)).first->second;
}

}  // namespace

double WignerGrid::integral() const {
  const double dx = x.size() > 1 ? (x.back() - x.front()) / (x.size() - 1) : 0.0;
  const double dp = p.size() > 1 ? (p.back() - p.front()) / (p.size() - 1) : 0.0;
  return values.sum() * dx * dp;
}

double WignerGrid::nearest(double x0, double p0) const {
  auto closest = [](const std::vector<double>& v, double t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (std::abs(v[i] - t) < std::abs(v[best] - t)) best = i;
    }
    return static_cast<Index>(best);
  };
  return values(closest(x, x0), closest(p, p0));
}

WignerGrid wigner(const QState& single_mode, const WignerSpec& spec) {
  if (single_mode.space().size() != 1 || !single_mode.space().part(0).is_boson()) {
    throw Error(ErrorKind::SpaceShape, "wigner needs a single bosonic mode");
  }
  if (spec.resolution < 1 || !(spec.x_max >= spec.x_min) || !(spec.p_max >= spec.p_min)) {
    throw Error(ErrorKind::InvalidArgument, "wigner: bad grid");
  }
  const int n = single_mode.space().part(0).size;
  const auto kernel = cached_kernel(n, spec);
  const DenseMatrix rho = single_mode.density_matrix();

  const Index points = static_cast<Index>(spec.resolution) * spec.resolution;
  Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(points);
  for (int m = 0; m < n; ++m) {
    acc += rho(m, m) * kernel->terms[m][0];
    for (int d = 1; m + d < n; ++d) {
      if (rho(m, m + d) != 0.0) acc += (2.0 * rho(m, m + d)) * kernel->terms[m][d];
    }
  }
  WignerGrid g;
  g.spec = spec;
  g.x = axis(spec.x_min, spec.x_max, spec.resolution);
  g.p = axis(spec.p_min, spec.p_max, spec.resolution);
  g.values.resize(spec.resolution, spec.resolution);
  for (Index i = 0; i < points; ++i) g.values(i / spec.resolution, i % spec.resolution) = acc(i).real();
  return g;
}

// ---------------------------------------------------------------------------
// Populations

double population(const QState& state, std::span<const int> label) {
  const Index i = state.space().flat_index(label);
  if (state.is_vector()) return std::norm(state.ket()(i));
  return state.rho()(i, i).real();
}

double population(const QState& state, std::initializer_list<int> label) {
  return population(state, std::span<const int>(label.begin(), label.size()));
}

double level_population(const QState& state, std::size_t part, int level) {
  const CompositeSpace& space = state.space();
  if (part >= space.size()) throw Error(ErrorKind::InvalidIndex, "subsystem index out of range");
  if (level < 0 || level >= space.part(part).size) throw Error(ErrorKind::InvalidIndex, "level out of range");
  Index stride = 1;
  for (std::size_t i = part + 1; i < space.size(); ++i) stride *= space.part_dim(i);
  const Index d = space.part_dim(part);
  double total = 0.0;
  for (Index flat = 0; flat < space.dim(); ++flat) {
    if ((flat / stride) % d != level) continue;
    total += state.is_vector() ? std::norm(state.ket()(flat)) : state.rho()(flat, flat).real();
  }
  return total;
}

}  // namespace optomech
