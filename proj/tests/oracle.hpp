#pragma once

// Dense reference constructions used to cross-check the sparse library code.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "optomech/hilbert.hpp"

namespace oracle {

using optomech::cplx;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Mat kron(std::initializer_list<Mat> ms) {
  Mat out = Mat::Identity(1, 1);
  for (const auto& m : ms) out = kron(out, m);
  return out;
}

inline Vec kron_vec(const Vec& a, const Vec& b) {
  Vec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline Mat eye(int n) { return Mat::Identity(n, n); }

inline Mat lower(int n) {
  Mat a = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) a(k - 1, k) = std::sqrt(double(k));
  return a;
}

inline Mat unit(int n, int k, int l) {
  Mat m = Mat::Zero(n, n);
  m(k, l) = 1.0;
  return m;
}

inline Vec fock(int n, int k) {
  Vec v = Vec::Zero(n);
  v(k) = 1.0;
  return v;
}

inline Mat dense(const optomech::QOperator& op) { return Mat(op.matrix()); }

inline double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

/// Random density matrix of rank `rank` from a seeded Gaussian.
inline Mat random_density(int dim, std::mt19937& rng, int rank = -1) {
  if (rank < 0) rank = dim;
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(dim, rank);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < rank; ++j) g(i, j) = cplx(n(rng), n(rng));
  Mat rho = g * g.adjoint();
  return rho / rho.trace().real();
}

inline Vec random_ket(int dim, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = cplx(n(rng), n(rng));
  return v.normalized();
}

inline Mat random_unitary(int dim, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) g(i, j) = cplx(n(rng), n(rng));
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ();
}

/// Brute-force partial trace for a bipartition dims (da, db), keeping A or B.
inline Mat trace_out(const Mat& rho, int da, int db, bool keep_a) {
  Mat out = Mat::Zero(keep_a ? da : db, keep_a ? da : db);
  for (int a = 0; a < da; ++a)
    for (int a2 = 0; a2 < da; ++a2)
      for (int b = 0; b < db; ++b)
        for (int b2 = 0; b2 < db; ++b2) {
          const cplx v = rho(a * db + b, a2 * db + b2);
          if (keep_a && b == b2) out(a, a2) += v;
          if (!keep_a && a == a2) out(b, b2) += v;
        }
  return out;
}

/// Brute-force partial transpose of subsystem `part` for a product of dims.
inline Mat transpose_part(const Mat& rho, const std::vector<int>& dims, std::size_t part) {
  const Eigen::Index n = rho.rows();
  auto digits = [&](Eigen::Index flat) {
    std::vector<int> d(dims.size());
    for (std::size_t k = dims.size(); k-- > 0;) {
      d[k] = int(flat % dims[k]);
      flat /= dims[k];
    }
    return d;
  };
  auto flat = [&](const std::vector<int>& d) {
    Eigen::Index f = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) f = f * dims[k] + d[k];
    return f;
  };
  Mat out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      auto di = digits(i), dj = digits(j);
      std::swap(di[part], dj[part]);
      out(flat(di), flat(dj)) = rho(i, j);
    }
  return out;
}

inline double trace_norm(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  return es.eigenvalues().cwiseAbs().sum();
}

inline Mat sqrtm_psd(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

inline double uhlmann(const Mat& a, const Mat& b) {
  const Mat s = sqrtm_psd(a);
  return sqrtm_psd(s * b * s).trace().real();
}

}  // namespace oracle
