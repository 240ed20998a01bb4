#pragma once

#include <spun/spectral/laplacian.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <vector>

namespace spun {

struct EigOptions {
  // Systems up to this size go through dense tridiagonalization.
  Index dense_limit = 3000;
  double shift = -1e-8;
  double residual_tol = 1e-8;
  int max_restarts = 6;
  std::uint64_t seed = 0x1a2c05;
};

namespace detail {

inline void check_system(const LaplacianPair& lp, Index k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (lp.size() < k)
    throw Error(ErrorCode::InvalidArgument,
                "system dimension " + std::to_string(lp.size()) + " is smaller than k=" + std::to_string(k));
  if ((lp.mass.array() <= 0.0).any()) throw Error(ErrorCode::DegenerateShape, "mass matrix has non-positive entries");
  if (!lp.mass.allFinite()) throw Error(ErrorCode::NonFinite, "mass matrix is not finite");
}

inline std::vector<double> dense_smallest(const LaplacianPair& lp, Index k) {
  Eigen::VectorXd s = lp.mass.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd a = s.asDiagonal() * Eigen::MatrixXd(lp.stiffness) * s.asDiagonal();
  a = 0.5 * (a + a.transpose());
  if (!a.allFinite()) throw Error(ErrorCode::NonFinite, "stiffness matrix is not finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::ConvergenceFailure, "dense eigensolver did not converge");
  const auto& ev = es.eigenvalues();
  return {ev.data(), ev.data() + k};
}

// Per-component constant vectors that L annihilates (unreduced operators only),
// returned orthonormal in the symmetric M^{-1/2} L M^{-1/2} space.
inline std::vector<Eigen::VectorXd> exact_null_vectors(const LaplacianPair& lp) {
  const Index n = lp.size();
  std::vector<Index> comp(static_cast<std::size_t>(n), -1);
  Index count = 0;
  for (Index s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<Index> stack{s};
    comp[s] = count;
    while (!stack.empty()) {
      Index u = stack.back();
      stack.pop_back();
      for (SparseMatrix::InnerIterator it(lp.stiffness, u); it; ++it)
        if (comp[it.row()] < 0) {
          comp[it.row()] = count;
          stack.push_back(it.row());
        }
    }
    ++count;
  }
  const double lnorm = lp.stiffness.norm();
  std::vector<Eigen::VectorXd> out;
  for (Index c = 0; c < count; ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i)
      if (comp[i] == c) e[i] = 1.0;
    if ((lp.stiffness * e).norm() > 1e-10 * lnorm) continue;
    Eigen::VectorXd u = lp.mass.cwiseSqrt().cwiseProduct(e);
    out.push_back(u.normalized());
  }
  return out;
}

// Shift-invert Lanczos on M^{-1/2} L M^{-1/2} with full reorthogonalization.
// Exact null vectors are deflated up front (eigenvalue 0) so the nearly
// singular shifted solve never has to represent them. The Krylov space grows
// until the remaining smallest Ritz pairs meet the residual tolerance.
inline std::vector<double> lanczos_smallest(const LaplacianPair& lp, Index k, const EigOptions& opt) {
  const Index n = lp.size();
  const Eigen::VectorXd sqrt_m = lp.mass.cwiseSqrt();
  const auto null = exact_null_vectors(lp);
  const auto nn = static_cast<Index>(null.size());
  if (nn >= k) return std::vector<double>(static_cast<std::size_t>(k), 0.0);
  const Index want = k - nn;
  auto deflate = [&](Eigen::VectorXd& x) {
    for (const auto& u : null) x -= u.dot(x) * u;
  };

  SparseMatrix shifted = lp.stiffness;
  for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= opt.shift * lp.mass[i];
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::ConvergenceFailure, "sparse factorization of the shifted system failed");

  auto apply = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd y = sqrt_m.cwiseProduct(ldlt.solve(sqrt_m.cwiseProduct(x)));
    deflate(y);
    return y;
  };
  auto random_vector = [&](Rng& rng) {
    Eigen::VectorXd r(n);
    for (Index i = 0; i < n; ++i) r[i] = rng.uniform(-1.0, 1.0);
    deflate(r);
    return r;
  };

  Rng rng(opt.seed);
  Eigen::VectorXd start = random_vector(rng).normalized();
  const Index space = n - nn;

  Index m = std::min<Index>(space, std::max<Index>(2 * want + 20, 40));
  for (int attempt = 0; attempt <= opt.max_restarts; ++attempt) {
    Eigen::MatrixXd q(n, m);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m), beta = Eigen::VectorXd::Zero(m);
    q.col(0) = start;
    Index built = m;
    for (Index j = 0; j < m; ++j) {
      Eigen::VectorXd w = apply(q.col(j));
      alpha[j] = q.col(j).dot(w);
      // two passes of classical Gram-Schmidt against the whole basis
      for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * w);
      if (j + 1 == m) break;
      beta[j] = w.norm();
      if (beta[j] <= 1e-14 * std::abs(alpha[j])) {
        // invariant subspace found; continue with a fresh orthogonal direction
        Eigen::VectorXd r = random_vector(rng);
        for (int pass = 0; pass < 2; ++pass) r -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * r);
        if (r.norm() == 0.0) {
          built = j + 1;
          break;
        }
        beta[j] = 0.0;
        q.col(j + 1) = r.normalized();
      } else {
        q.col(j + 1) = w / beta[j];
      }
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(built, built);
    for (Index j = 0; j < built; ++j) {
      t(j, j) = alpha[j];
      if (j + 1 < built) t(j, j + 1) = t(j + 1, j) = beta[j];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::ConvergenceFailure, "tridiagonal eigensolver failed");

    // largest theta <-> smallest lambda
    std::vector<double> values(static_cast<std::size_t>(nn), 0.0);
    bool converged = built >= want;
    for (Index r = 0; r < std::min(want, built); ++r) {
      Index c = built - 1 - r;
      double theta = es.eigenvalues()[c];
      double lambda = opt.shift + 1.0 / theta;
      Eigen::VectorXd y = q.leftCols(built) * es.eigenvectors().col(c);
      Eigen::VectorXd v = y.cwiseQuotient(sqrt_m);
      double res = (lp.stiffness * v - lambda * lp.mass.cwiseProduct(v)).norm() / v.norm();
      if (!(res <= opt.residual_tol) || !std::isfinite(lambda)) converged = false;
      values.push_back(lambda);
    }
    if (converged) {
      std::sort(values.begin(), values.end());
      return values;
    }
    if (m == space) break;
    m = std::min<Index>(space, 2 * m);
  }
  throw Error(ErrorCode::ConvergenceFailure, "Lanczos did not reach the residual tolerance");
}

}  // namespace detail

// k algebraically smallest eigenvalues of L v = lambda M v, ascending.
// Tiny negative values from rounding are clamped to 0.
inline std::vector<double> smallest_eigs(const LaplacianPair& lp, Index k, const EigOptions& opt = {}) {
  detail::check_system(lp, k);
  auto values = lp.size() <= opt.dense_limit ? detail::dense_smallest(lp, k) : detail::lanczos_smallest(lp, k, opt);
  double scale = 1.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  for (double& v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite eigenvalue");
    if (v < 0.0) {
      if (v < -1e-10 * scale) throw Error(ErrorCode::ConvergenceFailure, "negative eigenvalue " + std::to_string(v));
      v = 0.0;
    }
  }
  return values;
}

}  // namespace spun
