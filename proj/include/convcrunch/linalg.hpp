#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "convcrunch/tensor.hpp"

namespace convcrunch {

/// Thrown when the Jacobi sweep limit is reached before the off-diagonal mass
/// drops below tolerance.
class SvdConvergenceError : public std::runtime_error {
 public:
  explicit SvdConvergenceError(int sweeps)
      : std::runtime_error("svd: no convergence after " + std::to_string(sweeps) + " sweeps"),
        sweeps_(sweeps) {}
  int sweeps() const { return sweeps_; }

 private:
  int sweeps_;
};

/// Thin SVD A = U diag(s) V^T with t columns. `discarded_head` is s_{t+1}
/// when the factorization was truncated below full rank, else 0.
template <typename Scalar>
struct SvdFactors {
  MatrixX<Scalar> u;
  VectorX<Scalar> s;
  MatrixX<Scalar> v;
  Scalar discarded_head = Scalar(0);

  MatrixX<Scalar> reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

namespace detail {

constexpr int kJacobiMaxSweeps = 60;

/// One-sided Jacobi on the side with the smaller Gram matrix: columns of the
/// (tall) working matrix are orthogonalized by plane rotations; the rotations
/// accumulate into V and the column norms become the singular values.
template <typename Scalar>
SvdFactors<Scalar> jacobi_svd_tall(MatrixX<Scalar> b) {
  const Index m = b.rows();
  const Index k = b.cols();
  MatrixX<Scalar> v = MatrixX<Scalar>::Identity(k, k);
  const Scalar tol = Scalar(1e-12);

  bool converged = false;
  for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (Index p = 0; p + 1 < k; ++p) {
      for (Index q = p + 1; q < k; ++q) {
        const Scalar app = b.col(p).squaredNorm();
        const Scalar aqq = b.col(q).squaredNorm();
        const Scalar apq = b.col(p).dot(b.col(q));
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == Scalar(0)) continue;
        converged = false;
        const Scalar tau = (aqq - app) / (Scalar(2) * apq);
        const Scalar t = (tau >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(tau) + std::sqrt(Scalar(1) + tau * tau));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Index i = 0; i < m; ++i) {
          const Scalar bip = b(i, p);
          const Scalar biq = b(i, q);
          b(i, p) = c * bip - s * biq;
          b(i, q) = s * bip + c * biq;
        }
        for (Index i = 0; i < k; ++i) {
          const Scalar vip = v(i, p);
          const Scalar viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  if (!converged) throw SvdConvergenceError(kJacobiMaxSweeps);

  VectorX<Scalar> s(k);
  for (Index j = 0; j < k; ++j) s[j] = b.col(j).norm();

  // Descending order; stable so that equal values keep sweep order.
  std::vector<Index> order(k);
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index c2) { return s[a] > s[c2]; });

  SvdFactors<Scalar> out;
  out.u.resize(m, k);
  out.v.resize(k, k);
  out.s.resize(k);
  for (Index j = 0; j < k; ++j) {
    out.s[j] = s[order[j]];
    out.v.col(j) = v.col(order[j]);
    if (out.s[j] > Scalar(0)) {
      out.u.col(j) = b.col(order[j]) / out.s[j];
    } else {
      out.u.col(j).setZero();
    }
  }

  // Columns with zero singular value need an orthonormal completion so that
  // U stays orthonormal even for rank-deficient input.
  for (Index j = 0; j < k; ++j) {
    if (out.s[j] > Scalar(0)) continue;
    for (Index basis = 0; basis < m; ++basis) {
      VectorX<Scalar> cand = VectorX<Scalar>::Unit(m, basis);
      for (Index l = 0; l < k; ++l) {
        if (l == j || (out.s[l] == Scalar(0) && l > j)) continue;
        cand -= out.u.col(l).dot(cand) * out.u.col(l);
      }
      const Scalar norm = cand.norm();
      if (norm > Scalar(0.5)) {
        out.u.col(j) = cand / norm;
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Full (thin) SVD with singular values sorted descending.
template <typename Scalar>
SvdFactors<Scalar> svd(const MatrixX<Scalar>& a) {
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall<Scalar>(a);
  SvdFactors<Scalar> f = detail::jacobi_svd_tall<Scalar>(a.transpose());
  std::swap(f.u, f.v);
  return f;
}

/// Rank-t truncation of the SVD. `discarded_head` carries s_{t+1}.
template <typename Scalar>
SvdFactors<Scalar> truncated_svd(const MatrixX<Scalar>& a, Index t) {
  const Index full = std::min(a.rows(), a.cols());
  detail::require(t >= 1 && t <= full, "truncated_svd: rank out of range");
  SvdFactors<Scalar> f = svd(a);
  SvdFactors<Scalar> out;
  out.u = f.u.leftCols(t);
  out.s = f.s.head(t);
  out.v = f.v.leftCols(t);
  out.discarded_head = (t < full) ? f.s[t] : Scalar(0);
  return out;
}

/// Evaluates both sides of ||I*W_t - I*W||_F <= s_{t+1} ||I||_F for the rank-t
/// truncation W_t of W. Returns {lhs, rhs}.
template <typename Scalar>
std::pair<Scalar, Scalar> svd_multiply_bound_check(const MatrixX<Scalar>& input,
                                                   const MatrixX<Scalar>& a, Index t) {
  detail::require(input.cols() == a.rows(), "svd_multiply_bound_check: shape mismatch");
  SvdFactors<Scalar> trunc = truncated_svd(a, t);
  const MatrixX<Scalar> approx = trunc.reconstruct();
  const Scalar lhs = (input * approx - input * a).norm();
  const Scalar rhs = trunc.discarded_head * input.norm();
  return {lhs, rhs};
}

/// Two truncated SVDs chained: rank-k1 on the d0 x (d1*d2) matricization, then
/// rank-k2 on the k1-row right factor S1 V1^T.
template <typename Scalar>
struct TwoStageSvd {
  Index d0 = 0, d1 = 0, d2 = 0;
  Index k1 = 0, k2 = 0;
  SvdFactors<Scalar> outer;
  SvdFactors<Scalar> inner;

  Tensor3<Scalar> reconstruct() const {
    MatrixX<Scalar> flat = outer.u * inner.reconstruct();
    RowMajorMatrix<Scalar> rm = flat;
    return Tensor3<Scalar>(d0, d1, d2, Eigen::Map<const VectorX<Scalar>>(rm.data(), rm.size()));
  }

  Index parameter_count() const { return d0 * k1 + k1 * k2 + k2 * d1 * d2; }
};

template <typename Scalar>
TwoStageSvd<Scalar> two_stage_svd(const Tensor3<Scalar>& w3, Index k1, Index k2) {
  const Index m = w3.dim0();
  const Index nk = w3.dim1() * w3.dim2();
  detail::require(k1 >= 1 && k1 <= std::min(m, nk), "two_stage_svd: k1 out of range");
  detail::require(k2 >= 1 && k2 <= k1, "two_stage_svd: k2 must satisfy 1 <= k2 <= k1");

  TwoStageSvd<Scalar> out;
  out.d0 = w3.dim0();
  out.d1 = w3.dim1();
  out.d2 = w3.dim2();
  out.k1 = k1;
  out.k2 = k2;
  out.outer = truncated_svd<Scalar>(w3.mode1(), k1);
  MatrixX<Scalar> right = out.outer.s.asDiagonal() * out.outer.v.transpose();
  out.inner = truncated_svd<Scalar>(right, k2);
  return out;
}

// ---------------------------------------------------------------------------
// Rank-1 ALS and greedy outer-product decomposition
// ---------------------------------------------------------------------------

/// Result of fitting alpha (x) beta (x) gamma to a 3-tensor. alpha carries the
/// magnitude; beta and gamma are unit with first nonzero entry positive.
/// `objective_trace` records the squared residual after every block update.
template <typename Scalar>
struct Rank1Result {
  VectorX<Scalar> alpha, beta, gamma;
  Scalar residual = Scalar(0);
  bool degenerate = false;
  int sweeps = 0;
  std::vector<Scalar> objective_trace;
};

template <typename Scalar>
Rank1Result<Scalar> rank1_als(const Tensor3<Scalar>& w3) {
  constexpr int kMaxSweeps = 500;
  const Scalar kRelTol = Scalar(1e-10);
  const Index m = w3.dim0(), n = w3.dim1(), k = w3.dim2();

  Rank1Result<Scalar> out;
  const Scalar w_sq = w3.data().squaredNorm();
  if (w_sq == Scalar(0)) {
    out.alpha = VectorX<Scalar>::Zero(m);
    out.beta = VectorX<Scalar>::Zero(n);
    out.gamma = VectorX<Scalar>::Zero(k);
    out.degenerate = true;
    return out;
  }

  // Deterministic init from the dominant singular vectors of the mode-1
  // matricization; the right vector reshaped n x k seeds beta and gamma.
  SvdFactors<Scalar> init = truncated_svd<Scalar>(w3.mode1(), 1);
  VectorX<Scalar> alpha = init.u.col(0) * init.s[0];
  ConstMatrixView<Scalar> vmat(init.v.data(), n, k);  // init.v is nk x 1, row-major (j,l)
  SvdFactors<Scalar> vsplit = truncated_svd<Scalar>(MatrixX<Scalar>(vmat), 1);
  VectorX<Scalar> beta = vsplit.u.col(0);
  VectorX<Scalar> gamma = vsplit.v.col(0);

  ConstMatrixView<Scalar> m1 = w3.mode1();  // m x (n*k)
  auto objective = [&](const VectorX<Scalar>& a, const VectorX<Scalar>& b,
                       const VectorX<Scalar>& g) {
    // Valid right after an exact block update, where <W, T> = ||T||^2.
    return std::max(Scalar(0), w_sq - a.squaredNorm() * b.squaredNorm() * g.squaredNorm());
  };

  Scalar prev_obj = w_sq;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    // alpha update: least squares given beta, gamma.
    VectorX<Scalar> bg_flat(n * k);
    for (Index j = 0; j < n; ++j)
      for (Index l = 0; l < k; ++l) bg_flat[j * k + l] = beta[j] * gamma[l];
    Scalar denom = beta.squaredNorm() * gamma.squaredNorm();
    if (denom == Scalar(0)) {
      out.degenerate = true;
      break;
    }
    alpha = (m1 * bg_flat) / denom;
    out.objective_trace.push_back(objective(alpha, beta, gamma));

    // G(j,l) = sum_i alpha_i W(i,j,l), shared by the beta and gamma updates.
    MatrixX<Scalar> g = MatrixX<Scalar>::Zero(n, k);
    for (Index i = 0; i < m; ++i)
      g += alpha[i] * MatrixX<Scalar>(ConstMatrixView<Scalar>(w3.data().data() + i * n * k, n, k));

    denom = alpha.squaredNorm() * gamma.squaredNorm();
    if (denom == Scalar(0)) {
      out.degenerate = true;
      break;
    }
    beta = (g * gamma) / denom;
    out.objective_trace.push_back(objective(alpha, beta, gamma));

    denom = alpha.squaredNorm() * beta.squaredNorm();
    if (denom == Scalar(0)) {
      out.degenerate = true;
      break;
    }
    gamma = (g.transpose() * beta) / denom;
    const Scalar obj = objective(alpha, beta, gamma);
    out.objective_trace.push_back(obj);
    out.sweeps = sweep + 1;

    if (prev_obj - obj < kRelTol * std::max(w_sq, Scalar(1)) && sweep > 0) break;
    prev_obj = obj;
  }

  // Normalize: beta, gamma unit with first nonzero entry positive; alpha
  // absorbs the magnitude and the signs.
  const Scalar bn = beta.norm();
  const Scalar gn = gamma.norm();
  if (bn > Scalar(0) && gn > Scalar(0)) {
    beta /= bn;
    gamma /= gn;
    alpha *= bn * gn;
    Scalar sign_carry = Scalar(1);
    detail::canonicalize_sign(beta, sign_carry);
    detail::canonicalize_sign(gamma, sign_carry);
    alpha *= sign_carry;
  } else {
    alpha.setZero();
    beta.setZero();
    gamma.setZero();
    out.degenerate = true;
  }

  out.alpha = alpha;
  out.beta = beta;
  out.gamma = gamma;

  Scalar res_sq = Scalar(0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index l = 0; l < k; ++l) {
        const Scalar d = w3(i, j, l) - alpha[i] * beta[j] * gamma[l];
        res_sq += d * d;
      }
  out.residual = std::sqrt(res_sq);
  return out;
}

/// Greedy sum of K rank-1 tensors obtained by repeated ALS and deflation.
template <typename Scalar>
struct OuterProductDecomp {
  struct Factor {
    VectorX<Scalar> alpha, beta, gamma;
  };
  Index d0 = 0, d1 = 0, d2 = 0;
  Index rank = 0;
  std::vector<Factor> factors;
  VectorX<Scalar> residual_norms;  // Frobenius residual after each deflation

  Tensor3<Scalar> reconstruct() const {
    Tensor3<Scalar> t(d0, d1, d2);
    for (const Factor& f : factors)
      for (Index i = 0; i < d0; ++i)
        for (Index j = 0; j < d1; ++j)
          for (Index l = 0; l < d2; ++l) t(i, j, l) += f.alpha[i] * f.beta[j] * f.gamma[l];
    return t;
  }

  Index parameter_count() const { return rank * (d0 + d1 + d2); }
};

template <typename Scalar>
OuterProductDecomp<Scalar> greedy_outer_product(const Tensor3<Scalar>& w3, Index k) {
  detail::require(k >= 1, "greedy_outer_product: rank must be >= 1");
  OuterProductDecomp<Scalar> out;
  out.d0 = w3.dim0();
  out.d1 = w3.dim1();
  out.d2 = w3.dim2();
  out.rank = k;
  out.residual_norms.resize(k);

  Tensor3<Scalar> residual = w3;
  for (Index step = 0; step < k; ++step) {
    Rank1Result<Scalar> r1 = rank1_als(residual);
    out.factors.push_back({r1.alpha, r1.beta, r1.gamma});
    if (!r1.degenerate) {
      for (Index i = 0; i < out.d0; ++i)
        for (Index j = 0; j < out.d1; ++j)
          for (Index l = 0; l < out.d2; ++l)
            residual(i, j, l) -= r1.alpha[i] * r1.beta[j] * r1.gamma[l];
    }
    out.residual_norms[step] = frobenius(residual);
  }
  return out;
}

}  // namespace convcrunch
