#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "convcrunch/tensor.hpp"

namespace convcrunch {

/// Empirical second moment of layer-input patches, Sigma = (1/n) sum p p^T.
/// The principal square root is computed on demand and cached.
template <typename Scalar>
class DataCovariance {
 public:
  explicit DataCovariance(MatrixX<Scalar> sigma_hat) : sigma_(std::move(sigma_hat)) {
    detail::require(sigma_.rows() == sigma_.cols(), "DataCovariance: matrix must be square");
    detail::require((sigma_ - sigma_.transpose()).template lpNorm<Eigen::Infinity>() <=
                        Scalar(1e-10) * (Scalar(1) + sigma_.template lpNorm<Eigen::Infinity>()),
                    "DataCovariance: matrix must be symmetric");
  }

  Index dim() const { return sigma_.rows(); }
  const MatrixX<Scalar>& sigma_hat() const { return sigma_; }

  /// Principal square root via eigendecomposition, eigenvalues clamped at 0.
  const MatrixX<Scalar>& sqrt() const {
    if (!sqrt_cached_) {
      Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(sigma_);
      detail::require(eig.eigenvalues().minCoeff() >= Scalar(-1e-10),
                      "DataCovariance: matrix must be positive semidefinite");
      VectorX<Scalar> roots = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
      sqrt_cached_ = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
    }
    return *sqrt_cached_;
  }

 private:
  MatrixX<Scalar> sigma_;
  mutable std::optional<MatrixX<Scalar>> sqrt_cached_;
};

/// Streaming accumulator for the input covariance. Accumulators filled on
/// separate threads can be combined with merge().
template <typename Scalar>
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(Index dim)
      : sum_(MatrixX<Scalar>::Zero(dim, dim)), count_(0) {}

  void add(const VectorX<Scalar>& patch) {
    detail::require(patch.size() == sum_.rows(), "CovarianceAccumulator: patch dimension mismatch");
    sum_.template selfadjointView<Eigen::Lower>().rankUpdate(patch);
    ++count_;
  }

  void merge(const CovarianceAccumulator& other) {
    detail::require(other.sum_.rows() == sum_.rows(), "CovarianceAccumulator: dimension mismatch");
    sum_ += other.sum_;
    count_ += other.count_;
  }

  Index count() const { return count_; }

  DataCovariance<Scalar> finalize() const {
    detail::require(count_ >= 1, "CovarianceAccumulator: no patches accumulated");
    MatrixX<Scalar> full = sum_.template selfadjointView<Eigen::Lower>();
    return DataCovariance<Scalar>(full / static_cast<Scalar>(count_));
  }

 private:
  MatrixX<Scalar> sum_;
  Index count_;
};

template <typename Scalar>
DataCovariance<Scalar> estimate_input_covariance(const std::vector<VectorX<Scalar>>& patches) {
  detail::require(!patches.empty(), "estimate_input_covariance: need at least one patch");
  CovarianceAccumulator<Scalar> acc(patches.front().size());
  for (const VectorX<Scalar>& p : patches) acc.add(p);
  return acc.finalize();
}

/// || Sigma^{1/2} W_F ||_F with W_F the (C*X*Y) x F fold.
template <typename Scalar>
Scalar data_metric(const ConvTensor<Scalar>& w, const DataCovariance<Scalar>& cov) {
  detail::require(cov.dim() == w.c_in() * w.kx() * w.ky(),
                  "data_metric: covariance dimension must equal C*X*Y");
  return (cov.sqrt() * fold_first_three(w)).norm();
}

/// Per-coordinate sensitivity weights accumulated from back-propagated
/// "dangerous mistake" residual gradients: alpha_p = sqrt(sum d(p)^2).
template <typename Scalar>
class GradientStats {
 public:
  GradientStats(Index c_in, Index kx, Index ky, Index f_out, Index h)
      : shape_(c_in, kx, ky, f_out), sum_squares_(VectorX<Scalar>::Zero(shape_.size())),
        sample_count_(0), h_(h) {}

  void accumulate(const ConvTensor<Scalar>& grad) {
    detail::require(grad.same_shape(shape_), "GradientStats: gradient shape mismatch");
    sum_squares_ += grad.data().cwiseAbs2();
    ++sample_count_;
  }

  void merge(const GradientStats& other) {
    detail::require(other.shape_.same_shape(shape_) && other.h_ == h_,
                    "GradientStats: accumulator mismatch");
    sum_squares_ += other.sum_squares_;
    sample_count_ += other.sample_count_;
  }

  Index sample_count() const { return sample_count_; }
  Index h() const { return h_; }

  /// alpha tensor; degenerate when every coordinate is zero (reweighting would
  /// be meaningless).
  ConvTensor<Scalar> finalize(bool* degenerate = nullptr) const {
    if (degenerate) *degenerate = (sum_squares_.maxCoeff() <= Scalar(0));
    return ConvTensor<Scalar>(shape_.c_in(), shape_.kx(), shape_.ky(), shape_.f_out(),
                              sum_squares_.cwiseSqrt());
  }

 private:
  ConvTensor<Scalar> shape_;
  VectorX<Scalar> sum_squares_;
  Index sample_count_;
  Index h_;
};

/// Scale -> approximate -> unscale: W~ = alpha^{-1} .* inner(alpha .* W).
/// Coordinates with alpha at or below the floor are rejected so callers make
/// the flooring/exclusion decision explicitly.
template <typename Scalar>
ConvTensor<Scalar> reweighted_approximate(
    const ConvTensor<Scalar>& w, const ConvTensor<Scalar>& alpha,
    const std::function<ConvTensor<Scalar>(const ConvTensor<Scalar>&)>& inner) {
  detail::require(alpha.same_shape(w), "reweighted_approximate: alpha shape mismatch");
  const Scalar kFloor = Scalar(1e-12);

  std::vector<Index> offending;
  for (Index i = 0; i < alpha.size(); ++i)
    if (alpha.data()[i] <= kFloor) offending.push_back(i);
  if (!offending.empty()) {
    std::ostringstream msg;
    msg << "reweighted_approximate: " << offending.size()
        << " alpha coordinate(s) at or below " << kFloor << " (flat indices";
    for (size_t i = 0; i < offending.size() && i < 8; ++i) msg << ' ' << offending[i];
    if (offending.size() > 8) msg << " ...";
    msg << "); floor or exclude them first";
    throw std::invalid_argument(msg.str());
  }

  ConvTensor<Scalar> scaled(w.c_in(), w.kx(), w.ky(), w.f_out(),
                            w.data().cwiseProduct(alpha.data()));
  ConvTensor<Scalar> approx_scaled = inner(scaled);
  detail::require(approx_scaled.same_shape(w),
                  "reweighted_approximate: inner procedure changed the shape");
  return ConvTensor<Scalar>(w.c_in(), w.kx(), w.ky(), w.f_out(),
                            approx_scaled.data().cwiseQuotient(alpha.data()));
}

/// Weighted Frobenius error || alpha .* (a - b) ||_F, the quantity the
/// reweighting pipeline is meant to improve.
template <typename Scalar>
Scalar weighted_error(const ConvTensor<Scalar>& a, const ConvTensor<Scalar>& b,
                      const ConvTensor<Scalar>& alpha) {
  detail::require(a.same_shape(b) && alpha.same_shape(a), "weighted_error: shape mismatch");
  return (a.data() - b.data()).cwiseProduct(alpha.data()).norm();
}

}  // namespace convcrunch
