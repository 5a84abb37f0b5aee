#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace convcrunch {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ConstMatrixView = Eigen::Map<const RowMajorMatrix<Scalar>>;
template <typename Scalar>
using MatrixView = Eigen::Map<RowMajorMatrix<Scalar>>;

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Flip v so its first nonzero entry is positive; the applied sign folds into
/// `carry` so callers can keep an attached scale consistent.
template <typename Scalar>
void canonicalize_sign(VectorX<Scalar>& v, Scalar& carry) {
  for (Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > Scalar(1e-14)) {
      if (v[i] < Scalar(0)) {
        v = -v;
        carry = -carry;
      }
      return;
    }
  }
}
}  // namespace detail

/// Dense 4-D convolution weight tensor, shape C x X x Y x F.
/// Storage is row-major with c slowest and f fastest, so the (C*X*Y) x F and
/// C x (X*Y*F) matrix views below are pure reshapes of the same buffer.
template <typename Scalar>
class ConvTensor {
 public:
  ConvTensor(Index c_in, Index kx, Index ky, Index f_out)
      : c_(c_in), x_(kx), y_(ky), f_(f_out), data_(VectorX<Scalar>::Zero(c_in * kx * ky * f_out)) {
    validate_dims();
  }

  ConvTensor(Index c_in, Index kx, Index ky, Index f_out, VectorX<Scalar> data)
      : c_(c_in), x_(kx), y_(ky), f_(f_out), data_(std::move(data)) {
    validate_dims();
    detail::require(data_.size() == c_ * x_ * y_ * f_,
                    "ConvTensor: data length must equal C*X*Y*F");
  }

  Index c_in() const { return c_; }
  Index kx() const { return x_; }
  Index ky() const { return y_; }
  Index f_out() const { return f_; }
  Index size() const { return data_.size(); }

  Scalar operator()(Index c, Index x, Index y, Index f) const {
    return data_[offset(c, x, y, f)];
  }
  Scalar& operator()(Index c, Index x, Index y, Index f) { return data_[offset(c, x, y, f)]; }

  const VectorX<Scalar>& data() const { return data_; }
  VectorX<Scalar>& data() { return data_; }

  bool same_shape(const ConvTensor& o) const {
    return c_ == o.c_ && x_ == o.x_ && y_ == o.y_ && f_ == o.f_;
  }

  Index offset(Index c, Index x, Index y, Index f) const {
    return ((c * x_ + x) * y_ + y) * f_ + f;
  }

 private:
  void validate_dims() const {
    detail::require(c_ >= 1 && x_ >= 1 && y_ >= 1 && f_ >= 1,
                    "ConvTensor: all dimensions must be >= 1");
  }

  Index c_, x_, y_, f_;
  VectorX<Scalar> data_;
};

/// Dense 3-D activation map, shape channels x rows x cols (row-major, channel
/// slowest). Used both for layer inputs I and layer outputs T.
template <typename Scalar>
class FeatureMap {
 public:
  FeatureMap(Index channels, Index rows, Index cols)
      : c_(channels), n_(rows), m_(cols), data_(VectorX<Scalar>::Zero(channels * rows * cols)) {
    validate_dims();
  }

  FeatureMap(Index channels, Index rows, Index cols, VectorX<Scalar> data)
      : c_(channels), n_(rows), m_(cols), data_(std::move(data)) {
    validate_dims();
    detail::require(data_.size() == c_ * n_ * m_,
                    "FeatureMap: data length must equal channels*rows*cols");
  }

  Index channels() const { return c_; }
  Index rows() const { return n_; }
  Index cols() const { return m_; }
  Index size() const { return data_.size(); }

  Scalar operator()(Index c, Index n, Index m) const { return data_[(c * n_ + n) * m_ + m]; }
  Scalar& operator()(Index c, Index n, Index m) { return data_[(c * n_ + n) * m_ + m]; }

  const VectorX<Scalar>& data() const { return data_; }
  VectorX<Scalar>& data() { return data_; }

  /// rows x cols view of one channel.
  ConstMatrixView<Scalar> channel(Index c) const {
    return ConstMatrixView<Scalar>(data_.data() + c * n_ * m_, n_, m_);
  }

  /// channels x (rows*cols) view of the whole map.
  ConstMatrixView<Scalar> as_matrix() const {
    return ConstMatrixView<Scalar>(data_.data(), c_, n_ * m_);
  }

  bool same_shape(const FeatureMap& o) const { return c_ == o.c_ && n_ == o.n_ && m_ == o.m_; }

 private:
  void validate_dims() const {
    detail::require(c_ >= 1 && n_ >= 1 && m_ >= 1, "FeatureMap: all dimensions must be >= 1");
  }

  Index c_, n_, m_;
  VectorX<Scalar> data_;
};

/// Dense 3-tensor, shape d0 x d1 x d2, row-major with the last index fastest.
template <typename Scalar>
class Tensor3 {
 public:
  Tensor3(Index d0, Index d1, Index d2)
      : d0_(d0), d1_(d1), d2_(d2), data_(VectorX<Scalar>::Zero(d0 * d1 * d2)) {
    validate_dims();
  }

  Tensor3(Index d0, Index d1, Index d2, VectorX<Scalar> data)
      : d0_(d0), d1_(d1), d2_(d2), data_(std::move(data)) {
    validate_dims();
    detail::require(data_.size() == d0_ * d1_ * d2_, "Tensor3: data length must equal d0*d1*d2");
  }

  Index dim0() const { return d0_; }
  Index dim1() const { return d1_; }
  Index dim2() const { return d2_; }
  Index size() const { return data_.size(); }

  Scalar operator()(Index i, Index j, Index l) const { return data_[(i * d1_ + j) * d2_ + l]; }
  Scalar& operator()(Index i, Index j, Index l) { return data_[(i * d1_ + j) * d2_ + l]; }

  const VectorX<Scalar>& data() const { return data_; }
  VectorX<Scalar>& data() { return data_; }

  /// d0 x (d1*d2) mode-1 matricization (pure reshape).
  ConstMatrixView<Scalar> mode1() const {
    return ConstMatrixView<Scalar>(data_.data(), d0_, d1_ * d2_);
  }

  bool same_shape(const Tensor3& o) const {
    return d0_ == o.d0_ && d1_ == o.d1_ && d2_ == o.d2_;
  }

 private:
  void validate_dims() const {
    detail::require(d0_ >= 1 && d1_ >= 1 && d2_ >= 1, "Tensor3: all dimensions must be >= 1");
  }

  Index d0_, d1_, d2_;
  VectorX<Scalar> data_;
};

/// Static description of a convolutional layer: weight dims, stride, input dims.
struct LayerSpec {
  Index c = 1, x = 1, y = 1, f = 1;
  Index stride = 1;
  Index n = 1, m = 1;

  LayerSpec() = default;
  LayerSpec(Index c_in, Index kx, Index ky, Index f_out, Index stride_, Index in_rows,
            Index in_cols)
      : c(c_in), x(kx), y(ky), f(f_out), stride(stride_), n(in_rows), m(in_cols) {
    detail::require(c >= 1 && x >= 1 && y >= 1 && f >= 1 && n >= 1 && m >= 1,
                    "LayerSpec: dimensions must be >= 1");
    detail::require(stride >= 1, "LayerSpec: stride must be >= 1");
    detail::require(n >= x && m >= y, "LayerSpec: input must be at least kernel-sized");
  }

  Index out_rows() const { return (n - x) / stride + 1; }
  Index out_cols() const { return (m - y) / stride + 1; }
};

// ---------------------------------------------------------------------------
// Matrix and 3-tensor views of a weight tensor
// ---------------------------------------------------------------------------

/// (C*X*Y) x F view, row (c*X*Y + x*Y + y), column f. Zero-copy.
template <typename Scalar>
ConstMatrixView<Scalar> fold_first_three(const ConvTensor<Scalar>& w) {
  return ConstMatrixView<Scalar>(w.data().data(), w.c_in() * w.kx() * w.ky(), w.f_out());
}

/// C x (X*Y*F) view, row c, column (x*Y + y)*F + f. Zero-copy.
template <typename Scalar>
ConstMatrixView<Scalar> fold_rows(const ConvTensor<Scalar>& w) {
  return ConstMatrixView<Scalar>(w.data().data(), w.c_in(), w.kx() * w.ky() * w.f_out());
}

/// C x (X*Y) x F tensor with the spatial dimensions concatenated.
template <typename Scalar>
Tensor3<Scalar> fold_spatial(const ConvTensor<Scalar>& w) {
  return Tensor3<Scalar>(w.c_in(), w.kx() * w.ky(), w.f_out(), w.data());
}

template <typename Scalar, typename Derived>
ConvTensor<Scalar> unfold_first_three(const Eigen::MatrixBase<Derived>& m, Index c_in, Index kx,
                                      Index ky) {
  detail::require(m.rows() == c_in * kx * ky, "unfold_first_three: row count mismatch");
  RowMajorMatrix<Scalar> rm = m;
  return ConvTensor<Scalar>(c_in, kx, ky, m.cols(),
                            Eigen::Map<const VectorX<Scalar>>(rm.data(), rm.size()));
}

template <typename Scalar, typename Derived>
ConvTensor<Scalar> unfold_rows(const Eigen::MatrixBase<Derived>& m, Index kx, Index ky,
                               Index f_out) {
  detail::require(m.cols() == kx * ky * f_out, "unfold_rows: column count mismatch");
  RowMajorMatrix<Scalar> rm = m;
  return ConvTensor<Scalar>(m.rows(), kx, ky, f_out,
                            Eigen::Map<const VectorX<Scalar>>(rm.data(), rm.size()));
}

template <typename Scalar>
ConvTensor<Scalar> unfold_spatial(const Tensor3<Scalar>& t, Index kx, Index ky) {
  detail::require(t.dim1() == kx * ky, "unfold_spatial: spatial dimension mismatch");
  return ConvTensor<Scalar>(t.dim0(), kx, ky, t.dim2(), t.data());
}

// ---------------------------------------------------------------------------
// Frobenius norm
// ---------------------------------------------------------------------------

template <typename Derived>
typename Derived::Scalar frobenius(const Eigen::MatrixBase<Derived>& m) {
  return m.norm();
}

template <typename Scalar>
Scalar frobenius(const ConvTensor<Scalar>& w) {
  return w.data().norm();
}

template <typename Scalar>
Scalar frobenius(const FeatureMap<Scalar>& m) {
  return m.data().norm();
}

template <typename Scalar>
Scalar frobenius(const Tensor3<Scalar>& t) {
  return t.data().norm();
}

using ConvTensorXd = ConvTensor<double>;
using ConvTensorXf = ConvTensor<float>;
using FeatureMapXd = FeatureMap<double>;
using FeatureMapXf = FeatureMap<float>;
using Tensor3Xd = Tensor3<double>;
using Tensor3Xf = Tensor3<float>;

}  // namespace convcrunch
