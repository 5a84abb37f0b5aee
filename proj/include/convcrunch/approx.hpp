#pragma once

#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "convcrunch/clustering.hpp"
#include "convcrunch/linalg.hpp"
#include "convcrunch/tensor.hpp"

namespace convcrunch {

// ---------------------------------------------------------------------------
// Monochromatic approximation (first-layer color structure)
// ---------------------------------------------------------------------------

/// Each output feature keeps a rank-1 color structure W~_f = u_{c_f} s_f v_f^T
/// with the color direction u shared across the F/C' features of its cluster.
/// `spatial` stores s_f v_f^T folded to X*Y per feature.
template <typename Scalar>
struct MonochromaticApprox {
  Index c_in = 0, kx = 0, ky = 0, f_out = 0;
  Index num_colors = 0;
  MatrixX<Scalar> color_basis;     // num_colors x C, rows unit-norm
  std::vector<Index> assignment;   // per output feature, color index
  RowMajorMatrix<Scalar> spatial;  // F x (X*Y)
  Scalar frobenius_error = Scalar(0);

  Index parameter_count() const { return c_in * num_colors + kx * ky * f_out; }
};

template <typename Scalar>
MonochromaticApprox<Scalar> monochromatic_compress(const ConvTensor<Scalar>& w, Index num_colors,
                                                   std::uint64_t seed) {
  const Index c = w.c_in(), f = w.f_out();
  const Index xy = w.kx() * w.ky();
  detail::require(num_colors >= 1 && num_colors <= f,
                  "monochromatic_compress: need 1 <= num_colors <= F");
  detail::require(f % num_colors == 0,
                  "monochromatic_compress: F must be divisible by num_colors");

  // Rank-1 color factor per feature: W_f in R^{C x XY}.
  MatrixX<Scalar> color_dirs(f, c);  // clustering points, canonical sign
  std::vector<MatrixX<Scalar>> per_feature(f);
  for (Index fi = 0; fi < f; ++fi) {
    MatrixX<Scalar>& wf = per_feature[fi];
    wf.resize(c, xy);
    for (Index ci = 0; ci < c; ++ci)
      for (Index s = 0; s < xy; ++s) wf(ci, s) = w(ci, s / w.ky(), s % w.ky(), fi);
    SvdFactors<Scalar> r1 = truncated_svd(wf, Index(1));
    VectorX<Scalar> u = r1.u.col(0);
    Scalar carry = Scalar(1);
    detail::canonicalize_sign(u, carry);
    color_dirs.row(fi) = u.transpose();
  }

  BalancedClustering<Scalar> clusters =
      balanced_kmeans<Scalar>(color_dirs, num_colors, DistanceMode::kSubspaceProjection, seed);

  MonochromaticApprox<Scalar> out;
  out.c_in = c;
  out.kx = w.kx();
  out.ky = w.ky();
  out.f_out = f;
  out.num_colors = num_colors;
  out.color_basis = clusters.centers;
  out.assignment = clusters.assignments;
  out.spatial.resize(f, xy);

  // Refit the per-feature scale and spatial factor against the shared center;
  // for a unit center the least-squares row is u^T W_f.
  Scalar err_sq = Scalar(0);
  for (Index fi = 0; fi < f; ++fi) {
    const VectorX<Scalar> u = out.color_basis.row(out.assignment[fi]).transpose();
    const Eigen::RowVectorX<Scalar> fit = u.transpose() * per_feature[fi];
    out.spatial.row(fi) = fit;
    err_sq += (per_feature[fi] - u * fit).squaredNorm();
  }
  out.frobenius_error = std::sqrt(std::max(Scalar(0), err_sq));
  return out;
}

template <typename Scalar>
ConvTensor<Scalar> reconstruct(const MonochromaticApprox<Scalar>& m) {
  ConvTensor<Scalar> w(m.c_in, m.kx, m.ky, m.f_out);
  for (Index fi = 0; fi < m.f_out; ++fi) {
    const Index color = m.assignment[fi];
    for (Index ci = 0; ci < m.c_in; ++ci)
      for (Index s = 0; s < m.kx * m.ky; ++s)
        w(ci, s / m.ky, s % m.ky, fi) = m.color_basis(color, ci) * m.spatial(fi, s);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Biclustering + per-cell low-rank decomposition (higher conv layers)
// ---------------------------------------------------------------------------

enum class CellDecomp { kSvd, kOuterProduct };

struct BiclusterOptions {
  CellDecomp kind = CellDecomp::kOuterProduct;
  Index k = 1;            // outer-product rank
  Index k1 = 1, k2 = 1;   // two-stage SVD ranks
  DistanceMode distance = DistanceMode::kEuclidean;
};

template <typename Scalar>
struct BiclusteredApprox {
  Index c_in = 0, kx = 0, ky = 0, f_out = 0;
  Index g = 0, h = 0;
  BiclusterOptions options;
  std::vector<std::vector<Index>> input_clusters;   // G sets over channels, ascending
  std::vector<std::vector<Index>> output_clusters;  // H sets over features, ascending
  std::vector<std::variant<TwoStageSvd<Scalar>, OuterProductDecomp<Scalar>>> cells;  // g*h + j
  Scalar frobenius_error = Scalar(0);

  const std::variant<TwoStageSvd<Scalar>, OuterProductDecomp<Scalar>>& cell(Index i,
                                                                             Index j) const {
    return cells[i * h + j];
  }

  Index parameter_count() const {
    Index total = 0;
    for (const auto& cell : cells)
      total += std::visit([](const auto& d) { return d.parameter_count(); }, cell);
    return total;
  }
};

namespace detail {

template <typename Scalar>
Tensor3<Scalar> extract_cell(const ConvTensor<Scalar>& w, const std::vector<Index>& channels,
                             const std::vector<Index>& features) {
  const Index xy = w.kx() * w.ky();
  Tensor3<Scalar> sub(static_cast<Index>(channels.size()), xy,
                      static_cast<Index>(features.size()));
  for (size_t ci = 0; ci < channels.size(); ++ci)
    for (Index s = 0; s < xy; ++s)
      for (size_t fi = 0; fi < features.size(); ++fi)
        sub(static_cast<Index>(ci), s, static_cast<Index>(fi)) =
            w(channels[ci], s / w.ky(), s % w.ky(), features[fi]);
  return sub;
}

inline std::vector<std::vector<Index>> group_indices(const std::vector<Index>& assignments,
                                                     Index k) {
  std::vector<std::vector<Index>> groups(k);
  for (size_t i = 0; i < assignments.size(); ++i)
    groups[assignments[i]].push_back(static_cast<Index>(i));  // ascending by construction
  return groups;
}

}  // namespace detail

template <typename Scalar>
BiclusteredApprox<Scalar> biclustered_compress(const ConvTensor<Scalar>& w, Index g, Index h,
                                               const BiclusterOptions& options,
                                               std::uint64_t seed) {
  const Index c = w.c_in(), f = w.f_out();
  detail::require(g >= 1 && c % g == 0, "biclustered_compress: G must divide C");
  detail::require(h >= 1 && f % h == 0, "biclustered_compress: H must divide F");

  // Row clustering of W_C (channels) and column clustering of W_F (features).
  Rng seeds(seed);
  const std::uint64_t row_seed = seeds.next();
  const std::uint64_t col_seed = seeds.next();
  MatrixX<Scalar> row_points = fold_rows(w);
  MatrixX<Scalar> col_points = fold_first_three(w).transpose();
  BalancedClustering<Scalar> rows =
      balanced_kmeans<Scalar>(row_points, g, options.distance, row_seed);
  BalancedClustering<Scalar> cols =
      balanced_kmeans<Scalar>(col_points, h, options.distance, col_seed);

  BiclusteredApprox<Scalar> out;
  out.c_in = c;
  out.kx = w.kx();
  out.ky = w.ky();
  out.f_out = f;
  out.g = g;
  out.h = h;
  out.options = options;
  out.input_clusters = detail::group_indices(rows.assignments, g);
  out.output_clusters = detail::group_indices(cols.assignments, h);
  out.cells.reserve(g * h);

  Scalar err_sq = Scalar(0);
  for (Index i = 0; i < g; ++i) {
    for (Index j = 0; j < h; ++j) {
      Tensor3<Scalar> sub = detail::extract_cell(w, out.input_clusters[i], out.output_clusters[j]);
      if (options.kind == CellDecomp::kSvd) {
        TwoStageSvd<Scalar> d = two_stage_svd(sub, options.k1, options.k2);
        err_sq += (sub.data() - d.reconstruct().data()).squaredNorm();
        out.cells.emplace_back(std::move(d));
      } else {
        OuterProductDecomp<Scalar> d = greedy_outer_product(sub, options.k);
        const Scalar r = d.residual_norms[d.rank - 1];
        err_sq += r * r;
        out.cells.emplace_back(std::move(d));
      }
    }
  }
  out.frobenius_error = std::sqrt(std::max(Scalar(0), err_sq));
  return out;
}

template <typename Scalar>
ConvTensor<Scalar> reconstruct(const BiclusteredApprox<Scalar>& b) {
  ConvTensor<Scalar> w(b.c_in, b.kx, b.ky, b.f_out);
  for (Index i = 0; i < b.g; ++i) {
    for (Index j = 0; j < b.h; ++j) {
      Tensor3<Scalar> sub = std::visit([](const auto& d) { return d.reconstruct(); }, b.cell(i, j));
      const std::vector<Index>& channels = b.input_clusters[i];
      const std::vector<Index>& features = b.output_clusters[j];
      for (size_t ci = 0; ci < channels.size(); ++ci)
        for (Index s = 0; s < b.kx * b.ky; ++s)
          for (size_t fi = 0; fi < features.size(); ++fi)
            w(channels[ci], s / b.ky, s % b.ky, features[fi]) =
                sub(static_cast<Index>(ci), s, static_cast<Index>(fi));
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Fully-connected SVD
// ---------------------------------------------------------------------------

/// W ~ left * right with left = U S (N x K) and right = V^T (K x M).
template <typename Scalar>
struct FcSvdApprox {
  MatrixX<Scalar> left;
  MatrixX<Scalar> right;
  Index rank = 0;
  Scalar frobenius_error = Scalar(0);

  Index parameter_count() const { return left.rows() * rank + rank * right.cols(); }
};

template <typename Scalar>
FcSvdApprox<Scalar> fc_svd_compress(const MatrixX<Scalar>& w, Index k) {
  detail::require(k >= 1 && k <= std::min(w.rows(), w.cols()),
                  "fc_svd_compress: rank out of range");
  SvdFactors<Scalar> full = svd(w);
  FcSvdApprox<Scalar> out;
  out.rank = k;
  out.left = full.u.leftCols(k) * full.s.head(k).asDiagonal();
  out.right = full.v.leftCols(k).transpose();
  out.frobenius_error = full.s.tail(full.s.size() - k).norm();
  return out;
}

template <typename Scalar>
MatrixX<Scalar> reconstruct(const FcSvdApprox<Scalar>& a) {
  return a.left * a.right;
}

}  // namespace convcrunch
