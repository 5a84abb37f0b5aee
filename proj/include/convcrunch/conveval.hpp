#pragma once

#include <cstdint>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "convcrunch/approx.hpp"
#include "convcrunch/tensor.hpp"

namespace convcrunch {

// ---------------------------------------------------------------------------
// Instrumentation: multiply-accumulate counter, readable per call
// ---------------------------------------------------------------------------

/// The evaluation paths accumulate their exact multiply-accumulate counts
/// (derived from loop trip counts) into a thread-local counter.
void reset_op_counter();
long long op_counter();

namespace detail {
void add_ops(long long macs);
}

/// Worker count for the parallel evaluation paths: CONVCRUNCH_THREADS if set,
/// else `fallback` (pass 0 for hardware concurrency).
Index configured_threads(Index fallback);

namespace detail {

template <typename Fn>
void parallel_for(Index begin, Index end, Index threads, Fn&& body) {
  const Index count = end - begin;
  if (count <= 0) return;
  if (threads > count) threads = count;
  if (threads <= 1) {
    for (Index i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const Index chunk = (count + threads - 1) / threads;
  for (Index t = 0; t < threads; ++t) {
    const Index lo = begin + t * chunk;
    const Index hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (Index i = lo; i < hi; ++i) body(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reference direct convolution
// ---------------------------------------------------------------------------

/// Valid (no padding) strided correlation,
///   T(f, ox, oy) = sum_{c,x',y'} I(c, ox*stride + x', oy*stride + y') W(c,x',y',f),
/// single-threaded with fixed summation order (c, then x', then y') per output
/// element for bit-reproducibility.
template <typename Scalar>
FeatureMap<Scalar> direct_conv(const FeatureMap<Scalar>& input, const ConvTensor<Scalar>& w,
                               Index stride) {
  detail::require(input.channels() == w.c_in(), "direct_conv: input channel count mismatch");
  detail::require(stride >= 1, "direct_conv: stride must be >= 1");
  detail::require(input.rows() >= w.kx() && input.cols() >= w.ky(),
                  "direct_conv: input smaller than kernel");

  const Index c = w.c_in(), kx = w.kx(), ky = w.ky(), f = w.f_out();
  const Index out_rows = (input.rows() - kx) / stride + 1;
  const Index out_cols = (input.cols() - ky) / stride + 1;
  FeatureMap<Scalar> out(f, out_rows, out_cols);

  const Scalar* wd = w.data().data();
  VectorX<Scalar> acc(f);
  for (Index ox = 0; ox < out_rows; ++ox) {
    for (Index oy = 0; oy < out_cols; ++oy) {
      acc.setZero();
      for (Index ci = 0; ci < c; ++ci) {
        for (Index x = 0; x < kx; ++x) {
          for (Index y = 0; y < ky; ++y) {
            const Scalar v = input(ci, ox * stride + x, oy * stride + y);
            acc += v * Eigen::Map<const VectorX<Scalar>>(wd + ((ci * kx + x) * ky + y) * f, f);
          }
        }
      }
      for (Index fi = 0; fi < f; ++fi) out(fi, ox, oy) = acc[fi];
    }
  }
  detail::add_ops(static_cast<long long>(c) * kx * ky * f * out_rows * out_cols);
  return out;
}

// ---------------------------------------------------------------------------
// Fast path: monochromatic
// ---------------------------------------------------------------------------

/// Projects the input onto the intermediate color channels, then convolves
/// each output feature against its single color map. Features sharing a color
/// are processed together so the inner loop accumulates contiguously.
template <typename Scalar>
FeatureMap<Scalar> eval_monochromatic(const FeatureMap<Scalar>& input,
                                      const MonochromaticApprox<Scalar>& m, Index stride,
                                      Index threads = 1) {
  detail::require(input.channels() == m.c_in, "eval_monochromatic: input channel count mismatch");
  detail::require(stride >= 1, "eval_monochromatic: stride must be >= 1");
  detail::require(input.rows() >= m.kx && input.cols() >= m.ky,
                  "eval_monochromatic: input smaller than kernel");

  const Index kx = m.kx, ky = m.ky;
  const Index out_rows = (input.rows() - kx) / stride + 1;
  const Index out_cols = (input.cols() - ky) / stride + 1;
  const Index in_cols = input.cols();
  FeatureMap<Scalar> out(m.f_out, out_rows, out_cols);

  // Color transform over every input pixel.
  RowMajorMatrix<Scalar> z = m.color_basis * input.as_matrix();  // num_colors x (N*M)

  std::vector<std::vector<Index>> by_color(m.num_colors);
  for (Index fi = 0; fi < m.f_out; ++fi) by_color[m.assignment[fi]].push_back(fi);

  detail::parallel_for(Index(0), m.num_colors, threads, [&](Index color) {
    const std::vector<Index>& feats = by_color[color];
    if (feats.empty()) return;
    const Index nf = static_cast<Index>(feats.size());
    // Spatial filters for this color, packed (X*Y) x nf with features fastest.
    RowMajorMatrix<Scalar> filters(kx * ky, nf);
    for (Index j = 0; j < nf; ++j) filters.col(j) = m.spatial.row(feats[j]).transpose();

    const Scalar* zrow = z.data() + color * z.cols();
    VectorX<Scalar> acc(nf);
    for (Index ox = 0; ox < out_rows; ++ox) {
      for (Index oy = 0; oy < out_cols; ++oy) {
        acc.setZero();
        for (Index x = 0; x < kx; ++x) {
          const Scalar* zp = zrow + (ox * stride + x) * in_cols + oy * stride;
          for (Index y = 0; y < ky; ++y) {
            acc += zp[y] * Eigen::Map<const VectorX<Scalar>>(filters.data() + (x * ky + y) * nf, nf);
          }
        }
        for (Index j = 0; j < nf; ++j) out(feats[j], ox, oy) = acc[j];
      }
    }
  });

  detail::add_ops(static_cast<long long>(m.num_colors) * m.c_in * input.rows() * input.cols() +
                  static_cast<long long>(kx) * ky * m.f_out * out_rows * out_cols);
  return out;
}

// ---------------------------------------------------------------------------
// Fast path: biclustered (outer-product or two-stage-SVD cells)
// ---------------------------------------------------------------------------

namespace detail {

/// Single-channel valid strided correlation of one map held as a row-major
/// (rows x cols) buffer, accumulating alpha * result into `out` (length
/// out_rows*out_cols).
template <typename Scalar>
void accumulate_single_channel_conv(const Scalar* map, Index rows, Index cols,
                                    const Scalar* filter, Index kx, Index ky, Index stride,
                                    Scalar alpha, Scalar* out) {
  const Index out_rows = (rows - kx) / stride + 1;
  const Index out_cols = (cols - ky) / stride + 1;
  for (Index ox = 0; ox < out_rows; ++ox) {
    for (Index oy = 0; oy < out_cols; ++oy) {
      Scalar acc = Scalar(0);
      for (Index x = 0; x < kx; ++x) {
        const Scalar* row = map + (ox * stride + x) * cols + oy * stride;
        const Scalar* frow = filter + x * ky;
        for (Index y = 0; y < ky; ++y) acc += row[y] * frow[y];
      }
      out[ox * out_cols + oy] += alpha * acc;
    }
  }
}

}  // namespace detail

template <typename Scalar>
FeatureMap<Scalar> eval_biclustered(const FeatureMap<Scalar>& input,
                                    const BiclusteredApprox<Scalar>& b, Index stride,
                                    Index threads = 1) {
  detail::require(input.channels() == b.c_in, "eval_biclustered: input channel count mismatch");
  detail::require(stride >= 1, "eval_biclustered: stride must be >= 1");
  detail::require(input.rows() >= b.kx && input.cols() >= b.ky,
                  "eval_biclustered: input smaller than kernel");

  const Index kx = b.kx, ky = b.ky;
  const Index in_rows = input.rows(), in_cols = input.cols();
  const Index pixels = in_rows * in_cols;
  const Index out_rows = (in_rows - kx) / stride + 1;
  const Index out_cols = (in_cols - ky) / stride + 1;
  const Index out_pixels = out_rows * out_cols;
  FeatureMap<Scalar> out(b.f_out, out_rows, out_cols);

  long long macs = 0;
  // Cells writing to the same output cluster row must not run concurrently;
  // parallelize over output clusters instead (disjoint output features).
  detail::parallel_for(Index(0), b.h, threads, [&](Index j) {
    const std::vector<Index>& features = b.output_clusters[j];
    const Index nf = static_cast<Index>(features.size());
    for (Index i = 0; i < b.g; ++i) {
      const std::vector<Index>& channels = b.input_clusters[i];
      const Index nc = static_cast<Index>(channels.size());

      // Gather the cell's input channels contiguously.
      RowMajorMatrix<Scalar> sub(nc, pixels);
      for (Index ci = 0; ci < nc; ++ci)
        sub.row(ci) =
            Eigen::Map<const Eigen::RowVectorX<Scalar>>(input.data().data() + channels[ci] * pixels,
                                                        pixels);

      if (std::holds_alternative<OuterProductDecomp<Scalar>>(b.cell(i, j))) {
        const auto& op = std::get<OuterProductDecomp<Scalar>>(b.cell(i, j));
        VectorX<Scalar> projected(pixels);
        VectorX<Scalar> convolved(out_pixels);
        for (const auto& factor : op.factors) {
          projected.noalias() = sub.transpose() * factor.alpha;
          convolved.setZero();
          detail::accumulate_single_channel_conv(projected.data(), in_rows, in_cols,
                                                 factor.beta.data(), kx, ky, stride, Scalar(1),
                                                 convolved.data());
          for (Index fj = 0; fj < nf; ++fj) {
            Scalar* dst = out.data().data() + features[fj] * out_pixels;
            const Scalar gamma = factor.gamma[fj];
            for (Index p = 0; p < out_pixels; ++p) dst[p] += gamma * convolved[p];
          }
        }
      } else {
        const auto& ts = std::get<TwoStageSvd<Scalar>>(b.cell(i, j));
        // Combined input projection U1 U2 S2: nc x k2.
        MatrixX<Scalar> proj =
            ts.outer.u * ts.inner.u * ts.inner.s.asDiagonal();  // nc x k2
        RowMajorMatrix<Scalar> zmaps = proj.transpose() * sub;  // k2 x pixels
        for (Index s = 0; s < ts.k2; ++s) {
          // Column s of V2 viewed (X*Y) x nf, features fastest.
          const Scalar* v2col = ts.inner.v.data() + s * ts.inner.v.rows();
          const Scalar* zrow = zmaps.data() + s * pixels;
          VectorX<Scalar> acc(nf);
          for (Index ox = 0; ox < out_rows; ++ox) {
            for (Index oy = 0; oy < out_cols; ++oy) {
              acc.setZero();
              for (Index x = 0; x < kx; ++x) {
                const Scalar* zp = zrow + (ox * stride + x) * in_cols + oy * stride;
                for (Index y = 0; y < ky; ++y)
                  acc += zp[y] *
                         Eigen::Map<const VectorX<Scalar>>(v2col + (x * ky + y) * nf, nf);
              }
              for (Index fj = 0; fj < nf; ++fj) out(features[fj], ox, oy) += acc[fj];
            }
          }
        }
      }
    }
  });

  for (Index i = 0; i < b.g; ++i)
    for (Index j = 0; j < b.h; ++j) {
      const Index nc = static_cast<Index>(b.input_clusters[i].size());
      const Index nf = static_cast<Index>(b.output_clusters[j].size());
      if (std::holds_alternative<OuterProductDecomp<Scalar>>(b.cell(i, j))) {
        const auto& op = std::get<OuterProductDecomp<Scalar>>(b.cell(i, j));
        macs += static_cast<long long>(op.rank) *
                (nc * pixels + kx * ky * out_pixels + nf * out_pixels);
      } else {
        const auto& ts = std::get<TwoStageSvd<Scalar>>(b.cell(i, j));
        macs += static_cast<long long>(ts.k2) * (nc * pixels + kx * ky * nf * out_pixels);
      }
    }
  detail::add_ops(macs);
  return out;
}

// ---------------------------------------------------------------------------
// Analytic operation / parameter counts
// ---------------------------------------------------------------------------

struct CostReport {
  double ops_baseline = 0, ops_approx = 0;
  double params_baseline = 0, params_approx = 0;
  double speedup_theoretical = 0;
  double param_reduction = 0;
};

struct NoApproxScheme {};
struct MonochromaticScheme {
  Index num_colors = 1;
};
struct BiclusterOuterScheme {
  Index g = 1, h = 1, k = 1;
};
struct BiclusterSvdScheme {
  Index g = 1, h = 1, k1 = 1, k2 = 1;
};

using ConvScheme =
    std::variant<NoApproxScheme, MonochromaticScheme, BiclusterOuterScheme, BiclusterSvdScheme>;

CostReport count_ops(const LayerSpec& spec, const NoApproxScheme& scheme);
CostReport count_ops(const LayerSpec& spec, const MonochromaticScheme& scheme);
CostReport count_ops(const LayerSpec& spec, const BiclusterOuterScheme& scheme);
CostReport count_ops(const LayerSpec& spec, const BiclusterSvdScheme& scheme);
CostReport count_ops(const LayerSpec& spec, const ConvScheme& scheme);

/// Fully-connected layer compressed by matrix SVD at rank k.
CostReport count_fc_ops(Index n, Index m, Index k);

// ---------------------------------------------------------------------------
// Wall-clock micro-benchmark
// ---------------------------------------------------------------------------

struct BenchRow {
  std::string scheme;
  std::string hyperparams;
  double theoretical_speedup = 1.0;
  double empirical_speedup = 1.0;
  double median_ms = 0.0;
  double mad_ms = 0.0;
  bool flagged = false;  // empirical speedup outside [0.3, 3] x theoretical
};

/// Times the reference convolution and (when a scheme is given) the matching
/// fast path on seeded random weights/inputs at `spec` dimensions. Warm-up
/// runs are discarded; median and median-absolute-deviation per batch are
/// reported. Thread count is pinned via CONVCRUNCH_THREADS (default 1).
std::vector<BenchRow> bench(const LayerSpec& spec, const ConvScheme& scheme, Index repetitions,
                            Index batch, std::uint64_t seed);

/// Fixed CSV schema: scheme,hyperparams,theoretical_speedup,empirical_speedup,
/// median_ms,mad_ms
std::string bench_csv(const std::vector<BenchRow>& rows);

std::string scheme_name(const ConvScheme& scheme);
std::string scheme_hyperparams(const ConvScheme& scheme);

}  // namespace convcrunch
