#include "convcrunch/conveval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "convcrunch/random.hpp"

namespace convcrunch {

namespace {

thread_local long long g_op_counter = 0;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void reset_op_counter() { g_op_counter = 0; }
long long op_counter() { return g_op_counter; }

namespace detail {
void add_ops(long long macs) { g_op_counter += macs; }
}  // namespace detail

Index configured_threads(Index fallback) {
  if (const char* env = std::getenv("CONVCRUNCH_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<Index>(v);
  }
  if (fallback >= 1) return fallback;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<Index>(hw);
}

// ---------------------------------------------------------------------------
// Operation / parameter count formulas
// ---------------------------------------------------------------------------

namespace {

// All inputs are desk-scale integers, so double arithmetic below is exact
// until the division by stride^2.
double baseline_ops(const LayerSpec& s) {
  return static_cast<double>(s.x) * s.y * s.c * s.f * s.n * s.m /
         (static_cast<double>(s.stride) * s.stride);
}

double baseline_params(const LayerSpec& s) {
  return static_cast<double>(s.c) * s.x * s.y * s.f;
}

CostReport finish(const LayerSpec& s, double ops_approx, double params_approx) {
  CostReport r;
  r.ops_baseline = baseline_ops(s);
  r.ops_approx = ops_approx;
  r.params_baseline = baseline_params(s);
  r.params_approx = params_approx;
  r.speedup_theoretical = r.ops_baseline / r.ops_approx;
  r.param_reduction = r.params_baseline / r.params_approx;
  return r;
}

}  // namespace

CostReport count_ops(const LayerSpec& spec, const NoApproxScheme&) {
  return finish(spec, baseline_ops(spec), baseline_params(spec));
}

CostReport count_ops(const LayerSpec& spec, const MonochromaticScheme& scheme) {
  detail::require(scheme.num_colors >= 1 && scheme.num_colors <= spec.f,
                  "count_ops: need 1 <= num_colors <= F");
  detail::require(spec.f % scheme.num_colors == 0,
                  "count_ops: F must be divisible by num_colors");
  const double cp = static_cast<double>(scheme.num_colors);
  const double ops = cp * spec.c * spec.n * spec.m +
                     static_cast<double>(spec.x) * spec.y * spec.f * spec.n * spec.m /
                         (static_cast<double>(spec.stride) * spec.stride);
  const double params = static_cast<double>(spec.c) * cp + static_cast<double>(spec.x) * spec.y * spec.f;
  return finish(spec, ops, params);
}

CostReport count_ops(const LayerSpec& spec, const BiclusterOuterScheme& scheme) {
  detail::require(scheme.g >= 1 && spec.c % scheme.g == 0, "count_ops: G must divide C");
  detail::require(scheme.h >= 1 && spec.f % scheme.h == 0, "count_ops: H must divide F");
  detail::require(scheme.k >= 1, "count_ops: K must be >= 1");
  const double g = static_cast<double>(scheme.g), h = static_cast<double>(scheme.h),
               k = static_cast<double>(scheme.k);
  const double nm = static_cast<double>(spec.n) * spec.m;
  const double d2 = static_cast<double>(spec.stride) * spec.stride;
  const double ops = g * h * k *
                     (nm * spec.c / g + static_cast<double>(spec.x) * spec.y * nm / d2 +
                      spec.f / h * nm / d2);
  const double params =
      g * h * k * (spec.c / g + static_cast<double>(spec.x) * spec.y + spec.f / h);
  return finish(spec, ops, params);
}

CostReport count_ops(const LayerSpec& spec, const BiclusterSvdScheme& scheme) {
  detail::require(scheme.g >= 1 && spec.c % scheme.g == 0, "count_ops: G must divide C");
  detail::require(scheme.h >= 1 && spec.f % scheme.h == 0, "count_ops: H must divide F");
  detail::require(scheme.k1 >= 1 && scheme.k2 >= 1, "count_ops: ranks must be >= 1");
  const double g = static_cast<double>(scheme.g), h = static_cast<double>(scheme.h);
  const double k1 = static_cast<double>(scheme.k1), k2 = static_cast<double>(scheme.k2);
  const double nm = static_cast<double>(spec.n) * spec.m;
  const double d2 = static_cast<double>(spec.stride) * spec.stride;
  const double ops = g * h * nm *
                     (spec.c / g * k1 + k1 * spec.x * spec.y * k2 / d2 + k2 * spec.f / h);
  const double params =
      g * h * (spec.c / g * k1 + k1 * spec.x * spec.y * k2 + k2 * spec.f / h);
  return finish(spec, ops, params);
}

CostReport count_ops(const LayerSpec& spec, const ConvScheme& scheme) {
  return std::visit([&](const auto& s) { return count_ops(spec, s); }, scheme);
}

CostReport count_fc_ops(Index n, Index m, Index k) {
  detail::require(n >= 1 && m >= 1, "count_fc_ops: dimensions must be >= 1");
  detail::require(k >= 1 && k <= std::min(n, m), "count_fc_ops: rank out of range");
  CostReport r;
  r.ops_baseline = static_cast<double>(n) * m;
  r.ops_approx = static_cast<double>(n) * k + static_cast<double>(k) * m;
  r.params_baseline = r.ops_baseline;
  r.params_approx = r.ops_approx;
  r.speedup_theoretical = r.ops_baseline / r.ops_approx;
  r.param_reduction = r.params_baseline / r.params_approx;
  return r;
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

std::string scheme_name(const ConvScheme& scheme) {
  struct Visitor {
    std::string operator()(const NoApproxScheme&) const { return "none"; }
    std::string operator()(const MonochromaticScheme&) const { return "monochromatic"; }
    std::string operator()(const BiclusterOuterScheme&) const { return "bicluster-outer"; }
    std::string operator()(const BiclusterSvdScheme&) const { return "bicluster-svd"; }
  };
  return std::visit(Visitor{}, scheme);
}

std::string scheme_hyperparams(const ConvScheme& scheme) {
  struct Visitor {
    std::string operator()(const NoApproxScheme&) const { return ""; }
    std::string operator()(const MonochromaticScheme& s) const {
      return "cprime=" + std::to_string(s.num_colors);
    }
    std::string operator()(const BiclusterOuterScheme& s) const {
      return "g=" + std::to_string(s.g) + ";h=" + std::to_string(s.h) +
             ";k=" + std::to_string(s.k);
    }
    std::string operator()(const BiclusterSvdScheme& s) const {
      return "g=" + std::to_string(s.g) + ";h=" + std::to_string(s.h) +
             ";k1=" + std::to_string(s.k1) + ";k2=" + std::to_string(s.k2);
    }
  };
  return std::visit(Visitor{}, scheme);
}

namespace {

struct TimedRuns {
  double median_ms = 0.0;
  double mad_ms = 0.0;
};

template <typename Fn>
TimedRuns time_runs(Index repetitions, Fn&& run_batch) {
  run_batch();  // warm-up, discarded
  std::vector<double> times_ms;
  times_ms.reserve(repetitions);
  for (Index r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    run_batch();
    const auto t1 = std::chrono::steady_clock::now();
    times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  TimedRuns out;
  out.median_ms = median_of(times_ms);
  std::vector<double> dev;
  dev.reserve(times_ms.size());
  for (double t : times_ms) dev.push_back(std::abs(t - out.median_ms));
  out.mad_ms = median_of(dev);
  return out;
}

}  // namespace

std::vector<BenchRow> bench(const LayerSpec& spec, const ConvScheme& scheme, Index repetitions,
                            Index batch, std::uint64_t seed) {
  detail::require(repetitions >= 3, "bench: repetitions must be >= 3");
  detail::require(batch >= 1, "bench: batch must be >= 1");

  const Index threads = configured_threads(1);  // pinned: default single-threaded
  Rng rng(seed);
  ConvTensor<double> w(spec.c, spec.x, spec.y, spec.f, rng.gaussian_vector(spec.c * spec.x *
                                                                           spec.y * spec.f));
  std::vector<FeatureMap<double>> inputs;
  inputs.reserve(batch);
  for (Index b = 0; b < batch; ++b)
    inputs.emplace_back(spec.c, spec.n, spec.m, rng.gaussian_vector(spec.c * spec.n * spec.m));

  volatile double sink = 0;  // keep the timed loops observable
  TimedRuns base = time_runs(repetitions, [&] {
    for (const auto& in : inputs) sink = sink + direct_conv(in, w, spec.stride).data()[0];
  });

  std::vector<BenchRow> rows;
  BenchRow none;
  none.scheme = "none";
  none.hyperparams = "";
  none.theoretical_speedup = 1.0;
  none.empirical_speedup = 1.0;
  none.median_ms = base.median_ms;
  none.mad_ms = base.mad_ms;
  rows.push_back(none);
  if (std::holds_alternative<NoApproxScheme>(scheme)) return rows;

  const CostReport cost = count_ops(spec, scheme);
  TimedRuns fast;
  if (std::holds_alternative<MonochromaticScheme>(scheme)) {
    const auto& s = std::get<MonochromaticScheme>(scheme);
    MonochromaticApprox<double> approx = monochromatic_compress(w, s.num_colors, seed);
    fast = time_runs(repetitions, [&] {
      for (const auto& in : inputs)
        sink = sink + eval_monochromatic(in, approx, spec.stride, threads).data()[0];
    });
  } else if (std::holds_alternative<BiclusterOuterScheme>(scheme)) {
    const auto& s = std::get<BiclusterOuterScheme>(scheme);
    BiclusterOptions opt;
    opt.kind = CellDecomp::kOuterProduct;
    opt.k = s.k;
    BiclusteredApprox<double> approx = biclustered_compress(w, s.g, s.h, opt, seed);
    fast = time_runs(repetitions, [&] {
      for (const auto& in : inputs)
        sink = sink + eval_biclustered(in, approx, spec.stride, threads).data()[0];
    });
  } else {
    const auto& s = std::get<BiclusterSvdScheme>(scheme);
    detail::require(s.k2 <= s.k1, "bench: two-stage SVD needs k2 <= k1");
    BiclusterOptions opt;
    opt.kind = CellDecomp::kSvd;
    opt.k1 = s.k1;
    opt.k2 = s.k2;
    BiclusteredApprox<double> approx = biclustered_compress(w, s.g, s.h, opt, seed);
    fast = time_runs(repetitions, [&] {
      for (const auto& in : inputs)
        sink = sink + eval_biclustered(in, approx, spec.stride, threads).data()[0];
    });
  }

  BenchRow row;
  row.scheme = scheme_name(scheme);
  row.hyperparams = scheme_hyperparams(scheme);
  row.theoretical_speedup = cost.speedup_theoretical;
  row.empirical_speedup = base.median_ms / fast.median_ms;
  row.median_ms = fast.median_ms;
  row.mad_ms = fast.mad_ms;
  row.flagged = row.empirical_speedup < 0.3 * row.theoretical_speedup ||
                row.empirical_speedup > 3.0 * row.theoretical_speedup;
  if (row.flagged) {
    std::cerr << "bench: empirical speedup " << row.empirical_speedup
              << "x is outside [0.3, 3] x theoretical (" << row.theoretical_speedup
              << "x); measurement or implementation suspect\n";
  }
  rows.push_back(row);
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "scheme,hyperparams,theoretical_speedup,empirical_speedup,median_ms,mad_ms\n";
  for (const BenchRow& r : rows) {
    os << r.scheme << ',' << r.hyperparams << ',' << r.theoretical_speedup << ','
       << r.empirical_speedup << ',' << r.median_ms << ',' << r.mad_ms << '\n';
  }
  return os.str();
}

}  // namespace convcrunch
