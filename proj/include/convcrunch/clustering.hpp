#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "convcrunch/random.hpp"
#include "convcrunch/tensor.hpp"

namespace convcrunch {

/// Distance used by balanced k-means. SubspaceProjection measures the distance
/// from a point to the line spanned by a unit center direction, so it is
/// invariant to the sign of the point.
enum class DistanceMode { kEuclidean, kSubspaceProjection };

template <typename Scalar>
struct BalancedClustering {
  Index k = 0;
  std::vector<Index> assignments;  // per point, in [0, k)
  MatrixX<Scalar> centers;         // k x d, one center per row
  std::vector<Index> sizes;        // all equal to n/k
  Scalar cost = Scalar(0);         // sum of squared distances
  int iterations = 0;
};

namespace detail {

template <typename Scalar>
Scalar cluster_distance_sq(const Eigen::Ref<const VectorX<Scalar>>& point,
                           const Eigen::Ref<const VectorX<Scalar>>& center, DistanceMode mode) {
  if (mode == DistanceMode::kEuclidean) return (point - center).squaredNorm();
  // Center is unit-norm; squared distance to the spanned line.
  const Scalar proj = point.dot(center);
  return std::max(Scalar(0), point.squaredNorm() - proj * proj);
}

/// Greedy balanced assignment over globally sorted (distance, point, center)
/// pairs, skipping full clusters. Deterministic tie-breaking.
template <typename Scalar>
std::vector<Index> balanced_assign(const MatrixX<Scalar>& points, const MatrixX<Scalar>& centers,
                                   DistanceMode mode, Index capacity) {
  const Index n = points.rows();
  const Index k = centers.rows();
  struct Entry {
    Scalar d;
    Index point, center;
  };
  std::vector<Entry> entries;
  entries.reserve(n * k);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < k; ++j)
      entries.push_back({cluster_distance_sq<Scalar>(points.row(i).transpose(),
                                                     centers.row(j).transpose(), mode),
                         i, j});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.d, a.point, a.center) < std::tie(b.d, b.point, b.center);
  });

  std::vector<Index> assignment(n, -1);
  std::vector<Index> load(k, 0);
  Index assigned = 0;
  for (const Entry& e : entries) {
    if (assigned == n) break;
    if (assignment[e.point] >= 0 || load[e.center] >= capacity) continue;
    assignment[e.point] = e.center;
    ++load[e.center];
    ++assigned;
  }
  return assignment;
}

template <typename Scalar>
Scalar assignment_cost(const MatrixX<Scalar>& points, const MatrixX<Scalar>& centers,
                       const std::vector<Index>& assignment, DistanceMode mode) {
  Scalar total = Scalar(0);
  for (Index i = 0; i < points.rows(); ++i)
    total += cluster_distance_sq<Scalar>(points.row(i).transpose(),
                                         centers.row(assignment[i]).transpose(), mode);
  return total;
}

/// Dominant direction of the cluster's scatter matrix, matrix-free power
/// iteration seeded from the previous center. Unit norm, canonical sign.
template <typename Scalar>
VectorX<Scalar> dominant_direction(const MatrixX<Scalar>& points, const std::vector<Index>& members,
                                   VectorX<Scalar> u) {
  if (u.norm() <= Scalar(0)) u = VectorX<Scalar>::Unit(points.cols(), 0);
  u.normalize();
  for (int iter = 0; iter < 200; ++iter) {
    VectorX<Scalar> next = VectorX<Scalar>::Zero(points.cols());
    for (Index i : members) next += points.row(i).dot(u) * points.row(i).transpose();
    const Scalar norm = next.norm();
    if (norm <= Scalar(0)) break;  // all member points orthogonal or zero
    next /= norm;
    const Scalar delta = std::min((next - u).norm(), (next + u).norm());
    u = next;
    if (delta < Scalar(1e-13)) break;
  }
  Scalar carry = Scalar(1);
  canonicalize_sign(u, carry);
  return u;
}

}  // namespace detail

template <typename Scalar>
using ClusteringObserver =
    std::function<void(int iteration, const std::vector<Index>& assignments,
                       const MatrixX<Scalar>& centers)>;

/// Equal-size k-means: every cluster holds exactly n/k points after every
/// iteration. Assignment is greedy over globally sorted distances; an
/// assignment that would raise the cost under the current centers is rejected
/// in favor of the previous one, which makes the cost nonincreasing.
template <typename Scalar>
BalancedClustering<Scalar> balanced_kmeans(const MatrixX<Scalar>& points, Index k,
                                           DistanceMode mode, std::uint64_t seed,
                                           const ClusteringObserver<Scalar>& observer = {}) {
  const Index n = points.rows();
  const Index d = points.cols();
  detail::require(k >= 1 && k <= n, "balanced_kmeans: need 1 <= k <= n");
  detail::require(n % k == 0, "balanced_kmeans: point count must be divisible by k");
  const Index capacity = n / k;
  constexpr int kMaxIterations = 100;

  // k-means++-style seeding from the provided seed.
  Rng rng(seed);
  MatrixX<Scalar> centers(k, d);
  std::vector<Index> chosen;
  chosen.push_back(rng.index(n));
  centers.row(0) = points.row(chosen[0]);
  if (mode == DistanceMode::kSubspaceProjection) {
    const Scalar norm = centers.row(0).norm();
    if (norm > Scalar(0)) centers.row(0) /= norm;
  }
  VectorX<Scalar> min_d2(n);
  for (Index j = 1; j < k; ++j) {
    for (Index i = 0; i < n; ++i) {
      Scalar best = std::numeric_limits<Scalar>::max();
      for (Index c = 0; c < j; ++c)
        best = std::min(best, detail::cluster_distance_sq<Scalar>(
                                  points.row(i).transpose(), centers.row(c).transpose(), mode));
      min_d2[i] = best;
    }
    const Scalar total = min_d2.sum();
    Index pick;
    if (total <= Scalar(0)) {
      pick = rng.index(n);
    } else {
      const Scalar target = static_cast<Scalar>(rng.uniform()) * total;
      Scalar acc = Scalar(0);
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += min_d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    centers.row(j) = points.row(pick);
    if (mode == DistanceMode::kSubspaceProjection) {
      const Scalar norm = centers.row(j).norm();
      if (norm > Scalar(0)) centers.row(j) /= norm;
    }
  }

  std::vector<Index> assignment = detail::balanced_assign(points, centers, mode, capacity);
  Scalar cost = detail::assignment_cost(points, centers, assignment, mode);

  BalancedClustering<Scalar> out;
  out.k = k;
  int iteration = 0;
  while (true) {
    ++iteration;

    // Center update given the balanced assignment.
    std::vector<std::vector<Index>> members(k);
    for (Index i = 0; i < n; ++i) members[assignment[i]].push_back(i);
    for (Index j = 0; j < k; ++j) {
      if (mode == DistanceMode::kEuclidean) {
        VectorX<Scalar> mean = VectorX<Scalar>::Zero(d);
        for (Index i : members[j]) mean += points.row(i).transpose();
        centers.row(j) = (mean / static_cast<Scalar>(members[j].size())).transpose();
      } else {
        centers.row(j) =
            detail::dominant_direction<Scalar>(points, members[j], centers.row(j).transpose())
                .transpose();
      }
    }
    cost = detail::assignment_cost(points, centers, assignment, mode);
    if (observer) observer(iteration, assignment, centers);

    if (iteration >= kMaxIterations) break;

    // Re-assign under the new centers; keep the previous assignment if the
    // greedy one would not improve the cost.
    std::vector<Index> next = detail::balanced_assign(points, centers, mode, capacity);
    const Scalar next_cost = detail::assignment_cost(points, centers, next, mode);
    if (next == assignment) break;
    if (next_cost >= cost) break;
    assignment = std::move(next);
    cost = next_cost;
  }

  out.assignments = assignment;
  out.centers = centers;
  out.sizes.assign(k, 0);
  for (Index i = 0; i < n; ++i) ++out.sizes[assignment[i]];
  out.cost = cost;
  out.iterations = iteration;
  return out;
}

}  // namespace convcrunch
