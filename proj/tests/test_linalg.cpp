#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "convcrunch/linalg.hpp"
#include "test_util.hpp"

using namespace convcrunch;
using testutil::random_matrix;
using testutil::random_tensor3;

namespace {

// Power iteration on A^T A, independent of the Jacobi path.
double largest_singular_value_oracle(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd gram = a.transpose() * a;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(gram.rows()).normalized();
  for (int i = 0; i < 5000; ++i) {
    Eigen::VectorXd next = gram * v;
    const double n = next.norm();
    if (n == 0) return 0;
    next /= n;
    if ((next - v).norm() < 1e-14) {
      v = next;
      break;
    }
    v = next;
  }
  return std::sqrt(v.dot(gram * v));
}

void check_orthonormal(const Eigen::MatrixXd& m, double tol = 1e-10) {
  Eigen::MatrixXd gram = m.transpose() * m;
  CHECK((gram - Eigen::MatrixXd::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff() <= tol);
}

Tensor3Xd rank1_tensor(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       const Eigen::VectorXd& c) {
  Tensor3Xd t(a.size(), b.size(), c.size());
  for (Index i = 0; i < a.size(); ++i)
    for (Index j = 0; j < b.size(); ++j)
      for (Index l = 0; l < c.size(); ++l) t(i, j, l) = a[i] * b[j] * c[l];
  return t;
}

Tensor3Xd add(const Tensor3Xd& a, const Tensor3Xd& b) {
  return Tensor3Xd(a.dim0(), a.dim1(), a.dim2(), a.data() + b.data());
}

}  // namespace

TEST_CASE("svd of a diagonal matrix") {
  Eigen::MatrixXd a = Eigen::Vector3d(3, 2, 1).asDiagonal();
  SvdFactors<double> f = svd(a);
  CHECK(f.s[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.s[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f.s[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.discarded_head == 0.0);
}

TEST_CASE("svd of the zero matrix") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 4);
  SvdFactors<double> f = svd(a);
  CHECK(f.s.maxCoeff() == 0.0);
  check_orthonormal(f.u);
  check_orthonormal(f.v);
}

TEST_CASE("svd largest singular value matches power iteration") {
  Eigen::MatrixXd a = random_matrix(4, 6, 21);
  SvdFactors<double> f = svd(a);
  CHECK(f.s[0] == doctest::Approx(largest_singular_value_oracle(a)).epsilon(1e-8));
}

TEST_CASE("svd reconstruction and orthonormality on random matrices") {
  Rng shapes(5);
  for (int trial = 0; trial < 25; ++trial) {
    const Index m = 1 + shapes.index(8);
    const Index k = 1 + shapes.index(8);
    Eigen::MatrixXd a = random_matrix(m, k, 400 + trial);
    SvdFactors<double> f = svd(a);
    CHECK((f.reconstruct() - a).norm() <= 1e-9 * (1.0 + a.norm()));
    check_orthonormal(f.u);
    check_orthonormal(f.v);
    for (Index i = 0; i + 1 < f.s.size(); ++i) CHECK(f.s[i] >= f.s[i + 1]);
    CHECK(f.s.minCoeff() >= 0.0);
  }
}

TEST_CASE("truncated_svd of diag(3,2,1) at t=2") {
  Eigen::MatrixXd a = Eigen::Vector3d(3, 2, 1).asDiagonal();
  SvdFactors<double> f = truncated_svd(a, 2);
  Eigen::MatrixXd expect = Eigen::Vector3d(3, 2, 0).asDiagonal();
  CHECK((f.reconstruct() - expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((f.reconstruct() - a).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.discarded_head == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("truncated_svd at full rank reconstructs exactly") {
  Eigen::MatrixXd a = random_matrix(5, 3, 33);
  SvdFactors<double> f = truncated_svd(a, 3);
  CHECK((f.reconstruct() - a).norm() <= 1e-9 * (1.0 + a.norm()));
  CHECK(f.discarded_head == 0.0);
}

TEST_CASE("truncated_svd error identity and rank validation") {
  Eigen::MatrixXd a = random_matrix(6, 5, 34);
  SvdFactors<double> full = svd(a);
  for (Index t = 1; t <= 5; ++t) {
    SvdFactors<double> f = truncated_svd(a, t);
    const double err_sq = (a - f.reconstruct()).squaredNorm();
    const double tail_sq = full.s.tail(5 - t).squaredNorm();
    CHECK(err_sq == doctest::Approx(tail_sq).epsilon(1e-9));
  }
  CHECK_THROWS_AS(truncated_svd(a, 0), std::invalid_argument);
  CHECK_THROWS_AS(truncated_svd(a, 6), std::invalid_argument);
}

TEST_CASE("truncated_svd never loses to sampled rank-2 matrices") {
  Eigen::MatrixXd a = random_matrix(5, 5, 35);
  SvdFactors<double> f = truncated_svd(a, 2);
  const double best = (a - f.reconstruct()).norm();
  Rng rng(36);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd u = rng.gaussian_matrix(5, 2);
    Eigen::MatrixXd v = rng.gaussian_matrix(2, 5);
    CHECK(best <= (a - u * v).norm() + 1e-12);
  }
}

TEST_CASE("svd multiply bound: full rank gives zero lhs") {
  Eigen::MatrixXd a = random_matrix(4, 3, 40);
  Eigen::MatrixXd input = random_matrix(5, 4, 41);
  auto [lhs, rhs] = svd_multiply_bound_check(input, a, 3);
  CHECK(lhs <= 1e-9);
  CHECK(rhs == 0.0);
}

TEST_CASE("svd multiply bound with identity input") {
  Eigen::MatrixXd a = random_matrix(4, 6, 42);
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  SvdFactors<double> full = svd(a);
  for (Index t = 1; t < 4; ++t) {
    auto [lhs, rhs] = svd_multiply_bound_check(eye, a, t);
    // lhs is then exactly ||W - W_t||_F = sqrt(tail of s^2).
    CHECK(lhs == doctest::Approx(full.s.tail(4 - t).norm()).epsilon(1e-9));
    CHECK(rhs == doctest::Approx(full.s[t] * 2.0).epsilon(1e-12));  // ||I||_F = sqrt(m) = 2
    CHECK(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("svd multiply bound holds on 100 random triples") {
  Rng shapes(43);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + shapes.index(6);
    const Index m = 2 + shapes.index(6);
    const Index k = 2 + shapes.index(6);
    Eigen::MatrixXd input = random_matrix(n, m, 5000 + trial);
    Eigen::MatrixXd a = random_matrix(m, k, 6000 + trial);
    const Index t = 1 + shapes.index(std::min(m, k));
    auto [lhs, rhs] = svd_multiply_bound_check(input, a, t);
    CHECK(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("two_stage_svd: full ranks reconstruct exactly") {
  Tensor3Xd w = random_tensor3(4, 3, 5, 50);
  const Index full = 4;  // min(4, 15)
  TwoStageSvd<double> ts = two_stage_svd(w, full, full);
  CHECK((ts.reconstruct().data() - w.data()).norm() <= 1e-9);
}

TEST_CASE("two_stage_svd: k2 = k1 equals the single truncated SVD at k1") {
  Tensor3Xd w = random_tensor3(5, 4, 6, 51);
  for (Index k1 = 1; k1 <= 5; ++k1) {
    TwoStageSvd<double> ts = two_stage_svd(w, k1, k1);
    SvdFactors<double> single = truncated_svd<double>(w.mode1(), k1);
    const double err_two = (ts.reconstruct().data() - w.data()).norm();
    const double err_one = (Eigen::MatrixXd(w.mode1()) - single.reconstruct()).norm();
    CHECK(err_two == doctest::Approx(err_one).epsilon(1e-9));
  }
}

TEST_CASE("two_stage_svd matches an explicit factor multiplication oracle") {
  Tensor3Xd w = random_tensor3(4, 9, 6, 52);
  TwoStageSvd<double> ts = two_stage_svd(w, 3, 2);
  // Recompose U1 * (U2 S2 V2^T) by hand.
  Eigen::MatrixXd right = ts.inner.u * ts.inner.s.asDiagonal() * ts.inner.v.transpose();
  Eigen::MatrixXd flat = ts.outer.u * right;
  double err_direct = 0;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 9; ++j)
      for (Index l = 0; l < 6; ++l) {
        const double d = w(i, j, l) - flat(i, j * 6 + l);
        err_direct += d * d;
      }
  const double err_reported = (ts.reconstruct().data() - w.data()).squaredNorm();
  CHECK(err_reported == doctest::Approx(err_direct).epsilon(1e-10));
}

TEST_CASE("two_stage_svd error is nonincreasing in each rank") {
  Tensor3Xd w = random_tensor3(5, 4, 7, 53);
  double prev = 1e300;
  for (Index k1 = 1; k1 <= 5; ++k1) {
    const double err = (two_stage_svd(w, k1, 1).reconstruct().data() - w.data()).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
  prev = 1e300;
  for (Index k2 = 1; k2 <= 4; ++k2) {
    const double err = (two_stage_svd(w, 4, k2).reconstruct().data() - w.data()).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("two_stage_svd rank validation") {
  Tensor3Xd w = random_tensor3(4, 3, 5, 54);
  CHECK_THROWS_AS(two_stage_svd(w, 5, 1), std::invalid_argument);  // k1 > min(4, 15)
  CHECK_THROWS_AS(two_stage_svd(w, 2, 3), std::invalid_argument);  // k2 > k1
  CHECK_THROWS_AS(two_stage_svd(w, 0, 0), std::invalid_argument);
}

TEST_CASE("rank1_als recovers a planted rank-1 tensor") {
  Rng rng(60);
  Eigen::VectorXd a = rng.gaussian_vector(4).normalized();
  Eigen::VectorXd b = rng.gaussian_vector(3).normalized();
  Eigen::VectorXd c = rng.gaussian_vector(5).normalized();
  Tensor3Xd w = rank1_tensor(2.0 * a, b, c);
  Rank1Result<double> r = rank1_als(w);
  CHECK(r.residual < 1e-8);
  CHECK(!r.degenerate);
  CHECK(r.beta.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.gamma.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.alpha.norm() == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("rank1_als on the zero tensor is degenerate") {
  Tensor3Xd w(2, 3, 4);
  Rank1Result<double> r = rank1_als(w);
  CHECK(r.degenerate);
  CHECK(r.residual == 0.0);
  CHECK(r.alpha.norm() == 0.0);
  CHECK(r.beta.norm() == 0.0);
  CHECK(r.gamma.norm() == 0.0);
}

TEST_CASE("rank1_als reaches the multi-restart oracle on a 2x2x2 tensor") {
  Tensor3Xd w = random_tensor3(2, 2, 2, 61);

  // Oracle: plain ALS from 50 random restarts, best residual kept.
  Rng rng(62);
  double best = 1e300;
  for (int restart = 0; restart < 50; ++restart) {
    Eigen::VectorXd a = rng.gaussian_vector(2);
    Eigen::VectorXd b = rng.gaussian_vector(2);
    Eigen::VectorXd c = rng.gaussian_vector(2);
    for (int sweep = 0; sweep < 400; ++sweep) {
      for (Index i = 0; i < 2; ++i) {
        double num = 0;
        for (Index j = 0; j < 2; ++j)
          for (Index l = 0; l < 2; ++l) num += w(i, j, l) * b[j] * c[l];
        a[i] = num / (b.squaredNorm() * c.squaredNorm());
      }
      for (Index j = 0; j < 2; ++j) {
        double num = 0;
        for (Index i = 0; i < 2; ++i)
          for (Index l = 0; l < 2; ++l) num += w(i, j, l) * a[i] * c[l];
        b[j] = num / (a.squaredNorm() * c.squaredNorm());
      }
      for (Index l = 0; l < 2; ++l) {
        double num = 0;
        for (Index i = 0; i < 2; ++i)
          for (Index j = 0; j < 2; ++j) num += w(i, j, l) * a[i] * b[j];
        c[l] = num / (a.squaredNorm() * b.squaredNorm());
      }
    }
    double res_sq = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j)
        for (Index l = 0; l < 2; ++l) {
          const double d = w(i, j, l) - a[i] * b[j] * c[l];
          res_sq += d * d;
        }
    best = std::min(best, std::sqrt(res_sq));
  }

  Rank1Result<double> r = rank1_als(w);
  CHECK(r.residual <= best + 1e-6);
}

TEST_CASE("rank1_als objective is nonincreasing across block updates") {
  for (int trial = 0; trial < 10; ++trial) {
    Tensor3Xd w = random_tensor3(3, 4, 5, 70 + trial);
    Rank1Result<double> r = rank1_als(w);
    const double slack = 1e-12 * w.data().squaredNorm();
    for (size_t i = 1; i < r.objective_trace.size(); ++i)
      CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] + slack);
  }
}

TEST_CASE("greedy_outer_product recovers an orthogonally decomposable tensor") {
  // Two factor triples, mutually orthogonal in every mode.
  Eigen::VectorXd a1(3), a2(3), b1(4), b2(4), c1(5), c2(5);
  a1 << 1, 0, 0;
  a2 << 0, 1, 0;
  b1 << 1, 0, 0, 0;
  b2 << 0, 0, 1, 0;
  c1 << 0, 1, 0, 0, 0;
  c2 << 0, 0, 0, 1, 0;
  Tensor3Xd w = add(rank1_tensor(3.0 * a1, b1, c1), rank1_tensor(1.5 * a2, b2, c2));
  OuterProductDecomp<double> d = greedy_outer_product(w, 2);
  CHECK(d.residual_norms[1] < 1e-7);
  CHECK((d.reconstruct().data() - w.data()).norm() < 1e-7);
}

TEST_CASE("greedy_outer_product with K=1 equals rank1_als") {
  Tensor3Xd w = random_tensor3(3, 4, 2, 80);
  OuterProductDecomp<double> d = greedy_outer_product(w, 1);
  Rank1Result<double> r = rank1_als(w);
  CHECK((d.factors[0].alpha - r.alpha).norm() == 0.0);
  CHECK((d.factors[0].beta - r.beta).norm() == 0.0);
  CHECK((d.factors[0].gamma - r.gamma).norm() == 0.0);
  CHECK(d.residual_norms[0] == doctest::Approx(r.residual).epsilon(1e-12));
}

TEST_CASE("greedy_outer_product residuals are nonincreasing") {
  Tensor3Xd w = random_tensor3(3, 4, 5, 81);
  OuterProductDecomp<double> d = greedy_outer_product(w, 4);
  CHECK(d.residual_norms[0] <= frobenius(w) + 1e-12);
  for (Index i = 1; i < 4; ++i) CHECK(d.residual_norms[i] <= d.residual_norms[i - 1] + 1e-12);
  CHECK_THROWS_AS(greedy_outer_product(w, 0), std::invalid_argument);
}
