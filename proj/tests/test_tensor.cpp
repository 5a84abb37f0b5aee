#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "convcrunch/tensor.hpp"
#include "test_util.hpp"

using namespace convcrunch;
using testutil::random_conv_tensor;

TEST_CASE("fold_first_three identity case") {
  ConvTensorXd w(1, 1, 1, 1);
  w(0, 0, 0, 0) = 5.0;
  auto m = fold_first_three(w);
  CHECK(m.rows() == 1);
  CHECK(m.cols() == 1);
  CHECK(m(0, 0) == 5.0);
}

TEST_CASE("fold_first_three 2x1x1x2 against full coordinate enumeration") {
  // [[a,b],[c,d]] laid out c-major, f-fastest.
  Eigen::VectorXd data(4);
  data << 1.5, -2.0, 3.25, 0.5;
  ConvTensorXd w(2, 1, 1, 2, data);
  auto m = fold_first_three(w);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m(0, 0) == 1.5);
  CHECK(m(0, 1) == -2.0);
  CHECK(m(1, 0) == 3.25);
  CHECK(m(1, 1) == 0.5);

  // Index-arithmetic oracle over every coordinate.
  ConvTensorXd big = random_conv_tensor(3, 2, 4, 5, 101);
  auto mb = fold_first_three(big);
  for (Index c = 0; c < 3; ++c)
    for (Index x = 0; x < 2; ++x)
      for (Index y = 0; y < 4; ++y)
        for (Index f = 0; f < 5; ++f)
          CHECK(mb(c * 2 * 4 + x * 4 + y, f) == big(c, x, y, f));
}

TEST_CASE("fold_first_three round trip restores the tensor bit-exactly") {
  ConvTensorXd w = random_conv_tensor(3, 5, 5, 8, 7);
  ConvTensorXd back = unfold_first_three<double>(Eigen::MatrixXd(fold_first_three(w)), 3, 5, 5);
  CHECK(back.data() == w.data());
}

TEST_CASE("fold_rows identity, round trip, enumeration") {
  ConvTensorXd tiny(1, 1, 1, 1);
  tiny(0, 0, 0, 0) = 5.0;
  CHECK(fold_rows(tiny)(0, 0) == 5.0);

  ConvTensorXd w = random_conv_tensor(4, 3, 3, 6, 13);
  ConvTensorXd back = unfold_rows<double>(Eigen::MatrixXd(fold_rows(w)), 3, 3, 6);
  CHECK(back.data() == w.data());

  auto m = fold_rows(w);
  for (Index c = 0; c < 4; ++c)
    for (Index x = 0; x < 3; ++x)
      for (Index y = 0; y < 3; ++y)
        for (Index f = 0; f < 6; ++f)
          CHECK(m(c, (x * 3 + y) * 6 + f) == w(c, x, y, f));
}

TEST_CASE("fold_spatial identity, round trip, enumeration") {
  ConvTensorXd tiny(1, 1, 1, 1);
  tiny(0, 0, 0, 0) = 5.0;
  CHECK(fold_spatial(tiny)(0, 0, 0) == 5.0);

  ConvTensorXd w = random_conv_tensor(4, 3, 3, 6, 17);
  Tensor3Xd t = fold_spatial(w);
  ConvTensorXd back = unfold_spatial(t, 3, 3);
  CHECK(back.data() == w.data());

  for (Index c = 0; c < 4; ++c)
    for (Index x = 0; x < 3; ++x)
      for (Index y = 0; y < 3; ++y)
        for (Index f = 0; f < 6; ++f)
          CHECK(t(c, x * 3 + y, f) == w(c, x, y, f));
}

TEST_CASE("frobenius basics") {
  ConvTensorXd zero(2, 3, 4, 5);
  CHECK(frobenius(zero) == 0.0);

  ConvTensorXd single(1, 1, 1, 1);
  single(0, 0, 0, 0) = 3.0;
  CHECK(frobenius(single) == 3.0);

  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 2, 0;
  CHECK(frobenius(m) == doctest::Approx(3.0).epsilon(1e-15));  // sqrt(1+4+4+0)
}

TEST_CASE("fold/unfold are inverses and preserve the norm on random shapes") {
  Rng shapes(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Index c = 1 + shapes.index(5);
    const Index x = 1 + shapes.index(4);
    const Index y = 1 + shapes.index(4);
    const Index f = 1 + shapes.index(6);
    ConvTensorXd w = random_conv_tensor(c, x, y, f, 1000 + trial);

    CHECK(unfold_first_three<double>(Eigen::MatrixXd(fold_first_three(w)), c, x, y).data() ==
          w.data());
    CHECK(unfold_rows<double>(Eigen::MatrixXd(fold_rows(w)), x, y, f).data() == w.data());
    CHECK(unfold_spatial(fold_spatial(w), x, y).data() == w.data());

    const double n = frobenius(w);
    CHECK(frobenius(fold_first_three(w)) == doctest::Approx(n).epsilon(1e-15));
    CHECK(frobenius(fold_rows(w)) == doctest::Approx(n).epsilon(1e-15));
    CHECK(frobenius(fold_spatial(w)) == doctest::Approx(n).epsilon(1e-15));
  }
}

TEST_CASE("frobenius triangle inequality and absolute homogeneity") {
  for (int trial = 0; trial < 20; ++trial) {
    ConvTensorXd a = random_conv_tensor(2, 3, 3, 4, 2000 + trial);
    ConvTensorXd b = random_conv_tensor(2, 3, 3, 4, 3000 + trial);
    ConvTensorXd sum(2, 3, 3, 4, a.data() + b.data());
    CHECK(frobenius(sum) <= frobenius(a) + frobenius(b) + 1e-12);

    const double scale = -2.75;
    ConvTensorXd scaled(2, 3, 3, 4, scale * a.data());
    CHECK(frobenius(scaled) == doctest::Approx(std::abs(scale) * frobenius(a)).epsilon(1e-13));
  }
}

TEST_CASE("dimension validation") {
  CHECK_THROWS_AS(ConvTensorXd(0, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(ConvTensorXd(1, 1, 1, 2, Eigen::VectorXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(FeatureMapXd(1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(LayerSpec(3, 7, 7, 96, 0, 224, 224), std::invalid_argument);
  CHECK_THROWS_AS(LayerSpec(3, 7, 7, 96, 2, 5, 224), std::invalid_argument);
}

TEST_CASE("layer spec output dims") {
  LayerSpec spec(3, 7, 7, 96, 2, 224, 224);
  CHECK(spec.out_rows() == 109);
  CHECK(spec.out_cols() == 109);
  LayerSpec unit(1, 1, 1, 1, 1, 4, 4);
  CHECK(unit.out_rows() == 4);
}
