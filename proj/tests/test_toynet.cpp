#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "convcrunch/toynet.hpp"
#include "test_util.hpp"

using namespace convcrunch;
using testutil::random_feature_map;

namespace {

/// Independent straight-line recomputation of the forward pass.
Eigen::VectorXd forward_oracle(const ToyNetwork& net, const FeatureMapXd& in) {
  const Index rows = ToyNetwork::conv_out_rows(), cols = ToyNetwork::conv_out_cols();
  Eigen::VectorXd flat(ToyNetwork::kConvFeatures * rows * cols);
  for (Index f = 0; f < ToyNetwork::kConvFeatures; ++f)
    for (Index ox = 0; ox < rows; ++ox)
      for (Index oy = 0; oy < cols; ++oy) {
        double acc = net.conv_b[f];
        for (Index c = 0; c < 3; ++c)
          for (Index x = 0; x < 5; ++x)
            for (Index y = 0; y < 5; ++y)
              acc += in(c, ox * 2 + x, oy * 2 + y) * net.conv_w(c, x, y, f);
        flat[f * rows * cols + ox * cols + oy] = std::max(0.0, acc);
      }
  Eigen::VectorXd a1 = net.fc1_w * flat + net.fc1_b;
  for (Index i = 0; i < a1.size(); ++i) a1[i] = std::max(0.0, a1[i]);
  Eigen::VectorXd a2 = net.fc2_w * a1 + net.fc2_b;
  Eigen::VectorXd e = (a2.array() - a2.maxCoeff()).exp();
  return e / e.sum();
}

double param_dot_gradient_fd(ToyNetwork net, const FeatureMapXd& in,
                             const Eigen::VectorXd& residual, double* coord, double step) {
  const double saved = *coord;
  *coord = saved + step;
  const double up = residual.dot(forward(net, in));
  *coord = saved - step;
  const double down = residual.dot(forward(net, in));
  *coord = saved;
  return (up - down) / (2 * step);
}

void check_gradients(std::uint64_t seed) {
  ToyNetwork net = ToyNetwork::random_init(5, seed);
  FeatureMapXd in = random_feature_map(3, 16, 16, seed + 1);
  Rng rng(seed + 2);
  Eigen::VectorXd residual = rng.gaussian_vector(5);
  ToyGradients g = backward(net, in, residual);

  const double step = 1e-5;
  auto check_coord = [&](double* param, double analytic) {
    // The same parameter location inside a copied net.
    const double fd = [&] {
      ToyNetwork copy = net;
      const std::ptrdiff_t off_conv = param - net.conv_w.data().data();
      if (off_conv >= 0 && off_conv < net.conv_w.size())
        return param_dot_gradient_fd(copy, in, residual, copy.conv_w.data().data() + off_conv,
                                     step);
      const std::ptrdiff_t off_cb = param - net.conv_b.data();
      if (off_cb >= 0 && off_cb < net.conv_b.size())
        return param_dot_gradient_fd(copy, in, residual, copy.conv_b.data() + off_cb, step);
      const std::ptrdiff_t off_w1 = param - net.fc1_w.data();
      if (off_w1 >= 0 && off_w1 < net.fc1_w.size())
        return param_dot_gradient_fd(copy, in, residual, copy.fc1_w.data() + off_w1, step);
      const std::ptrdiff_t off_b1 = param - net.fc1_b.data();
      if (off_b1 >= 0 && off_b1 < net.fc1_b.size())
        return param_dot_gradient_fd(copy, in, residual, copy.fc1_b.data() + off_b1, step);
      const std::ptrdiff_t off_w2 = param - net.fc2_w.data();
      if (off_w2 >= 0 && off_w2 < net.fc2_w.size())
        return param_dot_gradient_fd(copy, in, residual, copy.fc2_w.data() + off_w2, step);
      return param_dot_gradient_fd(copy, in, residual,
                                   copy.fc2_b.data() + (param - net.fc2_b.data()), step);
    }();
    const double scale = std::max({1e-6, std::abs(fd), std::abs(analytic)});
    CHECK(std::abs(fd - analytic) / scale <= 1e-4);
  };

  // Spot-check a spread of coordinates in every parameter block (the
  // acceptance suite sweeps all of them).
  for (Index i = 0; i < net.conv_w.size(); i += 37)
    check_coord(net.conv_w.data().data() + i, g.conv_w.data()[i]);
  for (Index i = 0; i < net.conv_b.size(); ++i)
    check_coord(net.conv_b.data() + i, g.conv_b[i]);
  for (Index i = 0; i < net.fc1_w.size(); i += 397)
    check_coord(net.fc1_w.data() + i, g.fc1_w.data()[i]);
  for (Index i = 0; i < net.fc1_b.size(); i += 5)
    check_coord(net.fc1_b.data() + i, g.fc1_b[i]);
  for (Index i = 0; i < net.fc2_w.size(); i += 11)
    check_coord(net.fc2_w.data() + i, g.fc2_w.data()[i]);
  for (Index i = 0; i < net.fc2_b.size(); ++i)
    check_coord(net.fc2_b.data() + i, g.fc2_b[i]);
}

}  // namespace

TEST_CASE("forward with zero weights is uniform") {
  ToyNetwork net = ToyNetwork::random_init(8, 1);
  net.conv_w.data().setZero();
  net.conv_b.setZero();
  net.fc1_w.setZero();
  net.fc1_b.setZero();
  net.fc2_w.setZero();
  net.fc2_b.setZero();
  FeatureMapXd in = random_feature_map(3, 16, 16, 2);
  Eigen::VectorXd u = forward(net, in);
  CHECK((u.array() - 0.125).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("softmax output is normalized and shift-invariant") {
  ToyNetwork net = ToyNetwork::random_init(6, 3);
  FeatureMapXd in = random_feature_map(3, 16, 16, 4);
  Eigen::VectorXd u = forward(net, in);
  CHECK(u.minCoeff() >= 0.0);
  CHECK(std::abs(u.sum() - 1.0) <= 1e-9);

  ToyNetwork shifted = net;
  shifted.fc2_b.array() += 3.75;  // constant added to every logit
  Eigen::VectorXd v = forward(shifted, in);
  CHECK((u - v).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("forward matches the duplicate straight-line oracle") {
  ToyNetwork net = ToyNetwork::random_init(7, 5);
  for (int trial = 0; trial < 5; ++trial) {
    FeatureMapXd in = random_feature_map(3, 16, 16, 60 + trial);
    Eigen::VectorXd u = forward(net, in);
    Eigen::VectorXd v = forward_oracle(net, in);
    CHECK((u - v).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("backward with zero residual gives zero gradients") {
  ToyNetwork net = ToyNetwork::random_init(4, 7);
  FeatureMapXd in = random_feature_map(3, 16, 16, 8);
  ToyGradients g = backward(net, in, Eigen::VectorXd::Zero(4));
  CHECK(g.conv_w.data().cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.fc1_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.fc2_w.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches central finite differences") { check_gradients(11); }

TEST_CASE("backward is linear in the residual") {
  ToyNetwork net = ToyNetwork::random_init(5, 13);
  FeatureMapXd in = random_feature_map(3, 16, 16, 14);
  Rng rng(15);
  Eigen::VectorXd r1 = rng.gaussian_vector(5);
  Eigen::VectorXd r2 = rng.gaussian_vector(5);
  ToyGradients a = backward(net, in, r1);
  ToyGradients b = backward(net, in, r2);
  ToyGradients sum = backward(net, in, r1 + r2);
  CHECK((sum.conv_w.data() - a.conv_w.data() - b.conv_w.data()).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((sum.fc1_w - a.fc1_w - b.fc1_w).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((sum.fc2_w - a.fc2_w - b.fc2_w).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((sum.fc2_b - a.fc2_b - b.fc2_b).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("dangerous_mistakes basics") {
  Eigen::VectorXd u(3);
  u << 0.5, 0.3, 0.2;
  CHECK(dangerous_mistakes(u, 0, 1) == std::vector<Index>{1});
  CHECK(dangerous_mistakes(u, 1, 2) == std::vector<Index>{0, 2});
  CHECK_THROWS_AS(dangerous_mistakes(u, 0, 3), std::invalid_argument);
  CHECK_THROWS_AS(dangerous_mistakes(u, 0, 0), std::invalid_argument);
}

TEST_CASE("dangerous_mistakes matches the sort-and-filter oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Index l = 4 + rng.index(8);
    Eigen::VectorXd u = rng.gaussian_vector(l).array().exp();
    u /= u.sum();
    const Index label = rng.index(l);
    const Index h = 1 + rng.index(l - 1);
    std::vector<Index> got = dangerous_mistakes(u, label, h);

    std::vector<Index> oracle;
    for (Index i = 0; i < l; ++i)
      if (i != label) oracle.push_back(i);
    std::stable_sort(oracle.begin(), oracle.end(),
                     [&](Index a, Index b) { return u[a] > u[b]; });
    oracle.resize(h);
    CHECK(got == oracle);
    CHECK(std::find(got.begin(), got.end(), label) == got.end());
    CHECK(static_cast<Index>(got.size()) == h);
  }
}

TEST_CASE("train: zero epochs leaves the net untouched") {
  ToyNetwork net = ToyNetwork::random_init(4, 19);
  ToyNetwork before = net;
  ToyDataset data = make_toy_dataset(4, 4, 0.4, 20);
  TrainConfig cfg;
  cfg.epochs = 0;
  train(net, data, cfg);
  CHECK(net.conv_w.data() == before.conv_w.data());
  CHECK(net.fc1_w == before.fc1_w);
  CHECK(net.fc2_w == before.fc2_w);
}

TEST_CASE("train: frozen_below = layer count changes nothing") {
  ToyNetwork net = ToyNetwork::random_init(4, 21);
  ToyNetwork before = net;
  ToyDataset data = make_toy_dataset(4, 4, 0.4, 22);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.frozen_below = ToyNetwork::kLayerCount;
  train(net, data, cfg);
  CHECK(net.conv_w.data() == before.conv_w.data());
  CHECK(net.conv_b == before.conv_b);
  CHECK(net.fc1_w == before.fc1_w);
  CHECK(net.fc1_b == before.fc1_b);
  CHECK(net.fc2_w == before.fc2_w);
  CHECK(net.fc2_b == before.fc2_b);
}

TEST_CASE("train: frozen layers keep their exact bytes while others move") {
  ToyNetwork net = ToyNetwork::random_init(4, 23);
  ToyNetwork before = net;
  ToyDataset data = make_toy_dataset(4, 4, 0.4, 24);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.frozen_below = 0;  // conv fixed, FCs free
  train(net, data, cfg);
  CHECK(net.conv_w.data() == before.conv_w.data());
  CHECK(net.conv_b == before.conv_b);
  CHECK(net.fc1_w != before.fc1_w);
}

TEST_CASE("train reaches 95% on a separable 2-class task") {
  ToyNetwork net = ToyNetwork::random_init(2, 25);
  ToyDataset data = make_toy_dataset(20, 2, 0.3, 26);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 0.05;
  cfg.seed = 27;
  TrainTrace trace = train(net, data, cfg);
  CHECK(trace.accuracy.back() >= 0.95);
}

TEST_CASE("train is deterministic for a fixed seed") {
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 30);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 31;
  ToyNetwork a = ToyNetwork::random_init(4, 29);
  ToyNetwork b = ToyNetwork::random_init(4, 29);
  TrainTrace ta = train(a, data, cfg);
  TrainTrace tb = train(b, data, cfg);
  CHECK(ta.accuracy == tb.accuracy);
  CHECK(ta.loss == tb.loss);
  CHECK(a.fc2_w == b.fc2_w);
}

TEST_CASE("compress_finetune: lossless FC rank keeps the accuracy exactly") {
  ToyNetwork net = ToyNetwork::random_init(4, 33);
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 34);
  TrainConfig pre;
  pre.epochs = 6;
  pre.seed = 35;
  train(net, data, pre);

  TrainConfig ft;
  ft.epochs = 0;  // isolate the compression effect
  ft.seed = 36;
  FinetuneResult r = compress_finetune(net, 1, FcRankScheme{ToyNetwork::kHidden}, data, ft, 37);
  CHECK(r.acc_after_compress == r.acc_before);
}

TEST_CASE("compress_finetune: fine-tuning does not lose accuracy after harsh compression") {
  ToyNetwork net = ToyNetwork::random_init(4, 39);
  ToyDataset data = make_toy_dataset(8, 4, 0.4, 40);
  TrainConfig pre;
  pre.epochs = 10;
  pre.seed = 41;
  train(net, data, pre);

  TrainConfig ft;
  ft.epochs = 8;
  ft.seed = 42;
  FinetuneResult r = compress_finetune(net, 0, MonochromaticScheme{2}, data, ft, 43);
  CHECK(r.acc_after_finetune >= r.acc_after_compress);
}

TEST_CASE("compress_finetune freezes the compressed layer during fine-tuning") {
  ToyNetwork net = ToyNetwork::random_init(4, 45);
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 46);
  TrainConfig ft;
  ft.epochs = 3;
  ft.seed = 47;
  compress_finetune(net, 0, MonochromaticScheme{4}, data, ft, 48);
  ConvTensorXd compressed_layer = net.conv_w;

  // Re-run fine-tuning epochs manually: conv must stay untouched.
  TrainConfig more = ft;
  more.frozen_below = 0;
  train(net, data, more);
  CHECK(net.conv_w.data() == compressed_layer.data());
}

TEST_CASE("cascade runs bottom-up with an intermediate fine-tune") {
  ToyNetwork net = ToyNetwork::random_init(4, 49);
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 50);
  TrainConfig pre;
  pre.epochs = 8;
  pre.seed = 51;
  train(net, data, pre);

  TrainConfig ft;
  ft.epochs = 4;
  ft.seed = 52;
  std::vector<CascadeStep> steps = {{0, MonochromaticScheme{4}}, {1, FcRankScheme{8}}};
  std::vector<FinetuneResult> results = cascade(net, steps, data, ft, 53);
  REQUIRE(results.size() == 2);
  // The second step starts from the state the first step left behind.
  CHECK(results[1].acc_before == results[0].acc_after_finetune);

  std::vector<CascadeStep> backwards = {{1, FcRankScheme{8}}, {0, MonochromaticScheme{4}}};
  CHECK_THROWS_AS(cascade(net, backwards, data, ft, 54), std::invalid_argument);
}

TEST_CASE("projection_retrain: one lossless cycle equals plain training") {
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 55);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 56;

  ToyNetwork a = ToyNetwork::random_init(4, 57);
  ToyNetwork b = ToyNetwork::random_init(4, 57);
  projection_retrain(a, 1, FcRankScheme{ToyNetwork::kHidden}, 1, data, cfg, 58);
  train(b, data, cfg);
  CHECK((a.fc1_w - b.fc1_w).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(a.fc2_w == b.fc2_w);
}

TEST_CASE("projection_retrain leaves the layer exactly representable") {
  ToyDataset data = make_toy_dataset(6, 4, 0.4, 59);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 60;

  ToyNetwork net = ToyNetwork::random_init(4, 61);
  ProjectionTrace trace = projection_retrain(net, 0, MonochromaticScheme{4}, 3, data, cfg, 62);
  CHECK(trace.task_error.size() == 3);
  for (double e : trace.task_error) {
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
  }
  // Re-projecting with the same seed stream's first value must be a no-op;
  // idempotence is checked against a fresh compression of the final weights.
  ConvTensorXd w = net.conv_w;
  ConvTensorXd reprojected = reconstruct(monochromatic_compress(w, 4, 999));
  CHECK((reprojected.data() - w.data()).norm() <= 1e-9);

  ToyNetwork fc_net = ToyNetwork::random_init(4, 63);
  projection_retrain(fc_net, 2, FcRankScheme{2}, 2, data, cfg, 64);
  Eigen::MatrixXd rep = reconstruct(fc_svd_compress(fc_net.fc2_w, 2));
  CHECK((rep - fc_net.fc2_w).norm() <= 1e-9);
}

TEST_CASE("collect_conv_gradient_stats accumulates h gradients per sample") {
  ToyNetwork net = ToyNetwork::random_init(4, 65);
  ToyDataset data = make_toy_dataset(3, 4, 0.4, 66);
  GradientStats<double> stats = collect_conv_gradient_stats(net, data, 2);
  CHECK(stats.sample_count() == static_cast<Index>(data.images.size()) * 2);
  bool degenerate = true;
  ConvTensorXd alpha = stats.finalize(&degenerate);
  CHECK(!degenerate);
  CHECK(alpha.data().minCoeff() >= 0.0);
}
