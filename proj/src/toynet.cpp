#include "convcrunch/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convcrunch/approx.hpp"
#include "convcrunch/random.hpp"

namespace convcrunch {

namespace {

VectorX<double> softmax(const VectorX<double>& logits) {
  VectorX<double> shifted = logits.array() - logits.maxCoeff();
  VectorX<double> e = shifted.array().exp();
  return e / e.sum();
}

struct ForwardState {
  FeatureMap<double> conv_pre{1, 1, 1};  // conv + bias, before ReLU
  VectorX<double> flat;                  // ReLU(conv_pre) flattened
  VectorX<double> a1, r1;                // fc1 pre/post ReLU
  VectorX<double> a2, u;                 // logits, softmax
};

ForwardState run_forward(const ToyNetwork& net, const FeatureMap<double>& input) {
  detail::require(input.channels() == ToyNetwork::kChannels &&
                      input.rows() == ToyNetwork::kInputRows &&
                      input.cols() == ToyNetwork::kInputCols,
                  "toynet: input must be 3x16x16");
  ForwardState st;
  st.conv_pre = direct_conv(input, net.conv_w, ToyNetwork::kStride);
  const Index area = ToyNetwork::conv_out_rows() * ToyNetwork::conv_out_cols();
  for (Index f = 0; f < ToyNetwork::kConvFeatures; ++f)
    st.conv_pre.data().segment(f * area, area).array() += net.conv_b[f];
  st.flat = st.conv_pre.data().cwiseMax(0.0);
  st.a1 = net.fc1_w * st.flat + net.fc1_b;
  st.r1 = st.a1.cwiseMax(0.0);
  st.a2 = net.fc2_w * st.r1 + net.fc2_b;
  st.u = softmax(st.a2);
  return st;
}

/// Shared backprop from a gradient at the logits.
ToyGradients backprop_from_logits(const ToyNetwork& net, const FeatureMap<double>& input,
                                  const ForwardState& st, const VectorX<double>& logit_grad) {
  ToyGradients g;
  g.fc2_w = logit_grad * st.r1.transpose();
  g.fc2_b = logit_grad;

  // ReLU subgradient at 0 is 0, so the mask is a strict comparison.
  VectorX<double> g_a1 = net.fc2_w.transpose() * logit_grad;
  for (Index i = 0; i < g_a1.size(); ++i)
    if (st.a1[i] <= 0.0) g_a1[i] = 0.0;
  g.fc1_w = g_a1 * st.flat.transpose();
  g.fc1_b = g_a1;

  VectorX<double> g_conv = net.fc1_w.transpose() * g_a1;
  for (Index i = 0; i < g_conv.size(); ++i)
    if (st.conv_pre.data()[i] <= 0.0) g_conv[i] = 0.0;

  const Index rows = ToyNetwork::conv_out_rows(), cols = ToyNetwork::conv_out_cols();
  const Index area = rows * cols;
  g.conv_b.setZero(ToyNetwork::kConvFeatures);
  for (Index f = 0; f < ToyNetwork::kConvFeatures; ++f)
    g.conv_b[f] = g_conv.segment(f * area, area).sum();
  for (Index c = 0; c < ToyNetwork::kChannels; ++c)
    for (Index x = 0; x < ToyNetwork::kKernel; ++x)
      for (Index y = 0; y < ToyNetwork::kKernel; ++y)
        for (Index f = 0; f < ToyNetwork::kConvFeatures; ++f) {
          double acc = 0;
          for (Index ox = 0; ox < rows; ++ox)
            for (Index oy = 0; oy < cols; ++oy)
              acc += g_conv[f * area + ox * cols + oy] *
                     input(c, ox * ToyNetwork::kStride + x, oy * ToyNetwork::kStride + y);
          g.conv_w(c, x, y, f) = acc;
        }
  return g;
}

Index argmax(const VectorX<double>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

ToyNetwork ToyNetwork::random_init(Index label_count, std::uint64_t seed) {
  detail::require(label_count >= 2, "ToyNetwork: need at least 2 classes");
  Rng rng(seed);
  ToyNetwork net;
  net.label_count = label_count;
  const double conv_std = std::sqrt(2.0 / (kChannels * kKernel * kKernel));
  net.conv_w.data() = rng.gaussian_vector(net.conv_w.size()) * conv_std;
  net.conv_b.setZero(kConvFeatures);
  const double fc1_std = std::sqrt(2.0 / flat_size());
  net.fc1_w = rng.gaussian_matrix(kHidden, flat_size()) * fc1_std;
  net.fc1_b = VectorX<double>::Zero(kHidden);
  const double fc2_std = std::sqrt(2.0 / kHidden);
  net.fc2_w = rng.gaussian_matrix(label_count, kHidden) * fc2_std;
  net.fc2_b = VectorX<double>::Zero(label_count);
  return net;
}

ToyDataset make_toy_dataset(Index per_class, Index classes, double noise, std::uint64_t seed) {
  detail::require(per_class >= 1 && classes >= 2, "make_toy_dataset: need >= 1 per class, >= 2 classes");
  Rng rng(seed);
  const Index dim = ToyNetwork::kChannels * ToyNetwork::kInputRows * ToyNetwork::kInputCols;
  std::vector<VectorX<double>> patterns;
  patterns.reserve(classes);
  for (Index c = 0; c < classes; ++c) patterns.push_back(rng.gaussian_vector(dim));

  ToyDataset data;
  data.label_count = classes;
  for (Index c = 0; c < classes; ++c) {
    for (Index i = 0; i < per_class; ++i) {
      VectorX<double> pixels = patterns[c] + noise * rng.gaussian_vector(dim);
      data.images.emplace_back(ToyNetwork::kChannels, ToyNetwork::kInputRows,
                               ToyNetwork::kInputCols, std::move(pixels));
      data.labels.push_back(c);
    }
  }
  return data;
}

VectorX<double> forward(const ToyNetwork& net, const FeatureMap<double>& input) {
  return run_forward(net, input).u;
}

ToyGradients backward(const ToyNetwork& net, const FeatureMap<double>& input,
                      const VectorX<double>& residual) {
  detail::require(residual.size() == net.label_count, "backward: residual length must equal L");
  ForwardState st = run_forward(net, input);
  // Softmax vector-Jacobian product: g = u .* (r - <r, u>).
  const double mix = residual.dot(st.u);
  VectorX<double> logit_grad = st.u.cwiseProduct((residual.array() - mix).matrix());
  return backprop_from_logits(net, input, st, logit_grad);
}

std::vector<Index> dangerous_mistakes(const VectorX<double>& u, Index true_label, Index h) {
  const Index l = u.size();
  detail::require(true_label >= 0 && true_label < l, "dangerous_mistakes: bad label");
  detail::require(h >= 1 && h <= l - 1, "dangerous_mistakes: need 1 <= h <= L-1");
  std::vector<Index> idx;
  idx.reserve(l - 1);
  for (Index i = 0; i < l; ++i)
    if (i != true_label) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return u[a] > u[b]; });
  idx.resize(h);
  return idx;
}

TrainTrace train(ToyNetwork& net, const ToyDataset& data, const TrainConfig& cfg) {
  detail::require(!data.images.empty(), "train: dataset is empty");
  detail::require(cfg.learning_rate > 0, "train: learning rate must be > 0");
  detail::require(cfg.batch_size >= 1, "train: batch size must be >= 1");
  for (Index label : data.labels)
    detail::require(label >= 0 && label < net.label_count, "train: label out of range");

  const bool conv_frozen = cfg.frozen_below >= 0;
  const bool fc1_frozen = cfg.frozen_below >= 1;
  const bool fc2_frozen = cfg.frozen_below >= 2;

  Rng rng(cfg.seed);
  const Index n = static_cast<Index>(data.images.size());
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index(0));

  TrainTrace trace;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the deterministic generator.
    for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);

    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index stop = std::min(n, start + cfg.batch_size);
      ToyGradients sum;
      sum.conv_b.setZero(ToyNetwork::kConvFeatures);
      sum.fc1_w.setZero(net.fc1_w.rows(), net.fc1_w.cols());
      sum.fc1_b.setZero(net.fc1_b.size());
      sum.fc2_w.setZero(net.fc2_w.rows(), net.fc2_w.cols());
      sum.fc2_b.setZero(net.fc2_b.size());
      for (Index i = start; i < stop; ++i) {
        const Index sample = order[i];
        ForwardState st = run_forward(net, data.images[sample]);
        VectorX<double> logit_grad = st.u;  // cross-entropy: u - e_y
        logit_grad[data.labels[sample]] -= 1.0;
        ToyGradients g = backprop_from_logits(net, data.images[sample], st, logit_grad);
        sum.conv_w.data() += g.conv_w.data();
        sum.conv_b += g.conv_b;
        sum.fc1_w += g.fc1_w;
        sum.fc1_b += g.fc1_b;
        sum.fc2_w += g.fc2_w;
        sum.fc2_b += g.fc2_b;
      }
      const double step = cfg.learning_rate / static_cast<double>(stop - start);
      if (!conv_frozen) {
        net.conv_w.data() -= step * sum.conv_w.data();
        net.conv_b -= step * sum.conv_b;
      }
      if (!fc1_frozen) {
        net.fc1_w -= step * sum.fc1_w;
        net.fc1_b -= step * sum.fc1_b;
      }
      if (!fc2_frozen) {
        net.fc2_w -= step * sum.fc2_w;
        net.fc2_b -= step * sum.fc2_b;
      }
    }

    double correct = 0, loss = 0;
    for (Index i = 0; i < n; ++i) {
      const VectorX<double> u = forward(net, data.images[i]);
      if (argmax(u) == data.labels[i]) correct += 1.0;
      loss += -std::log(std::max(u[data.labels[i]], 1e-300));
    }
    trace.accuracy.push_back(correct / n);
    trace.loss.push_back(loss / n);
  }
  return trace;
}

double accuracy(const ToyNetwork& net, const ToyDataset& data) {
  detail::require(!data.images.empty(), "accuracy: dataset is empty");
  double correct = 0;
  for (size_t i = 0; i < data.images.size(); ++i)
    if (argmax(forward(net, data.images[i])) == data.labels[i]) correct += 1.0;
  return correct / static_cast<double>(data.images.size());
}

void project_layer(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                   std::uint64_t seed) {
  detail::require(layer_index >= 0 && layer_index < ToyNetwork::kLayerCount,
                  "project_layer: layer index out of range");
  if (layer_index == 0) {
    if (std::holds_alternative<MonochromaticScheme>(scheme)) {
      const auto& s = std::get<MonochromaticScheme>(scheme);
      net.conv_w = reconstruct(monochromatic_compress(net.conv_w, s.num_colors, seed));
    } else if (std::holds_alternative<BiclusterOuterScheme>(scheme)) {
      const auto& s = std::get<BiclusterOuterScheme>(scheme);
      BiclusterOptions opt;
      opt.kind = CellDecomp::kOuterProduct;
      opt.k = s.k;
      net.conv_w = reconstruct(biclustered_compress(net.conv_w, s.g, s.h, opt, seed));
    } else if (std::holds_alternative<BiclusterSvdScheme>(scheme)) {
      const auto& s = std::get<BiclusterSvdScheme>(scheme);
      BiclusterOptions opt;
      opt.kind = CellDecomp::kSvd;
      opt.k1 = s.k1;
      opt.k2 = s.k2;
      net.conv_w = reconstruct(biclustered_compress(net.conv_w, s.g, s.h, opt, seed));
    } else {
      throw std::invalid_argument("project_layer: the conv layer needs a conv scheme");
    }
    return;
  }
  if (!std::holds_alternative<FcRankScheme>(scheme))
    throw std::invalid_argument("project_layer: fully-connected layers need the SVD scheme");
  const Index rank = std::get<FcRankScheme>(scheme).rank;
  MatrixX<double>& w = (layer_index == 1) ? net.fc1_w : net.fc2_w;
  w = reconstruct(fc_svd_compress(w, rank));
}

FinetuneResult compress_finetune(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                                 const ToyDataset& data, const TrainConfig& cfg,
                                 std::uint64_t compress_seed) {
  FinetuneResult result;
  result.acc_before = accuracy(net, data);
  project_layer(net, layer_index, scheme, compress_seed);
  result.acc_after_compress = accuracy(net, data);
  TrainConfig ft = cfg;
  ft.frozen_below = layer_index;
  train(net, data, ft);
  result.acc_after_finetune = accuracy(net, data);
  return result;
}

std::vector<FinetuneResult> cascade(ToyNetwork& net, const std::vector<CascadeStep>& steps,
                                    const ToyDataset& data, const TrainConfig& cfg,
                                    std::uint64_t compress_seed) {
  for (size_t i = 1; i < steps.size(); ++i)
    detail::require(steps[i].layer_index > steps[i - 1].layer_index,
                    "cascade: steps must move bottom-up");
  std::vector<FinetuneResult> results;
  Rng seeds(compress_seed);
  for (const CascadeStep& step : steps)
    results.push_back(compress_finetune(net, step.layer_index, step.scheme, data, cfg,
                                        seeds.next()));
  return results;
}

ProjectionTrace projection_retrain(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                                   Index cycles, const ToyDataset& data, const TrainConfig& cfg,
                                   std::uint64_t compress_seed) {
  detail::require(cycles >= 1, "projection_retrain: cycles must be >= 1");
  ProjectionTrace trace;
  Rng seeds(compress_seed);
  for (Index cycle = 0; cycle < cycles; ++cycle) {
    train(net, data, cfg);
    project_layer(net, layer_index, scheme, seeds.next());
    trace.task_error.push_back(1.0 - accuracy(net, data));
  }
  return trace;
}

GradientStats<double> collect_conv_gradient_stats(const ToyNetwork& net, const ToyDataset& data,
                                                  Index h) {
  detail::require(!data.images.empty(), "collect_conv_gradient_stats: dataset is empty");
  GradientStats<double> stats(ToyNetwork::kChannels, ToyNetwork::kKernel, ToyNetwork::kKernel,
                              ToyNetwork::kConvFeatures, h);
  for (size_t i = 0; i < data.images.size(); ++i) {
    const VectorX<double> u = forward(net, data.images[i]);
    for (Index wrong : dangerous_mistakes(u, data.labels[i], h)) {
      VectorX<double> residual = u;
      residual[wrong] -= 1.0;  // U(I; Theta) - e_l
      stats.accumulate(backward(net, data.images[i], residual).conv_w);
    }
  }
  return stats;
}

}  // namespace convcrunch
