#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "convcrunch/conveval.hpp"
#include "convcrunch/metrics.hpp"
#include "convcrunch/tensor.hpp"

namespace convcrunch {

/// Desk-scale classifier: conv(3, 5x5, 8, stride 2) -> ReLU -> FC(32) -> ReLU
/// -> FC(L) -> softmax on 16x16x3 inputs. Parameterized layers are indexed
/// 0 = conv, 1 = fc1, 2 = fc2.
struct ToyNetwork {
  static constexpr Index kChannels = 3;
  static constexpr Index kKernel = 5;
  static constexpr Index kConvFeatures = 8;
  static constexpr Index kStride = 2;
  static constexpr Index kInputRows = 16;
  static constexpr Index kInputCols = 16;
  static constexpr Index kHidden = 32;
  static constexpr Index kLayerCount = 3;

  ConvTensor<double> conv_w{kChannels, kKernel, kKernel, kConvFeatures};
  VectorX<double> conv_b = VectorX<double>::Zero(kConvFeatures);
  MatrixX<double> fc1_w;
  VectorX<double> fc1_b;
  MatrixX<double> fc2_w;
  VectorX<double> fc2_b;
  Index label_count = 0;

  static constexpr Index conv_out_rows() { return (kInputRows - kKernel) / kStride + 1; }
  static constexpr Index conv_out_cols() { return (kInputCols - kKernel) / kStride + 1; }
  static constexpr Index flat_size() {
    return kConvFeatures * conv_out_rows() * conv_out_cols();
  }

  static ToyNetwork random_init(Index label_count, std::uint64_t seed);
};

struct TrainConfig {
  double learning_rate = 0.05;
  Index batch_size = 8;
  Index epochs = 10;
  std::uint64_t seed = 0;
  Index frozen_below = -1;  // layers with index <= frozen_below stay fixed
};

struct ToyDataset {
  std::vector<FeatureMap<double>> images;
  std::vector<Index> labels;
  Index label_count = 0;
};

/// Seeded synthetic colored-pattern dataset: each class is a fixed random
/// pattern image plus Gaussian pixel noise. Self-contained, no downloads.
ToyDataset make_toy_dataset(Index per_class, Index classes, double noise, std::uint64_t seed);

/// Softmax output U(I; Theta). Nonnegative, sums to 1.
VectorX<double> forward(const ToyNetwork& net, const FeatureMap<double>& input);

struct ToyGradients {
  ConvTensor<double> conv_w{ToyNetwork::kChannels, ToyNetwork::kKernel, ToyNetwork::kKernel,
                            ToyNetwork::kConvFeatures};
  VectorX<double> conv_b;
  MatrixX<double> fc1_w;
  VectorX<double> fc1_b;
  MatrixX<double> fc2_w;
  VectorX<double> fc2_b;
};

/// Gradients of <residual, U(I; Theta)> w.r.t. every parameter: the given
/// output-space residual vector is back-propagated with the forward pass's
/// ReLU pattern held fixed.
ToyGradients backward(const ToyNetwork& net, const FeatureMap<double>& input,
                      const VectorX<double>& residual);

/// Indices of the h largest entries of u excluding the true label, sorted by
/// descending value; ties broken toward the lower index.
std::vector<Index> dangerous_mistakes(const VectorX<double>& u, Index true_label, Index h);

struct TrainTrace {
  std::vector<double> accuracy;  // per epoch, on the training set
  std::vector<double> loss;      // mean cross-entropy per epoch
};

/// Plain SGD on cross-entropy. Deterministic for a fixed cfg.seed; layers at
/// or below cfg.frozen_below are left byte-identical.
TrainTrace train(ToyNetwork& net, const ToyDataset& data, const TrainConfig& cfg);

double accuracy(const ToyNetwork& net, const ToyDataset& data);

// ---------------------------------------------------------------------------
// Compression hooks
// ---------------------------------------------------------------------------

struct FcRankScheme {
  Index rank = 1;
};

using ToyScheme =
    std::variant<MonochromaticScheme, BiclusterOuterScheme, BiclusterSvdScheme, FcRankScheme>;

/// Replace the layer with reconstruct(compress(W)) under the given scheme.
void project_layer(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                   std::uint64_t seed);

struct FinetuneResult {
  double acc_before = 0;
  double acc_after_compress = 0;
  double acc_after_finetune = 0;
};

/// Compress one layer, then fine-tune the layers above it (the compressed
/// layer and everything below stay frozen).
FinetuneResult compress_finetune(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                                 const ToyDataset& data, const TrainConfig& cfg,
                                 std::uint64_t compress_seed);

struct CascadeStep {
  Index layer_index = 0;
  ToyScheme scheme;
};

/// Bottom-up cascade: compress a layer, fine-tune above it, move on.
std::vector<FinetuneResult> cascade(ToyNetwork& net, const std::vector<CascadeStep>& steps,
                                    const ToyDataset& data, const TrainConfig& cfg,
                                    std::uint64_t compress_seed);

struct ProjectionTrace {
  std::vector<double> task_error;  // post-projection error per cycle
};

/// Alternates training with exact projection onto the compressed class,
/// `cycles` times; projection is always the final step, so the layer ends
/// exactly representable.
ProjectionTrace projection_retrain(ToyNetwork& net, Index layer_index, const ToyScheme& scheme,
                                   Index cycles, const ToyDataset& data, const TrainConfig& cfg,
                                   std::uint64_t compress_seed);

/// Accumulates the back-propagated residual gradients of the h most confident
/// wrong answers per sample into per-coordinate weights for the conv layer.
GradientStats<double> collect_conv_gradient_stats(const ToyNetwork& net, const ToyDataset& data,
                                                  Index h);

}  // namespace convcrunch
