// convcrunch: compress conv/FC weight tensors, evaluate the fast paths, and
// report operation/parameter counts and benchmark timings.
//
// Exit codes: 0 success, 1 usage/validation, 2 I/O, 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "convcrunch/approx.hpp"
#include "convcrunch/conveval.hpp"
#include "convcrunch/io.hpp"
#include "convcrunch/linalg.hpp"
#include "convcrunch/metrics.hpp"
#include "convcrunch/random.hpp"
#include "convcrunch/toynet.hpp"

namespace cc = convcrunch;
using cc::Index;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw cc::IoError(path + ": cannot open for writing");
  out << text;
  if (!out) throw cc::IoError(path + ": write failed");
}

std::vector<Index> parse_index_list(const std::string& csv) {
  std::vector<Index> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t pos = 0;
    const long v = std::stol(item, &pos);
    if (pos != item.size() || v < 1)
      throw CLI::ValidationError("expected a comma-separated list of positive integers, got '" +
                                 csv + "'");
    out.push_back(static_cast<Index>(v));
  }
  if (out.empty()) throw CLI::ValidationError("empty integer list");
  return out;
}

// --config file.json supplies option values by long name; values given on the
// command line win. Unknown keys are rejected.
std::vector<std::string> merge_json_config(CLI::App& app, std::vector<std::string> args) {
  std::string config_path;
  for (size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      config_path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
      break;
    }
  }
  if (config_path.empty()) return args;
  if (args.empty()) throw CLI::ValidationError("--config requires a subcommand");

  std::ifstream in(config_path);
  if (!in) throw cc::IoError(config_path + ": cannot open config");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw cc::IoError(config_path + ": " + e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError(config_path + ": config must be a JSON object");

  CLI::App* sub = app.get_subcommand_no_throw(args[0]);
  if (sub == nullptr) throw CLI::ValidationError("unknown subcommand '" + args[0] + "'");

  std::vector<std::string> merged;
  merged.push_back(args[0]);
  for (const auto& [key, value] : j.items()) {
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw CLI::ValidationError(config_path + ": unknown config key '" + key + "'");
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back("--" + key);
      continue;
    }
    merged.push_back("--" + key);
    if (value.is_string())
      merged.push_back(value.get<std::string>());
    else
      merged.push_back(value.dump());
  }
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

struct SchemeFlags {
  std::string scheme;
  Index colors = 6;
  Index g = 1, h = 1, k = 1, k1 = 1, k2 = 1;
  Index rank = 1;
  std::string distance = "euclidean";

  void attach(CLI::App* cmd, bool with_fc, bool with_none) {
    std::string desc = "approximation scheme: mono | bicluster-outer | bicluster-svd";
    std::vector<std::string> allowed = {"mono", "bicluster-outer", "bicluster-svd"};
    if (with_fc) {
      allowed.push_back("fc-svd");
      desc += " | fc-svd";
    }
    if (with_none) {
      allowed.push_back("none");
      desc += " | none";
    }
    cmd->add_option("--scheme", scheme, desc)
        ->required()
        ->check(CLI::IsMember(allowed));
    cmd->add_option("--colors", colors, "monochromatic color count C'");
    cmd->add_option("--g", g, "input channel clusters G");
    cmd->add_option("--h", h, "output feature clusters H");
    cmd->add_option("--k", k, "outer-product rank K");
    cmd->add_option("--k1", k1, "first SVD rank K1");
    cmd->add_option("--k2", k2, "second SVD rank K2");
    if (with_fc) cmd->add_option("--rank", rank, "FC SVD rank K");
    cmd->add_option("--distance", distance, "clustering distance: euclidean | subspace")
        ->check(CLI::IsMember({"euclidean", "subspace"}));
  }

  cc::DistanceMode distance_mode() const {
    return distance == "subspace" ? cc::DistanceMode::kSubspaceProjection
                                  : cc::DistanceMode::kEuclidean;
  }

  cc::ConvScheme conv_scheme() const {
    if (scheme == "mono") return cc::MonochromaticScheme{colors};
    if (scheme == "bicluster-outer") return cc::BiclusterOuterScheme{g, h, k};
    if (scheme == "bicluster-svd") return cc::BiclusterSvdScheme{g, h, k1, k2};
    if (scheme == "none") return cc::NoApproxScheme{};
    throw CLI::ValidationError("scheme '" + scheme + "' is not a conv scheme");
  }

  cc::ToyScheme toy_scheme() const {
    if (scheme == "fc-svd") return cc::FcRankScheme{rank};
    const cc::ConvScheme s = conv_scheme();
    if (std::holds_alternative<cc::MonochromaticScheme>(s))
      return std::get<cc::MonochromaticScheme>(s);
    if (std::holds_alternative<cc::BiclusterOuterScheme>(s))
      return std::get<cc::BiclusterOuterScheme>(s);
    return std::get<cc::BiclusterSvdScheme>(s);
  }
};

struct LayerFlags {
  Index c = 3, x = 7, y = 7, f = 96;
  Index stride = 2;
  Index n = 224, m = 224;

  void attach(CLI::App* cmd) {
    cmd->add_option("--c", c, "input channels C");
    cmd->add_option("--x", x, "kernel rows X");
    cmd->add_option("--y", y, "kernel cols Y");
    cmd->add_option("--f", f, "output features F");
    cmd->add_option("--stride", stride, "stride");
    cmd->add_option("--n", n, "input rows N");
    cmd->add_option("--m", m, "input cols M");
  }

  cc::LayerSpec spec() const { return cc::LayerSpec(c, x, y, f, stride, n, m); }
};

std::string format_cost_csv_row(const std::string& scheme, const std::string& hyper,
                                const cc::CostReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << scheme << ',' << hyper << ',' << r.ops_baseline << ',' << r.ops_approx << ','
     << r.params_baseline << ',' << r.params_approx << ',' << r.speedup_theoretical << ','
     << r.param_reduction << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// compress
// ---------------------------------------------------------------------------

struct CompressArgs {
  std::string input, output;
  SchemeFlags scheme;
  std::uint64_t seed = 0;
  std::string metric = "frobenius";
  std::string cov_path, alpha_path;
  double alpha_floor = 0.0;
};

int run_compress(const CompressArgs& a) {
  if (a.scheme.scheme == "fc-svd") {
    Eigen::MatrixXd w = cc::read_matrix(a.input);
    cc::FcSvdApprox<double> fc = cc::fc_svd_compress(w, a.scheme.rank);
    cc::write_compressed(a.output, cc::CompressedConv(fc));
    std::cout << "scheme=fc-svd\n"
              << "hyperparams=k=" << a.scheme.rank << "\n"
              << "frobenius_error=" << fc.frobenius_error << "\n"
              << "output=" << a.output << "\n";
    return 0;
  }

  cc::ConvTensorXd w = cc::read_conv_tensor(a.input);

  auto compress_dense = [&](const cc::ConvTensorXd& t) -> std::pair<cc::CompressedConv, double> {
    if (a.scheme.scheme == "mono") {
      auto m = cc::monochromatic_compress(t, a.scheme.colors, a.seed);
      return {cc::CompressedConv(m), m.frobenius_error};
    }
    cc::BiclusterOptions opt;
    opt.distance = a.scheme.distance_mode();
    if (a.scheme.scheme == "bicluster-outer") {
      opt.kind = cc::CellDecomp::kOuterProduct;
      opt.k = a.scheme.k;
    } else {
      opt.kind = cc::CellDecomp::kSvd;
      opt.k1 = a.scheme.k1;
      opt.k2 = a.scheme.k2;
    }
    auto b = cc::biclustered_compress(t, a.scheme.g, a.scheme.h, opt, a.seed);
    return {cc::CompressedConv(b), b.frobenius_error};
  };

  std::cout << "scheme=" << a.scheme.scheme << "\n"
            << "hyperparams=" << cc::scheme_hyperparams(a.scheme.conv_scheme()) << "\n";

  if (a.metric == "maha") {
    if (a.alpha_path.empty())
      throw CLI::ValidationError("--metric maha requires --alpha with a weight tensor");
    cc::ConvTensorXd alpha = cc::read_conv_tensor(a.alpha_path);
    if (a.alpha_floor > 0.0)
      alpha.data() = alpha.data().cwiseMax(a.alpha_floor);
    auto inner = [&](const cc::ConvTensorXd& t) {
      auto [model, err] = compress_dense(t);
      (void)err;
      return std::visit(
          [&](const auto& m) -> cc::ConvTensorXd {
            if constexpr (std::is_same_v<std::decay_t<decltype(m)>, cc::FcSvdApprox<double>>)
              throw std::invalid_argument("fc scheme on a conv tensor");
            else
              return cc::reconstruct(m);
          },
          model);
    };
    cc::ConvTensorXd reweighted = cc::reweighted_approximate<double>(w, alpha, inner);
    cc::ConvTensorXd plain = inner(w);
    // The unscaled result of the reweighting pipeline is dense by
    // construction, so it is written as a tensor, not a container.
    cc::write_conv_tensor(a.output, reweighted);
    std::cout << "frobenius_error=" << (w.data() - reweighted.data()).norm() << "\n"
              << "weighted_error_reweighted=" << cc::weighted_error(w, reweighted, alpha) << "\n"
              << "weighted_error_unweighted=" << cc::weighted_error(w, plain, alpha) << "\n"
              << "output=" << a.output << "\n";
    return 0;
  }

  auto [model, error] = compress_dense(w);
  cc::write_compressed(a.output, model);
  std::cout << "frobenius_error=" << error << "\n";
  if (a.metric == "data-cov") {
    if (a.cov_path.empty())
      throw CLI::ValidationError("--metric data-cov requires --cov with a covariance matrix");
    cc::DataCovariance<double> cov(cc::read_matrix(a.cov_path));
    cc::ConvTensorXd rec = std::visit(
        [&](const auto& m) -> cc::ConvTensorXd {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, cc::FcSvdApprox<double>>)
            throw std::invalid_argument("fc scheme on a conv tensor");
          else
            return cc::reconstruct(m);
        },
        model);
    cc::ConvTensorXd diff(w.c_in(), w.kx(), w.ky(), w.f_out(), w.data() - rec.data());
    std::cout << "data_metric_error=" << cc::data_metric(diff, cov) << "\n";
  }
  std::cout << "output=" << a.output << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// reconstruct / eval
// ---------------------------------------------------------------------------

cc::ConvTensorXd reconstruct_container(const cc::CompressedConv& model) {
  if (std::holds_alternative<cc::MonochromaticApprox<double>>(model))
    return cc::reconstruct(std::get<cc::MonochromaticApprox<double>>(model));
  if (std::holds_alternative<cc::BiclusteredApprox<double>>(model))
    return cc::reconstruct(std::get<cc::BiclusteredApprox<double>>(model));
  throw std::invalid_argument("container holds an FC factorization, not a conv tensor");
}

int run_reconstruct(const std::string& input, const std::string& output,
                    const std::string& reference) {
  cc::CompressedConv model = cc::read_compressed(input);
  std::cout << "scheme=" << cc::compressed_scheme_name(model) << "\n";
  if (std::holds_alternative<cc::FcSvdApprox<double>>(model)) {
    Eigen::MatrixXd w = cc::reconstruct(std::get<cc::FcSvdApprox<double>>(model));
    cc::write_matrix(output, w);
    if (!reference.empty())
      std::cout << "frobenius_error=" << (w - cc::read_matrix(reference)).norm() << "\n";
  } else {
    cc::ConvTensorXd w = reconstruct_container(model);
    cc::write_conv_tensor(output, w);
    if (!reference.empty())
      std::cout << "frobenius_error="
                << (w.data() - cc::read_conv_tensor(reference).data()).norm() << "\n";
  }
  std::cout << "output=" << output << "\n";
  return 0;
}

struct EvalArgs {
  std::string container, input, output;
  Index stride = 1;
  bool check = false;
  Index gen_rows = 0, gen_cols = 0;
  std::uint64_t seed = 0;
  bool seeded = false;
};

int run_eval(const EvalArgs& a) {
  cc::CompressedConv model = cc::read_compressed(a.container);
  if (std::holds_alternative<cc::FcSvdApprox<double>>(model))
    throw std::invalid_argument("eval expects a convolutional container");

  std::optional<cc::FeatureMapXd> input;
  if (!a.input.empty()) {
    input = cc::read_feature_map(a.input);
  } else {
    if (a.gen_rows < 1 || a.gen_cols < 1)
      throw CLI::ValidationError("either --input or --gen-rows/--gen-cols is required");
    if (!a.seeded) throw CLI::ValidationError("--gen-rows requires --seed");
    const Index channels = std::holds_alternative<cc::MonochromaticApprox<double>>(model)
                               ? std::get<cc::MonochromaticApprox<double>>(model).c_in
                               : std::get<cc::BiclusteredApprox<double>>(model).c_in;
    cc::Rng rng(a.seed);
    input.emplace(channels, a.gen_rows, a.gen_cols,
                  rng.gaussian_vector(channels * a.gen_rows * a.gen_cols));
  }

  const Index threads = cc::configured_threads(0);
  cc::FeatureMapXd out =
      std::holds_alternative<cc::MonochromaticApprox<double>>(model)
          ? cc::eval_monochromatic(*input, std::get<cc::MonochromaticApprox<double>>(model),
                                   a.stride, threads)
          : cc::eval_biclustered(*input, std::get<cc::BiclusteredApprox<double>>(model), a.stride,
                                 threads);
  if (!a.output.empty()) cc::write_feature_map(a.output, out);
  std::cout << "scheme=" << cc::compressed_scheme_name(model) << "\n"
            << "out_channels=" << out.channels() << "\n"
            << "out_rows=" << out.rows() << "\n"
            << "out_cols=" << out.cols() << "\n";
  if (a.check) {
    cc::FeatureMapXd ref = cc::direct_conv(*input, reconstruct_container(model), a.stride);
    std::cout << "max_abs_diff=" << (out.data() - ref.data()).cwiseAbs().maxCoeff() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// opcount / bench
// ---------------------------------------------------------------------------

struct OpcountArgs {
  LayerFlags layer;
  SchemeFlags scheme;
  std::string colors_list;  // optional sweep for mono
  Index fc_n = 0, fc_m = 0;
  std::string out;
};

int run_opcount(const OpcountArgs& a) {
  std::ostringstream os;
  os << "scheme,hyperparams,ops_baseline,ops_approx,params_baseline,params_approx,"
        "theoretical_speedup,param_reduction\n";
  if (a.scheme.scheme == "fc-svd") {
    if (a.fc_n < 1 || a.fc_m < 1)
      throw CLI::ValidationError("fc-svd opcount requires --fc-n and --fc-m");
    cc::CostReport r = cc::count_fc_ops(a.fc_n, a.fc_m, a.scheme.rank);
    os << format_cost_csv_row("fc-svd", "k=" + std::to_string(a.scheme.rank), r);
  } else if (a.scheme.scheme == "mono" && !a.colors_list.empty()) {
    for (Index colors : parse_index_list(a.colors_list)) {
      cc::MonochromaticScheme s{colors};
      os << format_cost_csv_row("monochromatic", "cprime=" + std::to_string(colors),
                                cc::count_ops(a.layer.spec(), s));
    }
  } else {
    const cc::ConvScheme s = a.scheme.conv_scheme();
    os << format_cost_csv_row(cc::scheme_name(s), cc::scheme_hyperparams(s),
                              cc::count_ops(a.layer.spec(), s));
  }
  write_text(a.out, os.str());
  return 0;
}

struct BenchArgs {
  LayerFlags layer;
  SchemeFlags scheme;
  Index repetitions = 5;
  Index batch = 1;
  std::uint64_t seed = 0;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  auto rows = cc::bench(a.layer.spec(), a.scheme.conv_scheme(), a.repetitions, a.batch, a.seed);
  write_text(a.out, cc::bench_csv(rows));
  return 0;
}

// ---------------------------------------------------------------------------
// toynet commands
// ---------------------------------------------------------------------------

struct ToyCommonArgs {
  Index classes = 8;
  Index per_class = 8;
  double noise = 0.4;
  std::uint64_t seed = 0;
  double lr = 0.05;
  Index batch = 8;

  void attach(CLI::App* cmd, std::uint64_t& seed_ref) {
    cmd->add_option("--classes", classes, "number of classes");
    cmd->add_option("--per-class", per_class, "samples per class");
    cmd->add_option("--noise", noise, "pixel noise level");
    cmd->add_option("--seed", seed_ref, "master seed (required)")->required();
    cmd->add_option("--lr", lr, "SGD learning rate");
    cmd->add_option("--batch", batch, "minibatch size");
  }

  struct Seeds {
    std::uint64_t data, net, train, compress;
  };
  Seeds split_seed() const {
    cc::Rng master(seed);
    return {master.next(), master.next(), master.next(), master.next()};
  }
};

std::string trace_csv(const cc::TrainTrace& trace) {
  std::ostringstream os;
  os << "epoch,accuracy,loss\n";
  for (size_t e = 0; e < trace.accuracy.size(); ++e)
    os << (e + 1) << ',' << trace.accuracy[e] << ',' << trace.loss[e] << '\n';
  return os.str();
}

int run_toynet_train(const ToyCommonArgs& c, Index epochs, const std::string& trace_path,
                     const std::string& alpha_path, Index alpha_h) {
  const auto seeds = c.split_seed();
  cc::ToyDataset data = cc::make_toy_dataset(c.per_class, c.classes, c.noise, seeds.data);
  cc::ToyNetwork net = cc::ToyNetwork::random_init(c.classes, seeds.net);
  cc::TrainConfig cfg;
  cfg.learning_rate = c.lr;
  cfg.batch_size = c.batch;
  cfg.epochs = epochs;
  cfg.seed = seeds.train;
  cc::TrainTrace trace = cc::train(net, data, cfg);
  write_text(trace_path, trace_csv(trace));
  std::cout << "final_accuracy=" << (trace.accuracy.empty() ? 0.0 : trace.accuracy.back())
            << "\n";
  if (!alpha_path.empty()) {
    cc::GradientStats<double> stats = cc::collect_conv_gradient_stats(net, data, alpha_h);
    bool degenerate = false;
    cc::ConvTensorXd alpha = stats.finalize(&degenerate);
    cc::write_conv_tensor(alpha_path, alpha);
    std::cout << "alpha_output=" << alpha_path << "\n"
              << "alpha_degenerate=" << (degenerate ? 1 : 0) << "\n";
  }
  return 0;
}

int run_toynet_finetune(const ToyCommonArgs& c, Index pre_epochs, Index ft_epochs,
                        Index layer_index, const SchemeFlags& scheme,
                        const std::string& trace_path, const std::string& dump_prefix) {
  const auto seeds = c.split_seed();
  cc::ToyDataset data = cc::make_toy_dataset(c.per_class, c.classes, c.noise, seeds.data);
  cc::ToyNetwork net = cc::ToyNetwork::random_init(c.classes, seeds.net);
  cc::TrainConfig cfg;
  cfg.learning_rate = c.lr;
  cfg.batch_size = c.batch;
  cfg.epochs = pre_epochs;
  cfg.seed = seeds.train;
  cc::train(net, data, cfg);

  cfg.epochs = ft_epochs;
  cc::FinetuneResult r =
      cc::compress_finetune(net, layer_index, scheme.toy_scheme(), data, cfg, seeds.compress);
  if (!dump_prefix.empty() && layer_index == 0) {
    // The compressed layer is frozen during fine-tuning, so dumping it after
    // the call and after one more frozen training round must agree.
    cc::write_conv_tensor(dump_prefix + ".after_finetune.ctns", net.conv_w);
    cc::TrainConfig frozen = cfg;
    frozen.frozen_below = layer_index;
    cc::train(net, data, frozen);
    cc::write_conv_tensor(dump_prefix + ".after_more_training.ctns", net.conv_w);
  }
  std::ostringstream os;
  os << "phase,accuracy\n"
     << "before," << r.acc_before << "\n"
     << "after_compress," << r.acc_after_compress << "\n"
     << "after_finetune," << r.acc_after_finetune << "\n";
  write_text(trace_path, os.str());
  return 0;
}

int run_toynet_cascade(const ToyCommonArgs& c, Index pre_epochs, Index ft_epochs, Index colors,
                       Index fc_rank, const std::string& trace_path) {
  const auto seeds = c.split_seed();
  cc::ToyDataset data = cc::make_toy_dataset(c.per_class, c.classes, c.noise, seeds.data);
  cc::ToyNetwork net = cc::ToyNetwork::random_init(c.classes, seeds.net);
  cc::TrainConfig cfg;
  cfg.learning_rate = c.lr;
  cfg.batch_size = c.batch;
  cfg.epochs = pre_epochs;
  cfg.seed = seeds.train;
  cc::train(net, data, cfg);

  cfg.epochs = ft_epochs;
  std::vector<cc::CascadeStep> steps = {{0, cc::MonochromaticScheme{colors}},
                                        {1, cc::FcRankScheme{fc_rank}}};
  std::vector<cc::FinetuneResult> results = cc::cascade(net, steps, data, cfg, seeds.compress);

  std::ostringstream os;
  os << "step,layer,scheme,acc_before,acc_after_compress,acc_after_finetune\n";
  os << "1,0,monochromatic," << results[0].acc_before << ',' << results[0].acc_after_compress
     << ',' << results[0].acc_after_finetune << "\n";
  os << "2,1,fc-svd," << results[1].acc_before << ',' << results[1].acc_after_compress << ','
     << results[1].acc_after_finetune << "\n";
  write_text(trace_path, os.str());
  return 0;
}

int run_toynet_project_retrain(const ToyCommonArgs& c, Index epochs_per_cycle, Index cycles,
                               Index layer_index, const SchemeFlags& scheme,
                               const std::string& trace_path) {
  const auto seeds = c.split_seed();
  cc::ToyDataset data = cc::make_toy_dataset(c.per_class, c.classes, c.noise, seeds.data);
  cc::ToyNetwork net = cc::ToyNetwork::random_init(c.classes, seeds.net);
  cc::TrainConfig cfg;
  cfg.learning_rate = c.lr;
  cfg.batch_size = c.batch;
  cfg.epochs = epochs_per_cycle;
  cfg.seed = seeds.train;
  cc::ProjectionTrace trace = cc::projection_retrain(net, layer_index, scheme.toy_scheme(),
                                                     cycles, data, cfg, seeds.compress);
  std::ostringstream os;
  os << "cycle,task_error\n";
  for (size_t i = 0; i < trace.task_error.size(); ++i)
    os << (i + 1) << ',' << trace.task_error[i] << '\n';
  write_text(trace_path, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convcrunch: low-rank and clustering compression of conv/FC weights"};
  app.require_subcommand(1);

  // compress
  CompressArgs compress_args;
  CLI::App* compress = app.add_subcommand("compress", "compress a weight tensor file");
  compress->add_option("--input", compress_args.input, "input tensor file")->required();
  compress->add_option("--output", compress_args.output, "output container/tensor file")
      ->required();
  compress_args.scheme.attach(compress, /*with_fc=*/true, /*with_none=*/false);
  compress->add_option("--seed", compress_args.seed, "clustering seed (required)")->required();
  compress->add_option("--metric", compress_args.metric,
                       "error metric: frobenius | data-cov | maha")
      ->check(CLI::IsMember({"frobenius", "data-cov", "maha"}));
  compress->add_option("--cov", compress_args.cov_path, "covariance matrix file (data-cov)");
  compress->add_option("--alpha", compress_args.alpha_path, "weight tensor file (maha)");
  compress->add_option("--alpha-floor", compress_args.alpha_floor,
                       "clamp alpha coordinates below this value");

  // reconstruct
  std::string rec_input, rec_output, rec_reference;
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "expand a container to dense weights");
  reconstruct->add_option("--input", rec_input, "container file")->required();
  reconstruct->add_option("--output", rec_output, "output tensor file")->required();
  reconstruct->add_option("--reference", rec_reference, "original tensor for the error report");

  // eval
  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "run a fast evaluation path");
  eval->add_option("--container", eval_args.container, "compressed model file")->required();
  eval->add_option("--input", eval_args.input, "input feature map file");
  eval->add_option("--output", eval_args.output, "output feature map file");
  eval->add_option("--stride", eval_args.stride, "stride");
  eval->add_flag("--check", eval_args.check, "compare against direct conv on the reconstruction");
  eval->add_option("--gen-rows", eval_args.gen_rows, "generate a random input with this many rows");
  eval->add_option("--gen-cols", eval_args.gen_cols, "generated input cols");
  CLI::Option* eval_seed = eval->add_option("--seed", eval_args.seed, "input generation seed");

  // opcount
  OpcountArgs opcount_args;
  CLI::App* opcount = app.add_subcommand("opcount", "analytic operation/parameter counts");
  opcount_args.layer.attach(opcount);
  opcount_args.scheme.attach(opcount, /*with_fc=*/true, /*with_none=*/true);
  opcount->add_option("--colors-sweep", opcount_args.colors_list,
                      "comma-separated C' sweep (mono only)");
  opcount->add_option("--fc-n", opcount_args.fc_n, "FC rows N");
  opcount->add_option("--fc-m", opcount_args.fc_m, "FC cols M");
  opcount->add_option("--out", opcount_args.out, "output CSV path (default stdout)");

  // bench
  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench", "wall-clock micro-benchmark");
  bench_args.layer.attach(bench);
  bench_args.scheme.attach(bench, /*with_fc=*/false, /*with_none=*/true);
  bench->add_option("--repetitions", bench_args.repetitions, "timed repetitions (>= 3)");
  bench->add_option("--batch", bench_args.batch, "images per timed batch");
  bench->add_option("--seed", bench_args.seed, "weights/input seed (required)")->required();
  bench->add_option("--out", bench_args.out, "output CSV path (default stdout)");

  // toynet-train
  ToyCommonArgs tt_common;
  Index tt_epochs = 10;
  std::string tt_trace, tt_alpha;
  Index tt_alpha_h = 2;
  CLI::App* tt = app.add_subcommand("toynet-train", "train the toy network");
  tt_common.attach(tt, tt_common.seed);
  tt->add_option("--epochs", tt_epochs, "training epochs");
  tt->add_option("--trace", tt_trace, "accuracy trace CSV path (default stdout)");
  tt->add_option("--emit-alpha", tt_alpha, "write dangerous-gradient weights for the conv layer");
  tt->add_option("--alpha-h", tt_alpha_h, "dangerous mistakes per sample");

  // toynet-finetune
  ToyCommonArgs tf_common;
  Index tf_pre = 10, tf_ft = 8, tf_layer = 0;
  SchemeFlags tf_scheme;
  std::string tf_trace, tf_dump;
  CLI::App* tf = app.add_subcommand("toynet-finetune", "compress one layer and fine-tune above");
  tf_common.attach(tf, tf_common.seed);
  tf->add_option("--pre-epochs", tf_pre, "training epochs before compression");
  tf->add_option("--ft-epochs", tf_ft, "fine-tuning epochs");
  tf->add_option("--layer", tf_layer, "layer index: 0 conv, 1 fc1, 2 fc2");
  tf_scheme.attach(tf, /*with_fc=*/true, /*with_none=*/false);
  tf->add_option("--trace", tf_trace, "result CSV path (default stdout)");
  tf->add_option("--dump-frozen", tf_dump, "prefix for frozen-layer tensor dumps");

  // toynet-cascade
  ToyCommonArgs tc_common;
  Index tc_pre = 10, tc_ft = 6, tc_colors = 4, tc_rank = 8;
  std::string tc_trace;
  CLI::App* tc = app.add_subcommand("toynet-cascade",
                                    "cascade: conv (mono) then fc1 (svd) with fine-tunes");
  tc_common.attach(tc, tc_common.seed);
  tc->add_option("--pre-epochs", tc_pre, "training epochs before the cascade");
  tc->add_option("--ft-epochs", tc_ft, "fine-tuning epochs per step");
  tc->add_option("--colors", tc_colors, "monochromatic colors for the conv step");
  tc->add_option("--fc-rank", tc_rank, "SVD rank for the fc1 step");
  tc->add_option("--trace", tc_trace, "result CSV path (default stdout)");

  // toynet-project-retrain
  ToyCommonArgs tp_common;
  Index tp_epochs = 4, tp_cycles = 3, tp_layer = 0;
  SchemeFlags tp_scheme;
  std::string tp_trace;
  CLI::App* tp = app.add_subcommand("toynet-project-retrain",
                                    "alternate training with projection onto the scheme");
  tp_common.attach(tp, tp_common.seed);
  tp->add_option("--epochs-per-cycle", tp_epochs, "training epochs per cycle");
  tp->add_option("--cycles", tp_cycles, "projection cycles");
  tp->add_option("--layer", tp_layer, "layer index: 0 conv, 1 fc1, 2 fc2");
  tp_scheme.attach(tp, /*with_fc=*/true, /*with_none=*/false);
  tp->add_option("--trace", tp_trace, "result CSV path (default stdout)");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_json_config(app, args);
    // CLI11 parses the vector back-to-front.
    std::reverse(args.begin(), args.end());
    app.parse(args);

    if (compress->parsed()) return run_compress(compress_args);
    if (reconstruct->parsed()) return run_reconstruct(rec_input, rec_output, rec_reference);
    if (eval->parsed()) {
      eval_args.seeded = eval_seed->count() > 0;
      return run_eval(eval_args);
    }
    if (opcount->parsed()) return run_opcount(opcount_args);
    if (bench->parsed()) return run_bench(bench_args);
    if (tt->parsed()) return run_toynet_train(tt_common, tt_epochs, tt_trace, tt_alpha,
                                              tt_alpha_h);
    if (tf->parsed())
      return run_toynet_finetune(tf_common, tf_pre, tf_ft, tf_layer, tf_scheme, tf_trace,
                                 tf_dump);
    if (tc->parsed())
      return run_toynet_cascade(tc_common, tc_pre, tc_ft, tc_colors, tc_rank, tc_trace);
    if (tp->parsed())
      return run_toynet_project_retrain(tp_common, tp_epochs, tp_cycles, tp_layer, tp_scheme,
                                        tp_trace);
    std::cerr << app.help() << std::endl;
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    std::cerr << "error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const cc::IoError& e) {
    std::cerr << "io error: " << e.what() << std::endl;
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const cc::SvdConvergenceError& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "numeric error: " << e.what() << std::endl;
    return kExitNumeric;
  }
}
