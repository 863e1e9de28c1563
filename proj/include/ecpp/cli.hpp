#pragma once

// Command-line front end. run_cli() is separate from main() so tests can
// drive it with in-memory streams.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ecpp/augment.hpp"
#include "ecpp/checkpoint.hpp"
#include "ecpp/config.hpp"
#include "ecpp/data.hpp"
#include "ecpp/image.hpp"
#include "ecpp/pairing.hpp"
#include "ecpp/pipeline.hpp"

namespace ecpp {

inline constexpr double kDefaultSizeRatio = (96.0 * 96.0) / (224.0 * 224.0);

/// "A..B" (inclusive) or a single integer.
inline std::vector<int> parse_k_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) return {std::stoi(text)};
    const int a = std::stoi(text.substr(0, dots));
    const int b = std::stoi(text.substr(dots + 2));
    if (a > b) throw ConfigError("--k-range: empty range " + text);
    std::vector<int> ks;
    for (int k = a; k <= b; ++k) ks.push_back(k);
    return ks;
  } catch (const std::logic_error&) {
    throw ConfigError("--k-range: expected A..B, got '" + text + "'");
  }
}

inline std::vector<PairingStrategy> parse_strategy_list(const std::string& text) {
  std::vector<PairingStrategy> out;
  if (text.empty() || text == "all") return {std::begin(kAllStrategies), std::end(kAllStrategies)};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto s = parse_strategy(item);
    if (!s) throw ConfigError("unknown strategy '" + item + "'");
    out.push_back(*s);
  }
  return out;
}

inline constexpr const char* kPairsHeader = "strategy,k,n,size_ratio,positive_pairs,compute,pairs_per_compute";

/// One row per valid (strategy, k) combination; invalid ones are skipped.
inline std::string pairs_csv(const std::vector<PairingStrategy>& strategies, const std::vector<int>& ks, std::size_t n,
                             double ratio) {
  std::string s = std::string(kPairsHeader) + "\n";
  for (auto strategy : strategies)
    for (int k : ks) {
      if (!strategy_accepts(strategy, k)) continue;
      const auto pairs = positive_pair_count(strategy, k, n);
      const double compute = compute_cost(strategy, k, n, ratio);
      s += std::string(to_string(strategy)) + "," + std::to_string(k) + "," + std::to_string(n) + "," +
           format_double(ratio) + "," + std::to_string(pairs) + "," + format_double(compute) + "," +
           format_double(static_cast<double>(pairs) / compute) + "\n";
    }
  return s;
}

namespace detail {

inline Image denormalize(const Image& img, const AugmentPipeline& p) {
  const auto* norm = std::get_if<NormalizeOp>(&p.ops.back());
  if (!norm) return img;
  Image out = img;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < img.plane(); ++i) {
      float& v = out.pixels[c * img.plane() + i];
      v = v * norm->std[c] + norm->mean[c];
    }
  return out;
}

inline std::optional<PipelineName> parse_pipeline_name(const std::string& s) {
  for (auto n : {PipelineName::SimclrFullLarge, PipelineName::SimclrGlobalSmall, PipelineName::CropOnlyGlobalSmall,
                 PipelineName::SimclrCifar, PipelineName::CropOnlyCifar})
    if (to_string(n) == s) return n;
  return std::nullopt;
}

inline void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
    return;
  }
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  os << text;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ecpp: multi-view contrastive learning toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint_path, resume_path, k_range, strategies, dataset, data_dir, input,
      pipeline_name;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  int k = 0;
  std::size_t n = 1;
  double ratio = kDefaultSizeRatio;
  std::uint64_t max_steps = 0, budget_pairs = 0, milestone_pairs = 0;
  int count = 8;

  auto add_dataset_flags = [&](CLI::App* sub) {
    sub->add_option("--dataset", dataset, "cifar10, blobs or shapes")->check(CLI::IsMember({"cifar10", "blobs", "shapes"}));
    sub->add_option("--data-dir", data_dir, "CIFAR-10 binary directory");
  };

  auto* train_cmd = app.add_subcommand("train", "run pre-training from a config file");
  train_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  train_cmd->add_option("--out", out_path, "metrics CSV (default: standard output)");
  train_cmd->add_option("--checkpoint", checkpoint_path, "where to write the final checkpoint");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--max-steps", max_steps, "stop after this many steps");
  train_cmd->add_option("--seed", seed, "override the run seed");
  train_cmd->add_option("--threads", threads, "augmentation threads (0 = deterministic single-threaded)");
  add_dataset_flags(train_cmd);

  auto* probe_cmd = app.add_subcommand("probe", "linear evaluation of a checkpoint");
  probe_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
  probe_cmd->add_option("--config", config_path, "optional config whose dataset and probe sections are used");
  probe_cmd->add_option("--out", out_path, "CSV output");
  probe_cmd->add_option("--seed", seed, "probe seed");
  add_dataset_flags(probe_cmd);

  auto* pairs_cmd = app.add_subcommand("pairs", "positive pair counts and compute per strategy");
  pairs_cmd->add_option("--k-range", k_range, "A..B");
  pairs_cmd->add_option("--k", k, "single k");
  pairs_cmd->add_option("--strategies,--strategy", strategies, "comma-separated strategies (default all)");
  pairs_cmd->add_option("--n", n, "batch size");
  pairs_cmd->add_option("--ratio", ratio, "small/large pixel ratio");
  pairs_cmd->add_option("--out", out_path, "CSV output");

  auto* cost_cmd = app.add_subcommand("cost", "compute cost per strategy");
  cost_cmd->add_option("--k", k, "number of views");
  cost_cmd->add_option("--k-range", k_range, "A..B");
  cost_cmd->add_option("--strategies,--strategy", strategies, "comma-separated strategies (default all)");
  cost_cmd->add_option("--n", n, "batch size");
  cost_cmd->add_option("--ratio", ratio, "small/large pixel ratio");
  cost_cmd->add_option("--out", out_path, "CSV output");

  auto* speed_cmd = app.add_subcommand("speed", "probe accuracy against processed positive pairs for several k");
  speed_cmd->add_option("--config", config_path, "template config (constant_lr_mode)")->required();
  speed_cmd->add_option("--k-range", k_range, "A..B or a single k")->required();
  speed_cmd->add_option("--budget-pairs", budget_pairs, "positive pairs to process per k")->required();
  speed_cmd->add_option("--milestone-pairs", milestone_pairs, "probe interval in positive pairs")->required();
  speed_cmd->add_option("--out", out_path, "CSV output");
  speed_cmd->add_option("--seed", seed, "override the run seed");
  speed_cmd->add_option("--threads", threads, "augmentation threads");
  add_dataset_flags(speed_cmd);

  auto* preview_cmd = app.add_subcommand("augment-preview", "write augmented views of one image as PPM files");
  preview_cmd->add_option("--input", input, "input PPM (default: first image of the dataset)");
  preview_cmd->add_option("--pipeline", pipeline_name, "augmentation pipeline")->default_val("simclr_cifar");
  preview_cmd->add_option("--n", count, "number of views")->default_val(8);
  preview_cmd->add_option("--out", out_path, "output directory")->required();
  preview_cmd->add_option("--seed", seed, "augmentation seed");
  add_dataset_flags(preview_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  auto apply_dataset_flags = [&](DatasetSpec& spec) {
    if (!dataset.empty()) spec.kind = detail::enum_value<DatasetKind>(nlohmann::json(dataset), "--dataset");
    if (!data_dir.empty()) spec.data_dir = data_dir;
  };

  try {
    if (train_cmd->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (seed) cfg.seed = *seed;
      if (threads) cfg.threads = *threads;
      apply_dataset_flags(cfg.dataset);
      cfg.validate();
      TrainOptions opt{out_path, checkpoint_path, resume_path, max_steps};
      const auto result = train(cfg, opt);
      if (out_path.empty()) {
        out << kMetricsHeader << "\n";
        for (const auto& r : result.rows) out << format_metrics_row(r) << "\n";
      }
      err << "steps=" << result.global_step << " positive_pairs=" << result.positive_pairs_cum << "\n";
      return 0;
    }
    if (probe_cmd->parsed()) {
      const auto ck = load_checkpoint(checkpoint_path);
      RunConfig cfg = config_path.empty() ? parse_run_config(ck.text("config")) : load_run_config(config_path);
      apply_dataset_flags(cfg.dataset);
      if (seed) cfg.probe.seed = *seed;
      cfg.validate();
      const auto [tr, te] = load_datasets(cfg.dataset);
      const double top1 = linear_probe(ck, tr, te, cfg.probe);
      detail::emit("checkpoint,top1\n" + checkpoint_path + "," + format_double(top1) + "\n", out_path, out);
      return 0;
    }
    if (pairs_cmd->parsed() || cost_cmd->parsed()) {
      std::vector<int> ks;
      if (!k_range.empty()) ks = parse_k_range(k_range);
      if (k > 0) ks.push_back(k);
      if (ks.empty()) throw ConfigError("give --k or --k-range");
      if (n == 0) throw ConfigError("--n must be positive");
      if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("--ratio must lie in (0, 1]");
      detail::emit(pairs_csv(parse_strategy_list(strategies), ks, n, ratio), out_path, out);
      return 0;
    }
    if (speed_cmd->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (seed) cfg.seed = *seed;
      if (threads) cfg.threads = *threads;
      apply_dataset_flags(cfg.dataset);
      cfg.validate();
      const auto ks = parse_k_range(k_range);
      for (int kk : ks) check_strategy(cfg.strategy, kk);
      auto [tr, te] = load_datasets(cfg.dataset);
      const auto points = speed_experiment(ks, budget_pairs, cfg, milestone_pairs,
                                           std::make_shared<const Dataset>(std::move(tr)),
                                           std::make_shared<const Dataset>(std::move(te)));
      detail::emit(speed_csv(points), out_path, out);
      return 0;
    }
    if (preview_cmd->parsed()) {
      const auto name = detail::parse_pipeline_name(pipeline_name);
      if (!name) throw ConfigError("unknown pipeline '" + pipeline_name + "'");
      if (count < 1) throw ConfigError("--n must be positive");
      Image img;
      if (!input.empty()) {
        img = read_ppm(input);
      } else {
        DatasetSpec spec;
        apply_dataset_flags(spec);
        img = load_datasets(spec).first.images.at(0);
      }
      const auto pipeline = make_pipeline(*name);
      std::filesystem::create_directories(out_path);
      for (int i = 0; i < count; ++i) {
        const auto view = apply(pipeline, img, hash_mix(seed.value_or(0), {static_cast<std::uint64_t>(i)}));
        const auto path = std::filesystem::path(out_path) / ("view_" + std::to_string(i) + ".ppm");
        write_ppm(path.string(), detail::denormalize(view, pipeline));
        out << path.string() << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ecpp
