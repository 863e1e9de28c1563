#pragma once

// RunConfig and its JSON form. Key names are documented in docs/config.md.
// Unknown keys are rejected so that typos do not silently fall back to
// defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"

#include "ecpp/augment.hpp"
#include "ecpp/losses.hpp"
#include "ecpp/models.hpp"
#include "ecpp/optim.hpp"
#include "ecpp/pairing.hpp"
#include "ecpp/views.hpp"

namespace ecpp {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { Cifar10, Blobs, Shapes };
enum class Objective { Simclr, Byol };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Shapes;
  std::string data_dir;
  int classes = 4;
  int per_class = 128;
  int test_per_class = 64;
  int resolution = 32;
  std::uint64_t seed = 7;
  /// 0 keeps everything.
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;

  bool operator==(const DatasetSpec&) const = default;
};

struct ByolConfig {
  double momentum = kDefaultEmaMomentum;
  PredictorConfig predictor;
  bool stop_gradient = true;

  bool operator==(const ByolConfig&) const = default;
};

struct ProbeConfig {
  int epochs = 100;
  int batch_size = 256;
  double lr = 0.25;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool standardize = true;
  std::uint64_t seed = 0;

  bool operator==(const ProbeConfig&) const = default;
};

inline constexpr double kConstantSpeedLr = 0.0004;

struct RunConfig {
  DatasetSpec dataset;
  MultiViewConfig views = uniform_config(2, 32, DatasetStyle::Cifar);
  PairingStrategy strategy = PairingStrategy::FullGraph;
  bool exclude_self_positive = false;
  bool pooled_negatives = false;
  Objective objective = Objective::Simclr;
  ByolConfig byol;
  EncoderConfig encoder;
  ProjectionConfig projection;
  OptimConfig optim;
  double tau = kDefaultTemperature;
  int epochs = 100;
  int batch_size = 64;
  std::uint64_t seed = 0;
  int probe_every = 0;
  bool constant_lr_mode = false;
  double constant_lr = kConstantSpeedLr;
  ProbeConfig probe;
  /// 0 = deterministic single-threaded.
  int threads = 0;

  /// optim with batch_size and total_epochs taken from the run.
  OptimConfig effective_optim() const {
    OptimConfig o = optim;
    o.batch_size = batch_size;
    o.total_epochs = epochs;
    return o;
  }

  ContrastiveOptions contrastive() const { return {tau, exclude_self_positive, pooled_negatives}; }

  void validate() const {
    try {
      views.validate();
      encoder.validate();
      projection.validate();
      check_strategy(strategy, views.k);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (exclude_self_positive && batch_size < 2) throw ConfigError("exclude_self_positive needs batch_size >= 2");
    if (probe_every < 0) throw ConfigError("probe_every must be non-negative");
    if (threads < 0) throw ConfigError("threads must be non-negative");
    if (constant_lr_mode) {
      if (optim.warmup_epochs != 0) throw ConfigError("constant_lr_mode forbids warmup (set optim.warmup_epochs to 0)");
      if (!(constant_lr > 0.0)) throw ConfigError("constant_lr must be positive");
    } else if (epochs > 0 && epochs <= optim.warmup_epochs) {
      throw ConfigError("epochs must exceed optim.warmup_epochs when the schedule is enabled");
    }
    if (objective == Objective::Byol) {
      if (!(byol.momentum >= 0.0 && byol.momentum < 1.0)) throw ConfigError("byol.momentum must lie in [0, 1)");
      if (byol.predictor.output_dim != projection.output_dim)
        throw ConfigError("byol.predictor.output_dim must equal projection.output_dim");
    }
    if (dataset.kind == DatasetKind::Cifar10 && dataset.data_dir.empty())
      throw ConfigError("dataset.data_dir is required for cifar10");
    if (dataset.kind != DatasetKind::Cifar10 && (dataset.classes <= 0 || dataset.per_class <= 0 || dataset.resolution <= 0))
      throw ConfigError("synthetic dataset sizes must be positive");
    if (probe.epochs < 0 || probe.batch_size < 1) throw ConfigError("invalid probe settings");
  }

  bool operator==(const RunConfig&) const = default;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using nlohmann::json;

template <typename E>
struct EnumNames;

template <>
struct EnumNames<DatasetKind> {
  static constexpr std::pair<DatasetKind, std::string_view> values[] = {
      {DatasetKind::Cifar10, "cifar10"}, {DatasetKind::Blobs, "blobs"}, {DatasetKind::Shapes, "shapes"}};
};
template <>
struct EnumNames<Objective> {
  static constexpr std::pair<Objective, std::string_view> values[] = {{Objective::Simclr, "simclr"},
                                                                     {Objective::Byol, "byol"}};
};
template <>
struct EnumNames<PairingStrategy> {
  static constexpr std::pair<PairingStrategy, std::string_view> values[] = {
      {PairingStrategy::TwoView, "two_view"},   {PairingStrategy::CoreView, "core_view"},
      {PairingStrategy::FullGraph, "full_graph"}, {PairingStrategy::MultiCrop, "multi_crop"},
      {PairingStrategy::Ecpp, "ecpp"}};
};
template <>
struct EnumNames<DatasetStyle> {
  static constexpr std::pair<DatasetStyle, std::string_view> values[] = {{DatasetStyle::Imagenet, "imagenet"},
                                                                        {DatasetStyle::Cifar, "cifar"}};
};
template <>
struct EnumNames<ViewScheme> {
  static constexpr std::pair<ViewScheme, std::string_view> values[] = {{ViewScheme::SimclrFull, "simclr"},
                                                                      {ViewScheme::CropOnly, "crop_only"}};
};
template <>
struct EnumNames<SizeClass> {
  static constexpr std::pair<SizeClass, std::string_view> values[] = {{SizeClass::Large, "large"},
                                                                     {SizeClass::Small, "small"}};
};
template <>
struct EnumNames<EncoderKind> {
  static constexpr std::pair<EncoderKind, std::string_view> values[] = {{EncoderKind::SmallCnn, "small_cnn"},
                                                                       {EncoderKind::Mlp, "mlp"}};
};

template <typename E>
std::string enum_name(E e) {
  for (const auto& [v, name] : EnumNames<E>::values)
    if (v == e) return std::string(name);
  throw ConfigError("unnamed enum value");
}

template <typename E>
E enum_value(const json& j, const std::string& where) {
  const auto s = j.get<std::string>();
  for (const auto& [v, name] : EnumNames<E>::values)
    if (name == s) return v;
  throw ConfigError(where + ": unknown value '" + s + "'");
}

inline void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename E>
void read_enum(const json& j, const char* key, E& out, const std::string& where) {
  if (j.contains(key)) out = enum_value<E>(j.at(key), where + "." + key);
}

inline json views_to_json(const MultiViewConfig& v) {
  json specs = json::array();
  for (const auto& s : v.specs)
    specs.push_back({{"resolution", s.resolution},
                     {"scheme", enum_name(s.scheme)},
                     {"size", enum_name(s.size_class)},
                     {"scale", {s.scale_lo, s.scale_hi}}});
  return {{"k", v.k},
          {"large_resolution", v.large_resolution},
          {"small_resolution", v.small_resolution},
          {"style", enum_name(v.style)},
          {"specs", specs}};
}

// "preset" builds the spec list; explicit "specs" override it.
inline MultiViewConfig views_from_json(const json& j) {
  const std::string where = "views";
  check_keys(j, where, {"k", "large_resolution", "small_resolution", "style", "preset", "small_simclr", "specs"});
  int k = 2, large = 32, small = 32;
  DatasetStyle style = DatasetStyle::Cifar;
  std::string preset = "uniform";
  read(j, "k", k, where);
  read(j, "large_resolution", large, where);
  small = large;
  read(j, "small_resolution", small, where);
  read_enum(j, "style", style, where);
  read(j, "preset", preset, where);
  MultiViewConfig cfg;
  try {
    if (j.contains("specs")) {
      cfg = MultiViewConfig{k, {}, large, small, style};
      for (const auto& s : j.at("specs")) {
        check_keys(s, "views.specs[]", {"resolution", "scheme", "size", "scale"});
        ViewSpec spec;
        read_enum(s, "size", spec.size_class, "views.specs[]");
        spec.resolution = spec.size_class == SizeClass::Large ? large : small;
        read(s, "resolution", spec.resolution, "views.specs[]");
        read_enum(s, "scheme", spec.scheme, "views.specs[]");
        if (s.contains("scale")) {
          const auto sc = s.at("scale").get<std::vector<double>>();
          if (sc.size() != 2) throw ConfigError("views.specs[].scale must have two entries");
          spec.scale_lo = sc[0];
          spec.scale_hi = sc[1];
        }
        cfg.specs.push_back(spec);
      }
      if (!j.contains("k")) cfg.k = static_cast<int>(cfg.specs.size());
    } else if (preset == "uniform") {
      cfg = uniform_config(k, large, style);
    } else if (preset == "ecpp") {
      if (j.contains("small_simclr")) {
        cfg = ecpp_config_with_split(k, large, small, j.at("small_simclr").get<int>(), style);
      } else {
        cfg = ecpp_default_config(k, large, small, style);
      }
    } else if (preset == "multicrop_local") {
      cfg = multicrop_local_config(k, large, small, style);
    } else {
      throw ConfigError("views.preset: unknown value '" + preset + "'");
    }
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("views: ") + e.what());
  }
  return cfg;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using detail::enum_name;
  nlohmann::json j;
  j["dataset"] = {{"kind", enum_name(c.dataset.kind)},     {"data_dir", c.dataset.data_dir},
                  {"classes", c.dataset.classes},          {"per_class", c.dataset.per_class},
                  {"test_per_class", c.dataset.test_per_class}, {"resolution", c.dataset.resolution},
                  {"seed", c.dataset.seed},                {"train_limit", c.dataset.train_limit},
                  {"test_limit", c.dataset.test_limit}};
  j["views"] = detail::views_to_json(c.views);
  j["strategy"] = enum_name(c.strategy);
  j["exclude_self_positive"] = c.exclude_self_positive;
  j["pooled_negatives"] = c.pooled_negatives;
  j["objective"] = enum_name(c.objective);
  j["byol"] = {{"momentum", c.byol.momentum},
               {"predictor_hidden", c.byol.predictor.hidden_dim},
               {"predictor_output", c.byol.predictor.output_dim},
               {"stop_gradient", c.byol.stop_gradient}};
  j["encoder"] = {{"kind", enum_name(c.encoder.kind)},
                  {"input_resolution", c.encoder.input_resolution},
                  {"widths", c.encoder.widths},
                  {"representation_dim", c.encoder.representation_dim},
                  {"mlp_grid", c.encoder.mlp_grid}};
  j["projection"] = {{"depth", c.projection.depth},
                     {"hidden_dim", c.projection.hidden_dim},
                     {"output_dim", c.projection.output_dim}};
  j["optim"] = {{"base_lr", c.optim.base_lr},
                {"momentum", c.optim.momentum},
                {"weight_decay", c.optim.weight_decay},
                {"warmup_epochs", c.optim.warmup_epochs}};
  j["tau"] = c.tau;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["probe_every"] = c.probe_every;
  j["constant_lr_mode"] = c.constant_lr_mode;
  j["constant_lr"] = c.constant_lr;
  j["probe"] = {{"epochs", c.probe.epochs},     {"batch_size", c.probe.batch_size},
                {"lr", c.probe.lr},             {"momentum", c.probe.momentum},
                {"weight_decay", c.probe.weight_decay}, {"standardize", c.probe.standardize},
                {"seed", c.probe.seed}};
  j["threads"] = c.threads;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::read_enum;
  detail::check_keys(j, "config",
                     {"dataset", "views", "strategy", "exclude_self_positive", "pooled_negatives", "objective", "byol",
                      "encoder", "projection", "optim", "tau", "epochs", "batch_size", "seed", "probe_every",
                      "constant_lr_mode", "constant_lr", "probe", "threads"});
  RunConfig c;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d, "dataset", {"kind", "data_dir", "classes", "per_class", "test_per_class", "resolution",
                                      "seed", "train_limit", "test_limit"});
    read_enum(d, "kind", c.dataset.kind, "dataset");
    read(d, "data_dir", c.dataset.data_dir, "dataset");
    read(d, "classes", c.dataset.classes, "dataset");
    read(d, "per_class", c.dataset.per_class, "dataset");
    read(d, "test_per_class", c.dataset.test_per_class, "dataset");
    read(d, "resolution", c.dataset.resolution, "dataset");
    read(d, "seed", c.dataset.seed, "dataset");
    read(d, "train_limit", c.dataset.train_limit, "dataset");
    read(d, "test_limit", c.dataset.test_limit, "dataset");
  }
  if (j.contains("views")) c.views = detail::views_from_json(j.at("views"));
  read_enum(j, "strategy", c.strategy, "config");
  read(j, "exclude_self_positive", c.exclude_self_positive, "config");
  read(j, "pooled_negatives", c.pooled_negatives, "config");
  read_enum(j, "objective", c.objective, "config");
  if (j.contains("byol")) {
    const auto& b = j.at("byol");
    detail::check_keys(b, "byol", {"momentum", "predictor_hidden", "predictor_output", "stop_gradient"});
    read(b, "momentum", c.byol.momentum, "byol");
    read(b, "predictor_hidden", c.byol.predictor.hidden_dim, "byol");
    read(b, "predictor_output", c.byol.predictor.output_dim, "byol");
    read(b, "stop_gradient", c.byol.stop_gradient, "byol");
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e, "encoder", {"kind", "input_resolution", "widths", "representation_dim", "mlp_grid"});
    read_enum(e, "kind", c.encoder.kind, "encoder");
    read(e, "input_resolution", c.encoder.input_resolution, "encoder");
    read(e, "widths", c.encoder.widths, "encoder");
    read(e, "representation_dim", c.encoder.representation_dim, "encoder");
    read(e, "mlp_grid", c.encoder.mlp_grid, "encoder");
  }
  if (j.contains("projection")) {
    const auto& p = j.at("projection");
    detail::check_keys(p, "projection", {"depth", "hidden_dim", "output_dim"});
    read(p, "depth", c.projection.depth, "projection");
    read(p, "hidden_dim", c.projection.hidden_dim, "projection");
    read(p, "output_dim", c.projection.output_dim, "projection");
  }
  if (j.contains("optim")) {
    const auto& o = j.at("optim");
    detail::check_keys(o, "optim", {"base_lr", "momentum", "weight_decay", "warmup_epochs"});
    read(o, "base_lr", c.optim.base_lr, "optim");
    read(o, "momentum", c.optim.momentum, "optim");
    read(o, "weight_decay", c.optim.weight_decay, "optim");
    read(o, "warmup_epochs", c.optim.warmup_epochs, "optim");
  }
  read(j, "tau", c.tau, "config");
  read(j, "epochs", c.epochs, "config");
  read(j, "batch_size", c.batch_size, "config");
  read(j, "seed", c.seed, "config");
  read(j, "probe_every", c.probe_every, "config");
  read(j, "constant_lr_mode", c.constant_lr_mode, "config");
  read(j, "constant_lr", c.constant_lr, "config");
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    detail::check_keys(p, "probe", {"epochs", "batch_size", "lr", "momentum", "weight_decay", "standardize", "seed"});
    read(p, "epochs", c.probe.epochs, "probe");
    read(p, "batch_size", c.probe.batch_size, "probe");
    read(p, "lr", c.probe.lr, "probe");
    read(p, "momentum", c.probe.momentum, "probe");
    read(p, "weight_decay", c.probe.weight_decay, "probe");
    read(p, "standardize", c.probe.standardize, "probe");
    read(p, "seed", c.probe.seed, "probe");
  }
  read(j, "threads", c.threads, "config");
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2); }

}  // namespace ecpp
