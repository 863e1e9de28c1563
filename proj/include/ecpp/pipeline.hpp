#pragma once

// Training loop, linear probe, speed experiment and metrics CSV.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ecpp/augment.hpp"
#include "ecpp/checkpoint.hpp"
#include "ecpp/config.hpp"
#include "ecpp/data.hpp"
#include "ecpp/image.hpp"
#include "ecpp/losses.hpp"
#include "ecpp/models.hpp"
#include "ecpp/optim.hpp"
#include "ecpp/pairing.hpp"
#include "ecpp/rng.hpp"
#include "ecpp/views.hpp"

namespace ecpp {

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Metrics

inline constexpr const char* kMetricsHeader = "epoch,step,loss,positive_pairs_cum,lr,probe_top1,wall_ms";

struct MetricsRow {
  int epoch = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  std::uint64_t positive_pairs_cum = 0;
  double lr = 0.0;
  std::optional<double> probe_top1;
  std::int64_t wall_ms = 0;

  bool operator==(const MetricsRow&) const = default;
};

/// Round-trip exact for doubles.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_double(r.loss) + "," +
                  std::to_string(r.positive_pairs_cum) + "," + format_double(r.lr) + ",";
  if (r.probe_top1) s += format_double(*r.probe_top1);
  s += "," + std::to_string(r.wall_ms);
  return s;
}

inline MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 7) throw std::invalid_argument("metrics row must have 7 fields: " + line);
  MetricsRow r;
  r.epoch = std::stoi(f[0]);
  r.step = std::stoull(f[1]);
  r.loss = std::stod(f[2]);
  r.positive_pairs_cum = std::stoull(f[3]);
  r.lr = std::stod(f[4]);
  if (!f[5].empty()) r.probe_top1 = std::stod(f[5]);
  r.wall_ms = std::stoll(f[6]);
  return r;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open metrics file " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != kMetricsHeader) throw std::runtime_error("unexpected metrics header in " + path.string());
  std::vector<MetricsRow> rows;
  while (std::getline(is, line))
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  return rows;
}

// ---------------------------------------------------------------------------
// Data plumbing

inline std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec) {
  Dataset train, test;
  if (spec.kind == DatasetKind::Cifar10) {
    std::tie(train, test) = load_cifar10(spec.data_dir);
  } else {
    const auto kind = spec.kind == DatasetKind::Blobs ? SyntheticKind::GaussianBlobs : SyntheticKind::ColoredShapes;
    train = make_synthetic(kind, spec.classes, spec.per_class, spec.resolution, spec.seed);
    test = make_synthetic(kind, spec.classes, spec.test_per_class, spec.resolution, hash_mix(spec.seed, {0x74657374}));
  }
  if (spec.train_limit) train = train.head(spec.train_limit);
  if (spec.test_limit) test = test.head(spec.test_limit);
  return {std::move(train), std::move(test)};
}

/// Fisher-Yates permutation of [0, size) for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t size, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(hash_mix(seed, {0x73687566, epoch}));
  for (std::size_t i = size; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

/// views[v][b]: view v of batch item b. Each item's views depend only on
/// (seed, epoch, step, dataset index), so the thread count cannot change the
/// result.
inline std::vector<std::vector<Image>> augment_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                                                     const MultiViewConfig& cfg, std::uint64_t seed,
                                                     std::uint64_t epoch, std::uint64_t step, int threads) {
  cfg.validate();
  std::vector<std::vector<Image>> per_item(indices.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b)
      per_item[b] = generate_views(ds.images.at(indices[b]), cfg, seed, epoch, step, indices[b]);
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 0)), indices.size());
  if (workers <= 1) {
    work(0, indices.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (indices.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t lo = w * chunk, hi = std::min(indices.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& t : pool) t.join();
  }
  std::vector<std::vector<Image>> views(static_cast<std::size_t>(cfg.k));
  for (auto& v : views) v.reserve(indices.size());
  for (auto& item : per_item)
    for (int v = 0; v < cfg.k; ++v) views[v].push_back(std::move(item[v]));
  return views;
}

/// Un-augmented evaluation input: resized to the large view resolution and
/// normalized with the dataset style's statistics.
inline Image clean_input(const Image& img, const MultiViewConfig& cfg) {
  const int r = cfg.large_resolution;
  Image out = (img.height == r && img.width == r) ? img : resize(img, r, r);
  return cfg.style == DatasetStyle::Cifar ? normalize(out, kCifarMean, kCifarStd)
                                          : normalize(out, kImagenetMean, kImagenetStd);
}

template <typename T>
ParamList<T> detached(const ParamList<T>& params) {
  ParamList<T> out;
  for (const auto& p : params) out.push_back({p.name, p.role, p.value.detach()});
  return out;
}

/// Frozen encoder representations, row-major N × representation_dim.
inline std::vector<float> extract_features(const EncoderConfig& enc, const ParamList<float>& encoder_params,
                                           const Dataset& ds, const MultiViewConfig& views,
                                           std::size_t batch = 128) {
  const auto frozen = detached(encoder_params);
  std::vector<float> out;
  out.reserve(ds.size() * static_cast<std::size_t>(enc.representation_dim));
  for (std::size_t lo = 0; lo < ds.size(); lo += batch) {
    std::vector<Image> imgs;
    for (std::size_t i = lo; i < std::min(ds.size(), lo + batch); ++i) imgs.push_back(clean_input(ds.images[i], views));
    const auto reps = encode(enc, frozen, images_to_tensor<float>(imgs));
    out.insert(out.end(), reps.data().begin(), reps.data().end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe

struct FeatureSet {
  std::vector<float> x;  // rows × dim
  std::vector<int> labels;
  std::size_t dim = 0;
  std::size_t rows() const { return labels.size(); }
};

/// Trains a single linear layer with SGD + cosine decay (no warmup) and
/// returns top-1 accuracy on `test`.
inline double linear_probe_features(FeatureSet train, FeatureSet test, int num_classes, const ProbeConfig& cfg) {
  if (train.rows() == 0 || test.rows() == 0) throw std::invalid_argument("linear_probe: empty feature set");
  if (train.x.size() != train.rows() * train.dim || test.x.size() != test.rows() * test.dim || train.dim != test.dim)
    throw ShapeError("linear_probe: feature matrix shape mismatch");
  if (num_classes < 1) throw std::invalid_argument("linear_probe: num_classes must be positive");
  const std::size_t d = train.dim, c = static_cast<std::size_t>(num_classes);
  if (cfg.standardize) {
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < train.rows(); ++i) m += train.x[i * d + j];
      m /= static_cast<double>(train.rows());
      for (std::size_t i = 0; i < train.rows(); ++i) ss += (train.x[i * d + j] - m) * (train.x[i * d + j] - m);
      const double sd = std::max(std::sqrt(ss / static_cast<double>(train.rows())), 1e-6);
      for (auto* fs : {&train, &test})
        for (std::size_t i = 0; i < fs->rows(); ++i)
          fs->x[i * d + j] = static_cast<float>((fs->x[i * d + j] - m) / sd);
    }
  }
  ParamList<float> params{{"probe.weight", ParamRole::Weight, Tensor::zeros({d, c}, true)},
                          {"probe.bias", ParamRole::Bias, Tensor::zeros({c}, true)}};
  Sgd<float> opt(params, cfg.momentum, cfg.weight_decay);
  const std::size_t n = train.rows();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(steps_per_epoch);
  std::size_t global = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto order = epoch_order(n, cfg.seed, static_cast<std::uint64_t>(e));
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const std::size_t hi = std::min(n, lo + bs), m = hi - lo;
      std::vector<float> xb(m * d);
      std::vector<std::size_t> rows(m), cols(m);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t i = order[lo + r];
        std::copy_n(train.x.begin() + static_cast<std::ptrdiff_t>(i * d), d, xb.begin() + static_cast<std::ptrdiff_t>(r * d));
        rows[r] = r;
        cols[r] = static_cast<std::size_t>(train.labels[i]);
      }
      auto logits = add(matmul(Tensor::from({m, d}, std::move(xb)), params[0].value), params[1].value);
      std::vector<std::uint8_t> mask(m * c, 1);
      auto loss = mean(sub(masked_logsumexp(logits, mask), take(logits, std::move(rows), std::move(cols))));
      Sgd<float>::zero_grad(params);
      backward(loss);
      opt.step(params, cosine_lr(cfg.lr, static_cast<double>(global), total));
      ++global;
    }
  }
  const auto w = params[0].value.data();
  const auto b = params[1].value.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
      double v = b[k];
      for (std::size_t j = 0; j < d; ++j) v += static_cast<double>(test.x[i * d + j]) * w[j * c + k];
      if (v > best_v) best_v = v, best = k;
    }
    correct += static_cast<int>(best) == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

inline FeatureSet encoder_features(const EncoderConfig& enc, const ParamList<float>& encoder_params, const Dataset& ds,
                                   const MultiViewConfig& views) {
  return {extract_features(enc, encoder_params, ds, views), ds.labels, static_cast<std::size_t>(enc.representation_dim)};
}

/// Raw normalized pixels as features (baseline).
inline FeatureSet pixel_features(const Dataset& ds, const MultiViewConfig& views) {
  FeatureSet fs;
  fs.labels = ds.labels;
  for (const auto& img : ds.images) {
    const auto clean = clean_input(img, views);
    fs.x.insert(fs.x.end(), clean.pixels.begin(), clean.pixels.end());
    fs.dim = clean.pixels.size();
  }
  return fs;
}

inline double linear_probe(const Model<float>& model, const MultiViewConfig& views, const Dataset& train,
                           const Dataset& test, const ProbeConfig& cfg) {
  return linear_probe_features(encoder_features(model.encoder, model.encoder_params, train, views),
                               encoder_features(model.encoder, model.encoder_params, test, views),
                               std::max(train.num_classes, test.num_classes), cfg);
}

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
 public:
  Trainer(RunConfig cfg, std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> test)
      : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)) {
    cfg_.validate();
    init_model();
  }

  /// Restores every piece of training state from a checkpoint; the run
  /// configuration is the one stored inside it.
  Trainer(const Checkpoint& ck, std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> test)
      : cfg_(parse_run_config(ck.text("config"))), train_(std::move(train)), test_(std::move(test)) {
    init_model();
    auto params = model_.all_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      load_into(ck, "param/" + params[i].name, params[i].value);
      const auto& v = ck.f32("velocity/" + params[i].name);
      if (v.size() != opt_->velocity()[i].size()) throw CheckpointError("velocity size mismatch for " + params[i].name);
      opt_->velocity()[i].assign(v.begin(), v.end());
    }
    if (ema_)
      for (auto& p : ema_->params) load_into(ck, "ema/" + p.name, p.value);
    if (ck.u64("rng/seed") != cfg_.seed) throw CheckpointError("checkpoint seed does not match its config");
    global_step_ = ck.u64("counter/global_step");
    pairs_cum_ = ck.u64("counter/positive_pairs");
    pixels_ = ck.u64("counter/pixels");
  }

  const RunConfig& config() const { return cfg_; }
  const Model<float>& model() const { return model_; }
  const EmaTarget<float>* ema() const { return ema_ ? &*ema_ : nullptr; }
  const Dataset& train_set() const { return *train_; }
  const Dataset& test_set() const { return *test_; }

  std::size_t steps_per_epoch() const { return train_->size() / static_cast<std::size_t>(cfg_.batch_size); }
  std::uint64_t total_steps() const { return static_cast<std::uint64_t>(cfg_.epochs) * steps_per_epoch(); }
  std::uint64_t global_step() const { return global_step_; }
  bool done() const { return global_step_ >= total_steps(); }
  std::uint64_t positive_pairs_cum() const { return pairs_cum_; }
  std::uint64_t pairs_per_step() const {
    return positive_pair_count(cfg_.strategy, cfg_.views.k, static_cast<std::size_t>(cfg_.batch_size));
  }
  /// Pixels pushed through the encoder so far, in units of one large view.
  double pixels_processed() const {
    const double large = static_cast<double>(cfg_.views.large_resolution) * cfg_.views.large_resolution;
    return static_cast<double>(pixels_) / large;
  }
  /// Fractional epoch at the start of the next step.
  double epoch_progress() const { return static_cast<double>(global_step_) / static_cast<double>(steps_per_epoch()); }

  double current_lr() const {
    if (cfg_.constant_lr_mode) return cfg_.constant_lr;
    return lr_at(cfg_.effective_optim(), epoch_progress());
  }

  /// The K view batches the next step will consume.
  std::vector<std::vector<Image>> next_views() const {
    const std::size_t spe = steps_per_epoch();
    const std::uint64_t epoch = global_step_ / spe;
    const std::size_t in_epoch = global_step_ % spe;
    const auto order = epoch_order(train_->size(), cfg_.seed, epoch);
    const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(in_epoch * bs),
                                 order.begin() + static_cast<std::ptrdiff_t>((in_epoch + 1) * bs));
    return augment_batch(*train_, idx, cfg_.views, cfg_.seed, epoch, global_step_, cfg_.threads);
  }

  MetricsRow step() {
    if (done()) throw std::logic_error("Trainer::step: training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t spe = steps_per_epoch();
    const int epoch = static_cast<int>(global_step_ / spe);
    const double lr = current_lr();
    const auto views = next_views();

    auto params = model_.all_params();
    Sgd<float>::zero_grad(params);
    Tensor loss;
    try {
      loss = forward_loss(views);
    } catch (const DomainError& e) {
      // A collapsed or overflowing network surfaces here (e.g. an all-zero
      // embedding row); treat it like a non-finite loss.
      throw NonFiniteLoss("numerical failure at step " + std::to_string(global_step_ + 1) + ": " + e.what());
    }
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(global_step_ + 1));
    backward(loss);
    opt_->step(params, lr);
    if (ema_ && cfg_.byol.stop_gradient) ema_update(*ema_, model_.backbone(), cfg_.byol.momentum);
    Sgd<float>::zero_grad(params);

    ++global_step_;
    pairs_cum_ += pairs_per_step();
    for (const auto& v : views)
      for (const auto& img : v) pixels_ += static_cast<std::uint64_t>(img.height) * static_cast<std::uint64_t>(img.width);

    MetricsRow row{epoch, global_step_, value, pairs_cum_, lr, std::nullopt, 0};
    if (global_step_ % spe == 0 && cfg_.probe_every > 0 && (epoch + 1) % cfg_.probe_every == 0) row.probe_top1 = probe();
    if (cfg_.threads != 0)
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    return row;
  }

  double probe() const { return linear_probe(model_, cfg_.views, *train_, *test_, cfg_.probe); }

  /// Per-dimension standard deviation of L2-normalized projections of clean
  /// test images, averaged over dimensions.
  double embedding_std() const {
    std::vector<Image> imgs;
    for (const auto& img : test_->images) imgs.push_back(clean_input(img, cfg_.views));
    const auto frozen = detached(model_.backbone());
    const auto z = l2_normalize(embed_with(model_.encoder, model_.projection, frozen, images_to_tensor<float>(imgs)));
    const std::size_t n = z.dim(0), d = z.dim(1);
    const auto data = z.data();
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += data[i * d + j];
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) ss += (data[i * d + j] - m) * (data[i * d + j] - m);
      acc += std::sqrt(ss / static_cast<double>(n));
    }
    return acc / static_cast<double>(d);
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.put_text("config", dump_run_config(cfg_));
    const auto params = model_.all_params();
    std::string names;
    std::vector<std::uint64_t> roles;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const auto data = p.value.data();
      ck.put_f32("param/" + p.name, p.value.shape(), {data.begin(), data.end()});
      ck.put_f32("velocity/" + p.name, p.value.shape(), opt_->velocity()[i]);
      names += p.name + "\n";
      roles.push_back(static_cast<std::uint64_t>(p.role));
    }
    ck.put_text("param_names", names);
    ck.put_u64("param_roles", roles);
    if (ema_)
      for (const auto& p : ema_->params) {
        const auto data = p.value.data();
        ck.put_f32("ema/" + p.name, p.value.shape(), {data.begin(), data.end()});
      }
    ck.put_u64("rng/seed", cfg_.seed);
    ck.put_u64("counter/global_step", global_step_);
    ck.put_u64("counter/epoch", steps_per_epoch() ? global_step_ / steps_per_epoch() : 0);
    ck.put_u64("counter/positive_pairs", pairs_cum_);
    ck.put_u64("counter/pixels", pixels_);
    return ck;
  }

 private:
  void init_model() {
    if (train_->size() < static_cast<std::size_t>(cfg_.batch_size))
      throw ConfigError("training set (" + std::to_string(train_->size()) + " items) is smaller than one batch");
    const bool byol = cfg_.objective == Objective::Byol;
    model_ = Model<float>::create(cfg_.encoder, cfg_.projection, cfg_.seed, byol ? &cfg_.byol.predictor : nullptr);
    if (byol && cfg_.byol.stop_gradient) ema_ = EmaTarget<float>::mirror(model_.backbone(), cfg_.byol.momentum);
    opt_.emplace(model_.all_params(), cfg_.optim.momentum, cfg_.optim.weight_decay);
  }

  static void load_into(const Checkpoint& ck, const std::string& name, Tensor& dst) {
    const auto& block = ck.get(name);
    if (block.dtype != DType::F32 || block.dims != dst.shape())
      throw CheckpointError("block '" + name + "' does not match the model (" + shape_str(block.dims) + " vs " +
                            shape_str(dst.shape()) + ")");
    std::copy(block.f32.begin(), block.f32.end(), dst.mutable_data().begin());
  }

  Tensor forward_loss(const std::vector<std::vector<Image>>& views) const {
    std::vector<Tensor> inputs;
    for (const auto& v : views) inputs.push_back(images_to_tensor<float>(v));
    if (cfg_.objective == Objective::Simclr) {
      std::vector<Tensor> z;
      for (const auto& x : inputs) z.push_back(l2_normalize(model_.embed(x)));
      return kview_loss(z, cfg_.strategy, cfg_.contrastive()).loss;
    }
    std::vector<Tensor> online, target;
    for (const auto& x : inputs) {
      const auto proj = model_.embed(x);
      online.push_back(l2_normalize(predictor(model_.predictor_params, proj)));
      if (cfg_.byol.stop_gradient) {
        target.push_back(l2_normalize(embed_with(model_.encoder, model_.projection, ema_->params, x)));
      } else {
        // Ablation: the online network provides its own targets and gradients
        // flow through both branches.
        target.push_back(l2_normalize(proj));
      }
    }
    return byol_kview_loss(online, target, cfg_.strategy, cfg_.byol.stop_gradient).loss;
  }

  RunConfig cfg_;
  std::shared_ptr<const Dataset> train_;
  std::shared_ptr<const Dataset> test_;
  Model<float> model_;
  std::optional<EmaTarget<float>> ema_;
  std::optional<Sgd<float>> opt_;
  std::uint64_t global_step_ = 0;
  std::uint64_t pairs_cum_ = 0;
  std::uint64_t pixels_ = 0;
};

// ---------------------------------------------------------------------------
// train()

struct TrainOptions {
  std::filesystem::path metrics_path;     // empty: do not write
  std::filesystem::path checkpoint_path;  // empty: do not write
  std::filesystem::path resume_from;      // empty: fresh start
  /// Stop after this many steps in this session (0 = run to the end).
  std::uint64_t max_steps = 0;
};

struct TrainResult {
  std::vector<MetricsRow> rows;  // rows produced in this session
  std::uint64_t global_step = 0;
  std::uint64_t positive_pairs_cum = 0;
  double pixels_processed = 0.0;
  bool finished = false;
};

namespace detail {

// Rewrites the metrics file keeping only rows up to `keep_through` (used on
// resume so that rows written after the checkpoint are replaced).
inline void prepare_metrics(const std::filesystem::path& path, std::optional<std::uint64_t> keep_through) {
  std::vector<MetricsRow> kept;
  if (keep_through && std::filesystem::exists(path))
    for (const auto& r : read_metrics_csv(path))
      if (r.step <= *keep_through) kept.push_back(r);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write metrics file " + path.string());
  os << kMetricsHeader << "\n";
  for (const auto& r : kept) os << format_metrics_row(r) << "\n";
}

inline void append_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.empty() || rows.empty()) return;
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot append to metrics file " + path.string());
  for (const auto& r : rows) os << format_metrics_row(r) << "\n";
  os.flush();
}

}  // namespace detail

inline TrainResult run_trainer(Trainer& trainer, const TrainOptions& opt, bool resumed) {
  if (!opt.metrics_path.empty())
    detail::prepare_metrics(opt.metrics_path, resumed ? std::optional(trainer.global_step()) : std::nullopt);
  TrainResult result;
  std::vector<MetricsRow> pending;
  auto flush = [&] {
    detail::append_metrics(opt.metrics_path, pending);
    result.rows.insert(result.rows.end(), pending.begin(), pending.end());
    pending.clear();
  };
  auto save = [&] {
    if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, trainer.checkpoint());
  };
  std::uint64_t session_steps = 0;
  while (!trainer.done() && (opt.max_steps == 0 || session_steps < opt.max_steps)) {
    try {
      pending.push_back(trainer.step());
    } catch (const NonFiniteLoss&) {
      flush();
      save();
      throw;
    } catch (const NonFiniteGradient&) {
      flush();
      save();
      throw;
    }
    ++session_steps;
    if (trainer.global_step() % trainer.steps_per_epoch() == 0) flush();
  }
  flush();
  save();
  result.global_step = trainer.global_step();
  result.positive_pairs_cum = trainer.positive_pairs_cum();
  result.pixels_processed = trainer.pixels_processed();
  result.finished = trainer.done();
  return result;
}

inline TrainResult train(const RunConfig& cfg, std::shared_ptr<const Dataset> train_set,
                         std::shared_ptr<const Dataset> test_set, const TrainOptions& opt = {}) {
  if (!opt.resume_from.empty()) {
    Trainer trainer(load_checkpoint(opt.resume_from), std::move(train_set), std::move(test_set));
    return run_trainer(trainer, opt, true);
  }
  Trainer trainer(cfg, std::move(train_set), std::move(test_set));
  return run_trainer(trainer, opt, false);
}

/// Loads the configured datasets and trains. When resuming, the
/// configuration stored in the checkpoint takes precedence.
inline TrainResult train(const RunConfig& cfg, const TrainOptions& opt = {}) {
  const RunConfig& effective =
      opt.resume_from.empty() ? cfg : parse_run_config(load_checkpoint(opt.resume_from).text("config"));
  auto [tr, te] = load_datasets(effective.dataset);
  return train(effective, std::make_shared<const Dataset>(std::move(tr)), std::make_shared<const Dataset>(std::move(te)),
               opt);
}

/// Online model stored in a checkpoint.
inline Model<float> model_from_checkpoint(const Checkpoint& ck) {
  const auto cfg = parse_run_config(ck.text("config"));
  const bool byol = cfg.objective == Objective::Byol;
  auto model = Model<float>::create(cfg.encoder, cfg.projection, cfg.seed, byol ? &cfg.byol.predictor : nullptr);
  for (auto& p : model.all_params()) {
    const auto& block = ck.get("param/" + p.name);
    if (block.dtype != DType::F32 || block.dims != p.value.shape())
      throw CheckpointError("block 'param/" + p.name + "' does not match the model");
    std::copy(block.f32.begin(), block.f32.end(), p.value.mutable_data().begin());
  }
  return model;
}

/// Probe of the encoder stored in a checkpoint.
inline double linear_probe(const Checkpoint& ck, const Dataset& train_set, const Dataset& test_set,
                           const ProbeConfig& cfg) {
  const auto run = parse_run_config(ck.text("config"));
  return linear_probe(model_from_checkpoint(ck), run.views, train_set, test_set, cfg);
}

// ---------------------------------------------------------------------------
// Speed experiment

inline constexpr const char* kSpeedHeader = "k,milestone_pairs,positive_pairs_cum,step,epochs,probe_top1";

struct SpeedPoint {
  int k = 0;
  std::uint64_t milestone_pairs = 0;
  std::uint64_t positive_pairs_cum = 0;
  std::uint64_t step = 0;
  double epochs = 0.0;
  double probe_top1 = 0.0;
};

/// For each k trains with full-resolution views until budget_pairs positive
/// pairs have been processed, probing at every multiple of milestone_pairs
/// (and once before training).
inline std::vector<SpeedPoint> speed_experiment(const std::vector<int>& ks, std::uint64_t budget_pairs,
                                                const RunConfig& tmpl, std::uint64_t milestone_pairs,
                                                std::shared_ptr<const Dataset> train_set,
                                                std::shared_ptr<const Dataset> test_set) {
  if (!tmpl.constant_lr_mode) throw ConfigError("speed_experiment requires constant_lr_mode");
  if (milestone_pairs == 0) throw ConfigError("milestone_pairs must be positive");
  std::vector<SpeedPoint> out;
  for (int k : ks) {
    RunConfig cfg = tmpl;
    cfg.views = uniform_config(k, tmpl.views.large_resolution, tmpl.views.style);
    cfg.probe_every = 0;
    const auto per_step = positive_pair_count(cfg.strategy, k, static_cast<std::size_t>(cfg.batch_size));
    const std::uint64_t steps = (budget_pairs + per_step - 1) / per_step;
    const std::uint64_t spe = train_set->size() / static_cast<std::size_t>(cfg.batch_size);
    if (spe == 0) throw ConfigError("training set is smaller than one batch");
    cfg.epochs = static_cast<int>((steps + spe - 1) / spe);
    Trainer trainer(cfg, train_set, test_set);
    out.push_back({k, 0, 0, 0, 0.0, trainer.probe()});
    std::uint64_t next = milestone_pairs;
    while (trainer.positive_pairs_cum() < budget_pairs) {
      trainer.step();
      if (trainer.positive_pairs_cum() >= next) {
        out.push_back({k, next, trainer.positive_pairs_cum(), trainer.global_step(), trainer.epoch_progress(),
                       trainer.probe()});
        while (next <= trainer.positive_pairs_cum()) next += milestone_pairs;
      }
    }
  }
  return out;
}

inline std::string speed_csv(const std::vector<SpeedPoint>& points) {
  std::string s = std::string(kSpeedHeader) + "\n";
  for (const auto& p : points)
    s += std::to_string(p.k) + "," + std::to_string(p.milestone_pairs) + "," + std::to_string(p.positive_pairs_cum) +
         "," + std::to_string(p.step) + "," + format_double(p.epochs) + "," + format_double(p.probe_top1) + "\n";
  return s;
}

}  // namespace ecpp
