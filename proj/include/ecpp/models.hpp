#pragma once

// Encoder f, projection head g, BYOL predictor q and the EMA target mirror.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecpp/rng.hpp"
#include "ecpp/tensor.hpp"

namespace ecpp {

enum class ParamRole { Weight, Bias };

template <typename T>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::Weight;
  BasicTensor<T> value;
};

template <typename T>
using ParamList = std::vector<Parameter<T>>;

enum class EncoderKind { SmallCnn, Mlp };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::SmallCnn;
  int input_resolution = 32;
  std::vector<int> widths{32, 64, 128, 256};
  int representation_dim = 256;
  /// Mlp only: inputs are average-pooled to grid × grid before the first layer.
  int mlp_grid = 8;

  void validate() const {
    if (representation_dim <= 0) throw std::invalid_argument("encoder: representation_dim must be positive");
    if (input_resolution < 8) throw std::invalid_argument("encoder: input_resolution must be at least 8");
    for (int w : widths)
      if (w <= 0) throw std::invalid_argument("encoder: widths must be positive");
    if (kind == EncoderKind::SmallCnn) {
      if (widths.empty()) throw std::invalid_argument("encoder: SmallCnn needs at least one block");
      if (widths.back() != representation_dim)
        throw std::invalid_argument("encoder: SmallCnn representation_dim must equal the last width");
    } else if (mlp_grid <= 0) {
      throw std::invalid_argument("encoder: mlp_grid must be positive");
    }
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct ProjectionConfig {
  int depth = 2;
  int hidden_dim = 256;
  int output_dim = 256;

  void validate() const {
    if (depth != 2 && depth != 3) throw std::invalid_argument("projection: depth must be 2 or 3");
    if (hidden_dim <= 0 || output_dim <= 0) throw std::invalid_argument("projection: dims must be positive");
  }

  bool operator==(const ProjectionConfig&) const = default;
};

struct PredictorConfig {
  int hidden_dim = 512;
  int output_dim = 256;

  bool operator==(const PredictorConfig&) const = default;
};

inline constexpr double kDefaultEmaMomentum = 0.99;

namespace detail {

// Weights ~ U(±sqrt(6 / fan_in)), biases ~ U(±1 / sqrt(fan_in)).
template <typename T>
void push_layer(ParamList<T>& params, const std::string& prefix, Shape weight_shape, std::size_t fan_in,
                std::size_t bias_size, CounterRng& rng) {
  const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
  const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> w(shape_numel(weight_shape));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-wb, wb));
  std::vector<T> b(bias_size);
  for (auto& v : b) v = static_cast<T>(rng.uniform(-bb, bb));
  params.push_back({prefix + ".weight", ParamRole::Weight, BasicTensor<T>::from(std::move(weight_shape), std::move(w), true)});
  params.push_back({prefix + ".bias", ParamRole::Bias, BasicTensor<T>::from({bias_size}, std::move(b), true)});
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const Parameter<T>& w, const Parameter<T>& b) {
  return add(matmul(x, w.value), b.value);
}

template <typename T>
void check_param_count(const ParamList<T>& params, std::size_t want, const char* what) {
  if (params.size() != want)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(want) + " parameter tensors, got " +
                     std::to_string(params.size()));
}

}  // namespace detail

template <typename T>
ParamList<T> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(hash_mix(seed, {0x656e63}));
  ParamList<T> params;
  if (cfg.kind == EncoderKind::SmallCnn) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      const auto out = static_cast<std::size_t>(cfg.widths[i]);
      detail::push_layer(params, "encoder.conv" + std::to_string(i), {out, in, 3, 3}, in * 9, out, rng);
      in = out;
    }
  } else {
    std::size_t in = 3 * static_cast<std::size_t>(cfg.mlp_grid) * cfg.mlp_grid;
    std::size_t layer = 0;
    for (int w : cfg.widths) {
      detail::push_layer(params, "encoder.fc" + std::to_string(layer++), {in, static_cast<std::size_t>(w)}, in,
                         static_cast<std::size_t>(w), rng);
      in = static_cast<std::size_t>(w);
    }
    const auto rep = static_cast<std::size_t>(cfg.representation_dim);
    detail::push_layer(params, "encoder.fc" + std::to_string(layer), {in, rep}, in, rep, rng);
  }
  return params;
}

/// images: batch × 3 × h × w (any h, w ≥ 1) → batch × representation_dim.
template <typename T>
BasicTensor<T> encode(const EncoderConfig& cfg, const ParamList<T>& params, const BasicTensor<T>& images) {
  if (images.rank() != 4) throw ShapeError("encode: expected batch×c×h×w, got " + shape_str(images.shape()));
  if (images.dim(1) != 3) throw ShapeError("encode: expected 3 channels, got " + std::to_string(images.dim(1)));
  const std::size_t batch = images.dim(0);
  if (cfg.kind == EncoderKind::SmallCnn) {
    detail::check_param_count(params, 2 * cfg.widths.size(), "encode");
    BasicTensor<T> x = images;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      x = relu(conv2d(x, params[2 * i].value, params[2 * i + 1].value, 1));
      if (i + 1 < cfg.widths.size()) x = max_pool2x2(x);
    }
    x = adaptive_avg_pool2d(x, 1, 1);
    return reshape(x, {batch, static_cast<std::size_t>(cfg.representation_dim)});
  }
  detail::check_param_count(params, 2 * (cfg.widths.size() + 1), "encode");
  const auto g = static_cast<std::size_t>(cfg.mlp_grid);
  BasicTensor<T> x = reshape(adaptive_avg_pool2d(images, g, g), {batch, 3 * g * g});
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) x = relu(detail::linear(x, params[2 * i], params[2 * i + 1]));
  const std::size_t last = 2 * cfg.widths.size();
  return detail::linear(x, params[last], params[last + 1]);
}

template <typename T>
ParamList<T> init_projector(const ProjectionConfig& cfg, int input_dim, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng(hash_mix(seed, {0x70726f6a}));
  ParamList<T> params;
  std::size_t in = static_cast<std::size_t>(input_dim);
  for (int layer = 0; layer < cfg.depth; ++layer) {
    const auto out = static_cast<std::size_t>(layer + 1 == cfg.depth ? cfg.output_dim : cfg.hidden_dim);
    detail::push_layer(params, "projector.fc" + std::to_string(layer), {in, out}, in, out, rng);
    in = out;
  }
  return params;
}

/// Rectified MLP head; the output is not normalized here.
template <typename T>
BasicTensor<T> project(const ProjectionConfig& cfg, const ParamList<T>& params, const BasicTensor<T>& reps) {
  detail::check_param_count(params, 2 * static_cast<std::size_t>(cfg.depth), "project");
  if (reps.rank() != 2 || reps.dim(1) != params[0].value.dim(0))
    throw ShapeError("project: representation shape " + shape_str(reps.shape()) + " does not match the head");
  BasicTensor<T> x = reps;
  for (int layer = 0; layer < cfg.depth; ++layer) {
    x = detail::linear(x, params[2 * layer], params[2 * layer + 1]);
    if (layer + 1 < cfg.depth) x = relu(x);
  }
  return x;
}

template <typename T>
ParamList<T> init_predictor(const PredictorConfig& cfg, int input_dim, std::uint64_t seed) {
  CounterRng rng(hash_mix(seed, {0x70726564}));
  ParamList<T> params;
  const auto in = static_cast<std::size_t>(input_dim);
  const auto hid = static_cast<std::size_t>(cfg.hidden_dim);
  const auto out = static_cast<std::size_t>(cfg.output_dim);
  detail::push_layer(params, "predictor.fc0", {in, hid}, in, hid, rng);
  detail::push_layer(params, "predictor.fc1", {hid, out}, hid, out, rng);
  return params;
}

template <typename T>
BasicTensor<T> predictor(const ParamList<T>& params, const BasicTensor<T>& proj) {
  detail::check_param_count(params, 4, "predictor");
  if (proj.rank() != 2 || proj.dim(1) != params[0].value.dim(0)) throw ShapeError("predictor: input shape mismatch");
  return detail::linear(relu(detail::linear(proj, params[0], params[1])), params[2], params[3]);
}

/// Slow-moving copy of the online encoder + projector.
template <typename T>
struct EmaTarget {
  ParamList<T> params;
  double momentum = kDefaultEmaMomentum;

  static EmaTarget mirror(const ParamList<T>& online, double momentum) {
    EmaTarget t{{}, momentum};
    for (const auto& p : online)
      t.params.push_back({p.name, p.role, BasicTensor<T>::from(p.value.shape(), {p.value.data().begin(), p.value.data().end()}, false)});
    return t;
  }
};

/// target ← m·target + (1-m)·online, element-wise.
template <typename T>
void ema_update(EmaTarget<T>& target, const ParamList<T>& online, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("ema_update: momentum must lie in [0, 1)");
  if (target.params.size() != online.size()) throw ShapeError("ema_update: parameter count mismatch");
  const T m = static_cast<T>(momentum);
  for (std::size_t i = 0; i < online.size(); ++i) {
    auto dst = target.params[i].value.mutable_data();
    const auto src = online[i].value.data();
    if (dst.size() != src.size()) throw ShapeError("ema_update: shape mismatch for " + online[i].name);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (T(1) - m) * src[j];
  }
  target.momentum = momentum;
}

/// Online network: encoder, projector and (for BYOL) predictor parameters.
template <typename T>
struct Model {
  EncoderConfig encoder;
  ProjectionConfig projection;
  ParamList<T> encoder_params;
  ParamList<T> projector_params;
  ParamList<T> predictor_params;

  static Model create(const EncoderConfig& enc, const ProjectionConfig& proj, std::uint64_t seed,
                      const PredictorConfig* pred = nullptr) {
    Model m{enc, proj, init_encoder<T>(enc, seed), init_projector<T>(proj, enc.representation_dim, seed), {}};
    if (pred) m.predictor_params = init_predictor<T>(*pred, proj.output_dim, seed);
    return m;
  }

  BasicTensor<T> represent(const BasicTensor<T>& images) const { return encode(encoder, encoder_params, images); }
  BasicTensor<T> embed(const BasicTensor<T>& images) const { return project(projection, projector_params, represent(images)); }

  /// Encoder + projector parameters (the EMA-mirrored set).
  ParamList<T> backbone() const {
    ParamList<T> out = encoder_params;
    out.insert(out.end(), projector_params.begin(), projector_params.end());
    return out;
  }

  ParamList<T> all_params() const {
    ParamList<T> out = backbone();
    out.insert(out.end(), predictor_params.begin(), predictor_params.end());
    return out;
  }
};

inline std::size_t init_encoder_count(const EncoderConfig& cfg) {
  return cfg.kind == EncoderKind::SmallCnn ? 2 * cfg.widths.size() : 2 * (cfg.widths.size() + 1);
}

/// Encoder + projector forward with a mirrored parameter list.
template <typename T>
BasicTensor<T> embed_with(const EncoderConfig& enc, const ProjectionConfig& proj, const ParamList<T>& backbone,
                          const BasicTensor<T>& images) {
  const std::size_t ne = init_encoder_count(enc);
  ParamList<T> e(backbone.begin(), backbone.begin() + static_cast<std::ptrdiff_t>(ne));
  ParamList<T> p(backbone.begin() + static_cast<std::ptrdiff_t>(ne), backbone.end());
  return project(proj, p, encode(enc, e, images));
}

}  // namespace ecpp
