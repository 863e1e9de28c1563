#pragma once

// SGD with momentum, coupled weight decay on non-bias parameters, linear LR
// scaling and a warmup + cosine schedule.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpp/models.hpp"

namespace ecpp {

struct OptimConfig {
  double base_lr = 0.4;
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int warmup_epochs = 10;
  int total_epochs = 100;

  /// base_lr × batch_size / 256
  double effective_lr() const { return base_lr * batch_size / 256.0; }

  bool operator==(const OptimConfig&) const = default;
};

/// Biases are exempt from weight decay.
inline bool decay_exempt(ParamRole role) { return role == ParamRole::Bias; }

/// Learning rate at fractional epoch t: linear warmup to effective_lr, then
/// half-cosine to zero at total_epochs.
inline double lr_at(const OptimConfig& cfg, double t) {
  if (cfg.total_epochs <= cfg.warmup_epochs) throw std::invalid_argument("lr_at: total_epochs must exceed warmup_epochs");
  if (!(t >= 0.0 && t <= cfg.total_epochs)) throw std::invalid_argument("lr_at: t outside [0, total_epochs]");
  const double peak = cfg.effective_lr();
  if (t < cfg.warmup_epochs) return peak * t / cfg.warmup_epochs;
  const double progress = (t - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Cosine decay without warmup over [0, total].
inline double cosine_lr(double peak, double t, double total) {
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t / total, 1.0)));
}

struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// v ← momentum·v + grad + wd·param; param ← param − lr·v.
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double momentum,
              double weight_decay, double lr) {
  if (param.size() != velocity.size() || (!grad.empty() && grad.size() != param.size()))
    throw ShapeError("sgd_step: misaligned buffers");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
    const double v = momentum * velocity[i] + g + weight_decay * param[i];
    velocity[i] = static_cast<T>(v);
    param[i] = static_cast<T>(param[i] - lr * v);
  }
}

template <typename T>
class Sgd {
 public:
  Sgd(const ParamList<T>& params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params) velocity_.emplace_back(p.value.numel(), T(0));
  }

  /// Applies one update. Any non-finite gradient aborts before touching
  /// parameters.
  void step(ParamList<T>& params, double lr) {
    if (params.size() != velocity_.size()) throw ShapeError("Sgd::step: parameter count changed");
    for (const auto& p : params)
      for (T g : p.value.grad())
        if (!std::isfinite(static_cast<double>(g))) throw NonFiniteGradient("non-finite gradient in " + p.name);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const double wd = decay_exempt(p.role) ? 0.0 : weight_decay_;
      sgd_step<T>(p.value.mutable_data(), p.value.grad(), velocity_[i], momentum_, wd, lr);
    }
  }

  static void zero_grad(ParamList<T>& params) {
    for (auto& p : params) p.value.zero_grad();
  }

  std::vector<std::vector<T>>& velocity() { return velocity_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace ecpp
