#pragma once

// Seedable image augmentations and the fixed transform stacks used for
// multi-view contrastive pre-training.
//
// Every stochastic op of a pipeline draws from its own counter-based stream
// keyed by (seed, op position), so a probabilistic skip in one op never
// shifts the draws seen by the ops after it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "ecpp/image.hpp"
#include "ecpp/rng.hpp"
#include "ecpp/tensor.hpp"

namespace ecpp {

using Rgb = std::array<float, 3>;

inline constexpr Rgb kImagenetMean{0.485f, 0.456f, 0.406f};
inline constexpr Rgb kImagenetStd{0.229f, 0.224f, 0.225f};
inline constexpr Rgb kCifarMean{0.4914f, 0.4822f, 0.4465f};
inline constexpr Rgb kCifarStd{0.2023f, 0.1994f, 0.2010f};

inline constexpr std::array<float, 3> kLuma{0.299f, 0.587f, 0.114f};

struct CropOp {
  int out_size = 224;
  double scale_lo = 0.2;
  double scale_hi = 1.0;
  double ratio_lo = 3.0 / 4.0;
  double ratio_hi = 4.0 / 3.0;
};

struct FlipOp {
  double p = 0.5;
};

struct JitterOp {
  double brightness = 0.8;
  double contrast = 0.8;
  double saturation = 0.8;
  double hue = 0.2;
  double p = 0.8;
};

struct GrayscaleOp {
  double p = 0.2;
};

struct BlurOp {
  int kernel = 23;
  double sigma_lo = 0.1;
  double sigma_hi = 2.0;
  double p = 0.5;
};

struct SolarizeOp {
  double p = 0.1;
  float threshold = 0.5f;
};

struct NormalizeOp {
  Rgb mean = kImagenetMean;
  Rgb std = kImagenetStd;
};

using AugmentOp = std::variant<CropOp, FlipOp, JitterOp, GrayscaleOp, BlurOp, SolarizeOp, NormalizeOp>;

enum class AugmentKind { RandomResizedCrop, HorizontalFlip, ColorJitter, Grayscale, GaussianBlur, Solarize, Normalize };

inline AugmentKind kind_of(const AugmentOp& op) { return static_cast<AugmentKind>(op.index()); }

enum class PipelineName { SimclrFullLarge, SimclrGlobalSmall, CropOnlyGlobalSmall, SimclrCifar, CropOnlyCifar };

inline std::string_view to_string(PipelineName n) {
  switch (n) {
    case PipelineName::SimclrFullLarge: return "simclr_full_large";
    case PipelineName::SimclrGlobalSmall: return "simclr_global_small";
    case PipelineName::CropOnlyGlobalSmall: return "crop_only_global_small";
    case PipelineName::SimclrCifar: return "simclr_cifar";
    case PipelineName::CropOnlyCifar: return "crop_only_cifar";
  }
  return "?";
}

struct AugmentPipeline {
  PipelineName name = PipelineName::SimclrFullLarge;
  std::vector<AugmentOp> ops;

  /// Target resolution, or 0 when the pipeline keeps the input size.
  int output_size() const {
    for (const auto& op : ops)
      if (const auto* c = std::get_if<CropOp>(&op)) return c->out_size;
    return 0;
  }

  void validate() const {
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + ": probability outside [0,1]");
    };
    for (std::size_t i = 0; i < ops.size(); ++i) {
      std::visit(
          [&](const auto& op) {
            using Op = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<Op, CropOp>) {
              if (op.out_size <= 0) throw std::invalid_argument("crop: out_size must be positive");
              if (!(op.scale_lo > 0.0 && op.scale_lo <= op.scale_hi && op.scale_hi <= 1.0))
                throw std::invalid_argument("crop: scale range must satisfy 0 < lo <= hi <= 1");
              if (!(op.ratio_lo > 0.0 && op.ratio_lo <= op.ratio_hi))
                throw std::invalid_argument("crop: invalid aspect-ratio range");
            } else if constexpr (std::is_same_v<Op, NormalizeOp>) {
              if (i + 1 != ops.size()) throw std::invalid_argument("normalize must be the last op");
              for (float s : op.std)
                if (s == 0.0f) throw DomainError("normalize: zero std");
            } else if constexpr (std::is_same_v<Op, BlurOp>) {
              prob(op.p, "blur");
              if (op.kernel <= 0 || !(op.sigma_lo > 0.0 && op.sigma_lo <= op.sigma_hi))
                throw std::invalid_argument("blur: invalid kernel or sigma range");
            } else {
              prob(op.p, "augment op");
            }
          },
          ops[i]);
    }
  }
};

inline AugmentPipeline make_pipeline(PipelineName name) {
  const JitterOp strong{0.8, 0.8, 0.8, 0.2, 0.8};
  const JitterOp mild{0.4, 0.4, 0.4, 0.1, 0.8};
  const NormalizeOp imagenet{kImagenetMean, kImagenetStd};
  const NormalizeOp cifar{kCifarMean, kCifarStd};
  switch (name) {
    case PipelineName::SimclrFullLarge:
      return {name, {CropOp{224, 0.2, 1.0}, FlipOp{0.5}, strong, GrayscaleOp{0.2}, BlurOp{23, 0.1, 2.0, 0.5},
                     SolarizeOp{0.1}, imagenet}};
    case PipelineName::SimclrGlobalSmall:
      return {name, {CropOp{96, 0.2, 1.0}, FlipOp{0.5}, strong, GrayscaleOp{0.2}, BlurOp{23, 0.1, 2.0, 0.5},
                     SolarizeOp{0.1}, imagenet}};
    case PipelineName::CropOnlyGlobalSmall:
      return {name, {CropOp{96, 0.2, 1.0}, imagenet}};
    case PipelineName::SimclrCifar:
      return {name, {CropOp{32, 0.2, 1.0}, FlipOp{0.5}, mild, GrayscaleOp{0.2}, cifar}};
    case PipelineName::CropOnlyCifar:
      return {name, {CropOp{32, 0.2, 1.0}, cifar}};
  }
  throw std::invalid_argument("unknown pipeline");
}

/// Same stack with the crop resolution and scale range replaced.
inline AugmentPipeline make_pipeline(PipelineName name, int out_size, double scale_lo = 0.2, double scale_hi = 1.0) {
  auto p = make_pipeline(name);
  for (auto& op : p.ops)
    if (auto* c = std::get_if<CropOp>(&op)) {
      c->out_size = out_size;
      c->scale_lo = scale_lo;
      c->scale_hi = scale_hi;
    }
  return p;
}

// ---------------------------------------------------------------------------
// Deterministic primitives

/// Bilinear resample of the window (top, left, h, w) to out_h × out_w with
/// half-pixel centres; samples clamp to the window.
inline Image crop_resize(const Image& img, int top, int left, int h, int w, int out_h, int out_w) {
  if (h <= 0 || w <= 0 || top < 0 || left < 0 || top + h > img.height || left + w > img.width)
    throw std::invalid_argument("crop_resize: window outside image");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (int x = 0; x < out_w; ++x) {
    const double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
    x0[x] = static_cast<int>(std::floor(src));
    x1[x] = std::min(x0[x] + 1, w - 1);
    fx[x] = static_cast<float>(src - x0[x]);
  }
  for (int y = 0; y < out_h; ++y) {
    const double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(src));
    const int y1 = std::min(y0 + 1, h - 1);
    const float fy = static_cast<float>(src - y0);
    for (int c = 0; c < 3; ++c)
      for (int x = 0; x < out_w; ++x) {
        const float a = img.at(c, top + y0, left + x0[x]), b = img.at(c, top + y0, left + x1[x]);
        const float d = img.at(c, top + y1, left + x0[x]), e = img.at(c, top + y1, left + x1[x]);
        const float upper = a + (b - a) * fx[x];
        const float lower = d + (e - d) * fx[x];
        out.at(c, y, x) = upper + (lower - upper) * fy;
      }
  }
  return out;
}

inline Image resize(const Image& img, int out_h, int out_w) {
  return crop_resize(img, 0, 0, img.height, img.width, out_h, out_w);
}

struct CropWindow {
  int top = 0, left = 0, height = 0, width = 0;
  bool fallback = false;
};

/// Samples a window with area fraction ~ U(scale) and log-uniform aspect
/// ratio. Ten attempts of four draws each; afterwards the largest centred
/// window whose aspect ratio lies in the range.
inline CropWindow sample_crop_window(int height, int width, double scale_lo, double scale_hi, double ratio_lo,
                                     double ratio_hi, CounterRng rng) {
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(ratio_lo), log_hi = std::log(ratio_hi);
  for (int attempt = 0; attempt < 10; ++attempt) {
    CounterRng draws(rng.key(), static_cast<std::uint64_t>(attempt) * 4);
    const double target = area * draws.uniform(scale_lo, scale_hi);
    const double aspect = std::exp(draws.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    const double u_top = draws.uniform(), u_left = draws.uniform();
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const int top = std::min(static_cast<int>(u_top * (height - h + 1)), height - h);
      const int left = std::min(static_cast<int>(u_left * (width - w + 1)), width - w);
      return {top, left, h, w, false};
    }
  }
  const double in_ratio = static_cast<double>(width) / height;
  int w = width, h = height;
  if (in_ratio < ratio_lo) {
    h = std::max(1, static_cast<int>(std::lround(w / ratio_lo)));
  } else if (in_ratio > ratio_hi) {
    w = std::max(1, static_cast<int>(std::lround(h * ratio_hi)));
  }
  h = std::min(h, height);
  w = std::min(w, width);
  return {(height - h) / 2, (width - w) / 2, h, w, true};
}

inline Image random_resized_crop(const Image& img, int out_size, double scale_lo, double scale_hi,
                                 std::uint64_t seed, double ratio_lo = 3.0 / 4.0, double ratio_hi = 4.0 / 3.0) {
  if (out_size <= 0) throw std::invalid_argument("random_resized_crop: out_size must be positive");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0))
    throw std::invalid_argument("random_resized_crop: scale must lie in (0, 1]");
  const auto win = sample_crop_window(img.height, img.width, scale_lo, scale_hi, ratio_lo, ratio_hi, CounterRng(seed));
  return crop_resize(img, win.top, win.left, win.height, win.width, out_size, out_size);
}

inline Image horizontal_flip(const Image& img) {
  Image out = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

inline float luma(const Image& img, int y, int x) {
  return kLuma[0] * img.at(0, y, x) + kLuma[1] * img.at(1, y, x) + kLuma[2] * img.at(2, y, x);
}

inline Image grayscale(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = g;
    }
  return out;
}

namespace detail {
inline void clamp01(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

// Per-pixel blend img·f + other·(1-f), clamped.
inline Image blend(const Image& img, const Image& other, float f) {
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = f * img.pixels[i] + (1.0f - f) * other.pixels[i];
  clamp01(out);
  return out;
}
}  // namespace detail

inline Image adjust_brightness(const Image& img, float factor) {
  return detail::blend(img, Image(img.height, img.width, 0.0f), factor);
}

inline Image adjust_contrast(const Image& img, float factor) {
  double acc = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) acc += luma(img, y, x);
  const float m = static_cast<float>(acc / static_cast<double>(img.plane()));
  return detail::blend(img, Image(img.height, img.width, m), factor);
}

inline Image adjust_saturation(const Image& img, float factor) { return detail::blend(img, grayscale(img), factor); }

/// Rotates hue by `shift` turns (shift in [-0.5, 0.5]).
inline Image adjust_hue(const Image& img, float shift) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const float delta = mx - mn;
      float h = 0.0f;
      if (delta > 0.0f) {
        if (mx == r) {
          h = std::fmod((g - b) / delta, 6.0f);
        } else if (mx == g) {
          h = (b - r) / delta + 2.0f;
        } else {
          h = (r - g) / delta + 4.0f;
        }
        h /= 6.0f;
      }
      const float s = mx > 0.0f ? delta / mx : 0.0f;
      const float v = mx;
      h = h + shift;
      h -= std::floor(h);
      const float hh = h * 6.0f;
      const int sector = static_cast<int>(std::floor(hh)) % 6;
      const float f = hh - std::floor(hh);
      const float p = v * (1.0f - s), q = v * (1.0f - s * f), t = v * (1.0f - s * (1.0f - f));
      float rgb[3];
      switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
      }
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(rgb[c], 0.0f, 1.0f);
    }
  return out;
}

/// Brightness, contrast, saturation and hue with factors drawn from the
/// strengths, applied in a random order. Always consumes seven draws.
inline Image color_jitter(const Image& img, double brightness, double contrast, double saturation, double hue,
                          std::uint64_t seed) {
  CounterRng rng(seed);
  const float fb = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - brightness), 1.0 + brightness));
  const float fc = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - contrast), 1.0 + contrast));
  const float fs = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - saturation), 1.0 + saturation));
  const float fh = static_cast<float>(rng.uniform(-hue, hue));
  std::array<int, 4> order{0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.randint(0, i)]);
  Image out = img;
  for (int which : order) {
    switch (which) {
      case 0: if (brightness > 0.0) out = adjust_brightness(out, fb); break;
      case 1: if (contrast > 0.0) out = adjust_contrast(out, fc); break;
      case 2: if (saturation > 0.0) out = adjust_saturation(out, fs); break;
      default: if (hue > 0.0) out = adjust_hue(out, fh); break;
    }
  }
  return out;
}

/// Kernel size clipped to the image and forced odd.
inline int effective_blur_kernel(int kernel, int height, int width) {
  int k = std::min({kernel, height, width});
  if (k % 2 == 0) --k;
  return std::max(k, 1);
}

/// Separable Gaussian blur with reflect padding.
inline Image gaussian_blur(const Image& img, int kernel, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_blur: sigma must be positive");
  const int k = effective_blur_kernel(kernel, img.height, img.width);
  const int r = k / 2;
  std::vector<float> taps(k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    taps[i] = static_cast<float>(std::exp(-d * d / (2.0 * sigma * sigma)));
    total += taps[i];
  }
  for (float& t : taps) t = static_cast<float>(t / total);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  Image tmp(img.height, img.width), out(img.height, img.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int i = 0; i < k; ++i) acc += taps[i] * img.at(c, y, reflect(x + i - r, img.width));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int i = 0; i < k; ++i) acc += taps[i] * tmp.at(c, reflect(y + i - r, img.height), x);
        out.at(c, y, x) = std::clamp(acc, 0.0f, 1.0f);
      }
  }
  return out;
}

/// Inverts every pixel value at or above the threshold.
inline Image solarize(const Image& img, float threshold) {
  Image out = img;
  for (float& v : out.pixels)
    if (v >= threshold) v = 1.0f - v;
  return out;
}

inline Image normalize(const Image& img, const Rgb& mean, const Rgb& std) {
  for (float s : std)
    if (s == 0.0f) throw DomainError("normalize: zero std");
  Image out = img;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < img.plane(); ++i) {
      float& v = out.pixels[c * img.plane() + i];
      v = (v - mean[c]) / std[c];
    }
  return out;
}

// ---------------------------------------------------------------------------

/// Runs the pipeline. Op i draws from stream hash(seed, i): draw 0 is the
/// apply/skip coin, the op's own randomness uses the forked child stream.
inline Image apply(const AugmentPipeline& pipeline, const Image& img, std::uint64_t seed) {
  Image cur = img;
  for (std::size_t i = 0; i < pipeline.ops.size(); ++i) {
    CounterRng stream(hash_mix(seed, {i}));
    const double coin = stream.uniform();
    const std::uint64_t op_seed = stream.fork(1).key();
    std::visit(
        [&](const auto& op) {
          using Op = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<Op, CropOp>) {
            cur = random_resized_crop(cur, op.out_size, op.scale_lo, op.scale_hi, op_seed, op.ratio_lo, op.ratio_hi);
          } else if constexpr (std::is_same_v<Op, FlipOp>) {
            if (coin < op.p) cur = horizontal_flip(cur);
          } else if constexpr (std::is_same_v<Op, JitterOp>) {
            if (coin < op.p) cur = color_jitter(cur, op.brightness, op.contrast, op.saturation, op.hue, op_seed);
          } else if constexpr (std::is_same_v<Op, GrayscaleOp>) {
            if (coin < op.p) cur = grayscale(cur);
          } else if constexpr (std::is_same_v<Op, BlurOp>) {
            if (coin < op.p) cur = gaussian_blur(cur, op.kernel, CounterRng(op_seed).uniform(op.sigma_lo, op.sigma_hi));
          } else if constexpr (std::is_same_v<Op, SolarizeOp>) {
            if (coin < op.p) cur = solarize(cur, op.threshold);
          } else {
            cur = normalize(cur, op.mean, op.std);
          }
        },
        pipeline.ops[i]);
  }
  return cur;
}

}  // namespace ecpp
