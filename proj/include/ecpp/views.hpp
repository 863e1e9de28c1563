#pragma once

// Multi-view layout: which augmentation stack and resolution each of the K
// views of an image gets, and the per-item forward cost that layout implies.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecpp/augment.hpp"
#include "ecpp/rng.hpp"

namespace ecpp {

enum class ViewScheme { SimclrFull, CropOnly };
enum class SizeClass { Large, Small };
enum class DatasetStyle { Imagenet, Cifar };

struct ViewSpec {
  int resolution = 224;
  ViewScheme scheme = ViewScheme::SimclrFull;
  SizeClass size_class = SizeClass::Large;
  double scale_lo = 0.2;
  double scale_hi = 1.0;

  bool operator==(const ViewSpec&) const = default;
};

struct MultiViewConfig {
  int k = 2;
  std::vector<ViewSpec> specs;
  int large_resolution = 224;
  int small_resolution = 96;
  DatasetStyle style = DatasetStyle::Imagenet;

  void validate() const {
    if (k < 2) throw std::invalid_argument("views: k must be at least 2");
    if (static_cast<int>(specs.size()) != k) throw std::invalid_argument("views: specs.size() != k");
    if (large_resolution <= 0 || small_resolution <= 0 || small_resolution > large_resolution)
      throw std::invalid_argument("views: need 0 < small_resolution <= large_resolution");
    for (int v = 0; v < k; ++v) {
      const auto& s = specs[v];
      const int want = s.size_class == SizeClass::Large ? large_resolution : small_resolution;
      if (s.resolution != want) throw std::invalid_argument("views: view " + std::to_string(v) + " resolution does not match its size class");
      if (!(s.scale_lo > 0.0 && s.scale_lo <= s.scale_hi && s.scale_hi <= 1.0))
        throw std::invalid_argument("views: crop scale must satisfy 0 < lo <= hi <= 1");
    }
    for (int v = 0; v < 2; ++v)
      if (specs[v].size_class != SizeClass::Large || specs[v].scheme != ViewScheme::SimclrFull)
        throw std::invalid_argument("views: the first two views must be large SimCLR views");
  }

  bool operator==(const MultiViewConfig&) const = default;
};

/// Two large SimCLR views plus k-2 small views, of which
/// `small_simclr` use the SimCLR stack and the rest are crop-only.
inline MultiViewConfig ecpp_config_with_split(int k, int large_res, int small_res, int small_simclr,
                                              DatasetStyle style = DatasetStyle::Imagenet) {
  if (k < 2) throw std::invalid_argument("views: k must be at least 2");
  if (small_simclr < 0 || small_simclr > k - 2) throw std::invalid_argument("views: invalid SimCLR/crop-only split");
  MultiViewConfig cfg{k, {}, large_res, small_res, style};
  cfg.specs.push_back({large_res, ViewScheme::SimclrFull, SizeClass::Large});
  cfg.specs.push_back({large_res, ViewScheme::SimclrFull, SizeClass::Large});
  for (int v = 0; v < k - 2; ++v)
    cfg.specs.push_back({small_res, v < small_simclr ? ViewScheme::SimclrFull : ViewScheme::CropOnly, SizeClass::Small});
  cfg.validate();
  return cfg;
}

/// ceil((k-2)/2) of the additional views keep the SimCLR stack.
inline MultiViewConfig ecpp_default_config(int k, int large_res, int small_res,
                                           DatasetStyle style = DatasetStyle::Imagenet) {
  if (k < 2) throw std::invalid_argument("views: k must be at least 2");
  return ecpp_config_with_split(k, large_res, small_res, (k - 2 + 1) / 2, style);
}

/// k full-resolution SimCLR views (the vanilla K-view setting).
inline MultiViewConfig uniform_config(int k, int resolution, DatasetStyle style = DatasetStyle::Imagenet) {
  if (k < 2) throw std::invalid_argument("views: k must be at least 2");
  MultiViewConfig cfg{k, std::vector<ViewSpec>(k, ViewSpec{resolution, ViewScheme::SimclrFull, SizeClass::Large}),
                      resolution, resolution, style};
  cfg.validate();
  return cfg;
}

/// Multi-crop layout: small SimCLR views cut from [0.05, 0.14] of the area.
inline MultiViewConfig multicrop_local_config(int k, int large_res, int small_res,
                                              DatasetStyle style = DatasetStyle::Imagenet) {
  auto cfg = ecpp_config_with_split(k, large_res, small_res, k - 2, style);
  for (int v = 2; v < k; ++v) {
    cfg.specs[v].scale_lo = 0.05;
    cfg.specs[v].scale_hi = 0.14;
  }
  return cfg;
}

inline AugmentPipeline pipeline_for(const MultiViewConfig& cfg, int view) {
  const auto& s = cfg.specs.at(view);
  PipelineName name;
  if (cfg.style == DatasetStyle::Cifar) {
    name = s.scheme == ViewScheme::SimclrFull ? PipelineName::SimclrCifar : PipelineName::CropOnlyCifar;
  } else if (s.scheme == ViewScheme::CropOnly) {
    name = PipelineName::CropOnlyGlobalSmall;
  } else {
    name = s.size_class == SizeClass::Large ? PipelineName::SimclrFullLarge : PipelineName::SimclrGlobalSmall;
  }
  return make_pipeline(name, s.resolution, s.scale_lo, s.scale_hi);
}

inline std::vector<Image> generate_views(const Image& img, const MultiViewConfig& cfg, std::uint64_t seed,
                                         std::uint64_t epoch, std::uint64_t step, std::uint64_t item) {
  cfg.validate();
  std::vector<Image> out;
  out.reserve(cfg.k);
  for (int v = 0; v < cfg.k; ++v)
    out.push_back(apply(pipeline_for(cfg, v), img, derive_view_seed(seed, epoch, step, item, static_cast<std::uint64_t>(v))));
  return out;
}

/// Forward cost per item in units of one large view: Σ res² / large².
inline double pixel_cost(const MultiViewConfig& cfg) {
  cfg.validate();
  const double large = static_cast<double>(cfg.large_resolution) * cfg.large_resolution;
  double total = 0.0;
  for (const auto& s : cfg.specs) total += static_cast<double>(s.resolution) * s.resolution / large;
  return total;
}

}  // namespace ecpp
