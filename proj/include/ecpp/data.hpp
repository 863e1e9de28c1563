#pragma once

// CIFAR-10 binary batches and procedurally generated image datasets.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ecpp/image.hpp"
#include "ecpp/rng.hpp"

namespace ecpp {

struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (images.size() != labels.size()) throw std::invalid_argument("dataset: images/labels size mismatch");
    for (int l : labels)
      if (l < 0 || l >= num_classes) throw std::invalid_argument("dataset: label out of range");
  }

  /// First `count` items (or all, if fewer).
  Dataset head(std::size_t count) const {
    Dataset out{name, num_classes, {}, {}};
    count = std::min(count, size());
    out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(count));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
  }
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CIFAR-10: records of 1 label byte + 3×1024 channel-major pixel bytes.

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

inline Dataset parse_cifar10_bytes(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() % kCifarRecordBytes != 0)
    throw DataError(origin + ": truncated record (" + std::to_string(bytes.size()) + " bytes is not a multiple of 3073)");
  Dataset ds{"cifar10", 10, {}, {}};
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  ds.images.reserve(count);
  ds.labels.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw DataError(origin + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    Image img(kCifarSide, kCifarSide);
    for (std::size_t i = 0; i < 3 * kCifarSide * kCifarSide; ++i) img.pixels[i] = rec[1 + i] / 255.0f;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(rec[0]);
  }
  return ds;
}

inline Dataset load_cifar10_batch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing CIFAR-10 file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_cifar10_bytes(bytes, path.string());
}

/// Reads data_batch_1..5.bin and test_batch.bin.
inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  Dataset train{"cifar10", 10, {}, {}};
  for (int b = 1; b <= 5; ++b) {
    auto part = load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    std::move(part.images.begin(), part.images.end(), std::back_inserter(train.images));
    train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
  }
  auto test = load_cifar10_batch(dir / "test_batch.bin");
  return {std::move(train), std::move(test)};
}

/// Inverse of the parser for 32×32 images with pixels on the 1/255 grid.
inline std::vector<std::uint8_t> serialize_cifar10_record(const Image& img, int label) {
  if (img.height != static_cast<int>(kCifarSide) || img.width != static_cast<int>(kCifarSide))
    throw std::invalid_argument("CIFAR-10 records are 32x32");
  if (label < 0 || label > 9) throw std::invalid_argument("CIFAR-10 label out of range");
  std::vector<std::uint8_t> rec(kCifarRecordBytes);
  rec[0] = static_cast<std::uint8_t>(label);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    rec[1 + i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  return rec;
}

// ---------------------------------------------------------------------------
// Synthetic

enum class SyntheticKind { GaussianBlobs, ColoredShapes };

inline constexpr int kMaxShapeClasses = 10;

namespace detail {

inline std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  const float hh = (h - std::floor(h)) * 6.0f;
  const int sector = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Shape membership in coordinates u, v ∈ [-1, 1] relative to the shape box.
inline bool in_shape(int shape, double u, double v) {
  const double r = std::sqrt(u * u + v * v);
  switch (shape) {
    case 0: return r <= 1.0;                                                    // disk
    case 1: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;                  // square
    case 2: return v <= 0.9 && v >= -0.9 && std::abs(u) <= (v + 0.9) / 1.8;     // triangle
    case 3: return static_cast<int>(std::floor((v + 1.0) * 3.0)) % 2 == 0;      // horizontal stripes
    case 4: return static_cast<int>(std::floor((u + 1.0) * 3.0)) % 2 == 0;      // vertical stripes
    case 5: return r <= 1.0 && r >= 0.55;                                       // ring
    case 6: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;                    // cross
    case 7: return (static_cast<int>(std::floor((u + 1.0) * 2.0)) + static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
    case 8: return static_cast<int>(std::floor((u + v + 2.0) * 2.0)) % 2 == 0;  // diagonal stripes
    default: return std::abs(u) + std::abs(v) <= 1.0;                           // diamond
  }
}

inline Image make_shape_image(int cls, int res, CounterRng& rng) {
  const float hue = static_cast<float>(rng.uniform());
  const auto fg = hsv_to_rgb(hue, static_cast<float>(rng.uniform(0.5, 1.0)), static_cast<float>(rng.uniform(0.6, 1.0)));
  const auto bg = hsv_to_rgb(hue + 0.5f, static_cast<float>(rng.uniform(0.2, 0.8)), static_cast<float>(rng.uniform(0.1, 0.4)));
  const double extent = rng.uniform(0.75, 0.95) * res / 2.0;
  const double cx = res / 2.0 + rng.uniform(-0.08, 0.08) * res;
  const double cy = res / 2.0 + rng.uniform(-0.08, 0.08) * res;
  Image img(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double u = (x + 0.5 - cx) / extent, v = (y + 0.5 - cy) / extent;
      const bool inside = std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && in_shape(cls, u, v);
      for (int c = 0; c < 3; ++c) {
        const float base = inside ? fg[c] : bg[c];
        img.at(c, y, x) = std::clamp(base + static_cast<float>(0.04 * rng.normal()), 0.0f, 1.0f);
      }
    }
  return img;
}

inline Image make_blob_image(int cls, int classes, int res, CounterRng& rng) {
  const double angle = 6.283185307179586 * cls / classes;
  const double cx = res * (0.5 + 0.22 * std::cos(angle)) + rng.uniform(-0.05, 0.05) * res;
  const double cy = res * (0.5 + 0.22 * std::sin(angle)) + rng.uniform(-0.05, 0.05) * res;
  const double sigma = res * rng.uniform(0.28, 0.36);
  const auto color = hsv_to_rgb(static_cast<float>(cls) / classes + static_cast<float>(rng.uniform(-0.03, 0.03)), 0.8f, 0.9f);
  const float bg = static_cast<float>(rng.uniform(0.05, 0.25));
  Image img(res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
      const float a = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = std::clamp(a * color[c] + (1 - a) * bg + static_cast<float>(0.04 * rng.normal()), 0.0f, 1.0f);
    }
  return img;
}

}  // namespace detail

/// Deterministic dataset of `classes × per_class` square images. Items are
/// ordered round-robin over classes.
inline Dataset make_synthetic(SyntheticKind kind, int classes, int per_class, int resolution, std::uint64_t seed) {
  if (classes <= 0 || per_class <= 0 || resolution <= 0) throw std::invalid_argument("make_synthetic: sizes must be positive");
  if (kind == SyntheticKind::ColoredShapes && classes > kMaxShapeClasses)
    throw std::invalid_argument("make_synthetic: ColoredShapes supports at most 10 classes");
  Dataset ds{kind == SyntheticKind::GaussianBlobs ? "blobs" : "shapes", classes, {}, {}};
  ds.images.reserve(static_cast<std::size_t>(classes) * per_class);
  for (int i = 0; i < per_class; ++i)
    for (int c = 0; c < classes; ++c) {
      CounterRng rng(hash_mix(seed, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}));
      ds.images.push_back(kind == SyntheticKind::ColoredShapes ? detail::make_shape_image(c, resolution, rng)
                                                               : detail::make_blob_image(c, classes, resolution, rng));
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace ecpp
