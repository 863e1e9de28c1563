#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpp/tensor.hpp"

namespace ecpp {

/// RGB image, channel-major float pixels (c, y, x).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  static constexpr int channels = 3;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(channels) * h * w, fill) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Image: non-positive size");
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return pixels[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[c * plane() + static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image&) const = default;
};

/// Packs equally sized images into an N×3×H×W tensor.
template <typename T = float>
BasicTensor<T> images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0].height, w = images[0].width;
  std::vector<T> data;
  data.reserve(images.size() * images[0].pixels.size());
  for (const auto& im : images) {
    if (im.height != h || im.width != w) throw ShapeError("images_to_tensor: mixed resolutions");
    data.insert(data.end(), im.pixels.begin(), im.pixels.end());
  }
  return BasicTensor<T>::from({images.size(), 3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                              std::move(data));
}

/// Binary PPM (P6, maxval 255); values are clamped to [0, 1].
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (is >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(is, rest);
    }
    throw std::runtime_error("truncated PPM header: " + path);
  };
  if (token() != "P6") throw std::runtime_error("not a binary PPM (P6): " + path);
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (maxval <= 0 || maxval > 255) throw std::runtime_error("unsupported PPM maxval in " + path);
  is.get();
  Image img(h, w);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw std::runtime_error("truncated PPM body: " + path);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / float(maxval);
  return img;
}

}  // namespace ecpp
