#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>

#include "ecpp/augment.hpp"
#include "ecpp/rng.hpp"

using namespace ecpp;

namespace {

Image noise_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  CounterRng rng(seed);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

float max_abs_diff(const Image& a, const Image& b) {
  float d = 0.0f;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) d = std::max(d, std::abs(a.pixels[i] - b.pixels[i]));
  return d;
}

constexpr PipelineName kAllPipelines[] = {PipelineName::SimclrFullLarge, PipelineName::SimclrGlobalSmall,
                                          PipelineName::CropOnlyGlobalSmall, PipelineName::SimclrCifar,
                                          PipelineName::CropOnlyCifar};

}  // namespace

TEST_CASE("pipeline parameter tables", "[augment]") {
  const auto large = make_pipeline(PipelineName::SimclrFullLarge);
  REQUIRE(large.ops.size() == 7);
  const auto& crop = std::get<CropOp>(large.ops[0]);
  CHECK(crop.out_size == 224);
  CHECK(crop.scale_lo == 0.2);
  CHECK(crop.scale_hi == 1.0);
  CHECK(std::get<FlipOp>(large.ops[1]).p == 0.5);
  const auto& jit = std::get<JitterOp>(large.ops[2]);
  CHECK((jit.brightness == 0.8 && jit.contrast == 0.8 && jit.saturation == 0.8 && jit.hue == 0.2 && jit.p == 0.8));
  CHECK(std::get<GrayscaleOp>(large.ops[3]).p == 0.2);
  const auto& blur = std::get<BlurOp>(large.ops[4]);
  CHECK((blur.kernel == 23 && blur.sigma_lo == 0.1 && blur.sigma_hi == 2.0 && blur.p == 0.5));
  CHECK(std::get<SolarizeOp>(large.ops[5]).p == 0.1);
  CHECK(std::get<NormalizeOp>(large.ops[6]).mean == kImagenetMean);
  CHECK(std::get<NormalizeOp>(large.ops[6]).std == kImagenetStd);

  const auto small = make_pipeline(PipelineName::SimclrGlobalSmall);
  CHECK(small.output_size() == 96);
  CHECK(small.ops.size() == 7);

  const auto crop_only = make_pipeline(PipelineName::CropOnlyGlobalSmall);
  REQUIRE(crop_only.ops.size() == 2);
  CHECK(crop_only.output_size() == 96);
  CHECK(std::get<CropOp>(crop_only.ops[0]).scale_lo == 0.2);

  const auto cifar = make_pipeline(PipelineName::SimclrCifar);
  REQUIRE(cifar.ops.size() == 5);
  CHECK(cifar.output_size() == 32);
  const auto& cj = std::get<JitterOp>(cifar.ops[2]);
  CHECK((cj.brightness == 0.4 && cj.contrast == 0.4 && cj.saturation == 0.4 && cj.hue == 0.1 && cj.p == 0.8));
  CHECK(std::get<NormalizeOp>(cifar.ops[4]).mean == kCifarMean);
  CHECK(std::get<NormalizeOp>(cifar.ops[4]).std == kCifarStd);
  for (const auto& op : cifar.ops) {
    CHECK(kind_of(op) != AugmentKind::GaussianBlur);
    CHECK(kind_of(op) != AugmentKind::Solarize);
  }
  CHECK(make_pipeline(PipelineName::CropOnlyCifar).ops.size() == 2);

  for (auto name : kAllPipelines) CHECK_NOTHROW(make_pipeline(name).validate());
}

TEST_CASE("pipeline validation", "[augment]") {
  auto p = make_pipeline(PipelineName::SimclrCifar);
  std::swap(p.ops[3], p.ops[4]);
  CHECK_THROWS(p.validate());
  auto q = make_pipeline(PipelineName::SimclrCifar);
  std::get<FlipOp>(q.ops[1]).p = 1.5;
  CHECK_THROWS(q.validate());
  auto r = make_pipeline(PipelineName::CropOnlyCifar);
  std::get<CropOp>(r.ops[0]).scale_lo = 0.0;
  CHECK_THROWS(r.validate());
}

TEST_CASE("apply is deterministic and hits the target resolution", "[augment]") {
  const auto img = noise_image(40, 48, 1);
  for (auto name : kAllPipelines) {
    const auto p = make_pipeline(name, 24);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto a = apply(p, img, seed);
      CHECK(a == apply(p, img, seed));
      CHECK(a.height == 24);
      CHECK(a.width == 24);
    }
    CHECK_FALSE(apply(p, img, 1) == apply(p, img, 2));
  }
}

TEST_CASE("ops other than normalize keep pixels in [0,1]", "[augment]") {
  const auto img = noise_image(32, 32, 2);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto check = [](const Image& im) {
      for (float v : im.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
    };
    check(color_jitter(img, 0.8, 0.8, 0.8, 0.2, seed));
    check(gaussian_blur(img, 23, 0.1 + seed * 0.05));
    check(random_resized_crop(img, 20, 0.2, 1.0, seed));
    check(solarize(img, 0.5f));
    check(grayscale(img));
  }
}

TEST_CASE("random resized crop", "[augment]") {
  const auto img = noise_image(32, 32, 3);
  const auto full = random_resized_crop(img, 32, 1.0, 1.0, 7, 1.0, 1.0);
  CHECK(full == resize(img, 32, 32));
  CHECK(max_abs_diff(full, img) < 1e-6f);

  const auto big = noise_image(224, 224, 4);
  const auto small = random_resized_crop(big, 96, 0.2, 1.0, 11);
  CHECK(small.height == 96);
  CHECK(small.width == 96);

  const Image flat(50, 30, 0.375f);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = random_resized_crop(flat, 17, 0.05, 0.9, seed);
    for (float v : c.pixels) CHECK(v == Catch::Approx(0.375f).margin(1e-6));
  }

  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto w = sample_crop_window(40, 60, 0.2, 1.0, 0.75, 4.0 / 3.0, CounterRng(seed));
    CHECK(w.top >= 0);
    CHECK(w.left >= 0);
    CHECK(w.top + w.height <= 40);
    CHECK(w.left + w.width <= 60);
    if (!w.fallback) {
      const double frac = double(w.height) * w.width / (40.0 * 60.0);
      CHECK(frac >= 0.17);
      CHECK(frac <= 1.0);
    }
  }
  // An aspect range the image cannot satisfy forces the centred fallback.
  const auto fb = sample_crop_window(10, 100, 0.9, 1.0, 0.9, 1.1, CounterRng(1));
  CHECK(fb.fallback);
  CHECK(fb.height == 10);
  CHECK(fb.width == 11);
  CHECK(fb.left == (100 - 11) / 2);
}

TEST_CASE("photometric ops", "[augment]") {
  const auto img = noise_image(16, 12, 5);
  CHECK(horizontal_flip(horizontal_flip(img)) == img);
  CHECK(horizontal_flip(img).at(0, 3, 0) == img.at(0, 3, 11));

  const auto gray = grayscale(img);
  CHECK(gray.at(0, 2, 2) == gray.at(1, 2, 2));
  CHECK(gray.at(0, 2, 2) == Catch::Approx(0.299 * img.at(0, 2, 2) + 0.587 * img.at(1, 2, 2) + 0.114 * img.at(2, 2, 2)));
  CHECK(max_abs_diff(grayscale(gray), gray) < 1e-6f);

  Image px(1, 1, 0.9f);
  CHECK(solarize(px, 0.5f).pixels[0] == Catch::Approx(0.1f));
  Image dark(1, 1, 0.3f);
  CHECK(solarize(dark, 0.5f).pixels[0] == 0.3f);

  Image mean_px(1, 1);
  for (int c = 0; c < 3; ++c) mean_px.at(c, 0, 0) = kCifarMean[c];
  for (float v : normalize(mean_px, kCifarMean, kCifarStd).pixels) CHECK(v == 0.0f);
  CHECK_THROWS_AS(normalize(mean_px, kCifarMean, Rgb{1.0f, 0.0f, 1.0f}), DomainError);

  CHECK(effective_blur_kernel(23, 32, 32) == 23);
  CHECK(effective_blur_kernel(23, 16, 20) == 15);
  CHECK(effective_blur_kernel(23, 1, 1) == 1);
  const Image flat(9, 9, 0.25f);
  CHECK(max_abs_diff(gaussian_blur(flat, 23, 1.5), flat) < 1e-6f);

  CHECK(color_jitter(img, 0.0, 0.0, 0.0, 0.0, 3) == img);
  CHECK(color_jitter(img, 0.4, 0.4, 0.4, 0.1, 3) == color_jitter(img, 0.4, 0.4, 0.4, 0.1, 3));
  CHECK_FALSE(color_jitter(img, 0.4, 0.4, 0.4, 0.1, 3) == color_jitter(img, 0.4, 0.4, 0.4, 0.1, 4));
}

TEST_CASE("skipped probabilistic ops do not shift later streams", "[augment]") {
  // Each op reads its own seed-derived stream, so forcing the flip off must
  // leave the crop (op 0) and jitter (op 2) draws untouched.
  const auto img = noise_image(32, 32, 6);
  auto base = make_pipeline(PipelineName::SimclrCifar);
  auto no_flip = base;
  std::get<FlipOp>(no_flip.ops[1]).p = 0.0;
  auto always_flip = base;
  std::get<FlipOp>(always_flip.ops[1]).p = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    CHECK(max_abs_diff(horizontal_flip(apply(no_flip, img, seed)), apply(always_flip, img, seed)) < 1e-5f);
}

TEST_CASE("ppm round trip", "[augment]") {
  Image img(3, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  const auto path = (std::filesystem::temp_directory_path() / "ecpp_roundtrip.ppm").string();
  write_ppm(path, img);
  const auto back = read_ppm(path);
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(max_abs_diff(back, img) < 1e-6f);
}
