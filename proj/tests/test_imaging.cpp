#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"
#include "urgr/error.hpp"
#include "urgr/imaging.hpp"

using namespace urgr;
using namespace urgr::imaging;

namespace {

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Image vertical_step(int h, int w, double left, double right) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < w / 2 ? left : right;
    }
  }
  return img;
}

}  // namespace

TEST_CASE("reflect padding mirrors without repeating the edge") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-2, 5) == 2);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(6, 5) == 2);
  CHECK(reflect_index(3, 1) == 0);
  CHECK(reflect_index(-7, 3) == 1);
}

TEST_CASE("gaussian_smooth") {
  SUBCASE("constant image is preserved") {
    Image img(9, 7, 3, 0.37);
    const Image out = gaussian_smooth(img, 5, 1.0);
    CHECK(max_abs_diff(out, img) < 1e-15);
  }
  SUBCASE("impulse response equals the hand-evaluated 5x5 kernel") {
    Image img(11, 11, 1, 0.0);
    img.at(5, 5, 0) = 1.0;
    const double sigma = 1.0;
    double sum = 0.0;
    double k[5][5];
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        k[i][j] = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / (2.0 * sigma * sigma));
        sum += k[i][j];
      }
    }
    const Image out = gaussian_smooth(img, 5, sigma);
    for (int y = 0; y < 11; ++y) {
      for (int x = 0; x < 11; ++x) {
        const bool inside = std::abs(y - 5) <= 2 && std::abs(x - 5) <= 2;
        const double expected = inside ? k[y - 3][x - 3] / sum : 0.0;
        CHECK(std::abs(out.at(y, x, 0) - expected) < 1e-10);
      }
    }
  }
  SUBCASE("dimensions preserved") {
    const Image out = gaussian_smooth(Image(480, 640, 3, 0.5));
    CHECK(out.height() == 480);
    CHECK(out.width() == 640);
    CHECK(out.channels() == 3);
  }
  SUBCASE("invalid arguments") {
    Image img(8, 8, 3, 0.5);
    CHECK_THROWS_AS(gaussian_smooth(img, 4, 1.0), InvalidArgument);
    CHECK_THROWS_AS(gaussian_smooth(img, 5, 0.0), InvalidArgument);
    CHECK_THROWS_AS(gaussian_smooth(img, 5, -1.0), InvalidArgument);
  }
}

TEST_CASE("sharpen") {
  SUBCASE("constant image is preserved") {
    Image img(6, 6, 3, 0.8);
    CHECK(max_abs_diff(sharpen(img), img) < 1e-15);
  }
  SUBCASE("impulse: centre 0.5 and clamped four-neighbourhood") {
    Image img(7, 7, 1, 0.0);
    img.at(3, 3, 0) = 0.1;
    const Image raw = convolve(img, kSharpenKernel, 3);
    CHECK(std::abs(raw.at(3, 3, 0) - 0.5) < 1e-10);
    CHECK(std::abs(raw.at(2, 3, 0) + 0.1) < 1e-10);
    CHECK(std::abs(raw.at(4, 3, 0) + 0.1) < 1e-10);
    CHECK(std::abs(raw.at(3, 2, 0) + 0.1) < 1e-10);
    CHECK(std::abs(raw.at(3, 4, 0) + 0.1) < 1e-10);
    CHECK(raw.at(2, 2, 0) == 0.0);
    const Image out = sharpen(img);
    CHECK(std::abs(out.at(3, 3, 0) - 0.5) < 1e-10);
    CHECK(out.at(2, 3, 0) == 0.0);
    CHECK(out.is_valid());
  }
}

TEST_CASE("jpeg_compress") {
  const Image img = testing::natural_image(48, 64, 3);
  SUBCASE("shape preserved and deterministic") {
    const Image a = jpeg_compress(img, 30);
    const Image b = jpeg_compress(img, 30);
    CHECK(a.same_shape(img));
    CHECK(a == b);
  }
  SUBCASE("higher quality gives higher fidelity") {
    const Psnr hi = psnr(jpeg_compress(img, 95), img);
    const Psnr lo = psnr(jpeg_compress(img, 10), img);
    CHECK_FALSE(lo.infinite);
    CHECK(lo < hi);
  }
  SUBCASE("quality range enforced") {
    CHECK_THROWS_AS(jpeg_compress(img, 0), InvalidArgument);
    CHECK_THROWS_AS(jpeg_compress(img, 101), InvalidArgument);
    CHECK_THROWS_AS(jpeg_compress(Image(8, 8, 1, 0.5), 50), InvalidArgument);
  }
}

TEST_CASE("degrade is the literal composition") {
  DegradationConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Image img = testing::natural_image(40, 56, seed);
    const Image manual = jpeg_compress(sharpen(gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)),
                                       cfg.jpeg_quality);
    const Image out = degrade(img, cfg);
    CHECK(out == manual);
    CHECK(out.same_shape(img));
    CHECK_FALSE(psnr(out, img).infinite);
  }
}

TEST_CASE("degradation config json") {
  DegradationConfig cfg{7, 1.5, 55};
  const nlohmann::json j = cfg;
  CHECK(j.dump() == R"({"jpeg_quality":55,"smooth_kernel":7,"smooth_sigma":1.5})");
  const auto back = j.get<DegradationConfig>();
  CHECK(back.smooth_kernel == 7);
  CHECK(back.smooth_sigma == 1.5);
  CHECK(back.jpeg_quality == 55);
}

TEST_CASE("mse and psnr") {
  SUBCASE("identities") {
    const Image a = testing::random_image(8, 8, 3, 11);
    CHECK(mse(a, a) == 0.0);
    CHECK(psnr(a, a).infinite);
    const Image zero(8, 8, 3, 0.0), one(8, 8, 3, 1.0);
    CHECK(mse(zero, one) == 1.0);
    CHECK(psnr(zero, one).db == 0.0);
    CHECK_FALSE(psnr(zero, one).infinite);
  }
  SUBCASE("scalar-loop oracle") {
    const Image a = testing::random_image(8, 8, 3, 21);
    const Image b = testing::random_image(8, 8, 3, 22);
    double acc = 0.0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) acc += (a.at(y, x, c) - b.at(y, x, c)) * (a.at(y, x, c) - b.at(y, x, c));
    const double expected = acc / (8 * 8 * 3);
    CHECK(std::abs(mse(a, b) - expected) < 1e-12);
    CHECK(mse(a, b) == mse(b, a));
    CHECK(std::abs(psnr(a, b).db - 10.0 * std::log10(1.0 / expected)) < 1e-12);
  }
  SUBCASE("mse 0.01 is 20 dB") {
    const Image a(4, 4, 3, 0.0), b(4, 4, 3, 0.1);
    CHECK(std::abs(mse(a, b) - 0.01) < 1e-15);
    CHECK(std::abs(psnr(a, b).db - 20.0) < 1e-10);
  }
  SUBCASE("psnr strictly decreasing in mse") {
    double prev = psnr_from_mse(1e-6).db;
    for (double m = 2e-6; m < 1.0; m *= 1.7) {
      const double cur = psnr_from_mse(m).db;
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(mse(Image(4, 4, 3), Image(4, 5, 3)), InvalidArgument);
    CHECK_THROWS_AS(psnr(Image(4, 4, 3), Image(4, 4, 1)), InvalidArgument);
  }
}

TEST_CASE("canny_edges") {
  SUBCASE("constant image has no edges") {
    const Image e = canny_edges(Image(32, 32, 3, 0.6));
    for (double v : e.data()) CHECK(v == 0.0);
  }
  SUBCASE("vertical step edges lie within one column of the boundary") {
    const Image img = vertical_step(32, 32, 0.2, 0.8);
    const Image e = canny_edges(img);
    CHECK(e.channels() == 1);
    int positives = 0;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double v = e.at(y, x, 0);
        CHECK((v == 0.0 || v == 1.0));
        if (v == 1.0) {
          ++positives;
          // Boundary sits between columns 15 and 16.
          CHECK(std::abs(x - 15.5) <= 1.5);
        }
      }
    }
    CHECK(positives >= 32);
  }
  SUBCASE("brightness shift leaves the edge map unchanged") {
    Image img = testing::natural_image(40, 40, 5);
    for (double& v : img.data()) v = 0.1 + 0.7 * v;
    Image shifted = img;
    for (double& v : shifted.data()) v += 0.15;
    CHECK(shifted.is_valid());
    CHECK(canny_edges(img) == canny_edges(shifted));
  }
  SUBCASE("threshold ordering enforced") {
    CHECK_THROWS_AS(canny_edges(Image(8, 8, 3), 1.4, 0.3, 0.3), InvalidArgument);
    CHECK_THROWS_AS(canny_edges(Image(8, 8, 3), 1.4, 0.5, 0.2), InvalidArgument);
  }
}

TEST_CASE("bicubic_resize") {
  SUBCASE("constant image at any size") {
    const Image img(13, 17, 3, 0.42);
    for (auto [h, w] : {std::pair{5, 9}, std::pair{40, 31}, std::pair{13, 17}}) {
      const Image out = bicubic_resize(img, h, w);
      CHECK(out.height() == h);
      CHECK(out.width() == w);
      CHECK(max_abs_diff(out, Image(h, w, 3, 0.42)) < 1e-12);
    }
  }
  SUBCASE("identity size") {
    const Image img = testing::random_image(19, 23, 3, 4);
    CHECK(max_abs_diff(bicubic_resize(img, 19, 23), img) < 1e-6);
  }
  SUBCASE("linear ramp upscaled 2x stays monotone") {
    Image ramp(4, 16, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 16; ++x) ramp.at(y, x, 0) = x / 15.0;
    const Image up = bicubic_resize(ramp, 8, 32);
    for (int y = 0; y < 8; ++y)
      for (int x = 1; x < 32; ++x) CHECK(up.at(y, x, 0) >= up.at(y, x - 1, 0));
  }
  SUBCASE("output stays in range") {
    const Image img = testing::random_image(16, 16, 3, 9);
    CHECK(bicubic_resize(img, 37, 29).is_valid());
    CHECK(bicubic_resize(img, 5, 7).is_valid());
  }
  SUBCASE("invalid target") {
    CHECK_THROWS_AS(bicubic_resize(Image(4, 4, 3), 0, 4), InvalidArgument);
    CHECK_THROWS_AS(bicubic_resize(Image(4, 4, 3), 4, -2), InvalidArgument);
  }
}
