#include "doctest.h"
#include "oracles.hpp"
#include "voxcount/encoder.hpp"

using namespace voxcount;

TEST_CASE("encoder: pyramid shapes follow the stride schedule") {
  Rng rng(1);
  ImageEncoder enc("enc", 16, 2, rng);
  NoGrad ng;
  const FeaturePyramid pyr = enc.extract(constant(Tensor({3, 64, 64})));
  REQUIRE(pyr.levels.size() == 2);
  CHECK(pyr.levels[0]->value.shape() == std::vector<int>{16, 16, 16});
  CHECK(pyr.levels[1]->value.shape() == std::vector<int>{16, 8, 8});
  CHECK(pyr.stride_exp[0] == 2);
  CHECK(pyr.stride_exp[1] == 3);

  // Other valid sizes keep the schedule.
  const FeaturePyramid tall = enc.extract(constant(Tensor({3, 32, 64})));
  CHECK(tall.levels[0]->value.shape() == std::vector<int>{16, 8, 16});
  CHECK(tall.levels[1]->value.shape() == std::vector<int>{16, 4, 8});
}

TEST_CASE("encoder: indivisible image size is a shape error") {
  Rng rng(2);
  ImageEncoder enc("enc", 8, 2, rng);
  NoGrad ng;
  CHECK_THROWS_AS(enc.extract(constant(Tensor({3, 60, 64}))), shape_error);
}

TEST_CASE("encoder: all-zero image with zero biases gives an all-zero pyramid") {
  Rng rng(3);
  ImageEncoder enc("enc", 8, 2, rng);  // biases zero-initialized
  NoGrad ng;
  const FeaturePyramid pyr = enc.extract(constant(Tensor({3, 32, 32})));
  for (const auto& level : pyr.levels)
    for (int64_t i = 0; i < level->value.numel(); ++i) CHECK(level->value[i] == 0.0);
}

TEST_CASE("encoder: deterministic for fixed weights") {
  Rng rng(4);
  ImageEncoder enc("enc", 8, 2, rng);
  Rng data(5);
  const Tensor img = oracle::random_tensor({3, 32, 32}, data);
  NoGrad ng;
  const Tensor a = enc.extract(constant(img)).levels[0]->value;
  const Tensor b = enc.extract(constant(img)).levels[0]->value;
  CHECK(oracle::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("encoder: 4-pixel shift moves level-0 cells by one (single-level net)") {
  // With one level the net is purely convolutional at stride 4, so a 4-pixel
  // translation must shift features by exactly one cell away from borders.
  Rng rng(6);
  ImageEncoder enc("enc", 8, 1, rng);
  Rng data(7);
  const int h = 40, w = 40;
  Tensor img({3, h, w});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = data.uniform(-1.0, 1.0);
  Tensor shifted({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 4; x < w; ++x) shifted.at({c, y, x}) = img.at({c, y, x - 4});
  NoGrad ng;
  const Tensor base = enc.extract(constant(img)).levels[0]->value;
  const Tensor moved = enc.extract(constant(shifted)).levels[0]->value;
  const int ch = base.dim(0), gh = base.dim(1), gw = base.dim(2);
  double worst = 0.0;
  for (int c = 0; c < ch; ++c)
    for (int y = 2; y < gh - 2; ++y)
      for (int x = 2; x < gw - 2; ++x)
        worst = std::max(worst, std::abs(moved.at({c, y, x}) - base.at({c, y, x - 1})));
  CHECK(worst <= 1e-6);
}

TEST_CASE("density2d head: zero features map to zero, outputs never negative") {
  Rng rng(8);
  Density2dHead head("head", 8, rng);
  head.c2.b.value.fill(0.0);  // the zero-bias case
  for (int64_t i = 0; i < head.c2.k.value.numel(); ++i)
    head.c2.k.value[i] = rng.uniform(-0.5, 0.5);
  NoGrad ng;
  const Tensor zero = head.apply(constant(Tensor({8, 16, 16})))->value;
  for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

  Rng data(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor features = oracle::random_tensor({8, 16, 16}, data, -2.0, 2.0);
    const Tensor density = head.apply(constant(features))->value;
    CHECK(density.shape() == std::vector<int>{1, 16, 16});
    for (int64_t i = 0; i < density.numel(); ++i) CHECK(density[i] >= 0.0);
  }
}
