#include <cmath>

#include "doctest.h"
#include "gos/backbone.hpp"

using namespace gos;

namespace {
Tensor rand_image(int size, uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor t({3, size, size});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}
}  // namespace

TEST_CASE("extract_pyramid: strides and shapes at 224") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  ModelWidths w;
  Backbone bb(ps, rng, w, 224);
  nn::Tape t(ps);
  FeaturePyramid p = bb.extract_pyramid(t, rand_image(224, 2));

  CHECK(p.f1.stride == 4);
  CHECK(p.f2.stride == 8);
  CHECK(p.f3.stride == 16);
  CHECK(p.f4.stride == 32);
  CHECK(p.f1.data->value.shape() == std::vector<int>{w.c1, 56, 56});
  CHECK(p.f2.data->value.shape() == std::vector<int>{w.c2, 28, 28});
  CHECK(p.f3.data->value.shape() == std::vector<int>{w.c3, 14, 14});
  CHECK(p.f4.data->value.shape() == std::vector<int>{w.c4, 7, 7});
}

TEST_CASE("extract_pyramid: 112 input with size check disabled, ceil shapes") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  ModelWidths w;
  Backbone bb(ps, rng, w, 224);
  nn::Tape t(ps);
  FeaturePyramid p = bb.extract_pyramid(t, rand_image(112, 3), false);
  CHECK(p.f4.data->value.shape() == std::vector<int>{w.c4, 4, 4});
}

TEST_CASE("extract_pyramid: wrong size and non-finite input are errors") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  Backbone bb(ps, rng, ModelWidths{}, 224);
  nn::Tape t(ps);
  CHECK_THROWS(bb.extract_pyramid(t, rand_image(112, 3)));
  Tensor bad = rand_image(224, 4);
  bad[17] = std::nan("");
  CHECK_THROWS(bb.extract_pyramid(t, bad));
}

TEST_CASE("pixel_shuffle: 4x1x1 [a,b,c,d] becomes 1x2x2 [[a,b],[c,d]]") {
  Tensor x({4, 1, 1});
  x[0] = 1.5;
  x[1] = -2.0;
  x[2] = 3.25;
  x[3] = 0.5;
  ad::Value y = ad::pixel_shuffle(ad::constant(x), 2);
  CHECK(y->value.shape() == std::vector<int>{1, 2, 2});
  CHECK(y->value.at(0, 0, 0) == 1.5);
  CHECK(y->value.at(0, 0, 1) == -2.0);
  CHECK(y->value.at(0, 1, 0) == 3.25);
  CHECK(y->value.at(0, 1, 1) == 0.5);
}

TEST_CASE("pixel_shuffle: 8x1x1 index formula out[k](i,j) = in[4k+2i+j]") {
  Tensor x({8, 1, 1});
  for (int i = 0; i < 8; ++i) x[i] = 10.0 + i;
  ad::Value y = ad::pixel_shuffle(ad::constant(x), 2);
  REQUIRE(y->value.shape() == std::vector<int>{2, 2, 2});
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(y->value.at(k, i, j) == x[4 * k + 2 * i + j]);
}

TEST_CASE("pixel_shuffle: unshuffle inverts shuffle on random 16x3x3") {
  SplitMix64 rng(5);
  Tensor x({16, 3, 3});
  for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  ad::Value back =
      ad::pixel_unshuffle(ad::pixel_shuffle(ad::constant(x), 2), 2);
  REQUIRE(back->value.same_shape(x));
  for (size_t i = 0; i < x.numel(); ++i) CHECK(back->value[i] == x[i]);
}

TEST_CASE("shuffle_object_features: halves stride, restores channels") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  ModelWidths w;
  Backbone bb(ps, rng, w, 224);
  nn::Tape t(ps);
  FeaturePyramid p = bb.extract_pyramid(t, rand_image(224, 6));
  Feature s3 = bb.shuffle_object_features(t, p.f3, 3);
  CHECK(s3.stride == 8);
  CHECK(s3.data->value.shape() == std::vector<int>{w.c3, 28, 28});
  Feature s2 = bb.shuffle_object_features(t, p.f2, 2);
  CHECK(s2.stride == 4);
  CHECK(s2.data->value.shape() == std::vector<int>{w.c2, 56, 56});
}

TEST_CASE("scene/gaze residual: output shape and zero-parameter annihilation") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  ModelWidths w;
  Backbone bb(ps, rng, w, 224);

  nn::Tape t(ps);
  SplitMix64 vrng(8);
  Tensor f4({w.c4, 7, 7});
  for (size_t i = 0; i < f4.numel(); ++i) f4[i] = vrng.normal();
  ad::Value scene = bb.scene_residual(t, ad::constant(f4));
  ad::Value gaze = bb.gaze_residual(t, ad::constant(f4));
  CHECK(scene->value.shape() == std::vector<int>{w.c4 / 2, 7, 7});
  CHECK(gaze->value.shape() == std::vector<int>{w.c4 / 2, 7, 7});

  // zero input through zeroed convolutions stays exactly zero
  for (auto& [name, p] : ps.all())
    if (name.rfind("backbone.scene_res", 0) == 0)
      for (size_t i = 0; i < p.numel(); ++i) p[i] = 0.0;
  nn::Tape t2(ps);
  ad::Value z = bb.scene_residual(t2, ad::constant(Tensor({w.c4, 7, 7})));
  for (size_t i = 0; i < z->value.numel(); ++i) CHECK(z->value[i] == 0.0);

  // non-7x7 spatial input is rejected
  nn::Tape t3(ps);
  CHECK_THROWS(bb.scene_residual(t3, ad::constant(Tensor({w.c4, 8, 8}))));
}

TEST_CASE("determinism: same parameters and input give identical features") {
  nn::ParamStore ps;
  SplitMix64 rng(1);
  Backbone bb(ps, rng, ModelWidths{}, 224);
  Tensor img = rand_image(224, 7);
  nn::Tape t1(ps), t2(ps);
  FeaturePyramid a = bb.extract_pyramid(t1, img);
  FeaturePyramid b = bb.extract_pyramid(t2, img);
  for (size_t i = 0; i < a.f4.data->value.numel(); ++i)
    CHECK(a.f4.data->value[i] == b.f4.data->value[i]);
}

TEST_CASE("image_to_tensor: scales bytes into [0,1]") {
  Image img(2, 2);
  img.at(0, 0, 0) = 255;
  img.at(1, 1, 2) = 51;
  Tensor t = image_to_tensor(img);
  CHECK(t.shape() == std::vector<int>{3, 2, 2});
  CHECK(t.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(t.at(2, 1, 1) == doctest::Approx(0.2));
}
