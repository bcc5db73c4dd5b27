#include "gos/backbone.hpp"

namespace gos {

Tensor image_to_tensor(const Image& img) {
  Tensor t({3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.at(c, y, x) = img.at(y, x, c) / 255.0;
  return t;
}

ResidualBlock::ResidualBlock(nn::ParamStore& ps, SplitMix64& rng,
                             const std::string& prefix, int in, int out)
    : conv1(ps, rng, prefix + ".conv1", in, out, 3, 1, 1),
      conv2(ps, rng, prefix + ".conv2", out, out, 3, 1, 1),
      skip(ps, rng, prefix + ".skip", in, out, 1, 1, 0),
      n1(ps, prefix + ".n1", out, 8),
      n2(ps, prefix + ".n2", out, 8) {}

ad::Value ResidualBlock::forward(nn::Tape& t, const ad::Value& x) const {
  GOS_CHECK(x->value.ndim() == 3 && x->value.dim(1) == 7 && x->value.dim(2) == 7,
            "ResidualBlock: spatial size must be 7x7");
  auto y = ad::gelu(n1.forward(t, conv1.forward(t, x)));
  y = n2.forward(t, conv2.forward(t, y));
  return ad::gelu(ad::add(y, skip.forward(t, x)));
}

Backbone::Backbone(nn::ParamStore& ps, SplitMix64& rng,
                   const ModelWidths& widths, int input_size)
    : widths_(widths), input_size_(input_size) {
  GOS_CHECK(widths.c4 % 4 == 0, "ModelWidths: c4 must be divisible by 4");
  const int chans[5] = {3, widths.c1, widths.c2, widths.c3, widths.c4};
  for (int i = 0; i < 4; ++i) {
    int stride = i == 0 ? 4 : 2;
    stage_conv_[i] = nn::Conv2d(ps, rng, "backbone.stage" + std::to_string(i + 1),
                                chans[i], chans[i + 1], 3, stride, 1);
    stage_norm_[i] = nn::GroupNorm(ps, "backbone.norm" + std::to_string(i + 1),
                                   chans[i + 1], 8);
    GOS_CHECK(chans[i + 1] % 4 == 0, "ModelWidths: channels must divide by eta^2");
    obj_proj_[i] = nn::Conv2d(ps, rng, "backbone.obj_proj" + std::to_string(i + 1),
                              chans[i + 1] / 4, chans[i + 1], 1, 1, 0);
  }
  scene_block_ = ResidualBlock(ps, rng, "backbone.scene_res", widths.c4, widths.c4 / 2);
  gaze_block_ = ResidualBlock(ps, rng, "backbone.gaze_res", widths.c4, widths.c4 / 2);
}

FeaturePyramid Backbone::extract_pyramid(nn::Tape& t, const Tensor& image,
                                         bool check_size) const {
  GOS_CHECK(image.ndim() == 3 && image.dim(0) == 3, "extract_pyramid: need 3xHxW");
  GOS_CHECK(image.all_finite(), "extract_pyramid: non-finite pixel value");
  if (check_size)
    GOS_CHECK(image.dim(1) == input_size_ && image.dim(2) == input_size_,
              "extract_pyramid: wrong input size");
  ad::Value x = ad::constant(image);
  FeaturePyramid p;
  Feature* levels[4] = {&p.f1, &p.f2, &p.f3, &p.f4};
  int stride = 1;
  for (int i = 0; i < 4; ++i) {
    stride *= i == 0 ? 4 : 2;
    x = ad::gelu(stage_norm_[i].forward(t, stage_conv_[i].forward(t, x)));
    levels[i]->data = x;
    levels[i]->stride = stride;
  }
  return p;
}

Feature Backbone::shuffle_object_features(nn::Tape& t, const Feature& f,
                                          int level) const {
  GOS_CHECK(level >= 1 && level <= 4, "shuffle_object_features: level in 1..4");
  auto shuffled = ad::pixel_shuffle(f.data, 2);
  Feature out;
  out.data = obj_proj_[level - 1].forward(t, shuffled);
  out.stride = f.stride / 2;
  return out;
}

ad::Value Backbone::scene_residual(nn::Tape& t, const ad::Value& f4) const {
  return scene_block_.forward(t, f4);
}

ad::Value Backbone::gaze_residual(nn::Tape& t, const ad::Value& f_head) const {
  return gaze_block_.forward(t, f_head);
}

}  // namespace gos
