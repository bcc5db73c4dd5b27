#pragma once

#include "gos/nn.hpp"
#include "gos/scene.hpp"

namespace gos {

// desk-scale channel widths (8x down from the reference 256/512/1024/2048)
struct ModelWidths {
  int c1 = 32, c2 = 64, c3 = 128, c4 = 256;
  int d_model = 64;
};

struct Feature {
  ad::Value data;  // [C,H,W]
  int stride = 0;
};

struct FeaturePyramid {
  Feature f1, f2, f3, f4;  // strides 4, 8, 16, 32
};

// [0,255] RGB -> [0,1] float CHW
Tensor image_to_tensor(const Image& img);

struct ResidualBlock {
  nn::Conv2d conv1, conv2, skip;
  nn::GroupNorm n1, n2;
  ResidualBlock() = default;
  ResidualBlock(nn::ParamStore& ps, SplitMix64& rng, const std::string& prefix,
                int in, int out);
  // requires 7x7 spatial input
  ad::Value forward(nn::Tape& t, const ad::Value& x) const;
};

// 4 stages of (3x3 conv, group norm, gelu); stage 1 stride 4, then stride 2.
class Backbone {
 public:
  Backbone(nn::ParamStore& ps, SplitMix64& rng, const ModelWidths& widths,
           int input_size = 224);

  FeaturePyramid extract_pyramid(nn::Tape& t, const Tensor& image,
                                 bool check_size = true) const;

  // pixel shuffle + 1x1 conv restoring the level's channel count (eta = 2)
  Feature shuffle_object_features(nn::Tape& t, const Feature& f,
                                  int level) const;

  ad::Value scene_residual(nn::Tape& t, const ad::Value& f4) const;
  ad::Value gaze_residual(nn::Tape& t, const ad::Value& f_head) const;

  const ModelWidths& widths() const { return widths_; }
  int input_size() const { return input_size_; }

 private:
  ModelWidths widths_;
  int input_size_;
  nn::Conv2d stage_conv_[4];
  nn::GroupNorm stage_norm_[4];
  nn::Conv2d obj_proj_[4];  // post-shuffle channel restoration per level
  ResidualBlock scene_block_, gaze_block_;
};

}  // namespace gos
