#pragma once

#include "gos/backbone.hpp"
#include "gos/geometry.hpp"

namespace gos {

struct GazeFieldOutput {
  ad::Value gaze_vector;  // [2], unit norm
  ad::Value cone;         // [7,7] clipped-cosine field
  ad::Value attention;    // [7,7] learned attention in (0,1)
  ad::Value fused;        // [7,7] attention * cone
  ad::Value f_gaze;       // [c4/2,7,7] head-saliency residual feature
  bool degenerate_vector = false;  // raw prediction had zero norm
};

// Spatial gaze branch: reconstructs head features from the coarse scene map
// (RoIAlign), regresses a unit gaze direction, expands it into a cone field
// anchored at the head center, and gates a learned attention map with it.
class GazeField {
 public:
  static constexpr int kGrid = 7;

  GazeField(nn::ParamStore& ps, SplitMix64& rng, const ModelWidths& widths,
            int image_size = 224);

  // f_scene: [c4/2,7,7] scene residual feature; head_box normalized corners
  GazeFieldOutput forward(nn::Tape& t, const Backbone& bb,
                          const FeaturePyramid& pyr, const ad::Value& f_scene,
                          const Box& head_box) const;

  // GAP + two affine layers + normalization; f_head is [c4,7,7]
  ad::Value predict_gaze_vector(nn::Tape& t, const ad::Value& f_head,
                                bool* degenerate = nullptr) const;

  // binary pixel raster of the head box (pixel-center inclusion)
  static Tensor head_location_map(const Box& head_box, int size);
  // area-average pooling of a binary map to an n x n real-valued grid
  static Tensor pool_location_map(const Tensor& map, int n);

  // sigmoid attention map over (f_scene, broadcast GAP(f_head), pooled loc)
  ad::Value original_attention(nn::Tape& t, const ad::Value& f_scene,
                               const ad::Value& f_head,
                               const Tensor& pooled_loc) const;

  // elementwise product of the two attention fields
  static ad::Value dual_fusion(const ad::Value& m_ori, const ad::Value& m_cone);

  // 1 - cos(pred, target); target must be unit length
  static ad::Value direction_loss(const ad::Value& v_pred_unit, double gx,
                                  double gy);

 private:
  int image_size_;
  ModelWidths widths_;
  nn::Linear vec_fc1_, vec_fc2_;
  nn::Conv2d attn_conv1_, attn_conv2_;
  nn::GroupNorm attn_norm_;
};

}  // namespace gos
