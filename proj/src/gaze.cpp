#include "gos/gaze.hpp"

#include <algorithm>
#include <cmath>

namespace gos {

GazeField::GazeField(nn::ParamStore& ps, SplitMix64& rng,
                     const ModelWidths& widths, int image_size)
    : image_size_(image_size),
      widths_(widths),
      vec_fc1_(ps, rng, "gaze.vec_fc1", widths.c4, widths.d_model),
      vec_fc2_(ps, rng, "gaze.vec_fc2", widths.d_model, 2),
      // input: f_scene (c4/2) ++ broadcast GAP(f_head) (c4) ++ head-loc (1)
      attn_conv1_(ps, rng, "gaze.attn_conv1", widths.c4 / 2 + widths.c4 + 1,
                  widths.d_model, 3, 1, 1),
      attn_conv2_(ps, rng, "gaze.attn_conv2", widths.d_model, 1, 1, 1, 0),
      attn_norm_(ps, "gaze.attn_norm", widths.d_model, 8) {}

Tensor GazeField::head_location_map(const Box& head_box, int size) {
  Tensor m({size, size});
  for (int i = 0; i < size; ++i) {
    double cy = (i + 0.5) / size;
    for (int j = 0; j < size; ++j) {
      double cx = (j + 0.5) / size;
      if (cx >= head_box.x1 && cx <= head_box.x2 && cy >= head_box.y1 &&
          cy <= head_box.y2)
        m.at(i, j) = 1.0;
    }
  }
  return m;
}

Tensor GazeField::pool_location_map(const Tensor& map, int n) {
  GOS_CHECK(map.ndim() == 2, "pool_location_map: need a 2-D map");
  int h = map.dim(0), w = map.dim(1);
  Tensor out({n, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      // pixel range covered by output cell (i,j); fractional overlap weights
      double y0 = static_cast<double>(i) * h / n, y1 = static_cast<double>(i + 1) * h / n;
      double x0 = static_cast<double>(j) * w / n, x1 = static_cast<double>(j + 1) * w / n;
      double acc = 0.0;
      for (int y = static_cast<int>(y0); y < static_cast<int>(std::ceil(y1)); ++y) {
        double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(x0); x < static_cast<int>(std::ceil(x1)); ++x) {
          double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          acc += wy * wx * map.at(y, x);
        }
      }
      out.at(i, j) = acc / ((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

ad::Value GazeField::predict_gaze_vector(nn::Tape& t, const ad::Value& f_head,
                                         bool* degenerate) const {
  GOS_CHECK(f_head->value.ndim() == 3 && f_head->value.dim(0) == widths_.c4 &&
                f_head->value.dim(1) == kGrid && f_head->value.dim(2) == kGrid,
            "predict_gaze_vector: f_head must be [c4,7,7]");
  ad::Value g = ad::reshape(ad::gap_chw(f_head), {1, widths_.c4});
  ad::Value h = ad::gelu(vec_fc1_.forward(t, g));
  ad::Value raw = ad::reshape(vec_fc2_.forward(t, h), {2});
  return ad::l2_normalize2(raw, degenerate);
}

ad::Value GazeField::original_attention(nn::Tape& t, const ad::Value& f_scene,
                                        const ad::Value& f_head,
                                        const Tensor& pooled_loc) const {
  GOS_CHECK(pooled_loc.ndim() == 2 && pooled_loc.dim(0) == kGrid &&
                pooled_loc.dim(1) == kGrid,
            "original_attention: head-location grid mismatch");
  // broadcast the pooled head descriptor over the 7x7 grid
  ad::Value gap = ad::gap_chw(f_head);  // [c4]
  ad::Value bcast = ad::reshape(
      ad::matmul(ad::reshape(gap, {widths_.c4, 1}),
                 ad::constant(Tensor::full({1, kGrid * kGrid}, 1.0))),
      {widths_.c4, kGrid, kGrid});
  ad::Value x = ad::concat_channels(f_scene, bcast);
  Tensor loc3 = pooled_loc;
  x = ad::concat_channels(x, ad::reshape(ad::constant(loc3), {1, kGrid, kGrid}));
  x = ad::gelu(attn_norm_.forward(t, attn_conv1_.forward(t, x)));
  return ad::reshape(ad::sigmoid(attn_conv2_.forward(t, x)), {kGrid, kGrid});
}

ad::Value GazeField::dual_fusion(const ad::Value& m_ori,
                                 const ad::Value& m_cone) {
  return ad::mul(m_ori, m_cone);
}

GazeFieldOutput GazeField::forward(nn::Tape& t, const Backbone& bb,
                                   const FeaturePyramid& pyr,
                                   const ad::Value& f_scene,
                                   const Box& head_box) const {
  GOS_CHECK(head_box.valid(), "GazeField: invalid head box");

  GazeFieldOutput out;
  ad::Value f_head = ad::roi_align(pyr.f4.data, head_box.x1, head_box.y1,
                                   head_box.x2, head_box.y2, kGrid, kGrid);
  out.f_gaze = bb.gaze_residual(t, f_head);
  out.gaze_vector = predict_gaze_vector(t, f_head, &out.degenerate_vector);

  double ex = std::clamp(head_box.cx(), 0.0, 1.0);
  double ey = std::clamp(head_box.cy(), 0.0, 1.0);
  out.cone = ad::gaze_cone_map(out.gaze_vector, ex, ey, kGrid);

  Tensor loc = pool_location_map(head_location_map(head_box, image_size_),
                                 kGrid);
  out.attention = original_attention(t, f_scene, f_head, loc);
  out.fused = dual_fusion(out.attention, out.cone);
  return out;
}

ad::Value GazeField::direction_loss(const ad::Value& v_pred_unit, double gx,
                                    double gy) {
  double n = std::sqrt(gx * gx + gy * gy);
  GOS_CHECK(n > 1e-9, "direction_loss: zero target direction");
  Tensor tgt({2});
  tgt.at(0) = gx / n;
  tgt.at(1) = gy / n;
  return ad::add_scalar(
      ad::mul_scalar(ad::dot(v_pred_unit, ad::constant(tgt)), -1.0), 1.0);
}

}  // namespace gos
