#include "gos/interact.hpp"

#include <algorithm>
#include <cmath>

namespace gos {

ObjectInteraction::ObjectInteraction(nn::ParamStore& ps, SplitMix64& rng,
                                     const ModelWidths& widths,
                                     int heatmap_size)
    : heatmap_size_(heatmap_size),
      widths_(widths),
      fuse_proj_(ps, rng, "inter.fuse_proj", widths.c4, widths.d_model, 1, 1,
                 0),
      mask_mlp_(ps, rng, "inter.mask_mlp", widths.d_model, widths.d_model,
                widths.d_model),
      self_layer_(ps, rng, "inter.self", widths.d_model, 4),
      cross_attn_(ps, rng, "inter.cross", widths.d_model, 4),
      cross_norm1_(ps, "inter.cross_norm1", widths.d_model),
      cross_norm2_(ps, "inter.cross_norm2", widths.d_model),
      cross_ffn1_(ps, rng, "inter.cross_ffn1", widths.d_model,
                  4 * widths.d_model),
      cross_ffn2_(ps, rng, "inter.cross_ffn2", 4 * widths.d_model,
                  widths.d_model),
      up1_(ps, rng, "inter.up1", widths.d_model, 32, 4, 2, 1),
      up2_(ps, rng, "inter.up2", 32, 16, 4, 2, 1),
      up3_(ps, rng, "inter.up3", 16, 8, 4, 2, 1),
      hm_out_(ps, rng, "inter.hm_out", 8, 1, 1, 1, 0) {}

ad::Value ObjectInteraction::fuse_features(nn::Tape& t,
                                           const ad::Value& f_scene,
                                           const ad::Value& f_gaze,
                                           const ad::Value& fusion_map) const {
  GOS_CHECK(f_scene->value.ndim() == 3 && f_gaze->value.ndim() == 3 &&
                f_scene->value.dim(1) == kGrid &&
                f_scene->value.dim(2) == kGrid &&
                f_gaze->value.dim(1) == kGrid &&
                f_gaze->value.dim(2) == kGrid &&
                fusion_map->value.ndim() == 2 &&
                fusion_map->value.dim(0) == kGrid &&
                fusion_map->value.dim(1) == kGrid,
            "fuse_features: shape mismatch");
  ad::Value x = ad::concat_channels(f_scene, f_gaze);
  x = ad::broadcast_mul_map(x, fusion_map);
  x = fuse_proj_.forward(t, x);
  ad::Value tokens = ad::chw_to_tokens(x);  // [49, d_model]
  return ad::add(tokens, ad::constant(nn::sinusoid_encoding(
                             kGrid * kGrid, widths_.d_model)));
}

ad::Value ObjectInteraction::mask_embed(nn::Tape& t,
                                        const ad::Value& queries) const {
  return mask_mlp_.forward(t, queries);
}

ad::Value ObjectInteraction::self_encode(nn::Tape& t,
                                         const ad::Value& fuse_tokens) const {
  return self_layer_.forward(t, fuse_tokens);
}

ad::Value ObjectInteraction::cross_interact(nn::Tape& t,
                                            const ad::Value& encoded,
                                            const ad::Value& mask_embeds) const {
  ad::Value attended = cross_attn_.forward(t, encoded, mask_embeds);
  ad::Value x = cross_norm1_.forward(t, ad::add(encoded, attended));
  ad::Value h = cross_ffn2_.forward(t, ad::gelu(cross_ffn1_.forward(t, x)));
  return cross_norm2_.forward(t, ad::add(x, h));
}

ad::Value ObjectInteraction::heatmap_head(nn::Tape& t,
                                          const ad::Value& regression) const {
  ad::Value x =
      ad::tokens_to_chw(regression, widths_.d_model, kGrid, kGrid);
  x = ad::gelu(up1_.forward(t, x));  // 7 -> 14
  x = ad::gelu(up2_.forward(t, x));  // 14 -> 28
  x = ad::gelu(up3_.forward(t, x));  // 28 -> 56
  x = ad::bilinear_resize(x, heatmap_size_, heatmap_size_);
  ad::Value out = hm_out_.forward(t, x);  // [1,S,S]
  return ad::reshape(out, {heatmap_size_, heatmap_size_});
}

InteractOutput ObjectInteraction::forward(nn::Tape& t,
                                          const ad::Value& f_scene,
                                          const ad::Value& f_gaze,
                                          const ad::Value& fusion_map,
                                          const ad::Value& queries) const {
  InteractOutput out;
  out.fuse_tokens = fuse_features(t, f_scene, f_gaze, fusion_map);
  out.encoded = self_encode(t, out.fuse_tokens);
  ad::Value membed = mask_embed(t, queries);
  out.regression = cross_interact(t, out.encoded, membed);
  out.heatmap = heatmap_head(t, out.regression);
  return out;
}

Tensor ObjectInteraction::gt_heatmap(double gx, double gy, int s,
                                     double sigma) {
  Tensor m({s, s});
  double px = gx * s, py = gy * s;
  double denom = 2.0 * sigma * sigma;
  double mx = 0.0;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      double dx = j + 0.5 - px, dy = i + 0.5 - py;
      m.at(i, j) = std::exp(-(dx * dx + dy * dy) / denom);
      mx = std::max(mx, m.at(i, j));
    }
  }
  GOS_CHECK(mx > 0, "gt_heatmap: degenerate peak");
  for (size_t k = 0; k < m.numel(); ++k) m[k] /= mx;
  return m;
}

ad::Value ObjectInteraction::heatmap_loss(const ad::Value& heatmap,
                                          const Tensor& target) {
  return ad::mse_loss(heatmap, target);
}

ad::Value ObjectInteraction::energy_loss(const ad::Value& heatmap,
                                         const Bitmap& mask) {
  GOS_CHECK(heatmap->value.ndim() == 2 && mask.h == heatmap->value.dim(0) &&
                mask.w == heatmap->value.dim(1),
            "energy_loss: mask/heatmap size mismatch");
  int64_t area = mask.area();
  GOS_CHECK(area > 0, "energy_loss: empty mask");
  Tensor w({mask.h, mask.w});
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j)
      w.at(i, j) = mask.at(i, j) ? 1.0 / static_cast<double>(area) : 0.0;
  ad::Value inside =
      ad::sum_all(ad::mul(ad::clamp01(heatmap), ad::constant(w)));
  return ad::add_scalar(ad::mul_scalar(inside, -1.0), 1.0);
}

}  // namespace gos
