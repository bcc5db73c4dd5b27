#pragma once

#include "gos/backbone.hpp"
#include "gos/mask.hpp"
#include "gos/nn.hpp"

namespace gos {

struct InteractOutput {
  ad::Value fuse_tokens;   // [49, d_model] f_fuse
  ad::Value encoded;       // [49, d_model] f_e
  ad::Value regression;    // [49, d_model] f_reg
  ad::Value heatmap;       // [S,S] raw (unclamped) regression output
};

// Feature-interaction stage: the attention-gated scene/gaze features are
// fused into a 7x7 token grid, object queries contribute mask embeddings as
// key-value pairs, and a small deconvolution head decodes the gaze heatmap.
class ObjectInteraction {
 public:
  static constexpr int kGrid = 7;

  ObjectInteraction(nn::ParamStore& ps, SplitMix64& rng,
                    const ModelWidths& widths, int heatmap_size = 64);

  // f_scene/f_gaze: [c4/2,7,7]; fusion_map: 7x7 attention field
  InteractOutput forward(nn::Tape& t, const ad::Value& f_scene,
                         const ad::Value& f_gaze, const ad::Value& fusion_map,
                         const ad::Value& queries) const;

  // concat channels, gate with the fusion map, 1x1-project to d_model,
  // flatten to 49 tokens and add a fixed sinusoidal position encoding
  ad::Value fuse_features(nn::Tape& t, const ad::Value& f_scene,
                          const ad::Value& f_gaze,
                          const ad::Value& fusion_map) const;

  // 3-layer MLP mapping object queries to mask embeddings, [N_q,d]->[N_q,d]
  ad::Value mask_embed(nn::Tape& t, const ad::Value& queries) const;

  // one self-attention encoder layer over the 49 fused tokens
  ad::Value self_encode(nn::Tape& t, const ad::Value& fuse_tokens) const;

  // cross-attention: queries = encoded scene tokens, keys/values = learned
  // projections of the mask embeddings; residual + norm + FFN (no self-attn)
  ad::Value cross_interact(nn::Tape& t, const ad::Value& encoded,
                           const ad::Value& mask_embeds) const;

  // 7x7 tokens -> three stride-2 deconvolutions -> bilinear 64x64 -> 1x1 conv
  ad::Value heatmap_head(nn::Tape& t, const ad::Value& regression) const;

  // peak-normalized Gaussian around the gaze point (normalized coords),
  // sigma in cells
  static Tensor gt_heatmap(double gx, double gy, int s, double sigma = 3.0);

  // mean squared error against the target heatmap
  static ad::Value heatmap_loss(const ad::Value& heatmap, const Tensor& target);

  // 1 - mean clamped heatmap value inside the mask (mask on the heatmap grid)
  static ad::Value energy_loss(const ad::Value& heatmap, const Bitmap& mask);

  int heatmap_size() const { return heatmap_size_; }

 private:
  int heatmap_size_;
  ModelWidths widths_;
  nn::Conv2d fuse_proj_;
  nn::Mlp3 mask_mlp_;
  nn::TransformerEncoderLayer self_layer_;
  nn::MultiheadAttention cross_attn_;
  nn::LayerNorm cross_norm1_, cross_norm2_;
  nn::Linear cross_ffn1_, cross_ffn2_;
  nn::ConvTranspose2d up1_, up2_, up3_;
  nn::Conv2d hm_out_;
};

}  // namespace gos
