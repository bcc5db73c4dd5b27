#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "gos/backbone.hpp"
#include "gos/geometry.hpp"
#include "gos/mask.hpp"
#include "gos/nn.hpp"

namespace gos {

// detection-loss weights (conventional set-prediction values; matching cost
// uses the same box/class weights)
struct DetectLossWeights {
  double ce = 1.0, l1 = 5.0, giou = 2.0, bce = 1.0, dice = 1.0;
};

struct DetectOutput {
  ad::Value boxes;         // [N_q,4] cxcywh in (0,1)
  ad::Value class_logits;  // [N_q,K+1], last class = no-object
  ad::Value mask_logits;   // [N_q, mask_h*mask_w] at stride 4
  ad::Value queries;       // Q_obj [N_q,d_model]
  int mask_h = 0, mask_w = 0;
};

struct HeadOutput {
  ad::Value boxes;        // [N_h,4] cxcywh in (0,1)
  ad::Value conf_logits;  // [N_h]
};

// plain (non-differentiable) view of one predicted object for evaluation
struct Detection {
  Box box;  // normalized corners
  std::vector<double> class_probs;
  int category = 0;      // argmax over real classes
  double confidence = 0; // max prob over real classes
  Bitmap mask;           // thresholded at stride 4
  std::vector<double> query;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (row, column), sorted by row
};

struct DetectGroundTruth {
  std::vector<Box> boxes;  // normalized corners
  std::vector<int> categories;
  std::vector<Bitmap> masks;  // at mask resolution (stride 4)
  Box head_box;               // normalized corners
};

struct DetectionLossParts {
  ad::Value total, det_obj, mask_obj, det_head;
};

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// cost indexed as cost[row][col].
MatchResult hungarian_match(const std::vector<std::vector<double>>& cost);

// IoU > threshold positives; when none clears it the best proposal is forced
std::vector<int> filter_head_positives(const std::vector<double>& ious,
                                       double threshold = 0.5,
                                       bool force_best_when_empty = true);

// argmax confidence, ties broken by lowest index
int select_head(const std::vector<double>& confidences);

// Simplified query transformer: single-scale stride-8 memory, 2 encoder and
// 2 decoder layers, per-query (class, box, mask-embedding) heads, plus a
// 3-layer head decoder sharing the encoder memory.
class DetectSegment {
 public:
  DetectSegment(nn::ParamStore& ps, SplitMix64& rng, const ModelWidths& widths,
                int num_categories, int num_queries = 25, int num_head_queries = 5,
                int pixel_dim = 32);

  // f8: stride-8 shuffled level (memory); f4: stride-4 level (pixel embedding)
  DetectOutput encode_decode(nn::Tape& t, const Feature& f8,
                             const Feature& f4) const;
  HeadOutput head_decoder(nn::Tape& t) const;  // uses the last encoded memory

  DetectionLossParts detection_loss(nn::Tape& t, const DetectOutput& det,
                                    const HeadOutput& head,
                                    const DetectGroundTruth& gt,
                                    const DetectLossWeights& w = {}) const;

  std::vector<Detection> to_detections(const DetectOutput& det) const;
  Box head_box_of(const HeadOutput& head, int index) const;
  std::vector<double> head_confidences(const HeadOutput& head) const;

  int num_queries() const { return n_q_; }
  int num_head_queries() const { return n_h_; }
  int num_categories() const { return num_categories_; }

 private:
  int n_q_, n_h_, num_categories_, pixel_dim_;
  ModelWidths widths_;
  nn::Conv2d token_proj_;
  std::vector<nn::TransformerEncoderLayer> encoder_;
  std::vector<nn::TransformerDecoderLayer> decoder_;
  std::vector<nn::TransformerDecoderLayer> head_decoder_;
  std::string query_embed_, head_query_embed_;
  nn::Linear class_head_, box_head_, mask_embed_head_;
  nn::Linear head_box_head_, head_conf_head_;
  nn::Conv2d pixel_embed_;
  // fixed per-query reference boxes (inverse-sigmoid logits) added before the
  // output sigmoid; anchoring the queries on a grid stabilizes the matching
  Tensor query_anchor_logits_, head_anchor_logits_;
  mutable ad::Value memory_;  // shared between object and head decoders
};

}  // namespace gos
