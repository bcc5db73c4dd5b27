#pragma once

#include <array>
#include <optional>

#include "gos/backbone.hpp"
#include "gos/detect.hpp"
#include "gos/gaze.hpp"
#include "gos/interact.hpp"
#include "gos/scene.hpp"

namespace gos {

struct ModelConfig {
  int image_size = 224;
  int num_categories = 24;
  int num_queries = 25;
  int num_head_queries = 5;
  int heatmap_size = 64;
  uint64_t seed = 1;
};

// everything a loss or an evaluator needs from one forward pass
struct ModelForward {
  FeaturePyramid pyramid;
  DetectOutput det;
  HeadOutput head;
  GazeFieldOutput gaze;
  InteractOutput inter;
  Box head_box_used;  // normalized; ground truth or selected proposal
  int head_index = -1;  // proposal index when the head was predicted
};

struct ModelLossParts {
  DetectionLossParts det;
  ad::Value dir;   // 1 - cos(gaze direction)
  ad::Value gaze;  // heatmap mean squared error
  ad::Value eng;   // energy concentration inside the target mask
};

// numeric (tape-free) results of one inference
struct EvalOutput {
  std::vector<Detection> detections;
  Box head_box;  // normalized
  double head_confidence = 0;
  std::array<double, 2> gaze_vector = {1, 0};
  Tensor heatmap;  // [S,S]
  std::array<double, 2> gaze_point = {0, 0};  // heatmap argmax, normalized
  int gaze_object = -1;  // detection index with the highest energy score
  std::vector<double> gaze_scores;  // per detection
};

// supervision for one image, already in model coordinates
struct TrainTarget {
  DetectGroundTruth det;  // normalized boxes, stride-4 masks
  std::array<double, 2> gaze_vector = {1, 0};
  std::array<double, 2> gaze_point = {0, 0};
  Bitmap gaze_mask;  // target-object mask on the heatmap grid
  bool gaze_mask_fallback = false;  // mask vanished when downsampled;
                                    // replaced by its bounding-box cell
};

// Full pipeline: backbone pyramid, query detector with mask head, gaze-cone
// branch, and object interaction producing the gaze heatmap.
class GosModel {
 public:
  explicit GosModel(const ModelConfig& cfg);

  // gt_head drives the gaze branch when provided (training / oracle-head
  // evaluation); otherwise the highest-confidence head proposal is used.
  ModelForward forward(nn::Tape& t, const Tensor& image,
                       const std::optional<Box>& gt_head) const;

  ModelLossParts training_loss(nn::Tape& t, const ModelForward& fwd,
                               const TrainTarget& target) const;

  EvalOutput infer(const Image& img, const std::optional<Box>& gt_head);

  TrainTarget make_target(const SceneSample& sample) const;

  // set whenever ground-truth head boxes entered forward(); reset before an
  // evaluation that must run purely on predictions
  bool gt_head_used() const { return gt_head_used_; }
  void reset_gt_head_flag() { gt_head_used_ = false; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const DetectSegment& detector() const { return detect_; }

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  SplitMix64 init_rng_;
  Backbone backbone_;
  DetectSegment detect_;
  GazeField gaze_;
  ObjectInteraction interact_;
  mutable bool gt_head_used_ = false;
};

}  // namespace gos
