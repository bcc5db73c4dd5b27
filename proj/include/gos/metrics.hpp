#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "gos/geometry.hpp"
#include "gos/mask.hpp"
#include "gos/tensor.hpp"

namespace gos {

struct GazeObjectEval {
  Box box;  // normalized
  Bitmap mask;
  double confidence = 0;
};

// everything the metric suite needs for one evaluated image
struct EvalInstance {
  std::array<double, 2> pred_gaze_point = {0, 0};  // normalized
  std::array<double, 2> gt_gaze_point = {0, 0};
  Tensor pred_heatmap;  // [64,64]
  Box pred_head_box, gt_head_box;
  GazeObjectEval pred_gaze_object;
  Box gt_gaze_box;
  Bitmap gt_gaze_mask;
  std::array<double, 2> eye = {0, 0};  // normalized head center
};

struct ThresholdScore {
  double mean = 0;  // average of the per-threshold percentages
  double at50 = 0, at75 = 0, at95 = 0;
};

struct APResult {
  double mean = 0;  // percent, averaged over IoU thresholds .50:.05:.95
  double at50 = 0, at75 = 0;
};

struct MetricsReport {
  ThresholdScore msoc_box, msoc_mask;
  APResult ap_box, ap_mask;
  double auc = 0;
  double dist = 0;
  double ang_deg = 0;              // mean over instances with a defined angle
  int ang_excluded = 0;            // instances with an undefined angle
  double gated_map = 0;            // in [0,1]
  std::optional<double> gated_auc, gated_dist, gated_ang;
  int num_instances = 0;
};

// min-single-over-closure localization scores; a = area of the minimum
// enclosing axis-aligned rectangle of both inputs
double msoc_mask(const Bitmap& p, const Bitmap& g);
double msoc_box(const Box& p, const Box& g);

// columns over thresholds {0.50, 0.55, ..., 0.95}, as percentages
ThresholdScore msoc_detection_score(const std::vector<double>& per_image);

// ROC-AUC over all heatmap cells; positives are cells within Chebyshev
// radius 3 of the target cell; ties count half
double auc_score(const Tensor& heatmap, const std::array<double, 2>& gt_point);

double l2_distance(const std::array<double, 2>& a,
                   const std::array<double, 2>& b);
// nullopt when exactly one of the offsets is degenerate; 0 when both are
std::optional<double> angular_error(const std::array<double, 2>& eye,
                                    const std::array<double, 2>& pred,
                                    const std::array<double, 2>& gt);

struct APDetection {
  int image = 0;
  double confidence = 0;
  Box box;
  Bitmap mask;
};
struct APGroundTruth {
  int image = 0;
  Box box;
  Bitmap mask;
};

// score-sorted greedy matching, 101-point interpolated precision, percent
double average_precision(const std::vector<APDetection>& dets,
                         const std::vector<APGroundTruth>& gts, bool use_mask,
                         double iou_threshold);
APResult ap_over_thresholds(const std::vector<APDetection>& dets,
                            const std::vector<APGroundTruth>& gts,
                            bool use_mask);

double mask_iou(const Bitmap& a, const Bitmap& b);

struct GatedResult {
  double map = 0;  // in [0,1]
  std::optional<double> auc, dist, ang;
  int num_tp = 0;
};
// true positive iff head IoU > 0.5, gaze L2 < 0.15, confidence > 0.75
GatedResult gated_map(const std::vector<EvalInstance>& instances);

// full report over a set of evaluated images plus per-image detections
MetricsReport compute_metrics(const std::vector<EvalInstance>& instances,
                              const std::vector<APDetection>& dets,
                              const std::vector<APGroundTruth>& gts);

std::string report_json(const MetricsReport& r);
std::string report_markdown(const MetricsReport& r);

}  // namespace gos
