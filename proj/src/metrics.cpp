#include "gos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gos {

namespace {

const std::vector<double>& iou_thresholds() {
  static const std::vector<double> t = [] {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(0.50 + 0.05 * i);
    return v;
  }();
  return t;
}

// enclosing rectangle area (in cells) of two pixel-exclusive bounding boxes
double joint_enclosure_area(const Box& a, const Box& b) {
  Box e = enclosing_box(a, b);
  return e.area();
}

double interpolated_ap(std::vector<std::pair<double, bool>> scored, int n_gt) {
  // scored: (confidence, is_tp), any order
  if (n_gt == 0) return 0.0;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (const auto& [conf, is_tp] : scored) {
    (void)conf;
    is_tp ? ++tp : ++fp;
    prec.push_back(static_cast<double>(tp) / (tp + fp));
    rec.push_back(static_cast<double>(tp) / n_gt);
  }
  double ap = 0.0;
  for (int k = 0; k <= 100; ++k) {
    double r = k / 100.0;
    double best = 0.0;
    for (size_t i = 0; i < prec.size(); ++i)
      if (rec[i] >= r) best = std::max(best, prec[i]);
    ap += best;
  }
  return ap / 101.0;
}

}  // namespace

double msoc_mask(const Bitmap& p, const Bitmap& g) {
  GOS_CHECK(p.h == g.h && p.w == g.w, "msoc_mask: resolution mismatch");
  int64_t pa = p.area(), ga = g.area();
  GOS_CHECK(pa > 0 && ga > 0, "msoc_mask: empty mask");
  double a = joint_enclosure_area(p.bounding_box(), g.bounding_box());
  int64_t uni = bitmap_or(p, g).area();
  return std::min(pa / a, ga / a) * (uni / a);
}

double msoc_box(const Box& p, const Box& g) {
  GOS_CHECK(p.valid() && g.valid(), "msoc_box: degenerate box");
  double a = enclosing_box(p, g).area();
  double uni = union_area(p, g);
  return std::min(p.area() / a, g.area() / a) * (uni / a);
}

ThresholdScore msoc_detection_score(const std::vector<double>& per_image) {
  GOS_CHECK(!per_image.empty(), "msoc_detection_score: no instances");
  auto at = [&](double t) {
    int n = 0;
    for (double v : per_image)
      if (v >= t) ++n;
    return 100.0 * n / per_image.size();
  };
  ThresholdScore s;
  s.at50 = at(0.50);
  s.at75 = at(0.75);
  s.at95 = at(0.95);
  for (double t : iou_thresholds()) s.mean += at(t);
  s.mean /= iou_thresholds().size();
  return s;
}

double auc_score(const Tensor& heatmap, const std::array<double, 2>& gt_point) {
  GOS_CHECK(heatmap.ndim() == 2, "auc_score: need a 2-D heatmap");
  int s = heatmap.dim(0);
  GOS_CHECK(heatmap.dim(1) == s, "auc_score: heatmap must be square");
  int gx = std::clamp(static_cast<int>(gt_point[0] * s), 0, s - 1);
  int gy = std::clamp(static_cast<int>(gt_point[1] * s), 0, s - 1);

  // rank-sum (Mann-Whitney) AUC with average ranks for ties
  struct Cell {
    double v;
    bool pos;
  };
  std::vector<Cell> cells;
  cells.reserve(static_cast<size_t>(s) * s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      cells.push_back(
          {heatmap.at(i, j),
           std::max(std::abs(i - gy), std::abs(j - gx)) <= 3});
  std::sort(cells.begin(), cells.end(),
            [](const Cell& a, const Cell& b) { return a.v < b.v; });
  double pos_rank_sum = 0.0;
  int64_t n_pos = 0;
  size_t i = 0;
  while (i < cells.size()) {
    size_t j = i;
    while (j < cells.size() && cells[j].v == cells[i].v) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
    for (size_t k = i; k < j; ++k)
      if (cells[k].pos) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  int64_t n_neg = static_cast<int64_t>(cells.size()) - n_pos;
  GOS_CHECK(n_pos > 0 && n_neg > 0, "auc_score: degenerate class split");
  double u = pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2;
  return u / (static_cast<double>(n_pos) * n_neg);
}

double l2_distance(const std::array<double, 2>& a,
                   const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::optional<double> angular_error(const std::array<double, 2>& eye,
                                    const std::array<double, 2>& pred,
                                    const std::array<double, 2>& gt) {
  double px = pred[0] - eye[0], py = pred[1] - eye[1];
  double gx = gt[0] - eye[0], gy = gt[1] - eye[1];
  double np = std::hypot(px, py), ng = std::hypot(gx, gy);
  if (np == 0 && ng == 0) return 0.0;
  if (np == 0 || ng == 0) return std::nullopt;
  double c = std::clamp((px * gx + py * gy) / (np * ng), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

double mask_iou(const Bitmap& a, const Bitmap& b) {
  GOS_CHECK(a.h == b.h && a.w == b.w, "mask_iou: resolution mismatch");
  int64_t inter = bitmap_and(a, b).area();
  int64_t uni = bitmap_or(a, b).area();
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

double average_precision(const std::vector<APDetection>& dets,
                         const std::vector<APGroundTruth>& gts, bool use_mask,
                         double iou_threshold) {
  if (gts.empty()) return 0.0;
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<char> gt_used(gts.size(), 0);
  std::vector<std::pair<double, bool>> scored;
  for (int d : order) {
    int best = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].image != dets[d].image) continue;
      double iou = use_mask ? mask_iou(dets[d].mask, gts[g].mask)
                            : box_iou(dets[d].box, gts[g].box);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) gt_used[best] = 1;
    scored.emplace_back(dets[d].confidence, best >= 0);
  }
  return 100.0 * interpolated_ap(std::move(scored),
                                 static_cast<int>(gts.size()));
}

APResult ap_over_thresholds(const std::vector<APDetection>& dets,
                            const std::vector<APGroundTruth>& gts,
                            bool use_mask) {
  APResult r;
  for (double t : iou_thresholds()) {
    double ap = average_precision(dets, gts, use_mask, t);
    r.mean += ap;
    if (t == 0.50) r.at50 = ap;
    if (t == 0.75) r.at75 = ap;
  }
  r.mean /= iou_thresholds().size();
  return r;
}

GatedResult gated_map(const std::vector<EvalInstance>& instances) {
  GatedResult r;
  std::vector<std::pair<double, bool>> scored;
  double auc_sum = 0, dist_sum = 0, ang_sum = 0;
  int ang_n = 0;
  for (const auto& in : instances) {
    double head_iou = box_iou(in.pred_head_box, in.gt_head_box);
    double d = l2_distance(in.pred_gaze_point, in.gt_gaze_point);
    bool tp = head_iou > 0.5 && d < 0.15 &&
              in.pred_gaze_object.confidence > 0.75;
    scored.emplace_back(in.pred_gaze_object.confidence, tp);
    if (!tp) continue;
    ++r.num_tp;
    auc_sum += auc_score(in.pred_heatmap, in.gt_gaze_point);
    dist_sum += d;
    if (auto a = angular_error(in.eye, in.pred_gaze_point, in.gt_gaze_point)) {
      ang_sum += *a;
      ++ang_n;
    }
  }
  r.map = interpolated_ap(std::move(scored),
                          static_cast<int>(instances.size()));
  if (r.num_tp > 0) {
    r.auc = auc_sum / r.num_tp;
    r.dist = dist_sum / r.num_tp;
    if (ang_n > 0) r.ang = ang_sum / ang_n;
  }
  return r;
}

MetricsReport compute_metrics(const std::vector<EvalInstance>& instances,
                              const std::vector<APDetection>& dets,
                              const std::vector<APGroundTruth>& gts) {
  GOS_CHECK(!instances.empty(), "compute_metrics: no instances");
  MetricsReport r;
  r.num_instances = static_cast<int>(instances.size());

  std::vector<double> msoc_b, msoc_m;
  double auc_sum = 0, dist_sum = 0, ang_sum = 0;
  int ang_n = 0;
  for (const auto& in : instances) {
    msoc_b.push_back(msoc_box(in.pred_gaze_object.box, in.gt_gaze_box));
    bool pred_empty = in.pred_gaze_object.mask.empty_mask();
    msoc_m.push_back(pred_empty ? 0.0
                                : msoc_mask(in.pred_gaze_object.mask,
                                            in.gt_gaze_mask));
    auc_sum += auc_score(in.pred_heatmap, in.gt_gaze_point);
    dist_sum += l2_distance(in.pred_gaze_point, in.gt_gaze_point);
    if (auto a = angular_error(in.eye, in.pred_gaze_point, in.gt_gaze_point)) {
      ang_sum += *a;
      ++ang_n;
    } else {
      ++r.ang_excluded;
    }
  }
  r.msoc_box = msoc_detection_score(msoc_b);
  r.msoc_mask = msoc_detection_score(msoc_m);
  r.auc = auc_sum / instances.size();
  r.dist = dist_sum / instances.size();
  r.ang_deg = ang_n > 0 ? ang_sum / ang_n : 0.0;

  r.ap_box = ap_over_thresholds(dets, gts, /*use_mask=*/false);
  r.ap_mask = ap_over_thresholds(dets, gts, /*use_mask=*/true);

  GatedResult g = gated_map(instances);
  r.gated_map = g.map;
  r.gated_auc = g.auc;
  r.gated_dist = g.dist;
  r.gated_ang = g.ang;
  return r;
}

std::string report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["num_instances"] = r.num_instances;
  j["msoc_box"] = {{"mean", r.msoc_box.mean},
                   {"at50", r.msoc_box.at50},
                   {"at75", r.msoc_box.at75},
                   {"at95", r.msoc_box.at95}};
  j["msoc_mask"] = {{"mean", r.msoc_mask.mean},
                    {"at50", r.msoc_mask.at50},
                    {"at75", r.msoc_mask.at75},
                    {"at95", r.msoc_mask.at95}};
  j["ap_box"] = {{"mean", r.ap_box.mean},
                 {"at50", r.ap_box.at50},
                 {"at75", r.ap_box.at75}};
  j["ap_mask"] = {{"mean", r.ap_mask.mean},
                  {"at50", r.ap_mask.at50},
                  {"at75", r.ap_mask.at75}};
  j["auc"] = r.auc;
  j["dist"] = r.dist;
  j["ang_deg"] = r.ang_deg;
  j["ang_excluded"] = r.ang_excluded;
  j["gated_map"] = r.gated_map;
  j["gated_auc"] = r.gated_auc ? nlohmann::json(*r.gated_auc) : nlohmann::json();
  j["gated_dist"] =
      r.gated_dist ? nlohmann::json(*r.gated_dist) : nlohmann::json();
  j["gated_ang"] = r.gated_ang ? nlohmann::json(*r.gated_ang) : nlohmann::json();
  return j.dump(2);
}

std::string report_markdown(const MetricsReport& r) {
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream o;
    o.precision(4);
    o << *v;
    return o.str();
  };
  os.precision(4);
  os << "| metric | mean | @50 | @75 | @95 |\n";
  os << "|---|---|---|---|---|\n";
  os << "| mSoC (box) | " << r.msoc_box.mean << " | " << r.msoc_box.at50
     << " | " << r.msoc_box.at75 << " | " << r.msoc_box.at95 << " |\n";
  os << "| mSoC (mask) | " << r.msoc_mask.mean << " | " << r.msoc_mask.at50
     << " | " << r.msoc_mask.at75 << " | " << r.msoc_mask.at95 << " |\n";
  os << "| AP (box) | " << r.ap_box.mean << " | " << r.ap_box.at50 << " | "
     << r.ap_box.at75 << " | - |\n";
  os << "| AP (mask) | " << r.ap_mask.mean << " | " << r.ap_mask.at50 << " | "
     << r.ap_mask.at75 << " | - |\n\n";
  os << "| AUC | Dist | Ang (deg) | gated mAP | gated AUC | gated Dist | "
        "gated Ang |\n";
  os << "|---|---|---|---|---|---|---|\n";
  os << "| " << r.auc << " | " << r.dist << " | " << r.ang_deg << " | "
     << r.gated_map << " | " << opt(r.gated_auc) << " | " << opt(r.gated_dist)
     << " | " << opt(r.gated_ang) << " |\n";
  return os.str();
}

}  // namespace gos
