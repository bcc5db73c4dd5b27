#include <cmath>

#include "doctest.h"
#include "gos/metrics.hpp"
#include "gos/rng.hpp"

using namespace gos;

namespace {

Bitmap filled(int h, int w, int y0, int x0, int y1, int x1) {
  Bitmap m(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("msoc_mask: rectangle, corner cell, disc examples") {
  Bitmap rect = filled(16, 16, 2, 3, 9, 12);
  CHECK(msoc_mask(rect, rect) == doctest::Approx(1.0).epsilon(1e-12));

  // 1x1 cell inside a 10x10 square sharing a corner
  Bitmap p = filled(12, 12, 0, 0, 1, 1);
  Bitmap g = filled(12, 12, 0, 0, 10, 10);
  CHECK(msoc_mask(p, g) == doctest::Approx(0.01).epsilon(1e-12));

  // identical discs score (|disc|/a)^2, strictly below 1
  Bitmap disc(21, 21);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 21; ++x)
      if ((y - 10) * (y - 10) + (x - 10) * (x - 10) <= 64) disc.at(y, x) = 1;
  double a = disc.bounding_box().area();
  double expect = (disc.area() / a) * (disc.area() / a);
  CHECK(msoc_mask(disc, disc) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(msoc_mask(disc, disc) < 1.0);

  CHECK_THROWS(msoc_mask(Bitmap(8, 8), rect));
}

TEST_CASE("msoc_box: examples, symmetry, scale/translation invariance") {
  Box b{1, 2, 4, 7};
  CHECK(msoc_box(b, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(msoc_box(Box{0, 0, 1, 1}, Box{0, 0, 10, 10}) ==
        doctest::Approx(0.01).epsilon(1e-12));
  // adjacent disjoint equal squares (documents the literal formula)
  CHECK(msoc_box(Box{0, 0, 10, 10}, Box{10, 0, 20, 10}) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS(msoc_box(Box{0, 0, 0, 5}, b));

  SplitMix64 rng(12);
  for (int i = 0; i < 50; ++i) {
    double ax = rng.uniform(), ay = rng.uniform();
    Box p{ax, ay, ax + rng.uniform(0.1, 2.0), ay + rng.uniform(0.1, 2.0)};
    double bx = rng.uniform(), by = rng.uniform();
    Box q{bx, by, bx + rng.uniform(0.1, 2.0), by + rng.uniform(0.1, 2.0)};
    double v = msoc_box(p, q);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(msoc_box(q, p) == doctest::Approx(v).epsilon(1e-12));
    CHECK(msoc_box(p.scaled(3.0), q.scaled(3.0)) ==
          doctest::Approx(v).epsilon(1e-9));
    Box pt{p.x1 + 5, p.y1 - 2, p.x2 + 5, p.y2 - 2};
    Box qt{q.x1 + 5, q.y1 - 2, q.x2 + 5, q.y2 - 2};
    CHECK(msoc_box(pt, qt) == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("msoc_detection_score: column arithmetic") {
  ThresholdScore perfect = msoc_detection_score({1.0, 1.0, 1.0});
  CHECK(perfect.mean == doctest::Approx(100.0));
  CHECK(perfect.at50 == doctest::Approx(100.0));
  CHECK(perfect.at95 == doctest::Approx(100.0));

  ThresholdScore s = msoc_detection_score({0.6, 0.8});
  CHECK(s.at50 == doctest::Approx(100.0));
  CHECK(s.at75 == doctest::Approx(50.0));
  CHECK(s.at95 == doctest::Approx(0.0));

  ThresholdScore one = msoc_detection_score({0.93});
  CHECK(one.mean == doctest::Approx(90.0));

  CHECK_THROWS(msoc_detection_score({}));
}

TEST_CASE("auc_score: disc indicator, uniform, GT Gaussian") {
  std::array<double, 2> gt = {32.5 / 64.0, 32.5 / 64.0};

  Tensor ind({64, 64});
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (std::max(std::abs(i - 32), std::abs(j - 32)) <= 3)
        ind.at(i, j) = 1.0;
  CHECK(auc_score(ind, gt) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor uniform = Tensor::full({64, 64}, 0.4);
  CHECK(auc_score(uniform, gt) == doctest::Approx(0.5).epsilon(1e-12));

  // a map that decays with Chebyshev distance from the target cell ranks
  // every positive (within radius 3) above every negative
  Tensor decay({64, 64});
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      decay.at(i, j) =
          std::exp(-(double)std::max(std::abs(i - 32), std::abs(j - 32)));
  CHECK(auc_score(decay, gt) == doctest::Approx(1.0).epsilon(1e-9));

  // complement flips the ranking
  Tensor inv({64, 64});
  for (size_t i = 0; i < inv.numel(); ++i) inv[i] = 1.0 - decay[i];
  CHECK(auc_score(inv, gt) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("l2 and angular error") {
  CHECK(l2_distance({0.3, 0.4}, {0.3, 0.4}) == 0.0);
  CHECK(l2_distance({0, 0}, {1, 1}) == doctest::Approx(std::sqrt(2.0)));

  CHECK(*angular_error({0, 0}, {1, 0}, {1, 1}) ==
        doctest::Approx(45.0).epsilon(1e-9));
  CHECK(*angular_error({0.2, 0.2}, {0.5, 0.5}, {0.5, 0.5}) ==
        doctest::Approx(0.0));
  CHECK(*angular_error({0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(!angular_error({0.5, 0.5}, {0.5, 0.5}, {0.7, 0.5}).has_value());
}

TEST_CASE("average_precision: perfect, missing, and two-detection example") {
  APGroundTruth gt{0, Box{0, 0, 1, 1}, filled(8, 8, 0, 0, 8, 8)};

  APDetection perfect{0, 0.9, gt.box, gt.mask};
  CHECK(average_precision({perfect}, {gt}, false, 0.5) ==
        doctest::Approx(100.0));
  CHECK(average_precision({}, {gt}, false, 0.5) == doctest::Approx(0.0));

  // IoU 0.6 (conf 0.9) and IoU 0.4 (conf 0.8) against the single GT
  APDetection d1{0, 0.9, Box{0, 0, 1, 0.6}, Bitmap()};
  APDetection d2{0, 0.8, Box{0, 0, 1, 0.4}, Bitmap()};
  CHECK(average_precision({d1, d2}, {gt}, false, 0.5) ==
        doctest::Approx(100.0));
  CHECK(average_precision({d1, d2}, {gt}, false, 0.75) ==
        doctest::Approx(0.0));

  // order invariance
  CHECK(average_precision({d2, d1}, {gt}, false, 0.5) ==
        doctest::Approx(average_precision({d1, d2}, {gt}, false, 0.5)));
}

namespace {

EvalInstance make_instance(double head_iou_good, double l2, double conf) {
  EvalInstance in;
  in.gt_head_box = {0.4, 0.4, 0.6, 0.6};
  in.pred_head_box = head_iou_good > 0.5
                         ? in.gt_head_box
                         : Box{0.0, 0.0, 0.1, 0.1};
  in.gt_gaze_point = {0.5, 0.5};
  in.pred_gaze_point = {0.5 + l2, 0.5};
  in.pred_heatmap = Tensor({64, 64});
  in.pred_heatmap.at(32, 32) = 1.0;
  in.pred_gaze_object.box = {0.45, 0.45, 0.55, 0.55};
  in.pred_gaze_object.mask = filled(8, 8, 3, 3, 5, 5);
  in.pred_gaze_object.confidence = conf;
  in.gt_gaze_box = in.pred_gaze_object.box;
  in.gt_gaze_mask = in.pred_gaze_object.mask;
  in.eye = {0.5, 0.9};
  return in;
}

}  // namespace

TEST_CASE("gated_map: the three gate examples") {
  GatedResult tp = gated_map({make_instance(0.9, 0.05, 0.9)});
  CHECK(tp.num_tp == 1);
  CHECK(tp.map == doctest::Approx(1.0));
  CHECK(tp.auc.has_value());
  CHECK(tp.dist.has_value());

  GatedResult low_conf = gated_map({make_instance(0.9, 0.05, 0.7)});
  CHECK(low_conf.num_tp == 0);
  CHECK(low_conf.map == doctest::Approx(0.0));
  CHECK(!low_conf.auc.has_value());
  CHECK(!low_conf.dist.has_value());
  CHECK(!low_conf.ang.has_value());

  GatedResult far = gated_map({make_instance(0.9, 0.2, 0.9)});
  CHECK(far.num_tp == 0);
  CHECK(far.map == doctest::Approx(0.0));

  GatedResult bad_head = gated_map({make_instance(0.1, 0.05, 0.9)});
  CHECK(bad_head.num_tp == 0);
}

TEST_CASE("compute_metrics: perfect predictions hit the ceilings") {
  EvalInstance in = make_instance(0.9, 0.0, 0.9);
  // a Chebyshev-decaying heatmap centered on the GT cell scores AUC 1
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      in.pred_heatmap.at(i, j) =
          std::exp(-(double)std::max(std::abs(i - 32), std::abs(j - 32)));
  in.pred_gaze_object.mask = filled(8, 8, 3, 3, 5, 5);  // fills its bbox
  in.gt_gaze_mask = in.pred_gaze_object.mask;

  APGroundTruth gt{0, in.gt_gaze_box, in.gt_gaze_mask};
  APDetection det{0, 0.9, in.gt_gaze_box, in.gt_gaze_mask};
  MetricsReport r = compute_metrics({in}, {det}, {gt});

  CHECK(r.msoc_box.mean == doctest::Approx(100.0));
  CHECK(r.msoc_mask.mean == doctest::Approx(100.0));
  CHECK(r.ap_box.mean == doctest::Approx(100.0));
  CHECK(r.ap_mask.mean == doctest::Approx(100.0));
  CHECK(r.auc == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.dist == doctest::Approx(0.0));
  CHECK(r.ang_deg == doctest::Approx(0.0));
  CHECK(r.gated_map == doctest::Approx(1.0));

  // the JSON report carries every field
  std::string j = report_json(r);
  for (const char* key :
       {"msoc_box", "msoc_mask", "ap_box", "ap_mask", "auc", "dist", "ang_deg",
        "gated_map", "gated_auc", "gated_dist", "gated_ang", "num_instances"})
    CHECK(j.find(key) != std::string::npos);
  CHECK(!report_markdown(r).empty());
}

TEST_CASE("compute_metrics: empty predicted mask scores msoc 0") {
  EvalInstance in = make_instance(0.9, 0.0, 0.9);
  in.pred_gaze_object.mask = Bitmap(8, 8);
  MetricsReport r = compute_metrics(
      {in}, {}, {APGroundTruth{0, in.gt_gaze_box, in.gt_gaze_mask}});
  CHECK(r.msoc_mask.at50 == doctest::Approx(0.0));
}
