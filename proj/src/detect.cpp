#include "gos/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gos {

namespace {

// softmax of one logit row, read numerically
std::vector<double> softmax_row(const Tensor& logits, int row) {
  int k = logits.dim(1);
  std::vector<double> p(k);
  double mx = -1e300;
  for (int j = 0; j < k; ++j) mx = std::max(mx, logits.at(row, j));
  double z = 0.0;
  for (int j = 0; j < k; ++j) {
    p[j] = std::exp(logits.at(row, j) - mx);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

Box box_from_row(const Tensor& cxcywh, int row) {
  return from_cxcywh(cxcywh.at(row, 0), cxcywh.at(row, 1), cxcywh.at(row, 2),
                     cxcywh.at(row, 3));
}

Tensor cxcywh_targets(const std::vector<Box>& boxes) {
  Tensor t({static_cast<int>(boxes.size()), 4});
  for (size_t i = 0; i < boxes.size(); ++i) {
    t.at(static_cast<int>(i), 0) = boxes[i].cx();
    t.at(static_cast<int>(i), 1) = boxes[i].cy();
    t.at(static_cast<int>(i), 2) = boxes[i].w();
    t.at(static_cast<int>(i), 3) = boxes[i].h();
  }
  return t;
}

}  // namespace

MatchResult hungarian_match(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  GOS_CHECK(n > 0, "hungarian_match: empty cost matrix");
  int m = static_cast<int>(cost[0].size());
  GOS_CHECK(n <= m, "hungarian_match: more rows than columns");
  for (const auto& r : cost)
    GOS_CHECK(static_cast<int>(r.size()) == m,
              "hungarian_match: ragged cost matrix");

  // shortest-augmenting-path Hungarian with dual potentials, 1-indexed
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  MatchResult r;
  r.pairs.resize(n);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) r.pairs[p[j] - 1] = {p[j] - 1, j - 1};
  return r;
}

std::vector<int> filter_head_positives(const std::vector<double>& ious,
                                       double threshold,
                                       bool force_best_when_empty) {
  std::vector<int> pos;
  for (size_t i = 0; i < ious.size(); ++i)
    if (ious[i] > threshold) pos.push_back(static_cast<int>(i));
  if (pos.empty() && force_best_when_empty && !ious.empty()) {
    int best = 0;
    for (size_t i = 1; i < ious.size(); ++i)
      if (ious[i] > ious[best]) best = static_cast<int>(i);
    pos.push_back(best);
  }
  return pos;
}

int select_head(const std::vector<double>& confidences) {
  GOS_CHECK(!confidences.empty(), "select_head: no proposals");
  int best = 0;
  for (size_t i = 1; i < confidences.size(); ++i)
    if (confidences[i] > confidences[best]) best = static_cast<int>(i);
  return best;
}

DetectSegment::DetectSegment(nn::ParamStore& ps, SplitMix64& rng,
                             const ModelWidths& widths, int num_categories,
                             int num_queries, int num_head_queries,
                             int pixel_dim)
    : n_q_(num_queries),
      n_h_(num_head_queries),
      num_categories_(num_categories),
      pixel_dim_(pixel_dim),
      widths_(widths),
      token_proj_(ps, rng, "det.token_proj", widths.c3, widths.d_model, 1, 1, 0),
      class_head_(ps, rng, "det.class_head", widths.d_model, num_categories + 1),
      box_head_(ps, rng, "det.box_head", widths.d_model, 4),
      mask_embed_head_(ps, rng, "det.mask_embed", widths.d_model, pixel_dim),
      head_box_head_(ps, rng, "det.head_box", widths.d_model, 4),
      head_conf_head_(ps, rng, "det.head_conf", widths.d_model, 1),
      pixel_embed_(ps, rng, "det.pixel_embed", widths.c2, pixel_dim, 1, 1, 0) {
  const int heads = 4;
  for (int i = 0; i < 2; ++i)
    encoder_.emplace_back(ps, rng, "det.enc" + std::to_string(i),
                          widths.d_model, heads);
  for (int i = 0; i < 2; ++i)
    decoder_.emplace_back(ps, rng, "det.dec" + std::to_string(i),
                          widths.d_model, heads);
  for (int i = 0; i < 3; ++i)
    head_decoder_.emplace_back(ps, rng, "det.hdec" + std::to_string(i),
                               widths.d_model, heads);
  query_embed_ = "det.query_embed";
  head_query_embed_ = "det.head_query_embed";
  Tensor& q = ps.create(query_embed_, {n_q_, widths.d_model});
  Tensor& hq = ps.create(head_query_embed_, {n_h_, widths.d_model});
  double s = 1.0 / std::sqrt(static_cast<double>(widths.d_model));
  for (size_t i = 0; i < q.numel(); ++i) q[i] = rng.uniform(-s, s);
  for (size_t i = 0; i < hq.numel(); ++i) hq[i] = rng.uniform(-s, s);

  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  int grid = 1;
  while (grid * grid < n_q_) ++grid;
  query_anchor_logits_ = Tensor({n_q_, 4});
  for (int i = 0; i < n_q_; ++i) {
    query_anchor_logits_.at(i, 0) = logit((i % grid + 0.5) / grid);
    query_anchor_logits_.at(i, 1) = logit((i / grid + 0.5) / grid);
    query_anchor_logits_.at(i, 2) = logit(0.2);
    query_anchor_logits_.at(i, 3) = logit(0.2);
  }
  head_anchor_logits_ = Tensor({n_h_, 4});
  const double hx[] = {0.5, 0.25, 0.75, 0.25, 0.75};
  const double hy[] = {0.5, 0.25, 0.25, 0.75, 0.75};
  for (int i = 0; i < n_h_; ++i) {
    head_anchor_logits_.at(i, 0) = logit(hx[i % 5]);
    head_anchor_logits_.at(i, 1) = logit(hy[i % 5]);
    head_anchor_logits_.at(i, 2) = logit(0.25);
    head_anchor_logits_.at(i, 3) = logit(0.25);
  }
}

DetectOutput DetectSegment::encode_decode(nn::Tape& t, const Feature& f8,
                                          const Feature& f4) const {
  GOS_CHECK(f8.data->value.dim(0) == widths_.c3,
            "encode_decode: memory channel mismatch");
  GOS_CHECK(f4.data->value.dim(0) == widths_.c2,
            "encode_decode: pixel-level channel mismatch");
  int mh = f8.data->value.dim(1), mw = f8.data->value.dim(2);
  ad::Value mem = token_proj_.forward(t, f8.data);
  mem = ad::chw_to_tokens(mem);  // [mh*mw, d_model]
  mem = ad::add(mem, ad::constant(nn::sinusoid_encoding(mh * mw, widths_.d_model)));
  for (const auto& layer : encoder_) mem = layer.forward(t, mem);
  memory_ = mem;

  ad::Value q = t.p(query_embed_);
  for (const auto& layer : decoder_) q = layer.forward(t, q, mem);

  DetectOutput out;
  out.queries = q;
  out.class_logits = class_head_.forward(t, q);
  out.boxes = ad::sigmoid(
      ad::add(box_head_.forward(t, q), ad::constant(query_anchor_logits_)));

  ad::Value pix = pixel_embed_.forward(t, f4.data);  // [pixel_dim, ph, pw]
  out.mask_h = pix->value.dim(1);
  out.mask_w = pix->value.dim(2);
  ad::Value emb = mask_embed_head_.forward(t, q);      // [N_q, pixel_dim]
  ad::Value pix_tok = ad::chw_to_tokens(pix);          // [ph*pw, pixel_dim]
  out.mask_logits = ad::matmul(emb, ad::transpose(pix_tok));
  return out;
}

HeadOutput DetectSegment::head_decoder(nn::Tape& t) const {
  GOS_CHECK(memory_ != nullptr, "head_decoder: run encode_decode first");
  ad::Value q = t.p(head_query_embed_);
  for (const auto& layer : head_decoder_) q = layer.forward(t, q, memory_);
  HeadOutput out;
  out.boxes = ad::sigmoid(
      ad::add(head_box_head_.forward(t, q), ad::constant(head_anchor_logits_)));
  out.conf_logits = ad::reshape(head_conf_head_.forward(t, q), {n_h_});
  return out;
}

DetectionLossParts DetectSegment::detection_loss(
    nn::Tape& t, const DetectOutput& det, const HeadOutput& head,
    const DetectGroundTruth& gt, const DetectLossWeights& w) const {
  int n_gt = static_cast<int>(gt.boxes.size());
  GOS_CHECK(n_gt > 0 && n_gt <= n_q_, "detection_loss: bad ground-truth count");
  GOS_CHECK(static_cast<int>(gt.categories.size()) == n_gt &&
                static_cast<int>(gt.masks.size()) == n_gt,
            "detection_loss: inconsistent ground truth");

  // ---- bipartite matching on detached values; mask cost is excluded ----
  std::vector<std::vector<double>> cost(n_gt, std::vector<double>(n_q_));
  for (int g = 0; g < n_gt; ++g) {
    for (int q = 0; q < n_q_; ++q) {
      auto probs = softmax_row(det.class_logits->value, q);
      Box pb = box_from_row(det.boxes->value, q);
      double l1 = std::abs(pb.cx() - gt.boxes[g].cx()) +
                  std::abs(pb.cy() - gt.boxes[g].cy()) +
                  std::abs(pb.w() - gt.boxes[g].w()) +
                  std::abs(pb.h() - gt.boxes[g].h());
      cost[g][q] = -probs[gt.categories[g]] + w.l1 * l1 +
                   w.giou * (1.0 - giou(pb, gt.boxes[g]));
    }
  }
  MatchResult match = hungarian_match(cost);

  std::vector<int> matched_q(n_gt);
  for (auto [g, q] : match.pairs) matched_q[g] = q;

  // ---- object classification over all queries, unmatched -> no-object ----
  std::vector<int> targets(n_q_, num_categories_);
  for (int g = 0; g < n_gt; ++g) targets[matched_q[g]] = gt.categories[g];
  std::vector<double> class_w(num_categories_ + 1, 1.0);
  class_w[num_categories_] = 0.1;  // down-weight the abundant no-object class
  ad::Value ce = ad::cross_entropy_rows(det.class_logits, targets, class_w);

  // ---- matched box regression ----
  ad::Value mboxes = ad::gather_rows(det.boxes, matched_q);
  std::vector<Box> gt_boxes = gt.boxes;
  ad::Value l1 = ad::l1_loss_mean(mboxes, cxcywh_targets(gt_boxes));
  ad::Value gv = ad::giou_pairs(mboxes, gt_boxes);
  ad::Value giou_loss =
      ad::add_scalar(ad::mul_scalar(ad::mean_all(gv), -1.0), 1.0);

  DetectionLossParts parts;
  parts.det_obj = ad::weighted_sum(
      {{w.ce, ce}, {w.l1, l1}, {w.giou, giou_loss}});

  // ---- matched mask supervision (BCE + Dice) ----
  ad::Value mmasks = ad::gather_rows(det.mask_logits, matched_q);
  Tensor mask_t({n_gt, det.mask_h * det.mask_w});
  for (int g = 0; g < n_gt; ++g) {
    GOS_CHECK(gt.masks[g].h == det.mask_h && gt.masks[g].w == det.mask_w,
              "detection_loss: mask resolution mismatch");
    for (int i = 0; i < det.mask_h * det.mask_w; ++i)
      mask_t.at(g, i) = gt.masks[g].px[static_cast<size_t>(i)] ? 1.0 : 0.0;
  }
  parts.mask_obj = ad::weighted_sum(
      {{w.bce, ad::bce_with_logits_mean(mmasks, mask_t)},
       {w.dice, ad::dice_loss(mmasks, mask_t)}});

  // ---- head proposals: IoU-gated positives, confidence on all ----
  std::vector<double> head_ious(n_h_);
  for (int i = 0; i < n_h_; ++i)
    head_ious[i] = box_iou(box_from_row(head.boxes->value, i), gt.head_box);
  std::vector<int> pos = filter_head_positives(head_ious);

  ad::Value pboxes = ad::gather_rows(head.boxes, pos);
  std::vector<Box> head_targets(pos.size(), gt.head_box);
  ad::Value hl1 = ad::l1_loss_mean(pboxes, cxcywh_targets(head_targets));
  ad::Value hg = ad::giou_pairs(pboxes, head_targets);
  ad::Value hgiou =
      ad::add_scalar(ad::mul_scalar(ad::mean_all(hg), -1.0), 1.0);
  Tensor conf_t({n_h_});
  for (int i : pos) conf_t.at(i) = 1.0;
  ad::Value hconf = ad::bce_with_logits_mean(head.conf_logits, conf_t);
  parts.det_head =
      ad::weighted_sum({{w.l1, hl1}, {w.giou, hgiou}, {1.0, hconf}});

  parts.total = ad::weighted_sum(
      {{1.0, parts.det_obj}, {1.0, parts.mask_obj}, {1.0, parts.det_head}});
  return parts;
}

std::vector<Detection> DetectSegment::to_detections(
    const DetectOutput& det) const {
  std::vector<Detection> out(n_q_);
  for (int q = 0; q < n_q_; ++q) {
    Detection& d = out[q];
    d.class_probs = softmax_row(det.class_logits->value, q);
    d.category = 0;
    for (int k = 1; k < num_categories_; ++k)
      if (d.class_probs[k] > d.class_probs[d.category]) d.category = k;
    d.confidence = d.class_probs[d.category];
    d.box = box_from_row(det.boxes->value, q);
    d.mask = Bitmap(det.mask_h, det.mask_w);
    for (int i = 0; i < det.mask_h * det.mask_w; ++i)
      d.mask.px[static_cast<size_t>(i)] =
          det.mask_logits->value.at(q, i) > 0 ? 1 : 0;
    d.query.resize(static_cast<size_t>(widths_.d_model));
    for (int j = 0; j < widths_.d_model; ++j)
      d.query[static_cast<size_t>(j)] = det.queries->value.at(q, j);
  }
  return out;
}

Box DetectSegment::head_box_of(const HeadOutput& head, int index) const {
  GOS_CHECK(index >= 0 && index < n_h_, "head_box_of: bad index");
  return box_from_row(head.boxes->value, index);
}

std::vector<double> DetectSegment::head_confidences(
    const HeadOutput& head) const {
  std::vector<double> c(n_h_);
  for (int i = 0; i < n_h_; ++i)
    c[i] = 1.0 / (1.0 + std::exp(-head.conf_logits->value.at(i)));
  return c;
}

}  // namespace gos
