#include "gos/model.hpp"

#include <algorithm>
#include <cmath>

namespace gos {

namespace {

// bilinear read of a [s,s] map at normalized (u,v), half-pixel convention
double sample_map(const Tensor& m, double u, double v) {
  int s = m.dim(0);
  double x = std::clamp(u * s - 0.5, 0.0, s - 1.0);
  double y = std::clamp(v * s - 0.5, 0.0, s - 1.0);
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, s - 1), y1 = std::min(y0 + 1, s - 1);
  double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x1)) +
         fy * ((1 - fx) * m.at(y1, x0) + fx * m.at(y1, x1));
}

}  // namespace

GosModel::GosModel(const ModelConfig& cfg)
    : cfg_(cfg),
      params_(),
      init_rng_(cfg.seed),
      backbone_(params_, init_rng_, ModelWidths{}, cfg.image_size),
      detect_(params_, init_rng_, ModelWidths{}, cfg.num_categories,
              cfg.num_queries, cfg.num_head_queries),
      gaze_(params_, init_rng_, ModelWidths{}, cfg.image_size),
      interact_(params_, init_rng_, ModelWidths{}, cfg.heatmap_size) {
  GOS_CHECK(cfg.image_size % 32 == 0, "ModelConfig: image size % 32 != 0");
}

ModelForward GosModel::forward(nn::Tape& t, const Tensor& image,
                               const std::optional<Box>& gt_head) const {
  ModelForward f;
  f.pyramid = backbone_.extract_pyramid(t, image);
  Feature mem = backbone_.shuffle_object_features(t, f.pyramid.f3, 3);
  Feature pix = backbone_.shuffle_object_features(t, f.pyramid.f2, 2);
  f.det = detect_.encode_decode(t, mem, pix);
  f.head = detect_.head_decoder(t);

  if (gt_head.has_value()) {
    gt_head_used_ = true;
    f.head_box_used = *gt_head;
  } else {
    f.head_index = select_head(detect_.head_confidences(f.head));
    f.head_box_used = detect_.head_box_of(f.head, f.head_index);
  }
  ad::Value f_scene = backbone_.scene_residual(t, f.pyramid.f4.data);
  f.gaze = gaze_.forward(t, backbone_, f.pyramid, f_scene, f.head_box_used);
  f.inter = interact_.forward(t, f_scene, f.gaze.f_gaze, f.gaze.fused,
                              f.det.queries);
  return f;
}

ModelLossParts GosModel::training_loss(nn::Tape& t, const ModelForward& fwd,
                                       const TrainTarget& target) const {
  ModelLossParts parts;
  parts.det = detect_.detection_loss(t, fwd.det, fwd.head, target.det);
  parts.dir = GazeField::direction_loss(fwd.gaze.gaze_vector,
                                        target.gaze_vector[0],
                                        target.gaze_vector[1]);
  Tensor hm = ObjectInteraction::gt_heatmap(
      target.gaze_point[0], target.gaze_point[1], cfg_.heatmap_size);
  parts.gaze = ObjectInteraction::heatmap_loss(fwd.inter.heatmap, hm);
  parts.eng =
      ObjectInteraction::energy_loss(fwd.inter.heatmap, target.gaze_mask);
  return parts;
}

TrainTarget GosModel::make_target(const SceneSample& sample) const {
  GOS_CHECK(sample.image.h == cfg_.image_size &&
                sample.image.w == cfg_.image_size,
            "make_target: image size mismatch");
  GOS_CHECK(sample.object_masks.size() == sample.objects.size(),
            "make_target: masks missing");
  double inv = 1.0 / cfg_.image_size;
  int mg = cfg_.image_size / 4;

  TrainTarget tgt;
  for (size_t i = 0; i < sample.objects.size(); ++i) {
    const ObjectInstance& o = sample.objects[i];
    GOS_CHECK(o.category >= 0 && o.category < cfg_.num_categories,
              "make_target: category out of range");
    tgt.det.boxes.push_back(o.box.scaled(inv));
    tgt.det.categories.push_back(o.category);
    Bitmap full = decode_rle(sample.object_masks[i]);
    tgt.det.masks.push_back(downsample_coverage(full, mg, mg));
    if (o.id == sample.gaze_object_id) {
      tgt.gaze_mask =
          downsample_coverage(full, cfg_.heatmap_size, cfg_.heatmap_size);
      if (tgt.gaze_mask.area() == 0) {
        // object too thin to survive downsampling: mark the cell under the
        // center of its bounding box instead
        Box bb = full.bounding_box();
        int cj = std::clamp(static_cast<int>((bb.x1 + bb.x2) * 0.5 /
                                             sample.image.w *
                                             cfg_.heatmap_size),
                            0, cfg_.heatmap_size - 1);
        int ci = std::clamp(static_cast<int>((bb.y1 + bb.y2) * 0.5 /
                                             sample.image.h *
                                             cfg_.heatmap_size),
                            0, cfg_.heatmap_size - 1);
        tgt.gaze_mask.at(ci, cj) = true;
        tgt.gaze_mask_fallback = true;
      }
    }
  }
  GOS_CHECK(tgt.gaze_mask.h > 0, "make_target: gaze object id not found");
  tgt.det.head_box = sample.head_box.scaled(inv);
  tgt.gaze_vector = sample.gaze_vector_gt;
  tgt.gaze_point = sample.gaze_point_gt;
  return tgt;
}

EvalOutput GosModel::infer(const Image& img, const std::optional<Box>& gt_head) {
  nn::Tape t(params_);
  ModelForward f = forward(t, image_to_tensor(img), gt_head);

  EvalOutput out;
  out.detections = detect_.to_detections(f.det);
  out.head_box = f.head_box_used;
  out.head_confidence =
      gt_head.has_value() ? 1.0
                          : detect_.head_confidences(f.head)[f.head_index];
  out.gaze_vector = {f.gaze.gaze_vector->value.at(0),
                     f.gaze.gaze_vector->value.at(1)};
  out.heatmap = f.inter.heatmap->value;
  for (size_t k = 0; k < out.heatmap.numel(); ++k)
    out.heatmap[k] = std::clamp(out.heatmap[k], 0.0, 1.0);

  int s = cfg_.heatmap_size, bi = 0, bj = 0;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      if (out.heatmap.at(i, j) > out.heatmap.at(bi, bj)) bi = i, bj = j;
  out.gaze_point = {(bj + 0.5) / s, (bi + 0.5) / s};

  // the predicted gaze object concentrates heatmap energy on its mask
  out.gaze_scores.resize(out.detections.size(), 0.0);
  for (size_t d = 0; d < out.detections.size(); ++d) {
    const Bitmap& m = out.detections[d].mask;
    int64_t area = m.area();
    if (area == 0) continue;
    double acc = 0.0;
    for (int i = 0; i < m.h; ++i)
      for (int j = 0; j < m.w; ++j)
        if (m.at(i, j))
          acc += sample_map(out.heatmap, (j + 0.5) / m.w, (i + 0.5) / m.h);
    out.gaze_scores[d] = acc / std::sqrt(static_cast<double>(area));
  }
  out.gaze_object = 0;
  for (size_t d = 1; d < out.gaze_scores.size(); ++d)
    if (out.gaze_scores[d] > out.gaze_scores[out.gaze_object])
      out.gaze_object = static_cast<int>(d);
  return out;
}

}  // namespace gos
