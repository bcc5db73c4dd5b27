#pragma once

#include <algorithm>
#include <cmath>

namespace gos {

// Corner box (x1,y1,x2,y2), x right / y down. Units are context-dependent:
// absolute pixels on disk, normalized [0,1] at the model boundary.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  Box scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }
};

inline double intersection_area(const Box& a, const Box& b) {
  double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return std::max(0.0, w) * std::max(0.0, h);
}

inline double union_area(const Box& a, const Box& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

inline double box_iou(const Box& a, const Box& b) {
  double u = union_area(a, b);
  return u > 0 ? intersection_area(a, b) / u : 0.0;
}

inline Box enclosing_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

// generalized IoU: IoU - (C - U)/C with C the min enclosing box area.
// Degenerate pairs (empty union) score 0.
inline double giou(const Box& a, const Box& b) {
  double u = union_area(a, b);
  if (u <= 0) return 0.0;
  double iou = intersection_area(a, b) / u;
  double c = enclosing_box(a, b).area();
  return c > 0 ? iou - (c - u) / c : iou;
}

// center-format (cx,cy,w,h) <-> corner conversion
inline Box from_cxcywh(double cx, double cy, double w, double h) {
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

}  // namespace gos
