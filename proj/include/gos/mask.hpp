#pragma once

#include <cstdint>
#include <vector>

#include "gos/geometry.hpp"

namespace gos {

// Row-major binary raster.
struct Bitmap {
  int h = 0, w = 0;
  std::vector<uint8_t> px;

  Bitmap() = default;
  Bitmap(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return px[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return px[static_cast<size_t>(y) * w + x]; }

  int64_t area() const;
  bool empty_mask() const { return area() == 0; }
  bool operator==(const Bitmap& o) const {
    return h == o.h && w == o.w && px == o.px;
  }
  // tight bounding box in pixel units ([x1,x2) exclusive); invalid box if empty
  Box bounding_box() const;
};

// Column-major run-length encoding: alternating runs of 0s then 1s,
// always starting with a (possibly empty) 0-run.
struct BinaryMask {
  int height = 0, width = 0;
  std::vector<int64_t> rle;
};

BinaryMask encode_rle(const Bitmap& mask);
Bitmap decode_rle(const BinaryMask& mask);

// 3x3 box structuring element morphology
Bitmap dilate3x3(const Bitmap& m);
Bitmap erode3x3(const Bitmap& m);
Bitmap closing3x3(const Bitmap& m);

Bitmap bitmap_and(const Bitmap& a, const Bitmap& b);
Bitmap bitmap_or(const Bitmap& a, const Bitmap& b);

// area-averaged downsample thresholded at 50% coverage
Bitmap downsample_coverage(const Bitmap& m, int out_h, int out_w,
                           double threshold = 0.5);

}  // namespace gos
