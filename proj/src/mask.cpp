#include "gos/mask.hpp"

#include <algorithm>

#include "gos/tensor.hpp"  // GOS_CHECK

namespace gos {

int64_t Bitmap::area() const {
  int64_t n = 0;
  for (uint8_t v : px) n += v;
  return n;
}

Box Bitmap::bounding_box() const {
  int x1 = w, y1 = h, x2 = -1, y2 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (at(y, x)) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
  if (x2 < 0) return {};
  return {static_cast<double>(x1), static_cast<double>(y1),
          static_cast<double>(x2 + 1), static_cast<double>(y2 + 1)};
}

BinaryMask encode_rle(const Bitmap& mask) {
  BinaryMask out;
  out.height = mask.h;
  out.width = mask.w;
  uint8_t cur = 0;  // runs start with a 0-run
  int64_t run = 0;
  for (int x = 0; x < mask.w; ++x)
    for (int y = 0; y < mask.h; ++y) {
      uint8_t v = mask.at(y, x);
      GOS_CHECK(v == 0 || v == 1, "encode_rle: mask values must be 0/1");
      if (v == cur) {
        ++run;
      } else {
        out.rle.push_back(run);
        cur = v;
        run = 1;
      }
    }
  out.rle.push_back(run);
  if (out.rle.empty()) out.rle.push_back(0);
  return out;
}

Bitmap decode_rle(const BinaryMask& mask) {
  int64_t total = 0;
  for (int64_t r : mask.rle) {
    GOS_CHECK(r >= 0, "decode_rle: negative run length");
    total += r;
  }
  GOS_CHECK(total == static_cast<int64_t>(mask.height) * mask.width,
            "decode_rle: run-length sum does not match height*width");
  Bitmap out(mask.height, mask.width);
  int64_t pos = 0;
  uint8_t cur = 0;
  for (int64_t r : mask.rle) {
    for (int64_t i = 0; i < r; ++i, ++pos) {
      int x = static_cast<int>(pos / mask.height);
      int y = static_cast<int>(pos % mask.height);
      out.at(y, x) = cur;
    }
    cur = 1 - cur;
  }
  return out;
}

Bitmap dilate3x3(const Bitmap& m) {
  Bitmap out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w && m.at(yy, xx)) v = 1;
        }
      out.at(y, x) = v;
    }
  return out;
}

Bitmap erode3x3(const Bitmap& m) {
  Bitmap out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      uint8_t v = 1;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1 && v; ++dx) {
          int yy = y + dy, xx = x + dx;
          // out-of-image counts as background
          if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w || !m.at(yy, xx)) v = 0;
        }
      out.at(y, x) = v;
    }
  return out;
}

Bitmap closing3x3(const Bitmap& m) { return erode3x3(dilate3x3(m)); }

Bitmap bitmap_and(const Bitmap& a, const Bitmap& b) {
  GOS_CHECK(a.h == b.h && a.w == b.w, "bitmap_and: size mismatch");
  Bitmap out(a.h, a.w);
  for (size_t i = 0; i < out.px.size(); ++i) out.px[i] = a.px[i] & b.px[i];
  return out;
}

Bitmap bitmap_or(const Bitmap& a, const Bitmap& b) {
  GOS_CHECK(a.h == b.h && a.w == b.w, "bitmap_or: size mismatch");
  Bitmap out(a.h, a.w);
  for (size_t i = 0; i < out.px.size(); ++i) out.px[i] = a.px[i] | b.px[i];
  return out;
}

Bitmap downsample_coverage(const Bitmap& m, int out_h, int out_w,
                           double threshold) {
  Bitmap out(out_h, out_w);
  double sy = static_cast<double>(m.h) / out_h;
  double sx = static_cast<double>(m.w) / out_w;
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      double y0 = i * sy, y1 = (i + 1) * sy;
      double x0 = j * sx, x1 = (j + 1) * sx;
      double covered = 0.0;
      for (int y = static_cast<int>(y0); y < m.h && y < y1; ++y) {
        double fy = std::min(y1, static_cast<double>(y + 1)) -
                    std::max(y0, static_cast<double>(y));
        if (fy <= 0) continue;
        for (int x = static_cast<int>(x0); x < m.w && x < x1; ++x) {
          double fx = std::min(x1, static_cast<double>(x + 1)) -
                      std::max(x0, static_cast<double>(x));
          if (fx <= 0) continue;
          if (m.at(y, x)) covered += fy * fx;
        }
      }
      out.at(i, j) = covered / (sy * sx) >= threshold ? 1 : 0;
    }
  return out;
}

}  // namespace gos
