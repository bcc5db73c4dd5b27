#include "gos/mask_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

#include "gos/tensor.hpp"  // GOS_CHECK

namespace gos {

namespace {

inline int quantize(const Image& img, int y, int x) {
  return (img.at(y, x, 0) / 16) * 256 + (img.at(y, x, 1) / 16) * 16 +
         img.at(y, x, 2) / 16;
}

// most frequent quantized color among region pixels; ties broken by lowest key
int dominant_color(const Image& img, const Bitmap& region) {
  std::map<int, int64_t> counts;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (region.at(y, x)) ++counts[quantize(img, y, x)];
  GOS_CHECK(!counts.empty(), "dominant_color: empty region");
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

// 4-connected flood fill over pixels of the given quantized color, starting
// from the dominant-colored pixel nearest to the seed, restricted to `allowed`
Bitmap flood_component(const Image& img, const Bitmap& allowed, int color,
                       int seed_y, int seed_x) {
  Bitmap out(img.h, img.w);
  int by = -1, bx = -1;
  double best = 1e18;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      if (!allowed.at(y, x) || quantize(img, y, x) != color) continue;
      double d = static_cast<double>(y - seed_y) * (y - seed_y) +
                 static_cast<double>(x - seed_x) * (x - seed_x);
      if (d < best) {
        best = d;
        by = y;
        bx = x;
      }
    }
  if (by < 0) return out;
  std::deque<std::pair<int, int>> queue{{by, bx}};
  out.at(by, bx) = 1;
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      int yy = y + dy[k], xx = x + dx[k];
      if (yy < 0 || yy >= img.h || xx < 0 || xx >= img.w) continue;
      if (out.at(yy, xx) || !allowed.at(yy, xx)) continue;
      if (quantize(img, yy, xx) != color) continue;
      out.at(yy, xx) = 1;
      queue.emplace_back(yy, xx);
    }
  }
  return out;
}

Bitmap box_region(const Box& b, int h, int w, int dilation) {
  Bitmap region(h, w);
  int x0 = std::max(0, static_cast<int>(std::floor(b.x1)) - dilation);
  int x1 = std::min(w, static_cast<int>(std::ceil(b.x2)) + dilation);
  int y0 = std::max(0, static_cast<int>(std::floor(b.y1)) - dilation);
  int y1 = std::min(h, static_cast<int>(std::ceil(b.y2)) + dilation);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) region.at(y, x) = 1;
  return region;
}

Bitmap box_interior(const Box& b, int h, int w) { return box_region(b, h, w, 0); }

}  // namespace

SegmenterResult MockSegmenter::segment_with_box(const Image& image,
                                                const Box& box_prompt) const {
  GOS_CHECK(box_prompt.valid(), "segment_with_box: degenerate box prompt");
  GOS_CHECK(box_prompt.x1 >= 0 && box_prompt.y1 >= 0 &&
                box_prompt.x2 <= image.w && box_prompt.y2 <= image.h,
            "segment_with_box: box outside image");
  Bitmap inside = box_interior(box_prompt, image.h, image.w);
  int color = dominant_color(image, inside);
  Bitmap allowed = box_region(box_prompt, image.h, image.w, 2);
  int cy = static_cast<int>(box_prompt.cy());
  int cx = static_cast<int>(box_prompt.cx());
  Bitmap component = flood_component(image, allowed, color, cy, cx);
  SegmenterResult r;
  r.confidence = std::min(1.0, static_cast<double>(component.area()) /
                                   box_prompt.area());
  r.mask = encode_rle(component);
  return r;
}

SegmenterResult MockSegmenter::refine_with_mask(
    const Image& image, const BinaryMask& mask_prompt) const {
  GOS_CHECK(mask_prompt.height == image.h && mask_prompt.width == image.w,
            "refine_with_mask: mask dimensions must equal image dimensions");
  Bitmap prompt = decode_rle(mask_prompt);
  GOS_CHECK(!prompt.empty_mask(), "refine_with_mask: empty mask prompt");
  // centroid cell of the prompt seeds the second pass
  double sy = 0, sx = 0;
  int64_t n = 0;
  for (int y = 0; y < prompt.h; ++y)
    for (int x = 0; x < prompt.w; ++x)
      if (prompt.at(y, x)) {
        sy += y;
        sx += x;
        ++n;
      }
  int seed_y = static_cast<int>(sy / n);
  int seed_x = static_cast<int>(sx / n);
  Box bbox = prompt.bounding_box();
  Bitmap region = box_interior(bbox, image.h, image.w);
  int color = dominant_color(image, prompt);
  Bitmap component = flood_component(image, region, color, seed_y, seed_x);
  // one 3x3 closing fills small interior holes; clipping back to the prompt's
  // bounding box keeps the two-pass containment contract
  Bitmap closed = bitmap_and(closing3x3(component), region);
  SegmenterResult r;
  r.confidence = std::min(1.0, static_cast<double>(closed.area()) / bbox.area());
  r.mask = encode_rle(closed);
  return r;
}

std::vector<SupervisionMask> generate_supervision(const Segmenter& backend,
                                                  const Image& image,
                                                  const std::vector<Box>& boxes) {
  GOS_CHECK(backend.accepts_box_prompt() && backend.accepts_mask_prompt(),
            "generate_supervision: backend must accept box and mask prompts");
  std::vector<SupervisionMask> out;
  for (size_t i = 0; i < boxes.size(); ++i) {
    try {
      SegmenterResult first = backend.segment_with_box(image, boxes[i]);
      SegmenterResult second = backend.refine_with_mask(image, first.mask);
      out.push_back({std::move(second.mask), second.confidence});
    } catch (const std::exception& e) {
      throw std::runtime_error("generate_supervision: box index " +
                               std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& backend_name) {
  GOS_CHECK(backend_name == "mock",
            "make_segmenter: unknown backend '" + backend_name + "'");
  return std::make_unique<MockSegmenter>();
}

}  // namespace gos
