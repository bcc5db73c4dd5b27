#include "doctest.h"
#include "gos/mask_oracle.hpp"

using namespace gos;

namespace {
// uniform red rectangle on a gray background
Image rect_image(int size, const Box& r) {
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      bool inside = x >= r.x1 && x < r.x2 && y >= r.y1 && y < r.y2;
      img.at(y, x, 0) = inside ? 200 : 90;
      img.at(y, x, 1) = inside ? 40 : 90;
      img.at(y, x, 2) = inside ? 40 : 90;
    }
  return img;
}

Bitmap rect_mask(int size, const Box& r) {
  Bitmap m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      m.at(y, x) = (x >= r.x1 && x < r.x2 && y >= r.y1 && y < r.y2) ? 1 : 0;
  return m;
}
}  // namespace

TEST_CASE("segment_with_box: exact prompt on a uniform rectangle") {
  Box r{10, 10, 30, 30};
  Image img = rect_image(64, r);
  MockSegmenter seg;
  SegmenterResult res = seg.segment_with_box(img, r);
  CHECK(decode_rle(res.mask) == rect_mask(64, r));
  CHECK(res.confidence == doctest::Approx(1.0));
}

TEST_CASE("segment_with_box: prompt enlarged 2px keeps the mask") {
  Box r{10, 10, 30, 30};
  Image img = rect_image(64, r);
  MockSegmenter seg;
  Box big{8, 8, 32, 32};
  SegmenterResult res = seg.segment_with_box(img, big);
  CHECK(decode_rle(res.mask) == rect_mask(64, r));
  CHECK(res.confidence == doctest::Approx(400.0 / 576.0));
}

TEST_CASE("segment_with_box: degenerate box is an error") {
  Image img = rect_image(64, {10, 10, 30, 30});
  MockSegmenter seg;
  CHECK_THROWS(seg.segment_with_box(img, Box{10, 10, 10, 30}));
}

TEST_CASE("refine_with_mask: idempotent on a filled rectangle") {
  Box r{10, 10, 30, 30};
  Image img = rect_image(64, r);
  MockSegmenter seg;
  SegmenterResult first = seg.segment_with_box(img, r);
  SegmenterResult second = seg.refine_with_mask(img, first.mask);
  CHECK(decode_rle(second.mask) == decode_rle(first.mask));
  SegmenterResult third = seg.refine_with_mask(img, second.mask);
  CHECK(decode_rle(third.mask) == decode_rle(second.mask));
}

TEST_CASE("refine_with_mask: empty mask prompt is an error") {
  Image img = rect_image(64, {10, 10, 30, 30});
  MockSegmenter seg;
  BinaryMask empty = encode_rle(Bitmap(64, 64));
  CHECK_THROWS(seg.refine_with_mask(img, empty));
}

TEST_CASE("generate_supervision: matches analytic masks on generated scenes") {
  SceneConfig cfg;
  cfg.seed = 21;
  MockSegmenter seg;
  for (int idx = 0; idx < 4; ++idx) {
    SceneSample s = generate_scene(cfg, idx);
    std::vector<Box> boxes;
    for (const auto& o : s.objects) boxes.push_back(o.box);
    auto sup = generate_supervision(seg, s.image, boxes);
    REQUIRE(sup.size() == s.objects.size());
    for (size_t i = 0; i < sup.size(); ++i) {
      CHECK(decode_rle(sup[i].mask) == decode_rle(s.object_masks[i]));
      CHECK(sup[i].confidence >= 0.0);
      CHECK(sup[i].confidence <= 1.0);
    }
  }
}

TEST_CASE("generate_supervision: empty box list yields empty result") {
  Image img = rect_image(64, {10, 10, 30, 30});
  MockSegmenter seg;
  CHECK(generate_supervision(seg, img, {}).empty());
}

TEST_CASE("generate_supervision: error names the offending box index") {
  Image img = rect_image(64, {10, 10, 30, 30});
  MockSegmenter seg;
  std::vector<Box> boxes = {{10, 10, 30, 30}, {5, 5, 5, 20}, {2, 2, 8, 8}};
  try {
    generate_supervision(seg, img, boxes);
    FAIL("expected an error for the degenerate box");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("generate_supervision: mask contained in the 2px-dilated box") {
  SceneConfig cfg;
  cfg.seed = 4;
  SceneSample s = generate_scene(cfg, 0);
  MockSegmenter seg;
  std::vector<Box> boxes;
  for (const auto& o : s.objects) boxes.push_back(o.box);
  auto sup = generate_supervision(seg, s.image, boxes);
  for (size_t i = 0; i < sup.size(); ++i) {
    Bitmap m = decode_rle(sup[i].mask);
    const Box& b = boxes[i];
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          CHECK(x >= b.x1 - 2);
          CHECK(x < b.x2 + 2);
          CHECK(y >= b.y1 - 2);
          CHECK(y < b.y2 + 2);
        }
  }
}

TEST_CASE("make_segmenter: mock backend exists, unknown name errors") {
  CHECK(make_segmenter("mock") != nullptr);
  CHECK_THROWS(make_segmenter("sam_v9000"));
}
