#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gos/geometry.hpp"
#include "gos/mask.hpp"

namespace gos {

// Interleaved RGB, row-major.
struct Image {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0) {}

  uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
  uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<size_t>(y) * w + x) * 3 + c];
  }
  bool operator==(const Image& o) const {
    return h == o.h && w == o.w && rgb == o.rgb;
  }
};

struct SceneConfig {
  int image_size = 224;
  int grid_rows = 3, grid_cols = 3;
  int num_categories = 24;
  int object_size_min = 24, object_size_max = 52;  // pixels
  uint64_t seed = 0;

  void validate() const;
};

enum class ObjectShape { kRectangle, kEllipse };

struct ObjectInstance {
  int id = 0;
  int category = 0;
  Box box;  // absolute pixels, corner convention
  ObjectShape shape = ObjectShape::kRectangle;
  std::array<uint8_t, 3> color = {0, 0, 0};
};

struct SceneSample {
  int index = 0;
  Image image;
  std::vector<ObjectInstance> objects;
  Box head_box;                       // absolute pixels
  std::array<double, 2> gaze_vector_gt = {1, 0};  // unit, image convention
  std::array<double, 2> gaze_point_gt = {0, 0};   // normalized [0,1]^2
  int gaze_object_id = 0;
  std::vector<BinaryMask> object_masks;  // analytic per-object masks
};

SceneSample generate_scene(const SceneConfig& config, int index);

// analytic rasterization of one object (pixel-center inclusion)
Bitmap rasterize_object(const ObjectInstance& obj, int h, int w);

// Layout: <root>/images/<split>/<index>.png, <root>/annotations/<split>.json
void write_dataset(const std::vector<SceneSample>& samples,
                   const std::string& root, const std::string& split);
std::vector<SceneSample> read_dataset(const std::string& root,
                                      const std::string& split);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

constexpr int kDatasetSchemaVersion = 1;

}  // namespace gos
