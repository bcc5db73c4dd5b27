#include "gos/scene.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gos/rng.hpp"
#include "gos/tensor.hpp"  // GOS_CHECK

namespace gos {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint8_t kBackground = 230;

// 12 color families x 2 shapes = 24 distinct categories; hues chosen so that
// 16-level quantization keeps every family distinct from the background.
std::array<uint8_t, 3> family_color(int family, SplitMix64& rng) {
  static const int kHues[12][3] = {
      {200, 40, 40},  {40, 160, 40},  {40, 70, 200},  {200, 160, 30},
      {160, 40, 180}, {30, 170, 170}, {240, 110, 30}, {110, 60, 20},
      {90, 120, 200}, {200, 90, 140}, {60, 200, 110}, {120, 120, 40}};
  std::array<uint8_t, 3> c;
  for (int i = 0; i < 3; ++i) {
    int jitter = rng.uniform_int(11) - 5;  // stays within one quantization bin
    int v = kHues[family % 12][i] + jitter;
    c[i] = static_cast<uint8_t>(std::clamp(v, 0, 255));
  }
  return c;
}

void fill_object(Image& img, const ObjectInstance& obj) {
  Bitmap m = rasterize_object(obj, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      if (m.at(y, x))
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = obj.color[c];
}

void draw_head(Image& img, const Box& head_box, double dir_x, double dir_y) {
  double cx = head_box.cx(), cy = head_box.cy();
  double r = 0.5 * std::min(head_box.w(), head_box.h());
  // filled disc with a background-colored notch marking the facing direction
  double nx = cx + dir_x * r * 0.6, ny = cy + dir_y * r * 0.6;
  double nr = r * 0.3;
  for (int y = static_cast<int>(head_box.y1); y < head_box.y2; ++y)
    for (int x = static_cast<int>(head_box.x1); x < head_box.x2; ++x) {
      if (y < 0 || y >= img.h || x < 0 || x >= img.w) continue;
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > r * r) continue;
      double ex = x + 0.5 - nx, ey = y + 0.5 - ny;
      bool notch = ex * ex + ey * ey <= nr * nr;
      uint8_t head_color[3] = {60, 45, 35};
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = notch ? kBackground : head_color[c];
    }
}

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>()};
}

}  // namespace

void SceneConfig::validate() const {
  GOS_CHECK(image_size >= 64, "SceneConfig: image_size must be >= 64");
  GOS_CHECK(grid_rows * grid_cols >= 2, "SceneConfig: need grid_rows*grid_cols >= 2");
  GOS_CHECK(num_categories >= 2, "SceneConfig: need num_categories >= 2");
  GOS_CHECK(object_size_min > 0 && object_size_max >= object_size_min,
            "SceneConfig: bad object_size_range");
}

Bitmap rasterize_object(const ObjectInstance& obj, int h, int w) {
  Bitmap m(h, w);
  const Box& b = obj.box;
  int y0 = std::max(0, static_cast<int>(std::floor(b.y1)));
  int y1 = std::min(h, static_cast<int>(std::ceil(b.y2)));
  int x0 = std::max(0, static_cast<int>(std::floor(b.x1)));
  int x1 = std::min(w, static_cast<int>(std::ceil(b.x2)));
  double cx = b.cx(), cy = b.cy();
  double rx = 0.5 * b.w(), ry = 0.5 * b.h();
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      double px = x + 0.5, py = y + 0.5;
      if (px < b.x1 || px >= b.x2 || py < b.y1 || py >= b.y2) continue;
      if (obj.shape == ObjectShape::kEllipse) {
        double ex = (px - cx) / rx, ey = (py - cy) / ry;
        if (ex * ex + ey * ey > 1.0) continue;
      }
      m.at(y, x) = 1;
    }
  return m;
}

SceneSample generate_scene(const SceneConfig& config, int index) {
  config.validate();
  SplitMix64 rng(mix_seed(config.seed, static_cast<uint64_t>(index)));

  const int size = config.image_size;
  // bottom strip reserved for the head so it never overlaps object boxes
  const int strip_h = std::max(28, size / 6);
  const int region_h = size - strip_h;
  const int cell_h = region_h / config.grid_rows;
  const int cell_w = size / config.grid_cols;
  // >= 1 px margin inside each cell keeps neighbors non-overlapping with a
  // small gap while staying adjacent
  const int max_fit = std::min(cell_h, cell_w) - 2;
  GOS_CHECK(max_fit >= config.object_size_min,
            "generate_scene: configuration infeasible, objects cannot fit in grid cells");

  SceneSample s;
  s.index = index;
  s.image = Image(size, size);
  for (auto& v : s.image.rgb) v = kBackground;

  int id = 0;
  for (int r = 0; r < config.grid_rows; ++r)
    for (int c = 0; c < config.grid_cols; ++c) {
      ObjectInstance obj;
      obj.id = id++;
      obj.category = rng.uniform_int(config.num_categories);
      obj.shape = (obj.category % 2 == 0) ? ObjectShape::kRectangle
                                          : ObjectShape::kEllipse;
      obj.color = family_color(obj.category / 2, rng);
      int limit = std::min(config.object_size_max, max_fit);
      int ow = config.object_size_min + rng.uniform_int(limit - config.object_size_min + 1);
      int oh = config.object_size_min + rng.uniform_int(limit - config.object_size_min + 1);
      ow = std::min(ow, cell_w - 2);
      oh = std::min(oh, cell_h - 2);
      int ox = c * cell_w + 1 + rng.uniform_int(cell_w - 1 - ow);
      int oy = r * cell_h + 1 + rng.uniform_int(cell_h - 1 - oh);
      obj.box = {static_cast<double>(ox), static_cast<double>(oy),
                 static_cast<double>(ox + ow), static_cast<double>(oy + oh)};
      fill_object(s.image, obj);
      s.objects.push_back(obj);
    }

  for (const auto& obj : s.objects)
    s.object_masks.push_back(encode_rle(rasterize_object(obj, size, size)));

  // head in the reserved bottom strip
  int head_r = std::min(strip_h / 2 - 2, size / 12);
  int hx = head_r + 2 + rng.uniform_int(size - 2 * (head_r + 2));
  int hy = region_h + strip_h / 2;
  s.head_box = {static_cast<double>(hx - head_r), static_cast<double>(hy - head_r),
                static_cast<double>(hx + head_r), static_cast<double>(hy + head_r)};

  s.gaze_object_id = rng.uniform_int(static_cast<int>(s.objects.size()));
  const Box& gbox = s.objects[s.gaze_object_id].box;
  double dx = gbox.cx() - s.head_box.cx();
  double dy = gbox.cy() - s.head_box.cy();
  double nrm = std::sqrt(dx * dx + dy * dy);
  GOS_CHECK(nrm > 0, "generate_scene: degenerate gaze vector");
  s.gaze_vector_gt = {dx / nrm, dy / nrm};
  s.gaze_point_gt = {gbox.cx() / size, gbox.cy() / size};

  draw_head(s.image, s.head_box, s.gaze_vector_gt[0], s.gaze_vector_gt[1]);
  return s;
}

void write_png(const Image& img, const std::string& path) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);  // BGR
      px[0] = img.at(y, x, 2);
      px[1] = img.at(y, x, 1);
      px[2] = img.at(y, x, 0);
    }
  GOS_CHECK(cv::imwrite(path, m), "write_png: failed to write " + path);
}

Image read_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  GOS_CHECK(!m.empty(), "read_png: cannot read " + path);
  Image img(m.rows, m.cols);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);
      img.at(y, x, 0) = px[2];
      img.at(y, x, 1) = px[1];
      img.at(y, x, 2) = px[0];
    }
  return img;
}

void write_dataset(const std::vector<SceneSample>& samples,
                   const std::string& root, const std::string& split) {
  fs::create_directories(fs::path(root) / "images" / split);
  fs::create_directories(fs::path(root) / "annotations");
  json doc;
  doc["schema_version"] = kDatasetSchemaVersion;
  doc["samples"] = json::array();
  for (const auto& s : samples) {
    std::string rel = "images/" + split + "/" + std::to_string(s.index) + ".png";
    write_png(s.image, (fs::path(root) / rel).string());
    json js;
    js["index"] = s.index;
    js["image"] = rel;
    js["objects"] = json::array();
    for (const auto& o : s.objects) {
      js["objects"].push_back(
          {{"id", o.id},
           {"category", o.category},
           {"box", box_to_json(o.box)},
           {"shape", o.shape == ObjectShape::kEllipse ? "ellipse" : "rectangle"},
           {"color", {o.color[0], o.color[1], o.color[2]}}});
    }
    js["masks"] = json::array();
    for (const auto& m : s.object_masks)
      js["masks"].push_back({{"height", m.height}, {"width", m.width}, {"rle", m.rle}});
    js["head_box"] = box_to_json(s.head_box);
    js["gaze_vector"] = {s.gaze_vector_gt[0], s.gaze_vector_gt[1]};
    js["gaze_point"] = {s.gaze_point_gt[0], s.gaze_point_gt[1]};
    js["gaze_object_id"] = s.gaze_object_id;
    doc["samples"].push_back(std::move(js));
  }
  std::ofstream out(fs::path(root) / "annotations" / (split + ".json"));
  GOS_CHECK(out.good(), "write_dataset: cannot open annotations file");
  out << doc.dump(1);
}

std::vector<SceneSample> read_dataset(const std::string& root,
                                      const std::string& split) {
  fs::path ann = fs::path(root) / "annotations" / (split + ".json");
  std::ifstream in(ann);
  GOS_CHECK(in.good(), "read_dataset: missing annotations file " + ann.string());
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error("read_dataset: corrupt annotations file: " +
                             std::string(e.what()));
  }
  GOS_CHECK(doc.contains("schema_version") &&
                doc["schema_version"].get<int>() == kDatasetSchemaVersion,
            "read_dataset: unknown schema_version");
  std::vector<SceneSample> samples;
  for (const auto& js : doc.at("samples")) {
    SceneSample s;
    s.index = js.at("index").get<int>();
    s.image = read_png((fs::path(root) / js.at("image").get<std::string>()).string());
    for (const auto& jo : js.at("objects")) {
      ObjectInstance o;
      o.id = jo.at("id").get<int>();
      o.category = jo.at("category").get<int>();
      o.box = box_from_json(jo.at("box"));
      o.shape = jo.at("shape").get<std::string>() == "ellipse"
                    ? ObjectShape::kEllipse
                    : ObjectShape::kRectangle;
      auto col = jo.at("color");
      o.color = {col.at(0).get<uint8_t>(), col.at(1).get<uint8_t>(),
                 col.at(2).get<uint8_t>()};
      s.objects.push_back(o);
    }
    for (const auto& jm : js.at("masks")) {
      BinaryMask m;
      m.height = jm.at("height").get<int>();
      m.width = jm.at("width").get<int>();
      m.rle = jm.at("rle").get<std::vector<int64_t>>();
      s.object_masks.push_back(std::move(m));
    }
    s.head_box = box_from_json(js.at("head_box"));
    s.gaze_vector_gt = {js.at("gaze_vector").at(0).get<double>(),
                        js.at("gaze_vector").at(1).get<double>()};
    s.gaze_point_gt = {js.at("gaze_point").at(0).get<double>(),
                       js.at("gaze_point").at(1).get<double>()};
    s.gaze_object_id = js.at("gaze_object_id").get<int>();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace gos
