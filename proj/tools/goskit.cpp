// goskit: dataset generation, mask supervision, training, evaluation, and
// gradient verification for the gaze-object pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gos/harness.hpp"
#include "gos/mask_oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

gos::TrainConfig load_config(const std::string& path) {
  gos::TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("config: cannot open " + path);
  json j;
  in >> j;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("alpha", cfg.alpha);
  get("beta", cfg.beta);
  get("gamma", cfg.gamma);
  get("lr", cfg.lr);
  get("beta1", cfg.beta1);
  get("beta2", cfg.beta2);
  get("weight_decay", cfg.weight_decay);
  get("batch", cfg.batch);
  get("epochs", cfg.epochs);
  get("steps", cfg.steps);
  get("input_size", cfg.input_size);
  get("heatmap_size", cfg.heatmap_size);
  get("num_categories", cfg.num_categories);
  get("seed", cfg.seed);
  get("init_from", cfg.init_from);
  return cfg;
}

gos::ModelConfig model_config(const gos::TrainConfig& cfg) {
  gos::ModelConfig m;
  m.image_size = cfg.input_size;
  m.num_categories = cfg.num_categories;
  m.heatmap_size = cfg.heatmap_size;
  m.seed = cfg.seed;
  return m;
}

// substitute dataset masks with oracle-generated supervision
void apply_mask_file(std::vector<gos::SceneSample>& samples,
                     const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw std::runtime_error("masks: cannot open " + path);
  json j;
  in >> j;
  if (j.at("schema_version").get<int>() != gos::kDatasetSchemaVersion)
    throw std::runtime_error("masks: unsupported schema version");
  std::map<int, json> by_index;
  for (const auto& js : j.at("samples")) by_index[js.at("index").get<int>()] = js;
  for (auto& s : samples) {
    auto it = by_index.find(s.index);
    if (it == by_index.end())
      throw std::runtime_error("masks: no entry for sample " +
                               std::to_string(s.index));
    s.object_masks.clear();
    for (const auto& jm : it->second.at("masks")) {
      gos::BinaryMask m;
      m.height = jm.at("height").get<int>();
      m.width = jm.at("width").get<int>();
      m.rle = jm.at("rle").get<std::vector<int64_t>>();
      s.object_masks.push_back(std::move(m));
    }
    if (s.object_masks.size() != s.objects.size())
      throw std::runtime_error("masks: count mismatch for sample " +
                               std::to_string(s.index));
  }
}

void write_overlays(const std::vector<gos::SceneSample>& samples,
                    const gos::EvalRun& run, const std::string& dir) {
  fs::create_directories(dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    const gos::Image& src = samples[i].image;
    const gos::EvalOutput& out = run.outputs[i];
    const gos::EvalInstance& in = run.instances[i];
    gos::Image ov = src;
    int hs = out.heatmap.dim(0);
    const gos::Bitmap& pm = in.pred_gaze_object.mask;
    const gos::Bitmap& gm = in.gt_gaze_mask;
    for (int y = 0; y < ov.h; ++y) {
      for (int x = 0; x < ov.w; ++x) {
        double h = out.heatmap.at(y * hs / ov.h, x * hs / ov.w);
        auto blend = [&](int c, double v) {
          double p = ov.at(y, x, c) + v;
          ov.at(y, x, c) = static_cast<uint8_t>(std::min(255.0, p));
        };
        blend(0, 128.0 * h);  // heatmap in red
        if (pm.h > 0 && pm.at(y * pm.h / ov.h, x * pm.w / ov.w))
          blend(1, 64.0);  // predicted gaze-object mask in green
        if (gm.h > 0 && gm.at(y * gm.h / ov.h, x * gm.w / ov.w))
          blend(2, 64.0);  // ground-truth mask in blue
      }
    }
    gos::write_png(ov, (fs::path(dir) /
                        (std::to_string(samples[i].index) + "_overlay.png"))
                           .string());
  }
}

gos::MetricsReport report_from_json(const json& j) {
  gos::MetricsReport r;
  auto ts = [&](const char* key) {
    gos::ThresholdScore s;
    s.mean = j.at(key).at("mean").get<double>();
    s.at50 = j.at(key).at("at50").get<double>();
    s.at75 = j.at(key).at("at75").get<double>();
    s.at95 = j.at(key).at("at95").get<double>();
    return s;
  };
  auto ap = [&](const char* key) {
    gos::APResult a;
    a.mean = j.at(key).at("mean").get<double>();
    a.at50 = j.at(key).at("at50").get<double>();
    a.at75 = j.at(key).at("at75").get<double>();
    return a;
  };
  r.msoc_box = ts("msoc_box");
  r.msoc_mask = ts("msoc_mask");
  r.ap_box = ap("ap_box");
  r.ap_mask = ap("ap_mask");
  r.auc = j.at("auc").get<double>();
  r.dist = j.at("dist").get<double>();
  r.ang_deg = j.at("ang_deg").get<double>();
  r.ang_excluded = j.at("ang_excluded").get<int>();
  r.gated_map = j.at("gated_map").get<double>();
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.gated_auc = opt("gated_auc");
  r.gated_dist = opt("gated_dist");
  r.gated_ang = opt("gated_ang");
  r.num_instances = j.at("num_instances").get<int>();
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaze-object detection & segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")
      ->envname("GOSKIT_CONFIG");

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  std::string gen_out = "dataset", gen_split = "train";
  int gen_count = 64;
  uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "dataset root");
  gen->add_option("--split", gen_split, "split name");
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--seed", gen_seed, "generation seed");

  // ---- masks ----
  auto* masks = app.add_subcommand("masks", "generate mask supervision");
  std::string m_root, m_split = "train", m_backend = "mock", m_out;
  masks->add_option("--dataset", m_root, "dataset root")->required();
  masks->add_option("--split", m_split, "split name");
  masks->add_option("--backend", m_backend, "segmenter backend");
  masks->add_option("--out", m_out, "output JSON path")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train the model");
  std::string t_root, t_split = "train", t_masks, t_ckpt = "model.ckpt";
  int t_steps = -1, t_epochs = -1;
  double t_lr = -1;
  uint64_t t_seed = 0;
  bool t_seed_set = false;
  tr->add_option("--dataset", t_root, "dataset root")->required();
  tr->add_option("--split", t_split, "split name");
  tr->add_option("--masks", t_masks, "supervision mask JSON (replaces dataset masks)");
  tr->add_option("--checkpoint", t_ckpt, "checkpoint output path");
  tr->add_option("--steps", t_steps, "override step count");
  tr->add_option("--epochs", t_epochs, "override epoch count");
  tr->add_option("--lr", t_lr, "override learning rate");
  tr->add_option("--seed", t_seed, "override seed")
      ->each([&](const std::string&) { t_seed_set = true; });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_root, e_split = "test", e_ckpt, e_mode = "real";
  std::string e_report = "report.json", e_md, e_overlays;
  ev->add_option("--dataset", e_root, "dataset root")->required();
  ev->add_option("--split", e_split, "split name");
  ev->add_option("--checkpoint", e_ckpt, "checkpoint path")->required();
  ev->add_option("--mode", e_mode, "real | non_real")
      ->check(CLI::IsMember({"real", "non_real"}));
  ev->add_option("--report", e_report, "report JSON output");
  ev->add_option("--markdown", e_md, "report Markdown output");
  ev->add_option("--overlays", e_overlays, "overlay PNG directory");

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
  std::vector<std::string> gc_components;
  gc->add_option("--components", gc_components, "component names (default all)");

  // ---- report ----
  auto* rp = app.add_subcommand("report", "render a report JSON as Markdown");
  std::string r_in, r_out;
  rp->add_option("--in", r_in, "report JSON")->required();
  rp->add_option("--out", r_out, "Markdown output (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    gos::TrainConfig cfg = load_config(config_path);
    cfg.seed = gos::effective_seed(cfg.seed);

    if (gen->parsed()) {
      gos::SceneConfig sc;
      sc.image_size = cfg.input_size;
      sc.num_categories = cfg.num_categories;
      sc.seed = gos::effective_seed(gen_seed);
      std::vector<gos::SceneSample> samples;
      for (int i = 0; i < gen_count; ++i)
        samples.push_back(gos::generate_scene(sc, i));
      gos::write_dataset(samples, gen_out, gen_split);
      std::cout << "wrote " << gen_count << " scenes to " << gen_out << "/"
                << gen_split << "\n";
    } else if (masks->parsed()) {
      auto backend = gos::make_segmenter(m_backend);
      auto samples = gos::read_dataset(m_root, m_split);
      json doc;
      doc["schema_version"] = gos::kDatasetSchemaVersion;
      doc["split"] = m_split;
      doc["backend"] = m_backend;
      doc["samples"] = json::array();
      for (const auto& s : samples) {
        std::vector<gos::Box> boxes;
        for (const auto& o : s.objects) boxes.push_back(o.box);
        auto sup = gos::generate_supervision(*backend, s.image, boxes);
        json js;
        js["index"] = s.index;
        js["masks"] = json::array();
        js["confidences"] = json::array();
        for (const auto& sm : sup) {
          js["masks"].push_back({{"height", sm.mask.height},
                                 {"width", sm.mask.width},
                                 {"rle", sm.mask.rle}});
          js["confidences"].push_back(sm.confidence);
        }
        doc["samples"].push_back(std::move(js));
      }
      std::ofstream out(m_out);
      if (!out.good()) throw std::runtime_error("masks: cannot write " + m_out);
      out << doc.dump(2) << "\n";
      std::cout << "wrote supervision for " << samples.size() << " scenes to "
                << m_out << "\n";
    } else if (tr->parsed()) {
      if (t_steps > 0) cfg.steps = t_steps;
      if (t_epochs > 0) cfg.epochs = t_epochs;
      if (t_lr > 0) cfg.lr = t_lr;
      if (t_seed_set) cfg.seed = gos::effective_seed(t_seed);
      cfg.validate();
      auto samples = gos::read_dataset(t_root, t_split);
      if (!t_masks.empty()) apply_mask_file(samples, t_masks);
      gos::GosModel model(model_config(cfg));
      if (!cfg.init_from.empty()) gos::load_checkpoint(model, cfg.init_from);
      gos::TrainResult res = gos::train(model, samples, cfg, t_ckpt, &std::cout);
      std::cout << (res.diverged ? "DIVERGED at step " : "finished at step ")
                << res.meta.step << ", checkpoint " << t_ckpt << "\n";
      return res.diverged ? 1 : 0;
    } else if (ev->parsed()) {
      auto samples = gos::read_dataset(e_root, e_split);
      gos::GosModel model(model_config(cfg));
      gos::load_checkpoint(model, e_ckpt);
      gos::EvalMode mode =
          e_mode == "real" ? gos::EvalMode::kReal : gos::EvalMode::kNonReal;
      gos::EvalRun run = gos::evaluate(model, samples, mode);
      std::ofstream out(e_report);
      if (!out.good())
        throw std::runtime_error("eval: cannot write " + e_report);
      out << gos::report_json(run.report) << "\n";
      if (!e_md.empty()) {
        std::ofstream md(e_md);
        md << gos::report_markdown(run.report);
      }
      if (!e_overlays.empty()) write_overlays(samples, run, e_overlays);
      std::cout << gos::report_markdown(run.report);
    } else if (gc->parsed()) {
      auto names =
          gc_components.empty() ? gos::gradcheck_components() : gc_components;
      auto items = gos::gradcheck(names, gos::effective_seed(7));
      bool all_pass = true;
      for (const auto& it : items) {
        std::cout << (it.pass ? "PASS" : "FAIL") << "  " << it.name
                  << "  max_err=" << it.max_rel_err << "  tol=" << it.tolerance
                  << "\n";
        all_pass = all_pass && it.pass;
      }
      return all_pass ? 0 : 1;
    } else if (rp->parsed()) {
      std::ifstream in(r_in);
      if (!in.good()) throw std::runtime_error("report: cannot open " + r_in);
      json j;
      in >> j;
      std::string md = gos::report_markdown(report_from_json(j));
      if (r_out.empty()) {
        std::cout << md;
      } else {
        std::ofstream out(r_out);
        out << md;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
