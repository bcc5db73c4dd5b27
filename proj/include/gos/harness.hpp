#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gos/metrics.hpp"
#include "gos/model.hpp"

namespace gos {

struct TrainConfig {
  // total loss = det + alpha*dir + beta*gaze + gamma*eng
  double alpha = 10, beta = 1000, gamma = 1;
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, weight_decay = 1e-4;
  int batch = 2;
  int epochs = 30;
  int steps = -1;  // when > 0, overrides the epoch-derived step count
  int eta = 2;
  int input_size = 224;
  int heatmap_size = 64;
  int num_categories = 24;
  uint64_t seed = 1;
  std::string init_from;  // reserved for pretrain/finetune parity

  void validate() const;
  std::string hash() const;  // stable digest of every field above
};

struct CheckpointMeta {
  int64_t step = 0;
  std::string config_hash;
  std::map<std::string, double> loss_means;  // running means per component
};

// Eq-style weighted total; throws on non-finite parts
double total_loss(double det, double dir, double gaze, double eng,
                  const TrainConfig& cfg);
ad::Value total_loss_value(const ModelLossParts& parts,
                           const TrainConfig& cfg);

// decoupled-weight-decay adaptive-moment optimizer
class AdamW {
 public:
  AdamW(nn::ParamStore& params, const TrainConfig& cfg);
  void step(const std::map<std::string, Tensor>& grads);
  int64_t steps_taken() const { return t_; }

 private:
  nn::ParamStore* params_;
  double lr_, beta1_, beta2_, wd_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct StepLog {
  int64_t step = 0;
  double total = 0, det = 0, dir = 0, gaze = 0, eng = 0;
};

struct TrainResult {
  CheckpointMeta meta;
  std::vector<StepLog> curve;
  bool diverged = false;
};

// single-threaded deterministic training; checkpoint_path may be empty
TrainResult train(GosModel& model, const std::vector<SceneSample>& data,
                  const TrainConfig& cfg, const std::string& checkpoint_path,
                  std::ostream* log = nullptr);

enum class EvalMode { kReal, kNonReal };

struct EvalRun {
  MetricsReport report;
  std::vector<EvalInstance> instances;
  std::vector<EvalOutput> outputs;
};

EvalRun evaluate(GosModel& model, const std::vector<SceneSample>& data,
                 EvalMode mode);

// versioned parameter blob + JSON sidecar ("<path>.json")
void save_checkpoint(const GosModel& model, const TrainConfig& cfg,
                     const CheckpointMeta& meta, const std::string& path);
CheckpointMeta load_checkpoint(GosModel& model, const std::string& path);

struct GradcheckItem {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass = false;
};

// finite-difference verification; an empty list yields an empty report
// (use gradcheck_components() to run everything)
std::vector<GradcheckItem> gradcheck(const std::vector<std::string>& components,
                                     uint64_t seed = 7);
std::vector<std::string> gradcheck_components();

// seed override hook for the CLI: returns cfg seed or GOSKIT_SEED when set
uint64_t effective_seed(uint64_t config_seed);

}  // namespace gos
