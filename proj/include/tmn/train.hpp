#pragma once

// Training loop, evaluation with the executed-layer audit, and the shim
// evaluators used to self-check the harness.

#include <map>
#include <string>
#include <vector>

#include "tmn/config.hpp"
#include "tmn/model.hpp"

namespace tmn {

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// one model handle for both families
struct HarnessModel {
  ModelKind kind = ModelKind::TmnStack;
  std::optional<TmnModel<float>> tmn;
  std::optional<BaselineModel<float>> baseline;

  static HarnessModel build(const ExperimentConfig& cfg, int n_answers);
  static HarnessModel from_checkpoint(const Checkpoint& ckpt);

  const ModelConfig& config() const { return tmn ? tmn->cfg : baseline->cfg; }
  const Lexicon& lexicon() const { return tmn ? tmn->lexicon : baseline->lexicon; }
  std::vector<Tensor<float>> parameters();
  Checkpoint to_checkpoint();

  Tensor<float> forward(const ModelInputs<float>& in, ForwardStats* stats = nullptr, ForwardTrace* trace = nullptr,
                        TrainContext<float>* ctx = nullptr) const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct MetricsRecord {
  std::vector<EpochMetrics> epochs;
  double initial_loss = 0.0;  // first batch, before any update
  double best_val_acc = 0.0;
  int best_epoch = -1;
  double final_test_acc = 0.0;  // best checkpoint on the held-out split
  std::map<std::string, double> per_family_val;
  std::map<std::string, double> per_family_test;
  int64_t layers_executed = 0;  // audit counters accumulated over evaluations
  int64_t layers_expected = 0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  MetricsRecord metrics;
  std::string metrics_csv;   // per-epoch CSV path
  std::string checkpoint_path;
};

// mini-batch Adam training with best-val checkpointing; deterministic from
// config + seed. Throws NumericalError on NaN/Inf loss.
TrainResult train(const ExperimentConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  int64_t n = 0;
  std::map<std::string, double> per_family;
  std::map<std::string, int64_t> per_family_count;
  int64_t layers_executed = 0;
  int64_t layers_expected = 0;
};

// exact-match accuracy; runs the K*L layer audit on every batch and throws
// NumericalError on violation. Honors TMN_THREADS for parallel groups.
EvalResult evaluate_samples(const HarnessModel& model, const std::vector<Sample>& samples);
EvalResult evaluate(const Checkpoint& ckpt, const std::string& split_path);

// harness self-checks
EvalResult evaluate_oracle_shim(const std::vector<Sample>& samples);
EvalResult evaluate_constant_shim(const std::vector<Sample>& samples, const std::string& answer);
std::string majority_answer(const std::vector<Sample>& samples);

// deterministic grouping by program shape; group order is sorted by key
std::vector<std::vector<const Sample*>> group_by_shape(const std::vector<Sample>& samples);

}  // namespace tmn
