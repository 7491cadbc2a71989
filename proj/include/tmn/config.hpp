#pragma once

// Experiment configuration: a flat key=value text format so a run is fully
// reproducible from its config file and seed.

#include <cstdint>
#include <string>

#include "tmn/library.hpp"
#include "tmn/model.hpp"

namespace tmn {

struct ExperimentConfig {
  ModelKind model_kind = ModelKind::TmnStack;
  LibraryStrategy library = LibraryStrategy::Individual;
  uint64_t library_seed = 0;
  ModelConfig model;

  std::string train_path;
  std::string val_path;
  std::string test_path;
  std::string out_dir = ".";

  double lr = 3e-4;
  int warmup_steps = 100;  // linear ramp from zero
  int batch_size = 64;
  int epochs = 30;
  uint64_t seed = 1;
  int eval_every = 1;
  double early_stop_val_acc = 2.0;  // values > 1 disable early stopping

  PlanStructure structure() const {
    return model_kind == ModelKind::TmnTree ? PlanStructure::Tree : PlanStructure::Stack;
  }

  static ExperimentConfig from_string(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  std::string to_string() const;
  void save(const std::string& path) const;
};

}  // namespace tmn
