#pragma once

// Experiment grids: main comparison, specialization, ablation, structure.
// Each cell is trained over several seeds; tables report mean and standard
// deviation. All outputs are deterministic given the config.

#include <string>
#include <vector>

#include "tmn/config.hpp"

namespace tmn {

struct SuiteConfig {
  std::string out_dir = "suite_out";
  std::string data_root;  // datasets live (or get generated) under <data_root>/<kind>
  std::vector<uint64_t> seeds = {1, 2, 3};
  int n_train = 16000;
  int n_val = 2000;
  int n_test = 2000;
  uint64_t data_seed = 7;
  ExperimentConfig base;  // dims, lr, epochs; kind/library/paths filled per cell
};

struct SuiteCellResult {
  std::string suite;
  std::string cell;
  uint64_t seed = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
  bool failed = false;
  std::string error;
};

struct SuiteResult {
  std::vector<SuiteCellResult> rows;
  std::string results_csv;
  std::string table_txt;
};

std::vector<std::string> suite_names();  // main, specialization, ablation, structure

// generates the split files under data_root when absent
std::string ensure_dataset(const std::string& kind, const SuiteConfig& cfg);

SuiteResult run_suite(const std::string& name, const SuiteConfig& cfg);

}  // namespace tmn
