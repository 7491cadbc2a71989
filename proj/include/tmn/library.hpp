#pragma once

// Module libraries: how sub-tasks map onto parameterized modules under the
// four specialization strategies, plus parameter accounting.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tmn/catalog.hpp"
#include "tmn/transformer.hpp"

namespace tmn {

enum class LibraryStrategy { Individual, SemanticGroup, RandomGroup, Order };

std::string to_string(LibraryStrategy s);
LibraryStrategy library_strategy_from_string(const std::string& s);

struct ModuleLibrary {
  LibraryStrategy strategy = LibraryStrategy::Individual;
  int num_modules = 0;  // M
  uint64_t seed = 0;    // RandomGroup draw
  uint64_t catalog_hash = 0;
  // sub-task -> module id; Order keeps the key set only (id ignores identity)
  std::unordered_map<std::string, int> assignment;

  // module id for a sub-task at 0-based post-order position n
  int assign(const std::string& op, int position) const;

  // module ids grouped for reporting: groups()[m] lists the sub-tasks of module m
  std::vector<std::vector<std::string>> groups() const;
};

// Individual and SemanticGroup reproduce the published groupings exactly;
// RandomGroup draws a partition with the same group-size pattern from `seed`;
// Order ignores identity and uses i = n mod M with M = 12.
ModuleLibrary build_library(LibraryStrategy strategy, const SubTaskCatalog& catalog = SubTaskCatalog::default26(),
                            uint64_t seed = 0);

// Semantic grouping as data, for swapped-in catalogs.
ModuleLibrary build_grouped_library(const std::vector<std::vector<std::string>>& groups,
                                    const SubTaskCatalog& catalog);

struct ParameterBudget {
  int64_t module_encoder_params = 0;  // all module stacks
  int64_t shared_params = 0;          // embeddings, grid projection, classifier
  int64_t total() const { return module_encoder_params + shared_params; }
};

int64_t encoder_layer_params(const ModelConfig& cfg);

struct SharedParamSpec {
  int64_t vocab = 0;
  int64_t max_pos = 0;
  int64_t d_feat = 0;
  int64_t n_answers = 0;
};

ParameterBudget parameter_budget(const ModuleLibrary& lib, const ModelConfig& cfg, const SharedParamSpec& shared);
ParameterBudget monolithic_budget(const ModelConfig& cfg, const SharedParamSpec& shared);

}  // namespace tmn
