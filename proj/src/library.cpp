#include "tmn/library.hpp"

#include <algorithm>
#include <stdexcept>

#include "tmn/rng.hpp"

namespace tmn {

std::string to_string(LibraryStrategy s) {
  switch (s) {
    case LibraryStrategy::Individual: return "individual";
    case LibraryStrategy::SemanticGroup: return "semantic";
    case LibraryStrategy::RandomGroup: return "random";
    case LibraryStrategy::Order: return "order";
  }
  return "?";
}

LibraryStrategy library_strategy_from_string(const std::string& s) {
  if (s == "individual") return LibraryStrategy::Individual;
  if (s == "semantic") return LibraryStrategy::SemanticGroup;
  if (s == "random") return LibraryStrategy::RandomGroup;
  if (s == "order") return LibraryStrategy::Order;
  throw std::invalid_argument("library: unknown strategy '" + s + "'");
}

namespace {

// grouping as published: seven singletons, the integer comparisons, then the
// equal/filter/query/same families
const std::vector<std::vector<std::string>> kSemanticGroups = {
    {"scene"},
    {"count"},
    {"exist"},
    {"intersect"},
    {"relate"},
    {"union"},
    {"unique"},
    {"greater_than", "less_than", "equal_integer"},
    {"equal_color", "equal_material", "equal_shape", "equal_size"},
    {"filter_color", "filter_material", "filter_shape", "filter_size"},
    {"query_color", "query_material", "query_shape", "query_size"},
    {"same_color", "same_material", "same_shape", "same_size"},
};

// group-size pattern of the published random column
const std::vector<size_t> kRandomGroupSizes = {1, 1, 1, 1, 1, 1, 1, 3, 4, 4, 4, 4};

}  // namespace

int ModuleLibrary::assign(const std::string& op, int position) const {
  auto it = assignment.find(op);
  if (it == assignment.end()) throw std::out_of_range("library: unknown sub-task '" + op + "'");
  if (position < 0) throw std::invalid_argument("library: negative position");
  if (strategy == LibraryStrategy::Order) return position % num_modules;
  return it->second;
}

std::vector<std::vector<std::string>> ModuleLibrary::groups() const {
  std::vector<std::vector<std::string>> out(static_cast<size_t>(num_modules));
  std::vector<std::string> names;
  for (const auto& [name, id] : assignment) names.push_back(name);
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const int id = assignment.at(name);
    if (id >= 0) out[static_cast<size_t>(id)].push_back(name);
  }
  return out;
}

ModuleLibrary build_grouped_library(const std::vector<std::vector<std::string>>& groups,
                                    const SubTaskCatalog& catalog) {
  ModuleLibrary lib;
  lib.strategy = LibraryStrategy::SemanticGroup;
  lib.num_modules = static_cast<int>(groups.size());
  lib.catalog_hash = catalog.hash();
  size_t covered = 0;
  for (size_t m = 0; m < groups.size(); ++m)
    for (const auto& name : groups[m]) {
      if (!catalog.find(name)) throw std::invalid_argument("library: group names unknown sub-task '" + name + "'");
      if (!lib.assignment.emplace(name, static_cast<int>(m)).second)
        throw std::invalid_argument("library: sub-task '" + name + "' appears in two groups");
      ++covered;
    }
  if (covered != catalog.size())
    throw std::invalid_argument("library: groups cover " + std::to_string(covered) + " of " +
                                std::to_string(catalog.size()) + " sub-tasks");
  return lib;
}

ModuleLibrary build_library(LibraryStrategy strategy, const SubTaskCatalog& catalog, uint64_t seed) {
  ModuleLibrary lib;
  lib.strategy = strategy;
  lib.seed = seed;
  lib.catalog_hash = catalog.hash();

  switch (strategy) {
    case LibraryStrategy::Individual: {
      lib.num_modules = static_cast<int>(catalog.size());
      for (size_t i = 0; i < catalog.size(); ++i)
        lib.assignment.emplace(catalog.entries()[i].name, static_cast<int>(i));
      return lib;
    }
    case LibraryStrategy::SemanticGroup: {
      auto grouped = build_grouped_library(kSemanticGroups, catalog);
      grouped.seed = seed;
      return grouped;
    }
    case LibraryStrategy::RandomGroup: {
      lib.num_modules = static_cast<int>(kRandomGroupSizes.size());
      std::vector<std::string> names;
      for (const auto& e : catalog.entries()) names.push_back(e.name);
      size_t need = 0;
      for (size_t s : kRandomGroupSizes) need += s;
      if (need != names.size())
        throw std::invalid_argument("library: random group sizes cover " + std::to_string(need) + " of " +
                                    std::to_string(names.size()) + " sub-tasks");
      std::mt19937_64 rng(mix_seed(seed, 0x9a6d));
      for (size_t i = names.size(); i > 1; --i)
        std::swap(names[i - 1], names[static_cast<size_t>(uniform_int(rng, static_cast<int64_t>(i)))]);
      size_t next = 0;
      for (size_t m = 0; m < kRandomGroupSizes.size(); ++m)
        for (size_t k = 0; k < kRandomGroupSizes[m]; ++k) lib.assignment.emplace(names[next++], static_cast<int>(m));
      return lib;
    }
    case LibraryStrategy::Order: {
      lib.num_modules = 12;
      for (const auto& e : catalog.entries()) lib.assignment.emplace(e.name, -1);
      return lib;
    }
  }
  throw std::logic_error("library: unreachable");
}

int64_t encoder_layer_params(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model, f = cfg.d_ff;
  const int64_t attn = 4 * (d * d + d);
  const int64_t norms = 4 * d;
  const int64_t ff = d * f + f + f * d + d;
  return attn + norms + ff;
}

namespace {

int64_t shared_total(const ModelConfig& cfg, const SharedParamSpec& s) {
  const int64_t d = cfg.d_model;
  const int64_t embeddings = s.vocab * d + 2 * d + s.max_pos * d;
  const int64_t grid = s.d_feat * d + d;
  const int64_t classifier = d * s.n_answers + s.n_answers;
  return embeddings + grid + classifier;
}

}  // namespace

ParameterBudget parameter_budget(const ModuleLibrary& lib, const ModelConfig& cfg, const SharedParamSpec& shared) {
  ParameterBudget b;
  b.module_encoder_params = static_cast<int64_t>(lib.num_modules) * cfg.layers_per_module * encoder_layer_params(cfg);
  b.shared_params = shared_total(cfg, shared);
  return b;
}

ParameterBudget monolithic_budget(const ModelConfig& cfg, const SharedParamSpec& shared) {
  ParameterBudget b;
  b.module_encoder_params = cfg.n_layers_monolithic * encoder_layer_params(cfg);
  b.shared_params = shared_total(cfg, shared);
  return b;
}

}  // namespace tmn
