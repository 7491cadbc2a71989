#pragma once

// Question-template families, candidate generation with answer balancing,
// the three systematic-generalization split builders, and the token lexicon.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tmn/dataset.hpp"

namespace tmn {

// base families present in every training split
std::vector<std::string> train_families();
// recombined families reserved for held-out evaluation
std::vector<std::string> heldout_families();

// the answers a family can produce, in round-robin balancing order
std::vector<std::string> family_answer_support(const std::string& family);

struct Candidate {
  Program program;
  std::string question;
  std::string answer;
};

// One proposal for a family on a scene, steered toward `required_answer`.
// Returns nullopt when the scene cannot support it; labels always come from
// the symbolic executor.
std::optional<Candidate> generate_candidate(const std::string& family, const Scene& scene, std::mt19937_64& rng,
                                            const std::string& required_answer, int variant_hint = 0);

// word-token lexicon: sub-task names, argument words, question frame words
std::vector<std::string> build_lexicon(const SubTaskCatalog& catalog = SubTaskCatalog::default26());

struct SplitSpec {
  std::string kind = "closure";  // cogent | closure | sgl
  uint64_t seed = 0;
  int n_train = 16000;
  int n_val = 2000;
  int n_test = 2000;  // sgl ignores this and emits 50 per held-out family
  int grid_h = 5;
  int grid_w = 5;
};

struct GeneratedSplits {
  std::vector<Sample> train, val, test;
  SplitManifest manifest;
};

GeneratedSplits generate_splits(const SplitSpec& spec);

// generate, audit and emit train/val/test_sysgen JSONL files plus manifest
struct DatasetFiles {
  std::string train, val, test, manifest;
};
DatasetFiles build_splits(const SplitSpec& spec, const std::string& out_dir);

}  // namespace tmn
