#pragma once

// Sample records, JSON-lines dataset files, split manifests and the data
// audits (label soundness, split hygiene, featurizer injectivity).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmn/program.hpp"
#include "tmn/scene.hpp"

namespace tmn {

struct Sample {
  int64_t scene_id = 0;
  Scene scene;
  Program program;
  std::string question;
  std::string answer;
  std::string family;
  std::string split;
};

struct DataAuditError : std::runtime_error {
  explicit DataAuditError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string sample_to_jsonl(const Sample& s);
Sample sample_from_jsonl(const std::string& line);

// Files carry one schema header line, then one sample per line.
void write_dataset(const std::string& path, const std::string& split, const std::string& kind,
                   const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& path);

struct SplitManifest {
  std::string kind;  // cogent | closure | sgl
  uint64_t seed = 0;
  uint64_t catalog_hash = 0;
  std::map<std::string, int64_t> counts;          // per split file
  std::map<std::string, uint64_t> checksums;      // per split file, fnv1a of bytes
  std::vector<std::string> train_families;
  std::vector<std::string> test_families;
  int grid_h = 5, grid_w = 5;
  int relaxed_samples = 0;  // quota relaxations during balancing

  std::string to_json() const;
  static SplitManifest from_json(const std::string& text);
};

void write_manifest(const std::string& path, const SplitManifest& m);
SplitManifest load_manifest(const std::string& path);

uint64_t file_checksum(const std::string& path);

// audits; throw DataAuditError with a description on failure
void audit_label_soundness(const std::vector<Sample>& samples);
void audit_family_hygiene(const std::vector<Sample>& train, const std::vector<Sample>& test);
void audit_attribute_hygiene(const std::vector<Sample>& train, const SceneConstraints& train_cond,
                             const SceneConstraints& test_cond);

}  // namespace tmn
