#pragma once

// Head-averaged attention-map exports (one CSV per module step) and the
// filter-attention behavioral probe used by the specialization experiment.

#include <string>
#include <vector>

#include "tmn/train.hpp"

namespace tmn {

struct AttentionDumpResult {
  std::vector<std::string> files;        // one per step/layer
  std::vector<double> head_row_sums;     // full head-token row sums (softmax check)
  std::vector<double> visual_mass;       // attention mass on visual tokens per step
  std::string summary_path;
};

// For TMN checkpoints: per module step, the head-token row of head-averaged
// attention over the visual tokens, reshaped H x W, one CSV per step.
// Baseline checkpoints get per-layer dumps instead, labeled layer_NN.
AttentionDumpResult dump_attention(const Checkpoint& ckpt, const Sample& sample, const std::string& out_dir);

struct ProbeResult {
  int scenes_evaluated = 0;
  int scenes_matched = 0;  // mean attention on oracle-matching cells exceeds the rest
  double fraction() const {
    return scenes_evaluated ? static_cast<double>(scenes_matched) / scenes_evaluated : 0.0;
  }
};

// On each probe scene, pick the first filter step of the sample's program and
// compare head attention mass on cells matching the filter argument against
// non-matching occupied-or-empty cells.
ProbeResult filter_attention_probe(const HarnessModel& model, const std::vector<Sample>& probes, int max_scenes);

}  // namespace tmn
