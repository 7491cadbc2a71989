#include "tmn/attention_dump.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace tmn {

namespace fs = std::filesystem;

namespace {

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ? c : '_';
  return out;
}

// head-token attention over the visual tokens of the first set
std::vector<double> visual_row(const AttentionRecord& rec, double* row_sum, double* vis_mass) {
  std::vector<double> out;
  *row_sum = 0.0;
  *vis_mass = 0.0;
  int head_seen = 0;
  for (int64_t j = 0; j < rec.t; ++j) {
    const double a = rec.head_avg[static_cast<size_t>(j)];  // row 0 = first head token
    *row_sum += a;
    if (rec.kinds[static_cast<size_t>(j)] == TokenKind::Head) {
      ++head_seen;
    } else if (rec.kinds[static_cast<size_t>(j)] == TokenKind::Visual && head_seen == 1) {
      out.push_back(a);
      *vis_mass += a;
    }
  }
  return out;
}

}  // namespace

AttentionDumpResult dump_attention(const Checkpoint& ckpt, const Sample& sample, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto model = HarnessModel::from_checkpoint(ckpt);
  const PlanStructure structure =
      model.kind == ModelKind::TmnTree ? PlanStructure::Tree : PlanStructure::Stack;
  auto in = make_inputs<float>({&sample}, model.lexicon(), structure);
  ForwardTrace trace;
  model.forward(in, nullptr, &trace);

  AttentionDumpResult result;
  std::ofstream summary((fs::path(out_dir) / "summary.txt").string());
  summary << "sample scene_id " << sample.scene_id << "\n";
  summary << "program " << serialize(sample.program) << "\n";
  for (size_t i = 0; i < trace.records.size(); ++i) {
    const auto& rec = trace.records[i];
    double row_sum = 0.0, vis_mass = 0.0;
    auto row = visual_row(rec, &row_sum, &vis_mass);
    const int64_t hw = static_cast<int64_t>(row.size());
    if (hw != static_cast<int64_t>(sample.scene.h) * sample.scene.w)
      throw std::runtime_error("attention: step " + rec.label + " exposes " + std::to_string(hw) +
                               " visual cells, scene has " + std::to_string(sample.scene.h * sample.scene.w));
    char name[128];
    std::snprintf(name, sizeof(name), "%s_%02zu_%s.csv", is_tmn(model.kind) ? "step" : "layer", i,
                  sanitize(rec.label).c_str());
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream csv(path);
    for (int r = 0; r < sample.scene.h; ++r) {
      for (int c = 0; c < sample.scene.w; ++c) {
        char cell[32];
        std::snprintf(cell, sizeof(cell), "%.8f", row[static_cast<size_t>(r * sample.scene.w + c)]);
        csv << cell << (c + 1 < sample.scene.w ? "," : "");
      }
      csv << "\n";
    }
    result.files.push_back(path);
    result.head_row_sums.push_back(row_sum);
    result.visual_mass.push_back(vis_mass);
    char line[256];
    std::snprintf(line, sizeof(line), "%s row_sum=%.6f visual_mass=%.6f\n", rec.label.c_str(), row_sum, vis_mass);
    summary << line;
  }
  result.summary_path = (fs::path(out_dir) / "summary.txt").string();
  return result;
}

ProbeResult filter_attention_probe(const HarnessModel& model, const std::vector<Sample>& probes, int max_scenes) {
  ProbeResult result;
  if (!model.tmn) throw std::invalid_argument("probe: needs a modular model checkpoint");
  for (const auto& sample : probes) {
    if (result.scenes_evaluated >= max_scenes) break;
    // first filter step of the program
    int filter_node = -1;
    for (size_t i = 0; i < sample.program.nodes.size(); ++i)
      if (sample.program.nodes[i].op.rfind("filter_", 0) == 0) {
        filter_node = static_cast<int>(i);
        break;
      }
    if (filter_node < 0) continue;
    const auto& node = sample.program.nodes[static_cast<size_t>(filter_node)];

    // oracle cell labels: objects whose attribute matches the filter argument
    std::vector<bool> matches(sample.scene.cells.size(), false);
    int n_match = 0, n_other = 0;
    for (size_t c = 0; c < sample.scene.cells.size(); ++c) {
      const auto& cell = sample.scene.cells[c];
      bool m = false;
      if (cell) {
        if (node.op == "filter_color") m = to_string(cell->color) == *node.arg;
        else if (node.op == "filter_shape") m = to_string(cell->shape) == *node.arg;
        else if (node.op == "filter_size") m = to_string(cell->size) == *node.arg;
        else m = to_string(cell->material) == *node.arg;
      }
      matches[c] = m;
      (m ? n_match : n_other) += 1;
    }
    if (n_match == 0 || n_other == 0) continue;

    auto in = make_inputs<float>({&sample}, model.lexicon(), PlanStructure::Stack);
    ForwardTrace trace;
    model.forward(in, nullptr, &trace);
    // trace records follow plan order == post-order
    const auto& rec = trace.records[static_cast<size_t>(filter_node)];
    double mass_match = 0, mass_other = 0;
    int64_t vis = 0;
    for (int64_t j = 0; j < rec.t; ++j) {
      if (rec.kinds[static_cast<size_t>(j)] != TokenKind::Visual) continue;
      const double a = rec.head_avg[static_cast<size_t>(j)];
      (matches[static_cast<size_t>(vis)] ? mass_match : mass_other) += a;
      ++vis;
    }
    const double mean_match = mass_match / n_match;
    const double mean_other = mass_other / n_other;
    result.scenes_evaluated += 1;
    result.scenes_matched += mean_match > mean_other;
  }
  return result;
}

}  // namespace tmn
