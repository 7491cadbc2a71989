#include "tmn/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tmn/rng.hpp"
#include "tmn/symbolic.hpp"

namespace tmn {

using nlohmann::json;

namespace {

json scene_to_json(const Scene& scene) {
  json objects = json::array();
  for (int r = 0; r < scene.h; ++r)
    for (int c = 0; c < scene.w; ++c) {
      const auto& cell = scene.at(r, c);
      if (!cell) continue;
      json o;
      o["r"] = r;
      o["c"] = c;
      o["shape"] = to_string(cell->shape);
      o["color"] = to_string(cell->color);
      o["size"] = to_string(cell->size);
      o["material"] = to_string(cell->material);
      objects.push_back(o);
    }
  json s;
  s["h"] = scene.h;
  s["w"] = scene.w;
  s["objects"] = objects;
  return s;
}

Scene scene_from_json(const json& j) {
  Scene scene(j.at("h").get<int>(), j.at("w").get<int>());
  for (const auto& o : j.at("objects")) {
    Object obj;
    obj.shape = shape_from_string(o.at("shape").get<std::string>());
    obj.color = color_from_string(o.at("color").get<std::string>());
    obj.size = size_from_string(o.at("size").get<std::string>());
    obj.material = material_from_string(o.at("material").get<std::string>());
    scene.at(o.at("r").get<int>(), o.at("c").get<int>()) = obj;
  }
  return scene;
}

json program_to_json(const Program& p) {
  json nodes = json::array();
  for (const auto& n : p.nodes) {
    json node;
    node["op"] = n.op;
    if (n.arg) node["arg"] = *n.arg;
    node["inputs"] = n.inputs;
    nodes.push_back(node);
  }
  return nodes;
}

Program program_from_json(const json& j) {
  Program p;
  for (const auto& node : j) {
    SubTaskNode n;
    n.op = node.at("op").get<std::string>();
    if (node.contains("arg")) n.arg = node["arg"].get<std::string>();
    n.inputs = node.at("inputs").get<std::vector<int>>();
    p.nodes.push_back(std::move(n));
  }
  return p;
}

}  // namespace

std::string sample_to_jsonl(const Sample& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["scene"] = scene_to_json(s.scene);
  j["program"] = program_to_json(s.program);
  j["question"] = s.question;
  j["answer"] = s.answer;
  j["family"] = s.family;
  j["split"] = s.split;
  return j.dump();
}

Sample sample_from_jsonl(const std::string& line) {
  json j = json::parse(line);
  Sample s;
  s.scene_id = j.at("scene_id").get<int64_t>();
  s.scene = scene_from_json(j.at("scene"));
  s.program = program_from_json(j.at("program"));
  s.question = j.at("question").get<std::string>();
  s.answer = j.at("answer").get<std::string>();
  s.family = j.at("family").get<std::string>();
  s.split = j.at("split").get<std::string>();
  return s;
}

void write_dataset(const std::string& path, const std::string& split, const std::string& kind,
                   const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  json header;
  header["schema"] = "tmn-dataset";
  header["version"] = 1;
  header["split"] = split;
  header["kind"] = kind;
  header["count"] = samples.size();
  out << header.dump() << "\n";
  for (const auto& s : samples) out << sample_to_jsonl(s) << "\n";
  if (!out) throw std::runtime_error("dataset: write to " + path + " failed");
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: " + path + " is empty");
  json header = json::parse(line);
  if (header.value("schema", "") != "tmn-dataset")
    throw std::runtime_error("dataset: " + path + " is missing the schema header");
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    samples.push_back(sample_from_jsonl(line));
  }
  return samples;
}

std::string SplitManifest::to_json() const {
  json j;
  j["schema"] = "tmn-split-manifest";
  j["version"] = 1;
  j["kind"] = kind;
  j["seed"] = seed;
  j["catalog_hash"] = catalog_hash;
  j["counts"] = counts;
  j["checksums"] = checksums;
  j["train_families"] = train_families;
  j["test_families"] = test_families;
  j["grid_h"] = grid_h;
  j["grid_w"] = grid_w;
  j["relaxed_samples"] = relaxed_samples;
  return j.dump(2);
}

SplitManifest SplitManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  SplitManifest m;
  m.kind = j.at("kind").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.catalog_hash = j.at("catalog_hash").get<uint64_t>();
  m.counts = j.at("counts").get<std::map<std::string, int64_t>>();
  m.checksums = j.at("checksums").get<std::map<std::string, uint64_t>>();
  m.train_families = j.at("train_families").get<std::vector<std::string>>();
  m.test_families = j.at("test_families").get<std::vector<std::string>>();
  m.grid_h = j.at("grid_h").get<int>();
  m.grid_w = j.at("grid_w").get<int>();
  m.relaxed_samples = j.value("relaxed_samples", 0);
  return m;
}

void write_manifest(const std::string& path, const SplitManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot open " + path + " for writing");
  out << m.to_json() << "\n";
}

SplitManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return SplitManifest::from_json(ss.str());
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checksum: cannot open " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

void audit_label_soundness(const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    const std::string truth = exec_program_symbolic(s.program, s.scene);
    if (truth != s.answer)
      throw DataAuditError("label audit: scene " + std::to_string(s.scene_id) + " stores '" + s.answer +
                           "' but the oracle answers '" + truth + "'");
  }
}

void audit_family_hygiene(const std::vector<Sample>& train, const std::vector<Sample>& test) {
  std::set<std::string> train_fams, train_ops;
  for (const auto& s : train) {
    train_fams.insert(s.family);
    for (const auto& n : s.program.nodes) train_ops.insert(n.op);
  }
  for (const auto& s : test) {
    if (train_fams.count(s.family))
      throw DataAuditError("hygiene: held-out family '" + s.family + "' appears in training");
    for (const auto& n : s.program.nodes)
      if (!train_ops.count(n.op))
        throw DataAuditError("hygiene: test sub-task '" + n.op + "' never appears in a training program");
  }
}

void audit_attribute_hygiene(const std::vector<Sample>& train, const SceneConstraints& train_cond,
                             const SceneConstraints& test_cond) {
  // the defining held-out pairs: allowed at test time, forbidden at training time
  std::set<std::pair<int, int>> novel;
  for (const auto& p : test_cond.allowed_pairs)
    if (!train_cond.allowed_pairs.count(p)) novel.insert(p);
  if (novel.empty()) throw DataAuditError("hygiene: test condition introduces no novel attribute pairs");
  for (const auto& s : train)
    for (const auto& cell : s.scene.cells) {
      if (!cell) continue;
      const auto pair = std::make_pair(static_cast<int>(cell->shape), static_cast<int>(cell->color));
      if (!train_cond.allows(cell->shape, cell->color))
        throw DataAuditError("hygiene: training scene " + std::to_string(s.scene_id) +
                             " violates the training condition with " + to_string(cell->shape) + "/" +
                             to_string(cell->color));
      if (novel.count(pair))
        throw DataAuditError("hygiene: training scene " + std::to_string(s.scene_id) + " contains held-out pair " +
                             to_string(cell->shape) + "/" + to_string(cell->color));
    }
}

}  // namespace tmn
