#pragma once

// Versioned text container of named parameter tensors. Values are written
// as hexfloats, so save/load round-trips bit-exactly.
//
//   tmn-checkpoint v1
//   meta <single-line JSON, optional>
//   tensor <name> <rank> <dim0> <dim1> ...
//   <hexfloat values, space separated, one line>
//   ...
//   end

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmn/tensor.hpp"

namespace tmn {

struct Checkpoint {
  std::string meta;  // single-line JSON blob, empty if absent
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::out_of_range("checkpoint: no tensor named " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out << "tmn-checkpoint v1\n";
  if (!ckpt.meta.empty()) out << "meta " << ckpt.meta << "\n";
  char buf[64];
  for (const auto& [name, t] : ckpt.tensors) {
    out << "tensor " << name << " " << t.rank();
    for (int64_t d : t.shape()) out << " " << d;
    out << "\n";
    for (int64_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", static_cast<double>(t.data()[i]));
      out << buf << (i + 1 < t.size() ? " " : "");
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "tmn-checkpoint v1")
    throw std::runtime_error("checkpoint: " + path + " has unsupported header '" + line + "'");
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    if (line == "end") return ckpt;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::getline(ls, ckpt.meta);
      if (!ckpt.meta.empty() && ckpt.meta.front() == ' ') ckpt.meta.erase(0, 1);
    } else if (tag == "tensor") {
      std::string name;
      int rank = 0;
      ls >> name >> rank;
      Shape shape(static_cast<size_t>(rank));
      for (auto& d : shape) ls >> d;
      if (!ls) throw std::runtime_error("checkpoint: bad tensor header: " + line);
      std::string values;
      if (!std::getline(in, values)) throw std::runtime_error("checkpoint: missing values for " + name);
      std::vector<float> data(static_cast<size_t>(numel(shape)));
      const char* p = values.c_str();
      char* endp = nullptr;
      for (auto& v : data) {
        v = static_cast<float>(std::strtod(p, &endp));
        if (endp == p) throw std::runtime_error("checkpoint: truncated values for " + name);
        p = endp;
      }
      ckpt.tensors.emplace_back(name, Tensor<float>::from(std::move(shape), std::move(data)));
    } else if (!tag.empty()) {
      throw std::runtime_error("checkpoint: unexpected line: " + line);
    }
  }
  throw std::runtime_error("checkpoint: " + path + " is missing its end marker");
}

}  // namespace tmn
