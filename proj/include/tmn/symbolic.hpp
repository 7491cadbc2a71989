#pragma once

// Symbolic program executor over scenes: the ground-truth oracle behind all
// labels, audits and behavioral probes.

#include <stdexcept>
#include <string>
#include <vector>

#include "tmn/program.hpp"
#include "tmn/scene.hpp"

namespace tmn {

struct ExecError : std::runtime_error {
  explicit ExecError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic answer string ("yes", "no", "0".."8", or an attribute word).
// Throws ExecError on semantic failure (unique over a non-singleton set);
// generation resamples on that, stored labels never hit it.
std::string exec_program_symbolic(const Program& program, const Scene& scene,
                                  const SubTaskCatalog& catalog = SubTaskCatalog::default26());

// the closed answer set: yes, no, 0..8, then the eleven attribute values
class AnswerVocab {
 public:
  static const AnswerVocab& standard();
  int id(const std::string& answer) const;  // throws on unknown answer
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  explicit AnswerVocab(std::vector<std::string> names);
  std::vector<std::string> names_;
};

}  // namespace tmn
