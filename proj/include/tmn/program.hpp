#pragma once

// Program data model, text parser/serializer, validator, and the planner
// that turns a program into a Stack or Tree execution schedule.
//
// Text syntax:  op[arg](child, ...)   e.g.
//   count(filter_color[red](filter_shape[cube](scene())))

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tmn/catalog.hpp"

namespace tmn {

struct SubTaskNode {
  std::string op;
  std::optional<std::string> arg;
  std::vector<int> inputs;  // post-order positions of children, left to right

  bool operator==(const SubTaskNode& o) const { return op == o.op && arg == o.arg && inputs == o.inputs; }
};

struct Program {
  std::vector<SubTaskNode> nodes;  // post-order; the root is nodes.back()

  int64_t length() const { return static_cast<int64_t>(nodes.size()); }  // L
  const SubTaskNode& root() const {
    if (nodes.empty()) throw std::logic_error("program: empty");
    return nodes.back();
  }
  bool operator==(const Program& o) const { return nodes == o.nodes; }
};

struct ParseError : std::runtime_error {
  size_t offset;
  ParseError(size_t off, const std::string& msg)
      : std::runtime_error(msg + " (at byte " + std::to_string(off) + ")"), offset(off) {}
};

Program parse_program(std::string_view text, const SubTaskCatalog& catalog = SubTaskCatalog::default26());
std::string serialize(const Program& program);

enum class Severity { Error, Advisory };

struct Violation {
  Severity severity;
  int node;  // post-order position, -1 for whole-program issues
  std::string message;
};

// Arity, argument presence and argument vocabulary are checked strictly;
// value-type compatibility is advisory.
std::vector<Violation> validate(const Program& program, const SubTaskCatalog& catalog = SubTaskCatalog::default26());

enum class PlanStructure { Stack, Tree };

struct PlanStep {
  int node;    // post-order position in the program
  int thread;  // 0 for the first/left thread, 1 for the second
  bool is_merge = false;
};

struct ExecutionPlan {
  PlanStructure structure = PlanStructure::Stack;
  std::vector<PlanStep> steps;  // exactly L steps
  int merge_step = -1;          // index into steps, -1 when there is no merge
};

// Stack: post-order schedule. Tree: both subtrees of the single binary node
// run as separate threads, the binary node merges them, the remaining chain
// follows. A Tree request on a program without binary nodes returns the
// Stack plan; more than one binary node is an unsupported shape.
ExecutionPlan plan(const Program& program, PlanStructure structure,
                   const SubTaskCatalog& catalog = SubTaskCatalog::default26());

}  // namespace tmn
