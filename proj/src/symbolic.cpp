#include "tmn/symbolic.hpp"

#include <algorithm>
#include <unordered_map>
#include <variant>

namespace tmn {

namespace {

using CellSet = std::vector<int>;  // sorted cell indices

struct Value {
  std::variant<CellSet, int, int64_t, bool, std::string> v;
  // CellSet: object set;  int: single object (cell index);
  // int64_t: count;  bool: yes/no;  string: attribute value

  CellSet& set() { return std::get<CellSet>(v); }
  int object() const { return std::get<int>(v); }
  int64_t integer() const { return std::get<int64_t>(v); }
  bool boolean() const { return std::get<bool>(v); }
};

const Object& object_at(const Scene& scene, int cell) { return *scene.cells[static_cast<size_t>(cell)]; }

std::string attr_of(const Object& o, const std::string& query_op) {
  if (query_op == "query_color") return to_string(o.color);
  if (query_op == "query_shape") return to_string(o.shape);
  if (query_op == "query_size") return to_string(o.size);
  if (query_op == "query_material") return to_string(o.material);
  throw ExecError("executor: unknown query '" + query_op + "'");
}

bool same_attr(const Object& a, const Object& b, const std::string& op) {
  if (op.ends_with("color")) return a.color == b.color;
  if (op.ends_with("shape")) return a.shape == b.shape;
  if (op.ends_with("size")) return a.size == b.size;
  if (op.ends_with("material")) return a.material == b.material;
  throw ExecError("executor: unknown attribute op '" + op + "'");
}

bool filter_keep(const Object& o, const std::string& op, const std::string& arg) {
  if (op == "filter_color") return to_string(o.color) == arg;
  if (op == "filter_shape") return to_string(o.shape) == arg;
  if (op == "filter_size") return to_string(o.size) == arg;
  if (op == "filter_material") return to_string(o.material) == arg;
  throw ExecError("executor: unknown filter '" + op + "'");
}

// strict coordinate comparison against the referent cell
bool related(const Scene& scene, int cell, int ref, const std::string& dir) {
  const int r = cell / scene.w, c = cell % scene.w;
  const int rr = ref / scene.w, rc = ref % scene.w;
  if (dir == "left") return c < rc;
  if (dir == "right") return c > rc;
  if (dir == "above") return r < rr;
  if (dir == "below") return r > rr;
  throw ExecError("executor: unknown direction '" + dir + "'");
}

}  // namespace

std::string exec_program_symbolic(const Program& program, const Scene& scene, const SubTaskCatalog& catalog) {
  if (program.nodes.empty()) throw ExecError("executor: empty program");
  std::vector<Value> values(program.nodes.size());

  for (size_t i = 0; i < program.nodes.size(); ++i) {
    const SubTaskNode& node = program.nodes[i];
    const SubTaskDef& def = catalog.at(node.op);
    if (node.inputs.size() != static_cast<size_t>(def.arity))
      throw ExecError("executor: '" + node.op + "' arity mismatch");
    auto in = [&](int k) -> Value& { return values[static_cast<size_t>(node.inputs[static_cast<size_t>(k)])]; };

    Value out;
    if (node.op == "scene") {
      out.v = scene.object_cells();
    } else if (node.op.starts_with("filter_")) {
      CellSet kept;
      for (int cell : in(0).set())
        if (filter_keep(object_at(scene, cell), node.op, *node.arg)) kept.push_back(cell);
      out.v = std::move(kept);
    } else if (node.op == "count") {
      out.v = static_cast<int64_t>(in(0).set().size());
    } else if (node.op == "exist") {
      out.v = !in(0).set().empty();
    } else if (node.op == "unique") {
      const CellSet& s = in(0).set();
      if (s.size() != 1)
        throw ExecError("executor: unique over a set of " + std::to_string(s.size()) + " objects");
      out.v = s[0];
    } else if (node.op == "relate") {
      CellSet found;
      const int ref = in(0).object();
      for (int cell : scene.object_cells())
        if (cell != ref && related(scene, cell, ref, *node.arg)) found.push_back(cell);
      out.v = std::move(found);
    } else if (node.op.starts_with("same_")) {
      CellSet found;
      const int ref = in(0).object();
      for (int cell : scene.object_cells())
        if (cell != ref && same_attr(object_at(scene, cell), object_at(scene, ref), node.op)) found.push_back(cell);
      out.v = std::move(found);
    } else if (node.op == "intersect" || node.op == "union") {
      const CellSet& a = in(0).set();
      const CellSet& b = in(1).set();
      CellSet r;
      if (node.op == "intersect")
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
      else
        std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(r));
      out.v = std::move(r);
    } else if (node.op.starts_with("query_")) {
      out.v = attr_of(object_at(scene, in(0).object()), node.op);
    } else if (node.op.starts_with("equal_") && node.op != "equal_integer") {
      out.v = same_attr(object_at(scene, in(0).object()), object_at(scene, in(1).object()), node.op);
    } else if (node.op == "equal_integer") {
      out.v = in(0).integer() == in(1).integer();
    } else if (node.op == "greater_than") {
      out.v = in(0).integer() > in(1).integer();
    } else if (node.op == "less_than") {
      out.v = in(0).integer() < in(1).integer();
    } else {
      throw ExecError("executor: no semantics for '" + node.op + "'");
    }
    values[i] = std::move(out);
  }

  const Value& result = values.back();
  if (std::holds_alternative<bool>(result.v)) return result.boolean() ? "yes" : "no";
  if (std::holds_alternative<int64_t>(result.v)) return std::to_string(result.integer());
  if (std::holds_alternative<std::string>(result.v)) return std::get<std::string>(result.v);
  throw ExecError("executor: program root produces a non-answer value");
}

AnswerVocab::AnswerVocab(std::vector<std::string> names) : names_(std::move(names)) {}

const AnswerVocab& AnswerVocab::standard() {
  static const AnswerVocab vocab({"yes", "no", "0", "1", "2", "3", "4", "5", "6", "7", "8",
                                  "red", "blue", "green", "yellow", "cube", "sphere", "cylinder",
                                  "small", "large", "metal", "rubber"});
  return vocab;
}

int AnswerVocab::id(const std::string& answer) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == answer) return static_cast<int>(i);
  throw std::out_of_range("answers: '" + answer + "' is not in the answer vocabulary");
}

const std::string& AnswerVocab::name(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("answers: id " + std::to_string(id));
  return names_[static_cast<size_t>(id)];
}

}  // namespace tmn
