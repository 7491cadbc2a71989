#include "tmn/program.hpp"

#include <algorithm>
#include <sstream>

namespace tmn {

namespace {

struct Parser {
  std::string_view text;
  size_t pos = 0;
  const SubTaskCatalog& catalog;

  explicit Parser(std::string_view t, const SubTaskCatalog& c) : text(t), catalog(c) {}

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' || text[pos] == '\n' || text[pos] == '\r'))
      ++pos;
  }

  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }

  void expect(char c) {
    skip_ws();
    if (pos >= text.size() || text[pos] != c)
      throw ParseError(pos, std::string("expected '") + c + "'");
    ++pos;
  }

  static bool ident_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

  std::string ident(const char* what) {
    skip_ws();
    const size_t start = pos;
    while (pos < text.size() && ident_char(text[pos])) ++pos;
    if (pos == start) throw ParseError(start, std::string("expected ") + what);
    return std::string(text.substr(start, pos - start));
  }

  // returns the post-order position of the parsed subtree's root
  int parse_node(std::vector<SubTaskNode>& out) {
    skip_ws();
    const size_t op_off = pos;
    SubTaskNode node;
    node.op = ident("sub-task name");
    const SubTaskDef* def = catalog.find(node.op);
    if (!def) throw ParseError(op_off, "unknown sub-task '" + node.op + "'");

    if (peek() == '[') {
      expect('[');
      const size_t arg_off = pos;
      node.arg = ident("argument");
      expect(']');
      if (!def->needs_arg)
        throw ParseError(arg_off, "'" + node.op + "' takes no argument");
    } else if (def->needs_arg) {
      throw ParseError(pos, "'" + node.op + "' requires an argument");
    }

    const size_t paren_off = pos;
    expect('(');
    if (peek() != ')') {
      node.inputs.push_back(parse_node(out));
      while (peek() == ',') {
        expect(',');
        node.inputs.push_back(parse_node(out));
      }
    }
    expect(')');
    if (static_cast<int>(node.inputs.size()) != def->arity)
      throw ParseError(paren_off, "'" + node.op + "' expects " + std::to_string(def->arity) + " input(s), got " +
                                      std::to_string(node.inputs.size()));
    out.push_back(std::move(node));
    return static_cast<int>(out.size()) - 1;
  }
};

void serialize_node(const Program& p, int idx, std::ostringstream& os) {
  const SubTaskNode& n = p.nodes[static_cast<size_t>(idx)];
  os << n.op;
  if (n.arg) os << '[' << *n.arg << ']';
  os << '(';
  for (size_t i = 0; i < n.inputs.size(); ++i) {
    if (i) os << ',';
    serialize_node(p, n.inputs[i], os);
  }
  os << ')';
}

}  // namespace

Program parse_program(std::string_view text, const SubTaskCatalog& catalog) {
  Parser parser(text, catalog);
  Program program;
  parser.parse_node(program.nodes);
  parser.skip_ws();
  if (parser.pos != text.size())
    throw ParseError(parser.pos, "trailing input after program");
  return program;
}

std::string serialize(const Program& program) {
  if (program.nodes.empty()) throw std::invalid_argument("serialize: empty program");
  std::ostringstream os;
  serialize_node(program, static_cast<int>(program.nodes.size()) - 1, os);
  return os.str();
}

std::vector<Violation> validate(const Program& program, const SubTaskCatalog& catalog) {
  std::vector<Violation> out;
  const int n = static_cast<int>(program.nodes.size());
  if (n == 0) {
    out.push_back({Severity::Error, -1, "program has no nodes"});
    return out;
  }

  std::vector<int> ref_count(static_cast<size_t>(n), 0);
  std::vector<ValueType> types(static_cast<size_t>(n), ValueType::Set);
  std::vector<bool> type_known(static_cast<size_t>(n), false);

  for (int i = 0; i < n; ++i) {
    const SubTaskNode& node = program.nodes[static_cast<size_t>(i)];
    const SubTaskDef* def = catalog.find(node.op);
    if (!def) {
      out.push_back({Severity::Error, i, "unknown sub-task '" + node.op + "'"});
      continue;
    }
    if (static_cast<int>(node.inputs.size()) != def->arity)
      out.push_back({Severity::Error, i,
                     "'" + node.op + "' expects " + std::to_string(def->arity) + " input(s), got " +
                         std::to_string(node.inputs.size())});
    if (def->needs_arg && !node.arg)
      out.push_back({Severity::Error, i, "'" + node.op + "' requires an argument"});
    if (!def->needs_arg && node.arg)
      out.push_back({Severity::Error, i, "'" + node.op + "' takes no argument"});
    if (def->needs_arg && node.arg &&
        std::find(def->arg_vocab.begin(), def->arg_vocab.end(), *node.arg) == def->arg_vocab.end())
      out.push_back({Severity::Error, i, "'" + *node.arg + "' is outside the argument vocabulary of " + node.op});

    bool inputs_ok = true;
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      const int child = node.inputs[k];
      if (child < 0 || child >= i) {
        out.push_back({Severity::Error, i, "input " + std::to_string(child) + " is not an earlier post-order node"});
        inputs_ok = false;
        continue;
      }
      ref_count[static_cast<size_t>(child)] += 1;
      if (type_known[static_cast<size_t>(child)] && k < def->input_types.size() &&
          types[static_cast<size_t>(child)] != def->input_types[k])
        out.push_back({Severity::Advisory, i,
                       "'" + node.op + "' input " + std::to_string(k) + " has type " +
                           to_string(types[static_cast<size_t>(child)]) + ", template expects " +
                           to_string(def->input_types[k])});
    }
    if (inputs_ok) {
      types[static_cast<size_t>(i)] = def->output_type;
      type_known[static_cast<size_t>(i)] = true;
    }
  }

  for (int i = 0; i < n - 1; ++i)
    if (ref_count[static_cast<size_t>(i)] != 1)
      out.push_back({Severity::Error, i,
                     "node " + std::to_string(i) + " referenced " + std::to_string(ref_count[static_cast<size_t>(i)]) +
                         " times; a program is a tree"});
  if (ref_count[static_cast<size_t>(n - 1)] != 0)
    out.push_back({Severity::Error, n - 1, "root node must not be an input"});

  return out;
}

ExecutionPlan plan(const Program& program, PlanStructure structure, const SubTaskCatalog& catalog) {
  const int n = static_cast<int>(program.nodes.size());
  if (n == 0) throw std::invalid_argument("plan: empty program");

  ExecutionPlan stack_plan;
  stack_plan.structure = PlanStructure::Stack;
  for (int i = 0; i < n; ++i) stack_plan.steps.push_back({i, 0, false});
  if (structure == PlanStructure::Stack) return stack_plan;

  std::vector<int> binary_nodes;
  for (int i = 0; i < n; ++i)
    if (program.nodes[static_cast<size_t>(i)].inputs.size() == 2) binary_nodes.push_back(i);
  (void)catalog;

  if (binary_nodes.empty()) return stack_plan;  // Tree degenerates to Stack
  if (binary_nodes.size() > 1)
    throw std::invalid_argument("plan: Tree structure supports exactly one binary node, program has " +
                                std::to_string(binary_nodes.size()));

  const int merge = binary_nodes[0];
  const SubTaskNode& merge_node = program.nodes[static_cast<size_t>(merge)];
  const int left_root = merge_node.inputs[0];
  const int right_root = merge_node.inputs[1];
  // post-order puts the left subtree at [0, left_root], the right subtree at
  // [left_root+1, right_root], the merge at right_root+1 == merge
  ExecutionPlan tree;
  tree.structure = PlanStructure::Tree;
  for (int i = 0; i <= left_root; ++i) tree.steps.push_back({i, 0, false});
  for (int i = left_root + 1; i <= right_root; ++i) tree.steps.push_back({i, 1, false});
  tree.steps.push_back({merge, 0, true});
  tree.merge_step = static_cast<int>(tree.steps.size()) - 1;
  for (int i = merge + 1; i < n; ++i) tree.steps.push_back({i, 0, false});
  return tree;
}

}  // namespace tmn
