#include "tmn/catalog.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tmn/rng.hpp"

namespace tmn {

using nlohmann::json;

std::string to_string(ValueType t) {
  switch (t) {
    case ValueType::Set: return "set";
    case ValueType::Object: return "object";
    case ValueType::Integer: return "integer";
    case ValueType::Boolean: return "boolean";
    case ValueType::Color: return "color";
    case ValueType::Shape: return "shape";
    case ValueType::Size: return "size";
    case ValueType::Material: return "material";
  }
  return "?";
}

namespace {

ValueType type_from_string(const std::string& s) {
  if (s == "set") return ValueType::Set;
  if (s == "object") return ValueType::Object;
  if (s == "integer") return ValueType::Integer;
  if (s == "boolean") return ValueType::Boolean;
  if (s == "color") return ValueType::Color;
  if (s == "shape") return ValueType::Shape;
  if (s == "size") return ValueType::Size;
  if (s == "material") return ValueType::Material;
  throw std::invalid_argument("catalog: unknown value type '" + s + "'");
}

const std::vector<std::string> kColors = {"red", "blue", "green", "yellow"};
const std::vector<std::string> kShapes = {"cube", "sphere", "cylinder"};
const std::vector<std::string> kSizes = {"small", "large"};
const std::vector<std::string> kMaterials = {"metal", "rubber"};
const std::vector<std::string> kDirections = {"left", "right", "above", "below"};

std::vector<SubTaskDef> default_entries() {
  using VT = ValueType;
  auto def = [](std::string name, int arity, std::vector<std::string> vocab, std::vector<VT> in, VT out) {
    SubTaskDef d;
    d.name = std::move(name);
    d.arity = arity;
    d.needs_arg = !vocab.empty();
    d.arg_vocab = std::move(vocab);
    d.input_types = std::move(in);
    d.output_type = out;
    return d;
  };
  // entry order matches the module-number table of the Individual library
  return {
      def("scene", 0, {}, {}, VT::Set),
      def("count", 1, {}, {VT::Set}, VT::Integer),
      def("exist", 1, {}, {VT::Set}, VT::Boolean),
      def("intersect", 2, {}, {VT::Set, VT::Set}, VT::Set),
      def("relate", 1, kDirections, {VT::Object}, VT::Set),
      def("union", 2, {}, {VT::Set, VT::Set}, VT::Set),
      def("unique", 1, {}, {VT::Set}, VT::Object),
      def("greater_than", 2, {}, {VT::Integer, VT::Integer}, VT::Boolean),
      def("less_than", 2, {}, {VT::Integer, VT::Integer}, VT::Boolean),
      def("equal_color", 2, {}, {VT::Object, VT::Object}, VT::Boolean),
      def("equal_integer", 2, {}, {VT::Integer, VT::Integer}, VT::Boolean),
      def("equal_material", 2, {}, {VT::Object, VT::Object}, VT::Boolean),
      def("equal_shape", 2, {}, {VT::Object, VT::Object}, VT::Boolean),
      def("equal_size", 2, {}, {VT::Object, VT::Object}, VT::Boolean),
      def("filter_color", 1, kColors, {VT::Set}, VT::Set),
      def("filter_material", 1, kMaterials, {VT::Set}, VT::Set),
      def("filter_shape", 1, kShapes, {VT::Set}, VT::Set),
      def("filter_size", 1, kSizes, {VT::Set}, VT::Set),
      def("query_color", 1, {}, {VT::Object}, VT::Color),
      def("query_material", 1, {}, {VT::Object}, VT::Material),
      def("query_shape", 1, {}, {VT::Object}, VT::Shape),
      def("query_size", 1, {}, {VT::Object}, VT::Size),
      def("same_color", 1, {}, {VT::Object}, VT::Set),
      def("same_material", 1, {}, {VT::Object}, VT::Set),
      def("same_shape", 1, {}, {VT::Object}, VT::Set),
      def("same_size", 1, {}, {VT::Object}, VT::Set),
  };
}

}  // namespace

SubTaskCatalog::SubTaskCatalog(std::vector<SubTaskDef> entries) : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (!index_.emplace(entries_[i].name, i).second)
      throw std::invalid_argument("catalog: duplicate sub-task '" + entries_[i].name + "'");
  }
}

const SubTaskCatalog& SubTaskCatalog::default26() {
  static const SubTaskCatalog catalog(default_entries());
  return catalog;
}

const SubTaskDef* SubTaskCatalog::find(const std::string& op) const {
  auto it = index_.find(op);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const SubTaskDef& SubTaskCatalog::at(const std::string& op) const {
  const SubTaskDef* d = find(op);
  if (!d) throw std::out_of_range("catalog: unknown sub-task '" + op + "'");
  return *d;
}

int SubTaskCatalog::index_of(const std::string& op) const {
  auto it = index_.find(op);
  return it == index_.end() ? -1 : static_cast<int>(it->second);
}

std::string SubTaskCatalog::to_json() const {
  json arr = json::array();
  for (const auto& e : entries_) {
    json item;
    item["name"] = e.name;
    item["arity"] = e.arity;
    if (e.needs_arg) item["arg_vocab"] = e.arg_vocab;
    json in = json::array();
    for (auto t : e.input_types) in.push_back(to_string(t));
    item["input_types"] = in;
    item["output_type"] = to_string(e.output_type);
    arr.push_back(item);
  }
  json root;
  root["schema"] = "tmn-catalog";
  root["version"] = 1;
  root["subtasks"] = arr;
  return root.dump();
}

SubTaskCatalog SubTaskCatalog::from_json(const std::string& text) {
  json root = json::parse(text);
  if (root.value("schema", "") != "tmn-catalog")
    throw std::invalid_argument("catalog: missing schema marker");
  std::vector<SubTaskDef> entries;
  for (const auto& item : root.at("subtasks")) {
    SubTaskDef d;
    d.name = item.at("name").get<std::string>();
    d.arity = item.at("arity").get<int>();
    if (item.contains("arg_vocab")) {
      d.arg_vocab = item["arg_vocab"].get<std::vector<std::string>>();
      d.needs_arg = true;
    }
    for (const auto& t : item.at("input_types")) d.input_types.push_back(type_from_string(t.get<std::string>()));
    d.output_type = type_from_string(item.at("output_type").get<std::string>());
    if (static_cast<int>(d.input_types.size()) != d.arity)
      throw std::invalid_argument("catalog: '" + d.name + "' lists " + std::to_string(d.input_types.size()) +
                                  " input types for arity " + std::to_string(d.arity));
    entries.push_back(std::move(d));
  }
  return SubTaskCatalog(std::move(entries));
}

SubTaskCatalog SubTaskCatalog::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("catalog: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

uint64_t SubTaskCatalog::hash() const {
  const std::string canon = to_json();
  return fnv1a(canon.data(), canon.size());
}

}  // namespace tmn
