#pragma once

// The sub-task catalog: names, arities, argument vocabularies and value
// types. Ships with the 26-entry grid-world catalog as the built-in default;
// alternative catalogs load from JSON config files.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace tmn {

enum class ValueType { Set, Object, Integer, Boolean, Color, Shape, Size, Material };

std::string to_string(ValueType t);

struct SubTaskDef {
  std::string name;
  int arity = 0;  // number of child inputs: 0, 1 or 2
  bool needs_arg = false;
  std::vector<std::string> arg_vocab;
  std::vector<ValueType> input_types;
  ValueType output_type = ValueType::Set;
};

class SubTaskCatalog {
 public:
  // the default 26-entry library, ordered as in the module-number table
  static const SubTaskCatalog& default26();
  static SubTaskCatalog from_json(const std::string& text);
  static SubTaskCatalog load_file(const std::string& path);

  std::string to_json() const;
  uint64_t hash() const;  // over the canonical JSON form

  const SubTaskDef* find(const std::string& op) const;
  const SubTaskDef& at(const std::string& op) const;  // throws on unknown op
  int index_of(const std::string& op) const;          // position in entry order, -1 if unknown
  const std::vector<SubTaskDef>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  explicit SubTaskCatalog(std::vector<SubTaskDef> entries);

 private:
  std::vector<SubTaskDef> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace tmn
