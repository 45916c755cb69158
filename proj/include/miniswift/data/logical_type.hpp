#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace miniswift::data {

struct LogicalType;
using TypePtr = std::shared_ptr<const LogicalType>;

// XDTM-style logical type. Structs and opaque files compare nominally,
// primitives and arrays structurally.
struct LogicalType {
  enum class Kind { primitive, file, structure, array };

  struct Field {
    std::string name;
    TypePtr type;
  };

  Kind kind = Kind::primitive;
  std::string name;           // primitive name, file type name or struct name
  std::vector<Field> fields;  // structure only
  TypePtr element;            // array only

  bool is_primitive() const { return kind == Kind::primitive; }
  bool is_file() const { return kind == Kind::file; }
  bool is_struct() const { return kind == Kind::structure; }
  bool is_array() const { return kind == Kind::array; }

  const Field* field(const std::string& n) const {
    for (const auto& f : fields)
      if (f.name == n) return &f;
    return nullptr;
  }
  int field_index(const std::string& n) const {
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i].name == n) return static_cast<int>(i);
    return -1;
  }

  std::string display() const {
    if (kind == Kind::array) return (element ? element->display() : std::string("?")) + "[]";
    return name;
  }

  static TypePtr primitive(std::string n) {
    auto t = std::make_shared<LogicalType>();
    t->kind = Kind::primitive;
    t->name = std::move(n);
    return t;
  }
  static TypePtr file(std::string n) {
    auto t = std::make_shared<LogicalType>();
    t->kind = Kind::file;
    t->name = std::move(n);
    return t;
  }
  static TypePtr array_of(TypePtr elem) {
    auto t = std::make_shared<LogicalType>();
    t->kind = Kind::array;
    t->element = std::move(elem);
    return t;
  }
};

inline bool same_type(const TypePtr& a, const TypePtr& b) {
  if (a == b) return true;
  if (!a || !b || a->kind != b->kind) return false;
  if (a->kind == LogicalType::Kind::array) return same_type(a->element, b->element);
  return a->name == b->name;
}

// Assignment compatibility: identical types, plus int widening to float.
inline bool assignable(const TypePtr& to, const TypePtr& from) {
  if (same_type(to, from)) return true;
  return to && from && to->is_primitive() && from->is_primitive() && to->name == "float" && from->name == "int";
}

// True when every leaf reachable without crossing an array is a file.
inline bool is_struct_of_files(const TypePtr& t) {
  if (!t || !t->is_struct()) return false;
  for (const auto& f : t->fields)
    if (!(f.type->is_file() || is_struct_of_files(f.type))) return false;
  return !t->fields.empty();
}

class TypeTable {
 public:
  TypeTable() {
    for (const char* p : {"string", "int", "float", "boolean"}) types_[p] = LogicalType::primitive(p);
    // Dates are carried as strings.
    types_["date"] = types_["string"];
  }

  TypePtr find(const std::string& name) const {
    auto it = types_.find(name);
    return it == types_.end() ? nullptr : it->second;
  }
  bool contains(const std::string& name) const { return types_.count(name) != 0; }
  void add(const std::string& name, TypePtr t) { types_[name] = std::move(t); }

  TypePtr string_type() const { return find("string"); }
  TypePtr int_type() const { return find("int"); }
  TypePtr float_type() const { return find("float"); }
  TypePtr bool_type() const { return find("boolean"); }

  const std::map<std::string, TypePtr>& all() const { return types_; }

 private:
  std::map<std::string, TypePtr> types_;
};

}  // namespace miniswift::data
