#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniswift/data/dataset.hpp"

namespace miniswift::data {

namespace fs = std::filesystem;

class MappingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownMapper : public MappingError {
 public:
  explicit UnknownMapper(const std::string& n) : MappingError("unknown mapper '" + n + "'") {}
};

class DuplicateMapper : public std::invalid_argument {
 public:
  explicit DuplicateMapper(const std::string& n) : std::invalid_argument("mapper '" + n + "' is already registered") {}
};

class IncompleteGroup : public MappingError {
 public:
  IncompleteGroup(std::string stem, const std::string& missing)
      : MappingError("incomplete group '" + stem + "': missing " + missing), stem_(std::move(stem)) {}
  const std::string& stem() const { return stem_; }

 private:
  std::string stem_;
};

class RowArityMismatch : public MappingError {
 public:
  RowArityMismatch(int line, std::size_t got, std::size_t want)
      : MappingError("row arity mismatch at line " + std::to_string(line) + ": " + std::to_string(got) +
                     " columns, expected " + std::to_string(want)),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class FieldParseError : public MappingError {
 public:
  FieldParseError(int line, int column, const std::string& text, const std::string& type)
      : MappingError("cannot parse '" + text + "' as " + type + " at line " + std::to_string(line) + ", column " +
                     std::to_string(column)),
        line_(line), column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// Mapper name plus parameters after variable substitution. Relative paths
// are taken against base_dir.
struct MapperDescriptor {
  std::string name;
  std::map<std::string, std::string> params;
  fs::path base_dir;

  bool has(const std::string& k) const { return params.count(k) != 0; }
  std::string get(const std::string& k, const std::string& fallback = {}) const {
    auto it = params.find(k);
    return it == params.end() ? fallback : it->second;
  }
  std::string require(const std::string& k) const {
    auto it = params.find(k);
    if (it == params.end()) throw MappingError(name + ": missing parameter '" + k + "'");
    return it->second;
  }
  long get_int(const std::string& k, long fallback) const {
    if (!has(k)) return fallback;
    std::string v = get(k);
    long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw MappingError(name + ": parameter '" + k + "' is not an int");
    return out;
  }
  bool get_bool(const std::string& k, bool fallback) const {
    if (!has(k)) return fallback;
    std::string v = get(k);
    if (v == "true") return true;
    if (v == "false") return false;
    throw MappingError(name + ": parameter '" + k + "' is not a boolean");
  }
  fs::path path(const std::string& k) const {
    fs::path p = require(k);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
};

enum class MapMode { input, output };

class Mapper {
 public:
  virtual ~Mapper() = default;
  // Input mode: enumerate existing physical data.
  virtual Mapped enumerate(const MapperDescriptor& d, const LogicalType& t) const = 0;
  // Output mode: physical path of the leaf `steps` below the mapped root.
  virtual std::string output_path(const MapperDescriptor& d, const LogicalType& t,
                                  const std::vector<PathKey>& steps) const {
    (void)t;
    (void)steps;
    throw MappingError(d.name + " cannot map output datasets");
  }
  // Output mode: rejects types the mapper cannot name paths for.
  virtual void check_output(const MapperDescriptor& d, const LogicalType& t) const { output_path(d, t, {}); }
};

namespace detail {

inline std::string key_text(const PathKey& k) {
  if (auto* s = std::get_if<std::string>(&k)) return *s;
  return std::to_string(std::get<std::int64_t>(k));
}

inline bool parse_primitive(const std::string& type, const std::string& text) {
  if (type == "int") {
    long long v;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    return ec == std::errc() && p == text.data() + text.size() && !text.empty();
  }
  if (type == "float") {
    double v;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    return ec == std::errc() && p == text.data() + text.size() && !text.empty();
  }
  if (type == "boolean") return text == "true" || text == "false";
  return true;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_on(const std::string& line, const std::string& delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto p = line.find(delim, start);
    std::string cell = line.substr(start, p == std::string::npos ? std::string::npos : p - start);
    auto b = cell.find_first_not_of(" \t");
    auto e = cell.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    if (p == std::string::npos) break;
    start = p + delim.size();
  }
  // A trailing delimiter does not start a column.
  if (out.size() > 1 && out.back().empty()) out.pop_back();
  return out;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

// Groups files `<prefix>[_<rest>]<suffix>` in one directory into an array;
// each struct field is bound by its suffix (default "." + field name).
// Accepted shapes: T[] where T is a file or a struct of files, or a struct
// whose single field is such an array.
class FsMapper : public Mapper {
 public:
  struct Shape {
    bool wrapped = false;
    std::string wrapper_field;
    const LogicalType* element = nullptr;
    std::vector<std::pair<std::string, std::string>> suffixes;  // field -> suffix ("" field for plain files)
  };

  static Shape shape_of(const MapperDescriptor& d, const LogicalType& t) {
    Shape s;
    const LogicalType* arr = &t;
    if (t.is_struct()) {
      if (t.fields.size() != 1 || !t.fields[0].type->is_array())
        throw MappingError(d.name + " cannot map " + t.display() + ": expected a struct with one array field");
      s.wrapped = true;
      s.wrapper_field = t.fields[0].name;
      arr = t.fields[0].type.get();
    }
    if (!arr->is_array()) throw MappingError(d.name + " cannot map " + t.display());
    s.element = arr->element.get();
    if (s.element->is_file()) {
      s.suffixes.emplace_back("", d.get("suffix"));
    } else if (s.element->is_struct()) {
      for (const auto& f : s.element->fields) {
        if (!f.type->is_file())
          throw MappingError(d.name + " cannot map " + t.display() + ": field '" + f.name + "' is not a file");
        s.suffixes.emplace_back(f.name, d.get("suffix_" + f.name, "." + f.name));
      }
    } else {
      throw MappingError(d.name + " cannot map " + t.display());
    }
    return s;
  }

  static bool stem_matches(const std::string& stem, const std::string& prefix) {
    if (prefix.empty()) return true;
    if (stem.compare(0, prefix.size(), prefix) != 0) return false;
    return stem.size() == prefix.size() || stem[prefix.size()] == '_';
  }

  Mapped enumerate(const MapperDescriptor& d, const LogicalType& t) const override {
    Shape shape = shape_of(d, t);
    fs::path dir = d.path("location");
    std::string prefix = d.get("prefix");
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw MappingError(d.name + ": location '" + dir.string() + "' is not a directory");

    // Longest suffix first so ".img.gz" wins over ".gz".
    auto order = shape.suffixes;
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
    std::map<std::string, std::map<std::string, std::string>> groups;  // stem -> field -> path
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      std::string name = entry.path().filename().string();
      for (const auto& [field, suffix] : order) {
        if (name.size() < suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
          continue;
        std::string stem = name.substr(0, name.size() - suffix.size());
        if (stem.empty() || !stem_matches(stem, prefix)) continue;
        groups[stem][field] = entry.path().string();
        break;
      }
    }
    Mapped arr{Mapped::Kind::array, {}, {}};
    for (const auto& [stem, files] : groups) {
      if (shape.element->is_file()) {
        arr.children.push_back(Mapped::leaf(files.begin()->second));
        continue;
      }
      Mapped elem{Mapped::Kind::structure, {}, {}};
      for (const auto& [field, suffix] : shape.suffixes) {
        auto it = files.find(field);
        if (it == files.end()) throw IncompleteGroup(stem, stem + suffix);
        elem.children.push_back(Mapped::leaf(it->second));
      }
      arr.children.push_back(std::move(elem));
    }
    if (!shape.wrapped) return arr;
    Mapped outer{Mapped::Kind::structure, {}, {}};
    outer.children.push_back(std::move(arr));
    return outer;
  }

  void check_output(const MapperDescriptor& d, const LogicalType& t) const override { shape_of(d, t); }

  // <location>/<prefix>_<index zero-padded to 4><suffix>
  std::string output_path(const MapperDescriptor& d, const LogicalType& t,
                          const std::vector<PathKey>& steps) const override {
    Shape shape = shape_of(d, t);
    std::size_t i = shape.wrapped ? 1 : 0;
    if (steps.size() <= i || !std::holds_alternative<std::int64_t>(steps[i]))
      throw MappingError(d.name + ": no output path for a non-leaf");
    auto index = std::get<std::int64_t>(steps[i]);
    std::string suffix;
    if (shape.element->is_file()) {
      suffix = shape.suffixes.front().second;
    } else {
      if (steps.size() <= i + 1) throw MappingError(d.name + ": no output path for a non-leaf");
      std::string field = detail::key_text(steps[i + 1]);
      for (const auto& [f, s] : shape.suffixes)
        if (f == field) suffix = s;
    }
    char num[32];
    std::snprintf(num, sizeof num, "%04lld", static_cast<long long>(index));
    std::string prefix = d.get("prefix");
    std::string name = prefix.empty() ? std::string(num) + suffix : prefix + "_" + num + suffix;
    return (d.path("location") / name).string();
  }
};

// Rows of a delimited text file become struct elements of an array.
class CsvMapper : public Mapper {
 public:
  Mapped enumerate(const MapperDescriptor& d, const LogicalType& t) const override {
    if (!t.is_array() || !t.element->is_struct())
      throw MappingError(d.name + " cannot map " + t.display() + ": expected an array of structs");
    const LogicalType& row = *t.element;
    for (const auto& f : row.fields)
      if (!(f.type->is_primitive() || f.type->is_file()))
        throw MappingError(d.name + ": field '" + f.name + "' must be a primitive or a file");

    fs::path file = d.path("file");
    std::ifstream in(file);
    if (!in) throw MappingError(d.name + ": cannot read '" + file.string() + "'");
    long skip = d.get_int("skip", 0);
    bool header = d.get_bool("header", false);
    std::string hdelim = d.get("hdelim");
    std::string delim = d.get("delim");
    fs::path dir = file.parent_path();

    std::vector<std::pair<int, std::string>> lines;
    std::string line;
    for (int no = 1; std::getline(in, line); ++no) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      lines.emplace_back(no, line);
    }
    std::size_t pos = 0;
    if (header && pos < lines.size()) {
      const auto& [no, text] = lines[pos++];
      auto names = !hdelim.empty() && text.find(hdelim) != std::string::npos ? detail::split_on(text, hdelim)
                                                                              : detail::split_ws(text);
      if (names.size() != row.fields.size()) throw RowArityMismatch(no, names.size(), row.fields.size());
      for (std::size_t i = 0; i < names.size(); ++i)
        if (detail::lower(names[i]) != detail::lower(row.fields[i].name))
          throw MappingError(d.name + ": header column " + std::to_string(i + 1) + " is '" + names[i] +
                             "', expected '" + row.fields[i].name + "'");
    }
    pos = std::min(lines.size(), pos + static_cast<std::size_t>(std::max(0L, skip)));

    Mapped arr{Mapped::Kind::array, {}, {}};
    for (; pos < lines.size(); ++pos) {
      const auto& [no, text] = lines[pos];
      std::vector<std::string> cells;
      if (!delim.empty())
        cells = detail::split_on(text, delim);
      else if (!hdelim.empty() && text.find(hdelim) != std::string::npos)
        cells = detail::split_on(text, hdelim);
      else
        cells = detail::split_ws(text);
      if (cells.size() != row.fields.size()) throw RowArityMismatch(no, cells.size(), row.fields.size());
      Mapped elem{Mapped::Kind::structure, {}, {}};
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& ft = *row.fields[i].type;
        if (ft.is_file()) {
          fs::path p = cells[i];
          elem.children.push_back(Mapped::leaf((p.is_absolute() ? p : dir / p).string()));
        } else {
          if (!detail::parse_primitive(ft.name, cells[i]))
            throw FieldParseError(no, static_cast<int>(i + 1), cells[i], ft.name);
          elem.children.push_back(Mapped::leaf(cells[i]));
        }
      }
      arr.children.push_back(std::move(elem));
    }
    return arr;
  }
};

// One file, named by the `file` parameter.
class FileMapper : public Mapper {
 public:
  Mapped enumerate(const MapperDescriptor& d, const LogicalType& t) const override {
    if (!t.is_file()) throw MappingError(d.name + " cannot map " + t.display() + ": expected a file type");
    fs::path p = d.path("file");
    std::error_code ec;
    if (!fs::exists(p, ec)) throw MappingError(d.name + ": missing file '" + p.string() + "'");
    return Mapped::leaf(p.string());
  }
  std::string output_path(const MapperDescriptor& d, const LogicalType& t,
                          const std::vector<PathKey>& steps) const override {
    if (!t.is_file() || !steps.empty()) throw MappingError(d.name + " cannot map " + t.display());
    return d.path("file").string();
  }
};

// A literal value (or path, for file types) given as `value`.
class StringMapper : public Mapper {
 public:
  Mapped enumerate(const MapperDescriptor& d, const LogicalType& t) const override {
    if (t.is_file()) return Mapped::leaf(d.path("value").string());
    if (!t.is_primitive()) throw MappingError(d.name + " cannot map " + t.display());
    std::string v = d.require("value");
    if (!detail::parse_primitive(t.name, v)) throw MappingError(d.name + ": '" + v + "' is not a " + t.name);
    return Mapped::leaf(v);
  }
  std::string output_path(const MapperDescriptor& d, const LogicalType& t,
                          const std::vector<PathKey>& steps) const override {
    if (!t.is_file() || !steps.empty()) throw MappingError(d.name + " cannot map " + t.display());
    return d.path("value").string();
  }
};

class MapperRegistry {
 public:
  void register_mapper(const std::string& name, std::shared_ptr<const Mapper> m) {
    if (mappers_.count(name) || aliases_.count(name)) throw DuplicateMapper(name);
    mappers_.emplace(name, std::move(m));
  }
  void alias(const std::string& name, const std::string& target) {
    if (mappers_.count(name) || aliases_.count(name)) throw DuplicateMapper(name);
    aliases_.emplace(name, target);
  }
  bool contains(const std::string& name) const { return mappers_.count(canonical(name)) != 0; }
  std::string canonical(const std::string& name) const {
    auto it = aliases_.find(name);
    return it == aliases_.end() ? name : it->second;
  }
  std::shared_ptr<const Mapper> find(const std::string& name) const {
    auto it = mappers_.find(canonical(name));
    if (it == mappers_.end()) throw UnknownMapper(name);
    return it->second;
  }

  static MapperRegistry with_builtins() {
    MapperRegistry r;
    r.register_mapper("fs_mapper", std::make_shared<FsMapper>());
    r.register_mapper("csv_mapper", std::make_shared<CsvMapper>());
    r.register_mapper("file_mapper", std::make_shared<FileMapper>());
    r.register_mapper("string_mapper", std::make_shared<StringMapper>());
    r.alias("run_mapper", "fs_mapper");
    return r;
  }

 private:
  std::map<std::string, std::shared_ptr<const Mapper>> mappers_;
  std::map<std::string, std::string> aliases_;
};

// Input mode: enumerates physical data, shape-checked against `t`.
inline Mapped map_input(const MapperRegistry& reg, const MapperDescriptor& d, const LogicalType& t) {
  Mapped m = reg.find(d.name)->enumerate(d, t);
  std::string why;
  if (!shape_matches(m, t, &why)) throw ShapeMismatch(d.name + " output does not match " + t.display() + ": " + why);
  return m;
}

// Builds a dataset tree for a mapped declaration. Input mode returns resolved
// leaves; output mode returns unresolved leaves carrying their target paths.
inline NodeId map_dataset(NodeStore& store, const MapperRegistry& reg, const MapperDescriptor& d, const TypePtr& t,
                          MapMode mode, std::string logical) {
  if (mode == MapMode::input) {
    Mapped m = map_input(reg, d, *t);
    NodeId id = store.create(t, std::move(logical));
    store.bind(id, m);
    return id;
  }
  auto mapper = reg.find(d.name);
  mapper->check_output(d, *t);
  auto ctx = store.add_output_mapping(
      [mapper, d, t](const std::vector<PathKey>& steps) { return mapper->output_path(d, *t, steps); });
  return store.create(t, std::move(logical), ctx);
}

}  // namespace miniswift::data
