#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <cctype>
#include <map>
#include <optional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "miniswift/data/logical_type.hpp"

namespace miniswift::data {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class NodeState : std::uint8_t { unresolved, resolved, failed };

class DoubleAssignment : public std::logic_error {
 public:
  explicit DoubleAssignment(const std::string& path)
      : std::logic_error("double assignment of dataset '" + path + "'") {}
};

class NotAFile : public std::invalid_argument {
 public:
  explicit NotAFile(const std::string& path) : std::invalid_argument("'" + path + "' is not a file dataset") {}
};

// A step below a mapped root: struct field name or array index.
using PathKey = std::variant<std::string, std::int64_t>;

// Produces the physical path of an output leaf of a mapped dataset from its
// position below the mapped root.
using OutputPathFn = std::function<std::string(const std::vector<PathKey>&)>;

struct Node {
  std::atomic<NodeState> state{NodeState::unresolved};
  bool closed = false;      // arrays: no more elements will appear
  bool has_writer = false;  // some producer is responsible for this node
  const LogicalType* type = nullptr;
  NodeId parent = kNoNode;
  std::int32_t pending = 0;      // unresolved children
  std::int32_t map_ctx = -1;     // output mapping this node lives under
  std::int32_t producer = -1;    // task that resolved it
  std::int64_t key = 0;          // field index or array index within parent
  std::string value;             // primitive text or physical file path
  std::vector<NodeId> children;  // struct fields in order, or array elements by index
  std::vector<std::pair<bool, std::function<void()>>> waiters;  // (on_close, fn)
};

// Mapper output for input-mode bindings: a value tree shaped like the type.
struct Mapped {
  enum class Kind { leaf, structure, array };
  Kind kind = Kind::leaf;
  std::string value;
  std::vector<Mapped> children;

  static Mapped leaf(std::string v) { return Mapped{Kind::leaf, std::move(v), {}}; }
};

class ShapeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool shape_matches(const Mapped& m, const LogicalType& t, std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  switch (t.kind) {
    case LogicalType::Kind::primitive:
    case LogicalType::Kind::file:
      return m.kind == Mapped::Kind::leaf || fail("expected a leaf for " + t.display());
    case LogicalType::Kind::structure:
      if (m.kind != Mapped::Kind::structure || m.children.size() != t.fields.size())
        return fail("expected struct " + t.name + " with " + std::to_string(t.fields.size()) + " fields");
      for (std::size_t i = 0; i < t.fields.size(); ++i)
        if (!shape_matches(m.children[i], *t.fields[i].type, why)) return false;
      return true;
    case LogicalType::Kind::array:
      if (m.kind != Mapped::Kind::array) return fail("expected an array " + t.display());
      for (const auto& c : m.children)
        if (!shape_matches(c, *t.element, why)) return false;
      return true;
  }
  return false;
}

// Append-only table of future-bearing dataset nodes. State transitions use
// compare-and-set so resolutions racing from several threads are detected;
// everything else is owned by the engine thread.
class NodeStore {
 public:
  explicit NodeStore(std::filesystem::path data_dir = {}) : data_dir_(std::move(data_dir)) {}

  void set_data_dir(std::filesystem::path d) { data_dir_ = std::move(d); }
  const std::filesystem::path& data_dir() const { return data_dir_; }

  std::size_t size() const { return nodes_.size(); }
  Node& at(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& at(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  NodeState state(NodeId id) const { return at(id).state.load(std::memory_order_acquire); }
  bool resolved(NodeId id) const { return state(id) == NodeState::resolved; }
  bool failed(NodeId id) const { return state(id) == NodeState::failed; }
  bool terminal(NodeId id) const { return state(id) != NodeState::unresolved; }
  const LogicalType& type(NodeId id) const { return *at(id).type; }
  const std::string& value(NodeId id) const { return at(id).value; }

  // Keeps `t` alive for the lifetime of the store.
  const LogicalType* retain(const TypePtr& t) {
    auto [it, inserted] = retained_.emplace(t.get(), t);
    return it->first;
  }

  // New root node named `logical`. Struct children are created eagerly; array
  // elements on demand.
  NodeId create(const TypePtr& type, std::string logical, std::int32_t map_ctx = -1) {
    NodeId id = make(retain(type), kNoNode, 0, map_ctx);
    roots_[id] = std::move(logical);
    init_children(id);
    return id;
  }

  // Registers an output mapping; nodes created under it get their file
  // paths from `fn`.
  std::int32_t add_output_mapping(OutputPathFn fn) {
    contexts_.push_back(std::move(fn));
    return static_cast<std::int32_t>(contexts_.size() - 1);
  }

  // Element `index` of an array, created on demand. Returns kNoNode when the
  // array is closed and has no such element.
  NodeId element(NodeId arr, std::int64_t index) {
    Node& a = at(arr);
    if (!a.type->is_array()) throw std::logic_error("element() on non-array " + logical_path(arr));
    if (index < 0) return kNoNode;
    auto idx = static_cast<std::size_t>(index);
    if (idx < a.children.size() && a.children[idx] != kNoNode) return a.children[idx];
    if (a.closed) return kNoNode;
    NodeId id = make(a.type->element.get(), arr, index, a.map_ctx);
    Node& arr2 = at(arr);
    if (arr2.children.size() <= idx) arr2.children.resize(idx + 1, kNoNode);
    arr2.children[idx] = id;
    ++arr2.pending;
    init_children(id);
    return id;
  }

  NodeId field(NodeId s, int index) const { return at(s).children.at(static_cast<std::size_t>(index)); }
  NodeId field(NodeId s, const std::string& name) const {
    int i = at(s).type->field_index(name);
    if (i < 0) throw std::out_of_range("no field '" + name + "' in " + logical_path(s));
    return field(s, i);
  }

  // Present elements of an array, in index order.
  std::vector<std::pair<std::int64_t, NodeId>> elements(NodeId arr) const {
    std::vector<std::pair<std::int64_t, NodeId>> out;
    const auto& c = at(arr).children;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (c[i] != kNoNode) out.emplace_back(static_cast<std::int64_t>(i), c[i]);
    return out;
  }

  std::string logical_path(NodeId id) const {
    const Node& n = at(id);
    if (n.parent == kNoNode) {
      auto it = roots_.find(id);
      return it == roots_.end() ? "$" + std::to_string(id) : it->second;
    }
    const Node& p = at(n.parent);
    if (p.type->is_array()) return logical_path(n.parent) + "[" + std::to_string(n.key) + "]";
    return logical_path(n.parent) + "." + p.type->fields[static_cast<std::size_t>(n.key)].name;
  }

  // Steps from the root of `id`'s tree down to it.
  std::vector<PathKey> steps_from_root(NodeId id) const {
    std::vector<PathKey> out;
    for (NodeId cur = id; at(cur).parent != kNoNode; cur = at(cur).parent) {
      const Node& n = at(cur);
      const Node& p = at(n.parent);
      if (p.type->is_array())
        out.emplace_back(n.key);
      else
        out.emplace_back(p.type->fields[static_cast<std::size_t>(n.key)].name);
    }
    return {out.rbegin(), out.rend()};
  }

  // Resolves a primitive or file leaf. A second resolution is an error.
  void resolve_leaf(NodeId id, std::optional<std::string> value = std::nullopt, std::int32_t producer = -1) {
    Node& n = at(id);
    NodeState expect = NodeState::unresolved;
    if (!n.state.compare_exchange_strong(expect, NodeState::resolved, std::memory_order_acq_rel))
      throw DoubleAssignment(logical_path(id));
    if (value) n.value = std::move(*value);
    if (producer >= 0) n.producer = producer;
    settled(id);
  }

  // Marks a node (and, eagerly, its enclosing composites) failed. Returns
  // false if it was already terminal.
  bool fail(NodeId id, const std::string& reason) {
    Node& n = at(id);
    NodeState expect = NodeState::unresolved;
    if (!n.state.compare_exchange_strong(expect, NodeState::failed, std::memory_order_acq_rel)) return false;
    errors_.emplace(id, reason);
    settled(id);
    return true;
  }

  std::string error(NodeId id) const {
    auto it = errors_.find(id);
    return it == errors_.end() ? std::string() : it->second;
  }

  // No more elements will be added. Created elements keep their own fate.
  void close(NodeId arr) {
    Node& a = at(arr);
    if (a.closed) return;
    a.closed = true;
    fire(arr, true);
    if (a.pending == 0 && a.state.load() == NodeState::unresolved) compose(arr);
  }

  bool closed(NodeId arr) const { return at(arr).closed; }

  // `fn` runs once the node is resolved or failed (immediately if it is).
  void on_settled(NodeId id, std::function<void()> fn) {
    if (terminal(id)) {
      fn();
      return;
    }
    at(id).waiters.emplace_back(false, std::move(fn));
  }

  // `fn` runs once the array is closed. A failed component does not close
  // the array: element writers may still be running.
  void on_closed(NodeId arr, std::function<void()> fn) {
    if (at(arr).closed) {
      fn();
      return;
    }
    at(arr).waiters.emplace_back(true, std::move(fn));
  }

  // Fills an unresolved node from an input-mode mapping result.
  void bind(NodeId id, const Mapped& m) {
    std::string why;
    if (!shape_matches(m, *at(id).type, &why))
      throw ShapeMismatch("mapping of '" + logical_path(id) + "' does not match its type: " + why);
    bind_unchecked(id, m);
  }

  // Physical path of a file leaf.
  std::string filename_of(NodeId id) const {
    if (!at(id).type->is_file()) throw NotAFile(logical_path(id));
    return at(id).value;
  }

  // All file leaves at or below `id`, in declaration / index order.
  std::vector<NodeId> file_leaves(NodeId id) const {
    std::vector<NodeId> out;
    collect_files(id, out);
    return out;
  }

  // Approximate bytes held by the store, heap allocations included.
  std::size_t footprint() const {
    std::size_t bytes = nodes_.size() * sizeof(Node);
    for (const auto& n : nodes_) {
      bytes += n.children.capacity() * sizeof(NodeId);
      bytes += n.waiters.capacity() * sizeof(n.waiters[0]);
      if (n.value.capacity() > 15) bytes += n.value.capacity() + 1;
    }
    for (const auto& [id, name] : roots_) bytes += 48 + name.capacity();
    for (const auto& [id, e] : errors_) bytes += 48 + e.capacity();
    return bytes;
  }

 private:
  NodeId make(const LogicalType* t, NodeId parent, std::int64_t key, std::int32_t map_ctx) {
    nodes_.emplace_back();
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    Node& n = nodes_.back();
    n.type = t;
    n.parent = parent;
    n.key = key;
    n.map_ctx = map_ctx;
    return id;
  }

  void init_children(NodeId id) {
    const LogicalType* t = at(id).type;
    if (t->is_file()) {
      at(id).value = default_path(id);
    } else if (t->is_struct()) {
      at(id).children.reserve(t->fields.size());
      for (std::size_t i = 0; i < t->fields.size(); ++i) {
        NodeId c = make(t->fields[i].type.get(), id, static_cast<std::int64_t>(i), at(id).map_ctx);
        at(id).children.push_back(c);
        ++at(id).pending;
        init_children(c);
      }
      if (t->fields.empty()) compose(id);
    }
  }

  std::string default_path(NodeId id) const {
    const Node& n = at(id);
    if (n.map_ctx >= 0) return contexts_[static_cast<std::size_t>(n.map_ctx)](steps_from_root(id));
    if (data_dir_.empty()) return {};
    return (data_dir_ / sanitize(logical_path(id))).string();
  }

 public:
  // Logical path -> relative file name: separators and brackets become
  // underscores, `..` cannot escape.
  static std::string sanitize(const std::string& logical) {
    std::string out;
    out.reserve(logical.size());
    for (char c : logical) {
      if (c == '/') {
        out += "__";
      } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') {
        out += c;
      } else {
        out += '_';
      }
    }
    while (!out.empty() && out.front() == '_') out.erase(out.begin());
    for (std::size_t p; (p = out.find("..")) != std::string::npos;) out.replace(p, 2, "_.");
    return out.empty() ? "_" : out;
  }

 private:
  void settled(NodeId id) {
    fire(id, false);
    Node& n = at(id);
    NodeId parent = n.parent;
    if (parent == kNoNode) return;
    Node& p = at(parent);
    if (p.state.load() != NodeState::unresolved) return;
    if (n.state.load() == NodeState::failed) {
      fail(parent, "component " + logical_path(id) + " failed");
      return;
    }
    if (--p.pending == 0 && (!p.type->is_array() || p.closed)) compose(parent);
  }

  void compose(NodeId id) {
    NodeState expect = NodeState::unresolved;
    if (!at(id).state.compare_exchange_strong(expect, NodeState::resolved)) return;
    settled(id);
  }

  // Settling runs the settle-waiters; closing runs the close-waiters.
  void fire(NodeId id, bool closing) {
    auto& w = at(id).waiters;
    if (w.empty()) return;
    std::vector<std::pair<bool, std::function<void()>>> run, keep;
    for (auto& e : w) (e.first == closing ? run : keep).push_back(std::move(e));
    w = std::move(keep);
    if (w.empty()) w.shrink_to_fit();
    for (auto& e : run) e.second();
  }

  void bind_unchecked(NodeId id, const Mapped& m) {
    const LogicalType* t = at(id).type;
    at(id).has_writer = true;
    if (t->is_primitive() || t->is_file()) {
      if (terminal(id)) throw DoubleAssignment(logical_path(id));
      resolve_leaf(id, m.value);
    } else if (t->is_struct()) {
      for (std::size_t i = 0; i < m.children.size(); ++i) bind_unchecked(at(id).children[i], m.children[i]);
    } else {
      for (std::size_t i = 0; i < m.children.size(); ++i) {
        NodeId e = element(id, static_cast<std::int64_t>(i));
        if (e == kNoNode) throw DoubleAssignment(logical_path(id));
        bind_unchecked(e, m.children[i]);
      }
      for (auto [idx, e] : elements(id))
        if (static_cast<std::size_t>(idx) >= m.children.size()) fail(e, "no element " + logical_path(e));
      close(id);
    }
  }

  void collect_files(NodeId id, std::vector<NodeId>& out) const {
    const Node& n = at(id);
    if (n.type->is_file()) {
      out.push_back(id);
      return;
    }
    for (NodeId c : n.children)
      if (c != kNoNode) collect_files(c, out);
  }

  std::deque<Node> nodes_;
  std::unordered_map<NodeId, std::string> roots_;
  std::unordered_map<NodeId, std::string> errors_;
  std::vector<OutputPathFn> contexts_;
  std::map<const LogicalType*, TypePtr> retained_;
  std::filesystem::path data_dir_;
};

}  // namespace miniswift::data
