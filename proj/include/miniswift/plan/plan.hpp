#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "miniswift/data/logical_type.hpp"
#include "miniswift/frontend/ast.hpp"

// Location-independent computation plan. Variables are frame slots; no site
// or host information is present.
namespace miniswift::plan {

using data::TypePtr;
using frontend::SourcePos;

// `up` frames outward from the current frame, then `index` within it.
struct SlotRef {
  int up = 0;
  int index = -1;
};

struct PExpr;
using PExprPtr = std::unique_ptr<PExpr>;

struct PStep {
  int field = -1;  // member step when >= 0
  std::string member;
  PExprPtr index;  // index step
  bool is_index() const { return index != nullptr; }
};

struct PPath {
  SlotRef root;
  std::string root_name;
  std::vector<PStep> steps;
  TypePtr type;
};

struct PLiteral {
  frontend::LiteralExpr::Kind kind;
  std::string text;
};

struct PCall {
  int proc = -1;
  std::vector<PExprPtr> args;
};

struct PUnary {
  std::string op;
  PExprPtr operand;
};

struct PBinary {
  std::string op;
  PExprPtr lhs;
  PExprPtr rhs;
};

struct PExpr {
  TypePtr type;
  SourcePos pos;
  std::variant<PLiteral, PPath, PCall, PUnary, PBinary> node;
};

struct PMapParam {
  std::string key;
  frontend::MapperValue::Kind kind;
  std::string text;  // literal value, or variable name
  SlotRef var;       // for variable references
};

struct PMapping {
  std::string mapper;
  std::vector<PMapParam> params;
  SourcePos pos;
};

struct SlotInfo {
  std::string name;
  TypePtr type;
  bool mapped = false;
  bool written = false;  // assigned somewhere in scope: mapped slots use output mode
};

struct PStmt;

struct Block {
  std::vector<SlotInfo> slots;
  std::vector<PStmt> stmts;
};

struct PDeclare {
  int slot = -1;
  std::optional<PMapping> mapping;
  PExprPtr init;
};

struct PAssign {
  PPath target;
  PExprPtr value;
};

struct PForeach {
  PExprPtr source;
  int elem_slot = 0;
  int index_slot = -1;
  Block body;
};

struct PIf {
  PExprPtr cond;
  Block then_block;
  Block else_block;
};

struct PStmt {
  SourcePos pos;
  int ordinal = 0;  // position within its block
  std::variant<PDeclare, PAssign, PForeach, PIf> node;
};

struct PAppArg {
  frontend::AppArg::Kind kind;
  std::string text;
  PPath path;
};

struct PProc {
  std::string name;
  int n_outputs = 0;  // slots [0, n_outputs) are outputs, then inputs
  int n_inputs = 0;
  bool atomic = false;
  bool imported = false;  // declared in an imported library
  std::string executable;
  std::vector<PAppArg> args;
  Block body;  // compound body; for atomic procs only the parameter slots
  std::uint64_t signature = 0;
};

struct PlanStats {
  int procs = 0;
  int top_statements = 0;
  int statements = 0;  // executable statements, every nesting level
  int top_mapped_slots = 0;
  int top_calls = 0;
  int compound_calls = 0;  // call sites of compound procedures, all levels
  int atomic_calls = 0;
};

struct AbstractPlan {
  std::vector<PProc> procs;
  std::map<std::string, int> proc_index;
  Block top;
  std::uint64_t digest = 0;
  PlanStats stats;

  const PProc* find(const std::string& name) const {
    auto it = proc_index.find(name);
    return it == proc_index.end() ? nullptr : &procs[it->second];
  }
};

}  // namespace miniswift::plan
