#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "miniswift/frontend/lexer.hpp"

namespace miniswift::frontend {

struct TypeName {
  std::string name;
  bool is_array = false;
  SourcePos pos;
};

struct FieldDecl {
  TypeName type;
  std::string name;
  SourcePos pos;
};

struct TypeDecl {
  enum class Kind { opaque_file, structure };
  std::string name;
  Kind kind = Kind::opaque_file;
  std::vector<FieldDecl> fields;
  SourcePos pos;
};

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

// `a.b[i].c` : root variable followed by member / index steps.
struct PathStep {
  std::string member;  // empty for index steps
  ExprPtr index;
  bool is_index() const { return index != nullptr; }
};

struct Path {
  std::string root;
  std::vector<PathStep> steps;
  SourcePos pos;
};

struct LiteralExpr {
  enum class Kind { string, integer, floating, boolean };
  Kind kind;
  std::string text;
};

struct CallExpr {
  std::string proc;
  std::vector<ExprPtr> args;
};

struct UnaryExpr {
  std::string op;  // "!" or "-"
  ExprPtr operand;
};

struct BinaryExpr {
  std::string op;
  ExprPtr lhs;
  ExprPtr rhs;
};

struct Expr {
  int id = -1;  // dense per-program id, indexes typed annotations
  SourcePos pos;
  std::variant<LiteralExpr, Path, CallExpr, UnaryExpr, BinaryExpr> node;
};

struct MapperValue {
  enum class Kind { string, integer, floating, boolean, variable };
  Kind kind;
  std::string text;
  SourcePos pos;
};

struct MapperParam {
  std::string key;
  MapperValue value;
};

struct MapperBinding {
  std::string mapper;
  std::vector<MapperParam> params;
  SourcePos pos;
};

struct Stmt;
using StmtList = std::vector<Stmt>;

struct VarDecl {
  TypeName type;
  std::string name;
  std::optional<MapperBinding> mapping;
  ExprPtr init;
};

struct Assign {
  Path target;
  ExprPtr value;
};

struct Foreach {
  std::optional<TypeName> elem_type;
  std::string elem;
  std::optional<std::string> index;
  ExprPtr source;
  StmtList body;
};

struct If {
  ExprPtr cond;
  StmtList then_body;
  StmtList else_body;
};

struct Stmt {
  SourcePos pos;
  std::variant<VarDecl, Assign, Foreach, If> node;
};

struct AppArg {
  enum class Kind { literal, path, filename_of };
  Kind kind = Kind::literal;
  std::string text;  // literal text
  Path path;         // path / filename_of
  SourcePos pos;
};

struct AppLine {
  std::string executable;
  std::vector<AppArg> args;
  SourcePos pos;
};

struct Param {
  TypeName type;
  std::string name;
  SourcePos pos;
};

struct ProcDecl {
  std::string name;
  std::vector<Param> outputs;
  std::vector<Param> inputs;
  std::optional<AppLine> app;  // set for atomic procedures
  StmtList body;               // compound procedures
  SourcePos pos;
  bool is_atomic() const { return app.has_value(); }
};

struct Import {
  std::string path;
  SourcePos pos;
};

struct Ast {
  std::vector<Import> imports;
  std::vector<TypeDecl> types;
  std::vector<ProcDecl> procs;
  StmtList stmts;
  int expr_count = 0;
};

}  // namespace miniswift::frontend
