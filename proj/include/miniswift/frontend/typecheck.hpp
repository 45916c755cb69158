#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "miniswift/data/logical_type.hpp"
#include "miniswift/frontend/ast.hpp"
#include "miniswift/frontend/printer.hpp"

namespace miniswift::frontend {

using data::LogicalType;
using data::TypePtr;

struct TypeError {
  enum class Kind {
    undefined_type,
    undefined_procedure,
    undefined_variable,
    arity_mismatch,
    type_mismatch,
    reassignment,
    invalid_write,
    duplicate,
    invalid_declaration,
  };
  Kind kind;
  SourcePos pos;
  std::string message;

  std::string str() const {
    return std::to_string(pos.line) + ":" + std::to_string(pos.col) + ": type error: " + message;
  }
};

struct ProcSignature {
  struct Slot {
    std::string name;
    TypePtr type;
  };
  std::string name;
  std::vector<Slot> outputs;
  std::vector<Slot> inputs;
  const ProcDecl* decl = nullptr;
  int unit = 0;  // which compilation unit declares it
};

// One source file after checking: the Ast plus the resolved type of every
// expression (indexed by Expr::id).
struct CheckedUnit {
  std::shared_ptr<const Ast> ast;
  std::vector<TypePtr> expr_types;
  std::string name;

  TypePtr type_of(const Expr& e) const {
    return e.id >= 0 && static_cast<std::size_t>(e.id) < expr_types.size() ? expr_types[e.id] : nullptr;
  }
};

struct TypedProgram {
  std::vector<CheckedUnit> units;  // units[0] is the main program
  data::TypeTable types;
  std::map<std::string, ProcSignature> procs;
  std::vector<TypeError> errors;

  bool ok() const { return errors.empty(); }
  const Ast& main() const { return *units.front().ast; }
};

namespace detail {

class Checker {
 public:
  TypedProgram run(Ast main, std::vector<Ast> libs, std::vector<std::string> lib_names) {
    prog_.units.push_back(CheckedUnit{std::make_shared<const Ast>(std::move(main)), {}, "main"});
    for (std::size_t i = 0; i < libs.size(); ++i)
      prog_.units.push_back(CheckedUnit{std::make_shared<const Ast>(std::move(libs[i])), {},
                                        i < lib_names.size() ? lib_names[i] : "lib" + std::to_string(i)});
    for (auto& u : prog_.units) u.expr_types.assign(static_cast<std::size_t>(u.ast->expr_count), nullptr);

    declare_types();
    declare_procs();
    for (std::size_t u = 0; u < prog_.units.size(); ++u) {
      unit_ = static_cast<int>(u);
      const Ast& ast = *prog_.units[u].ast;
      for (const auto& p : ast.procs) check_proc(p);
      if (u != 0 && !ast.stmts.empty())
        error(TypeError::Kind::invalid_declaration, ast.stmts.front().pos,
              "library " + prog_.units[u].name + " may not contain top-level statements");
      if (u == 0) {
        current_proc_ = nullptr;
        scopes_.clear();
        push_scope();
        check_block(ast.stmts);
        pop_scope();
      }
    }
    return std::move(prog_);
  }

 private:
  enum class VarRole { local, input, output, loop };
  struct VarInfo {
    TypePtr type;
    VarRole role;
    bool initialized;  // bound to a value by its declaration or a whole assignment
    bool mapped;
    SourcePos pos;
  };
  using Scope = std::map<std::string, VarInfo>;

  void error(TypeError::Kind k, SourcePos pos, std::string msg) {
    prog_.errors.push_back(TypeError{k, pos, std::move(msg)});
  }

  // ---- declarations -----------------------------------------------------

  void declare_types() {
    struct Pending {
      const TypeDecl* decl;
      int unit;
    };
    std::vector<Pending> structs;
    for (std::size_t u = 0; u < prog_.units.size(); ++u) {
      for (const auto& td : prog_.units[u].ast->types) {
        if (prog_.types.contains(td.name)) {
          error(TypeError::Kind::duplicate, td.pos, "type '" + td.name + "' is already defined");
          continue;
        }
        if (td.kind == TypeDecl::Kind::opaque_file) {
          prog_.types.add(td.name, LogicalType::file(td.name));
        } else {
          auto t = std::make_shared<LogicalType>();
          t->kind = LogicalType::Kind::structure;
          t->name = td.name;
          prog_.types.add(td.name, t);
          structs.push_back({&td, static_cast<int>(u)});
        }
      }
    }
    // Struct fields may reference types declared later in the file.
    for (const auto& p : structs) {
      auto t = std::const_pointer_cast<LogicalType>(prog_.types.find(p.decl->name));
      std::set<std::string> seen;
      for (const auto& f : p.decl->fields) {
        if (!seen.insert(f.name).second) {
          error(TypeError::Kind::duplicate, f.pos, "duplicate field '" + f.name + "' in " + p.decl->name);
          continue;
        }
        TypePtr ft = resolve(f.type);
        if (!ft) continue;
        t->fields.push_back({f.name, ft});
      }
    }
    for (const auto& p : structs) {
      std::set<std::string> stack;
      if (recursive(prog_.types.find(p.decl->name), stack))
        error(TypeError::Kind::invalid_declaration, p.decl->pos, "type '" + p.decl->name + "' contains itself");
    }
  }

  bool recursive(const TypePtr& t, std::set<std::string>& stack) {
    if (!t) return false;
    if (t->is_array()) return recursive(t->element, stack);
    if (!t->is_struct()) return false;
    if (!stack.insert(t->name).second) return true;
    for (const auto& f : t->fields)
      if (recursive(f.type, stack)) return true;
    stack.erase(t->name);
    return false;
  }

  TypePtr resolve(const TypeName& tn) {
    TypePtr base = prog_.types.find(tn.name);
    if (!base) {
      error(TypeError::Kind::undefined_type, tn.pos, "undefined type '" + tn.name + "'");
      return nullptr;
    }
    return tn.is_array ? LogicalType::array_of(base) : base;
  }

  void declare_procs() {
    for (std::size_t u = 0; u < prog_.units.size(); ++u) {
      for (const auto& pd : prog_.units[u].ast->procs) {
        if (prog_.procs.count(pd.name)) {
          error(TypeError::Kind::duplicate, pd.pos, "procedure '" + pd.name + "' is already defined");
          continue;
        }
        ProcSignature sig;
        sig.name = pd.name;
        sig.decl = &pd;
        sig.unit = static_cast<int>(u);
        std::set<std::string> names;
        for (const auto& p : pd.outputs) {
          if (!names.insert(p.name).second)
            error(TypeError::Kind::duplicate, p.pos, "duplicate parameter '" + p.name + "'");
          sig.outputs.push_back({p.name, resolve(p.type)});
        }
        for (const auto& p : pd.inputs) {
          if (!names.insert(p.name).second)
            error(TypeError::Kind::duplicate, p.pos,
                  "parameter '" + p.name + "' appears as both input and output or twice");
          sig.inputs.push_back({p.name, resolve(p.type)});
        }
        if (pd.outputs.empty())
          error(TypeError::Kind::invalid_declaration, pd.pos, "procedure '" + pd.name + "' has no outputs");
        prog_.procs.emplace(pd.name, std::move(sig));
      }
    }
  }

  // ---- procedures -------------------------------------------------------

  void check_proc(const ProcDecl& pd) {
    auto it = prog_.procs.find(pd.name);
    if (it == prog_.procs.end() || it->second.decl != &pd) return;
    const ProcSignature& sig = it->second;
    current_proc_ = &pd;
    scopes_.clear();
    push_scope();
    for (const auto& s : sig.outputs) declare_param(s, VarRole::output, pd.pos);
    for (const auto& s : sig.inputs) declare_param(s, VarRole::input, pd.pos);

    if (pd.app) {
      for (const auto& o : sig.outputs) {
        if (o.type && !(o.type->is_file() || data::is_struct_of_files(o.type)))
          error(TypeError::Kind::invalid_declaration, pd.pos,
                "output '" + o.name + "' of atomic procedure '" + pd.name + "' must be a file or struct of files");
      }
      for (const auto& a : pd.app->args) {
        if (a.kind == AppArg::Kind::literal) continue;
        TypePtr t = path_type(a.path, false);
        if (!t) continue;
        if (a.kind == AppArg::Kind::filename_of) {
          if (!(t->is_file() || data::is_struct_of_files(t)))
            error(TypeError::Kind::type_mismatch, a.pos,
                  "@filename needs a file or struct of files, got " + t->display());
        } else if (!t->is_primitive()) {
          error(TypeError::Kind::type_mismatch, a.pos,
                "argument '" + a.path.root + "' of type " + t->display() + " needs @filename");
        }
      }
    } else {
      check_block(pd.body);
    }
    pop_scope();
    current_proc_ = nullptr;
  }

  void declare_param(const ProcSignature::Slot& s, VarRole role, SourcePos pos) {
    scopes_.back()[s.name] = VarInfo{s.type, role, role == VarRole::input, false, pos};
  }

  void push_scope() { scopes_.emplace_back(); }
  void pop_scope() { scopes_.pop_back(); }

  VarInfo* lookup(const std::string& name) {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto f = it->find(name);
      if (f != it->end()) return &f->second;
    }
    return nullptr;
  }

  void declare_var(const std::string& name, VarInfo info) {
    if (lookup(name)) {
      error(TypeError::Kind::duplicate, info.pos, "variable '" + name + "' is already declared");
      return;
    }
    scopes_.back()[name] = std::move(info);
  }

  // ---- statements -------------------------------------------------------

  void check_block(const StmtList& stmts) {
    for (const auto& s : stmts) check_stmt(s);
  }

  void check_stmt(const Stmt& s) {
    if (auto* v = std::get_if<VarDecl>(&s.node)) {
      TypePtr t = resolve(v->type);
      if (v->mapping) {
        for (const auto& p : v->mapping->params) {
          if (p.value.kind == MapperValue::Kind::variable && !lookup(p.value.text))
            error(TypeError::Kind::undefined_variable, p.value.pos,
                  "mapper parameter refers to undefined variable '" + p.value.text + "'");
        }
      }
      if (v->init) {
        TypePtr it = check_expr(*v->init);
        if (t && it && !data::assignable(t, it))
          error(TypeError::Kind::type_mismatch, v->init->pos,
                "cannot initialise " + t->display() + " '" + v->name + "' with " + it->display());
      }
      declare_var(v->name, VarInfo{t, VarRole::local, v->init != nullptr, v->mapping.has_value(), s.pos});
    } else if (auto* a = std::get_if<Assign>(&s.node)) {
      TypePtr vt = check_expr(*a->value);
      TypePtr lt = path_type(a->target, true);
      VarInfo* root = lookup(a->target.root);
      if (root) {
        if (root->role == VarRole::input)
          error(TypeError::Kind::invalid_write, a->target.pos,
                "cannot write to input parameter '" + a->target.root + "'");
        else if (root->role == VarRole::loop)
          error(TypeError::Kind::invalid_write, a->target.pos,
                "cannot write to loop variable '" + a->target.root + "'");
        else if (a->target.steps.empty()) {
          if (root->initialized)
            error(TypeError::Kind::reassignment, a->target.pos,
                  "variable '" + a->target.root + "' is assigned more than once");
          root->initialized = true;
        }
      }
      if (lt && vt && !data::assignable(lt, vt))
        error(TypeError::Kind::type_mismatch, a->value->pos,
              "cannot assign " + vt->display() + " to " + lt->display());
    } else if (auto* f = std::get_if<Foreach>(&s.node)) {
      TypePtr st = check_expr(*f->source);
      TypePtr elem;
      if (st && !st->is_array())
        error(TypeError::Kind::type_mismatch, f->source->pos, "foreach source must be an array, got " + st->display());
      else if (st)
        elem = st->element;
      if (f->elem_type) {
        TypePtr declared = resolve(*f->elem_type);
        if (declared && elem && !data::same_type(declared, elem))
          error(TypeError::Kind::type_mismatch, f->elem_type->pos,
                "loop variable declared " + declared->display() + " but elements are " + elem->display());
      }
      push_scope();
      declare_var(f->elem, VarInfo{elem, VarRole::loop, true, false, s.pos});
      if (f->index) declare_var(*f->index, VarInfo{prog_.types.int_type(), VarRole::loop, true, false, s.pos});
      check_block(f->body);
      pop_scope();
    } else if (auto* i = std::get_if<If>(&s.node)) {
      TypePtr ct = check_expr(*i->cond);
      if (ct && !data::same_type(ct, prog_.types.bool_type()))
        error(TypeError::Kind::type_mismatch, i->cond->pos, "condition must be boolean, got " + ct->display());
      push_scope();
      check_block(i->then_body);
      pop_scope();
      push_scope();
      check_block(i->else_body);
      pop_scope();
    }
  }

  // ---- expressions ------------------------------------------------------

  TypePtr record(const Expr& e, TypePtr t) {
    auto& slots = prog_.units[unit_].expr_types;
    if (e.id >= 0 && static_cast<std::size_t>(e.id) < slots.size()) slots[e.id] = t;
    return t;
  }

  TypePtr path_type(const Path& p, bool for_write) {
    (void)for_write;
    VarInfo* v = lookup(p.root);
    if (!v) {
      error(TypeError::Kind::undefined_variable, p.pos, "undefined variable '" + p.root + "'");
      for (const auto& st : p.steps)
        if (st.is_index()) check_expr(*st.index);
      return nullptr;
    }
    TypePtr t = v->type;
    for (const auto& st : p.steps) {
      if (st.is_index()) {
        TypePtr it = check_expr(*st.index);
        if (it && !data::same_type(it, prog_.types.int_type()))
          error(TypeError::Kind::type_mismatch, st.index->pos, "array index must be int, got " + it->display());
        if (!t) continue;
        if (!t->is_array()) {
          error(TypeError::Kind::type_mismatch, p.pos, "cannot index non-array " + t->display());
          t = nullptr;
          continue;
        }
        t = t->element;
      } else {
        if (!t) continue;
        if (!t->is_struct()) {
          error(TypeError::Kind::type_mismatch, p.pos,
                "cannot select member '" + st.member + "' of " + t->display());
          t = nullptr;
          continue;
        }
        const auto* f = t->field(st.member);
        if (!f) {
          error(TypeError::Kind::type_mismatch, p.pos, t->display() + " has no member '" + st.member + "'");
          t = nullptr;
          continue;
        }
        t = f->type;
      }
    }
    return t;
  }

  TypePtr check_expr(const Expr& e) {
    return std::visit(
        [&](const auto& n) -> TypePtr {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, LiteralExpr>) {
            switch (n.kind) {
              case LiteralExpr::Kind::string: return record(e, prog_.types.string_type());
              case LiteralExpr::Kind::integer: return record(e, prog_.types.int_type());
              case LiteralExpr::Kind::floating: return record(e, prog_.types.float_type());
              case LiteralExpr::Kind::boolean: return record(e, prog_.types.bool_type());
            }
            return nullptr;
          } else if constexpr (std::is_same_v<T, Path>) {
            return record(e, path_type(n, false));
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            return record(e, check_call(e, n));
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            TypePtr t = check_expr(*n.operand);
            if (!t) return nullptr;
            if (n.op == "!") {
              if (!data::same_type(t, prog_.types.bool_type()))
                error(TypeError::Kind::type_mismatch, e.pos, "'!' needs boolean, got " + t->display());
              return record(e, prog_.types.bool_type());
            }
            if (!numeric(t)) error(TypeError::Kind::type_mismatch, e.pos, "unary '-' needs a number");
            return record(e, t);
          } else {
            return record(e, check_binary(e, n));
          }
        },
        e.node);
  }

  bool numeric(const TypePtr& t) const {
    return t && t->is_primitive() && (t->name == "int" || t->name == "float");
  }

  TypePtr check_binary(const Expr& e, const BinaryExpr& b) {
    TypePtr l = check_expr(*b.lhs);
    TypePtr r = check_expr(*b.rhs);
    if (!l || !r) return nullptr;
    const std::string& op = b.op;
    if (op == "&&" || op == "||") {
      if (!data::same_type(l, prog_.types.bool_type()) || !data::same_type(r, prog_.types.bool_type()))
        error(TypeError::Kind::type_mismatch, e.pos, "'" + op + "' needs boolean operands");
      return prog_.types.bool_type();
    }
    if (op == "==" || op == "!=" || op == "<" || op == ">" || op == "<=" || op == ">=") {
      bool ok = (numeric(l) && numeric(r)) ||
                (l->is_primitive() && data::same_type(l, r) && (op == "==" || op == "!=" || l->name == "string"));
      if (!ok)
        error(TypeError::Kind::type_mismatch, e.pos,
              "cannot compare " + l->display() + " " + op + " " + r->display());
      return prog_.types.bool_type();
    }
    if (op == "+" && data::same_type(l, prog_.types.string_type()) && data::same_type(r, prog_.types.string_type()))
      return l;
    if (!numeric(l) || !numeric(r)) {
      error(TypeError::Kind::type_mismatch, e.pos,
            "operator '" + op + "' needs numbers, got " + l->display() + " and " + r->display());
      return nullptr;
    }
    if (l->name == "float" || r->name == "float") return prog_.types.float_type();
    return prog_.types.int_type();
  }

  TypePtr check_call(const Expr& e, const CallExpr& c) {
    std::vector<TypePtr> args;
    for (const auto& a : c.args) args.push_back(check_expr(*a));
    auto it = prog_.procs.find(c.proc);
    if (it == prog_.procs.end()) {
      error(TypeError::Kind::undefined_procedure, e.pos, "undefined procedure '" + c.proc + "'");
      return nullptr;
    }
    const ProcSignature& sig = it->second;
    if (args.size() != sig.inputs.size()) {
      error(TypeError::Kind::arity_mismatch, e.pos,
            "'" + c.proc + "' takes " + std::to_string(sig.inputs.size()) + " arguments, " +
                std::to_string(args.size()) + " given");
    } else {
      for (std::size_t i = 0; i < args.size(); ++i) {
        const TypePtr& want = sig.inputs[i].type;
        if (want && args[i] && !data::assignable(want, args[i]))
          error(TypeError::Kind::type_mismatch, c.args[i]->pos,
                "argument " + std::to_string(i + 1) + " of '" + c.proc + "' expects " + want->display() +
                    ", got " + args[i]->display());
      }
    }
    if (sig.outputs.size() != 1) {
      error(TypeError::Kind::arity_mismatch, e.pos,
            "'" + c.proc + "' must have exactly one output to be used in an expression");
      return nullptr;
    }
    return sig.outputs.front().type;
  }

  TypedProgram prog_;
  int unit_ = 0;
  const ProcDecl* current_proc_ = nullptr;
  std::vector<Scope> scopes_;
};

}  // namespace detail

// Resolves every type and procedure reference and annotates expressions.
// `libraries` contribute types and procedures only (no top-level statements).
inline TypedProgram typecheck(Ast main, std::vector<Ast> libraries = {}, std::vector<std::string> library_names = {}) {
  return detail::Checker().run(std::move(main), std::move(libraries), std::move(library_names));
}

}  // namespace miniswift::frontend
