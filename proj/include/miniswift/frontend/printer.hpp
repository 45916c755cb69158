#pragma once

#include <sstream>
#include <string>

#include "miniswift/frontend/ast.hpp"

namespace miniswift::frontend {

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

class Printer {
 public:
  std::string print(const Ast& ast) {
    for (const auto& imp : ast.imports) os_ << "import " << quote(imp.path) << ";\n";
    for (const auto& t : ast.types) print_type(t);
    for (const auto& p : ast.procs) print_proc(p);
    for (const auto& s : ast.stmts) print_stmt(s, 0);
    return os_.str();
  }

  std::string expr(const Expr& e) {
    std::ostringstream saved;
    saved.swap(os_);
    print_expr(e);
    std::string out = os_.str();
    os_.swap(saved);
    return out;
  }

 private:
  void indent(int n) {
    for (int i = 0; i < n; ++i) os_ << "  ";
  }

  void print_type(const TypeDecl& t) {
    os_ << "type " << t.name << " {";
    if (t.kind == TypeDecl::Kind::structure) {
      os_ << "\n";
      for (const auto& f : t.fields) {
        indent(1);
        os_ << f.type.name << " " << f.name << (f.type.is_array ? "[]" : "") << ";\n";
      }
    }
    os_ << "}\n";
  }

  void print_params(const std::vector<Param>& ps) {
    os_ << "(";
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i) os_ << ", ";
      os_ << ps[i].type.name << " " << ps[i].name << (ps[i].type.is_array ? "[]" : "");
    }
    os_ << ")";
  }

  void print_proc(const ProcDecl& p) {
    print_params(p.outputs);
    os_ << " " << p.name << " ";
    print_params(p.inputs);
    os_ << " {\n";
    if (p.app) {
      indent(1);
      os_ << "app {\n";
      indent(2);
      os_ << p.app->executable;
      for (const auto& a : p.app->args) {
        os_ << " ";
        switch (a.kind) {
          case AppArg::Kind::literal: os_ << quote(a.text); break;
          case AppArg::Kind::path: print_path(a.path); break;
          case AppArg::Kind::filename_of:
            os_ << "@filename(";
            print_path(a.path);
            os_ << ")";
            break;
        }
      }
      os_ << ";\n";
      indent(1);
      os_ << "}\n";
    } else {
      for (const auto& s : p.body) print_stmt(s, 1);
    }
    os_ << "}\n";
  }

  void print_block(const StmtList& body, int depth) {
    os_ << "{\n";
    for (const auto& s : body) print_stmt(s, depth + 1);
    indent(depth);
    os_ << "}";
  }

  void print_stmt(const Stmt& s, int depth) {
    indent(depth);
    if (auto* v = std::get_if<VarDecl>(&s.node)) {
      os_ << v->type.name << " " << v->name << (v->type.is_array ? "[]" : "");
      if (v->mapping) {
        os_ << "<" << v->mapping->mapper;
        for (std::size_t i = 0; i < v->mapping->params.size(); ++i) {
          const auto& p = v->mapping->params[i];
          os_ << (i == 0 ? "; " : ", ") << p.key << "=";
          if (p.value.kind == MapperValue::Kind::string)
            os_ << quote(p.value.text);
          else
            os_ << p.value.text;
        }
        os_ << ">";
      }
      if (v->init) {
        os_ << " = ";
        print_expr(*v->init);
      }
      os_ << ";\n";
    } else if (auto* a = std::get_if<Assign>(&s.node)) {
      print_path(a->target);
      os_ << " = ";
      print_expr(*a->value);
      os_ << ";\n";
    } else if (auto* f = std::get_if<Foreach>(&s.node)) {
      os_ << "foreach ";
      if (f->elem_type) os_ << f->elem_type->name << " ";
      os_ << f->elem;
      if (f->index) os_ << ", " << *f->index;
      os_ << " in ";
      print_expr(*f->source);
      os_ << " ";
      print_block(f->body, depth);
      os_ << "\n";
    } else if (auto* i = std::get_if<If>(&s.node)) {
      print_if(*i, depth);
      os_ << "\n";
    }
  }

  void print_if(const If& i, int depth) {
    os_ << "if (";
    print_expr(*i.cond);
    os_ << ") ";
    print_block(i.then_body, depth);
    if (!i.else_body.empty()) {
      os_ << " else ";
      print_block(i.else_body, depth);
    }
  }

  void print_path(const Path& p) {
    os_ << p.root;
    for (const auto& st : p.steps) {
      if (st.is_index()) {
        os_ << "[";
        print_expr(*st.index);
        os_ << "]";
      } else {
        os_ << "." << st.member;
      }
    }
  }

  // Fully parenthesised so precedence never needs to be reconstructed.
  void print_expr(const Expr& e) {
    std::visit(
        [this](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, LiteralExpr>) {
            if (n.kind == LiteralExpr::Kind::string)
              os_ << quote(n.text);
            else
              os_ << n.text;
          } else if constexpr (std::is_same_v<T, Path>) {
            print_path(n);
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            os_ << n.proc << "(";
            for (std::size_t i = 0; i < n.args.size(); ++i) {
              if (i) os_ << ", ";
              print_expr(*n.args[i]);
            }
            os_ << ")";
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            os_ << n.op << "(";
            print_expr(*n.operand);
            os_ << ")";
          } else {
            os_ << "(";
            print_expr(*n.lhs);
            os_ << " " << n.op << " ";
            print_expr(*n.rhs);
            os_ << ")";
          }
        },
        e.node);
  }

  std::ostringstream os_;
};

// Structural equality ignoring source positions and expression ids.
struct Same {
  bool operator()(const TypeName& a, const TypeName& b) const {
    return a.name == b.name && a.is_array == b.is_array;
  }
  bool operator()(const Path& a, const Path& b) const {
    if (a.root != b.root || a.steps.size() != b.steps.size()) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      const auto& x = a.steps[i];
      const auto& y = b.steps[i];
      if (x.is_index() != y.is_index()) return false;
      if (x.is_index() ? !(*this)(*x.index, *y.index) : x.member != y.member) return false;
    }
    return true;
  }
  bool operator()(const Expr& a, const Expr& b) const {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          const T& y = std::get<T>(b.node);
          if constexpr (std::is_same_v<T, LiteralExpr>) {
            return x.kind == y.kind && x.text == y.text;
          } else if constexpr (std::is_same_v<T, Path>) {
            return (*this)(x, y);
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            if (x.proc != y.proc || x.args.size() != y.args.size()) return false;
            for (std::size_t i = 0; i < x.args.size(); ++i)
              if (!(*this)(*x.args[i], *y.args[i])) return false;
            return true;
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            return x.op == y.op && (*this)(*x.operand, *y.operand);
          } else {
            return x.op == y.op && (*this)(*x.lhs, *y.lhs) && (*this)(*x.rhs, *y.rhs);
          }
        },
        a.node);
  }
  bool operator()(const ExprPtr& a, const ExprPtr& b) const {
    if (!a || !b) return !a && !b;
    return (*this)(*a, *b);
  }
  bool operator()(const StmtList& a, const StmtList& b) const {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*this)(a[i], b[i])) return false;
    return true;
  }
  bool operator()(const Stmt& a, const Stmt& b) const {
    if (a.node.index() != b.node.index()) return false;
    if (auto* x = std::get_if<VarDecl>(&a.node)) {
      const auto& y = std::get<VarDecl>(b.node);
      if (!(*this)(x->type, y.type) || x->name != y.name || !(*this)(x->init, y.init)) return false;
      if (x->mapping.has_value() != y.mapping.has_value()) return false;
      if (x->mapping) {
        if (x->mapping->mapper != y.mapping->mapper || x->mapping->params.size() != y.mapping->params.size())
          return false;
        for (std::size_t i = 0; i < x->mapping->params.size(); ++i) {
          const auto& p = x->mapping->params[i];
          const auto& q = y.mapping->params[i];
          if (p.key != q.key || p.value.kind != q.value.kind || p.value.text != q.value.text) return false;
        }
      }
      return true;
    }
    if (auto* x = std::get_if<Assign>(&a.node)) {
      const auto& y = std::get<Assign>(b.node);
      return (*this)(x->target, y.target) && (*this)(x->value, y.value);
    }
    if (auto* x = std::get_if<Foreach>(&a.node)) {
      const auto& y = std::get<Foreach>(b.node);
      if (x->elem_type.has_value() != y.elem_type.has_value()) return false;
      if (x->elem_type && !(*this)(*x->elem_type, *y.elem_type)) return false;
      return x->elem == y.elem && x->index == y.index && (*this)(x->source, y.source) &&
             (*this)(x->body, y.body);
    }
    const auto& x = std::get<If>(a.node);
    const auto& y = std::get<If>(b.node);
    return (*this)(x.cond, y.cond) && (*this)(x.then_body, y.then_body) && (*this)(x.else_body, y.else_body);
  }
  bool operator()(const std::vector<Param>& a, const std::vector<Param>& b) const {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*this)(a[i].type, b[i].type) || a[i].name != b[i].name) return false;
    return true;
  }
  bool operator()(const ProcDecl& a, const ProcDecl& b) const {
    if (a.name != b.name || !(*this)(a.outputs, b.outputs) || !(*this)(a.inputs, b.inputs)) return false;
    if (a.app.has_value() != b.app.has_value()) return false;
    if (a.app) {
      if (a.app->executable != b.app->executable || a.app->args.size() != b.app->args.size()) return false;
      for (std::size_t i = 0; i < a.app->args.size(); ++i) {
        const auto& x = a.app->args[i];
        const auto& y = b.app->args[i];
        if (x.kind != y.kind) return false;
        if (x.kind == AppArg::Kind::literal ? x.text != y.text : !(*this)(x.path, y.path)) return false;
      }
    }
    return (*this)(a.body, b.body);
  }
  bool operator()(const TypeDecl& a, const TypeDecl& b) const {
    if (a.name != b.name || a.kind != b.kind || a.fields.size() != b.fields.size()) return false;
    for (std::size_t i = 0; i < a.fields.size(); ++i)
      if (a.fields[i].name != b.fields[i].name || !(*this)(a.fields[i].type, b.fields[i].type)) return false;
    return true;
  }
};

}  // namespace detail

// Canonical source text for an Ast; re-parsing it yields a structurally
// identical tree.
inline std::string print(const Ast& ast) { return detail::Printer().print(ast); }

inline std::string print_expr(const Expr& e) { return detail::Printer().expr(e); }

inline bool structurally_equal(const Ast& a, const Ast& b) {
  detail::Same same;
  if (a.imports.size() != b.imports.size() || a.types.size() != b.types.size() ||
      a.procs.size() != b.procs.size())
    return false;
  for (std::size_t i = 0; i < a.imports.size(); ++i)
    if (a.imports[i].path != b.imports[i].path) return false;
  for (std::size_t i = 0; i < a.types.size(); ++i)
    if (!same(a.types[i], b.types[i])) return false;
  for (std::size_t i = 0; i < a.procs.size(); ++i)
    if (!same(a.procs[i], b.procs[i])) return false;
  return same(a.stmts, b.stmts);
}

}  // namespace miniswift::frontend
