#pragma once

#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "miniswift/frontend/printer.hpp"
#include "miniswift/frontend/typecheck.hpp"
#include "miniswift/plan/plan.hpp"
#include "miniswift/util/digest.hpp"

namespace miniswift::plan {

namespace detail {

using namespace frontend;

class Lowerer {
 public:
  explicit Lowerer(const TypedProgram& tp) : tp_(tp) {}

  AbstractPlan run() {
    if (!tp_.ok()) throw std::invalid_argument("lower: program has type errors");
    // Procedure indices first so calls can refer forward.
    for (const auto& [name, sig] : tp_.procs) {
      plan_.proc_index[name] = static_cast<int>(plan_.procs.size());
      plan_.procs.emplace_back();
    }
    for (const auto& [name, sig] : tp_.procs) lower_proc(sig, plan_.procs[plan_.proc_index[name]]);

    unit_ = &tp_.units.front();
    frames_.clear();
    frames_.push_back(Frame{&plan_.top, {}, false});
    top_level_ = true;
    lower_block(unit_->ast->stmts, plan_.top);
    top_level_ = false;
    frames_.clear();

    auto& st = plan_.stats;
    st.procs = static_cast<int>(plan_.procs.size());
    st.top_statements = static_cast<int>(plan_.top.stmts.size());
    for (const auto& s : plan_.top.slots)
      if (s.mapped) ++st.top_mapped_slots;

    Fnv1a64 h;
    for (const auto& u : tp_.units) h.update(print(*u.ast));
    plan_.digest = h.value();
    return std::move(plan_);
  }

 private:
  struct Frame {
    Block* block;
    std::map<std::string, int> names;
    bool linked;  // may see the enclosing frame
  };

  void lower_proc(const ProcSignature& sig, PProc& out) {
    const ProcDecl& pd = *sig.decl;
    unit_ = &tp_.units[sig.unit];
    out.name = pd.name;
    out.imported = sig.unit != 0;
    out.n_outputs = static_cast<int>(sig.outputs.size());
    out.n_inputs = static_cast<int>(sig.inputs.size());
    frames_.clear();
    frames_.push_back(Frame{&out.body, {}, false});
    for (const auto& s : sig.outputs) add_slot(s.name, s.type, false);
    for (const auto& s : sig.inputs) add_slot(s.name, s.type, false);
    Fnv1a64 h;
    h.update(pd.name);
    if (pd.app) {
      out.atomic = true;
      out.executable = pd.app->executable;
      h.update("|app|");
      h.update(out.executable);
      for (const auto& a : pd.app->args) {
        PAppArg pa;
        pa.kind = a.kind;
        pa.text = a.text;
        if (a.kind != AppArg::Kind::literal) pa.path = lower_path(a.path);
        h.update("|");
        h.update(std::to_string(static_cast<int>(a.kind)));
        h.update(a.kind == AppArg::Kind::literal ? a.text : describe(a.path));
        out.args.push_back(std::move(pa));
      }
    } else {
      lower_block(pd.body, out.body);
    }
    for (const auto& s : sig.outputs) h.update("|o:" + (s.type ? s.type->display() : "?"));
    for (const auto& s : sig.inputs) h.update("|i:" + (s.type ? s.type->display() : "?"));
    out.signature = h.value();
    frames_.clear();
  }

  static std::string describe(const Path& p) {
    std::string s = p.root;
    for (const auto& st : p.steps) s += st.is_index() ? "[" + print_expr(*st.index) + "]" : "." + st.member;
    return s;
  }

  int add_slot(const std::string& name, TypePtr type, bool mapped) {
    Frame& f = frames_.back();
    int idx = static_cast<int>(f.block->slots.size());
    f.block->slots.push_back(SlotInfo{name, std::move(type), mapped, false});
    f.names[name] = idx;
    return idx;
  }

  SlotRef lookup(const std::string& name) const {
    int up = 0;
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it, ++up) {
      auto f = it->names.find(name);
      if (f != it->names.end()) return SlotRef{up, f->second};
      if (!it->linked) break;
    }
    throw std::logic_error("lower: unresolved variable '" + name + "'");
  }

  SlotInfo& slot_info(SlotRef r) { return frames_[frames_.size() - 1 - r.up].block->slots[r.index]; }

  void lower_block(const StmtList& stmts, Block& out) {
    for (const auto& s : stmts) {
      PStmt ps;
      ps.pos = s.pos;
      ps.ordinal = static_cast<int>(out.stmts.size());
      lower_stmt(s, ps);
      ++plan_.stats.statements;
      out.stmts.push_back(std::move(ps));
    }
  }

  void lower_stmt(const Stmt& s, PStmt& out) {
    if (auto* v = std::get_if<VarDecl>(&s.node)) {
      PDeclare d;
      TypePtr t = tp_.types.find(v->type.name);
      if (v->type.is_array) t = data::LogicalType::array_of(t);
      if (v->mapping) {
        PMapping m;
        m.mapper = v->mapping->mapper;
        m.pos = v->mapping->pos;
        for (const auto& p : v->mapping->params) {
          PMapParam mp{p.key, p.value.kind, p.value.text, {}};
          if (p.value.kind == MapperValue::Kind::variable) mp.var = lookup(p.value.text);
          m.params.push_back(std::move(mp));
        }
        d.mapping = std::move(m);
      }
      if (v->init) d.init = lower_expr(*v->init);
      d.slot = add_slot(v->name, t, v->mapping.has_value());
      if (v->init) frames_.back().block->slots[d.slot].written = true;
      out.node = std::move(d);
    } else if (auto* a = std::get_if<Assign>(&s.node)) {
      PAssign pa;
      pa.value = lower_expr(*a->value);
      pa.target = lower_path(a->target);
      slot_info(pa.target.root).written = true;
      out.node = std::move(pa);
    } else if (auto* f = std::get_if<Foreach>(&s.node)) {
      PForeach pf;
      pf.source = lower_expr(*f->source);
      frames_.push_back(Frame{&pf.body, {}, true});
      pf.elem_slot = add_slot(f->elem, pf.source->type ? pf.source->type->element : nullptr, false);
      if (f->index) pf.index_slot = add_slot(*f->index, tp_.types.int_type(), false);
      lower_block(f->body, pf.body);
      frames_.pop_back();
      out.node = std::move(pf);
    } else if (auto* i = std::get_if<If>(&s.node)) {
      PIf pi;
      pi.cond = lower_expr(*i->cond);
      frames_.push_back(Frame{&pi.then_block, {}, true});
      lower_block(i->then_body, pi.then_block);
      frames_.pop_back();
      frames_.push_back(Frame{&pi.else_block, {}, true});
      lower_block(i->else_body, pi.else_block);
      frames_.pop_back();
      out.node = std::move(pi);
    }
  }

  PPath lower_path(const Path& p) {
    PPath out;
    out.root = lookup(p.root);
    out.root_name = p.root;
    TypePtr t = slot_info(out.root).type;
    for (const auto& st : p.steps) {
      PStep ps;
      if (st.is_index()) {
        ps.index = lower_expr(*st.index);
        t = t && t->is_array() ? t->element : nullptr;
      } else {
        ps.member = st.member;
        ps.field = t ? t->field_index(st.member) : -1;
        t = t && ps.field >= 0 ? t->fields[ps.field].type : nullptr;
      }
      out.steps.push_back(std::move(ps));
    }
    out.type = t;
    return out;
  }

  PExprPtr lower_expr(const Expr& e) {
    auto out = std::make_unique<PExpr>();
    out->type = unit_->type_of(e);
    out->pos = e.pos;
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, LiteralExpr>) {
            out->node = PLiteral{n.kind, n.text};
          } else if constexpr (std::is_same_v<T, Path>) {
            out->node = lower_path(n);
          } else if constexpr (std::is_same_v<T, CallExpr>) {
            PCall c;
            c.proc = plan_.proc_index.at(n.proc);
            for (const auto& a : n.args) c.args.push_back(lower_expr(*a));
            if (top_level_) ++plan_.stats.top_calls;
            if (tp_.procs.at(n.proc).decl->is_atomic())
              ++plan_.stats.atomic_calls;
            else
              ++plan_.stats.compound_calls;
            out->node = std::move(c);
          } else if constexpr (std::is_same_v<T, UnaryExpr>) {
            out->node = PUnary{n.op, lower_expr(*n.operand)};
          } else {
            out->node = PBinary{n.op, lower_expr(*n.lhs), lower_expr(*n.rhs)};
          }
        },
        e.node);
    return out;
  }

  const TypedProgram& tp_;
  const CheckedUnit* unit_ = nullptr;
  AbstractPlan plan_;
  std::vector<Frame> frames_;
  bool top_level_ = false;
};

inline void dot_calls(const AbstractPlan& plan, const Block& b, const std::string& from, std::ostringstream& os,
                      std::set<std::string>& edges);

inline void dot_expr_calls(const AbstractPlan& plan, const PExpr& e, const std::string& from, std::ostringstream& os,
                           std::set<std::string>& edges) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, PCall>) {
          const PProc& callee = plan.procs[n.proc];
          if (!callee.imported || edges.count("*")) {
            std::string edge = "  \"" + from + "\" -> \"" + callee.name + "\";\n";
            if (edges.insert(edge).second) os << edge;
          }
          for (const auto& a : n.args) dot_expr_calls(plan, *a, from, os, edges);
        } else if constexpr (std::is_same_v<T, PUnary>) {
          dot_expr_calls(plan, *n.operand, from, os, edges);
        } else if constexpr (std::is_same_v<T, PBinary>) {
          dot_expr_calls(plan, *n.lhs, from, os, edges);
          dot_expr_calls(plan, *n.rhs, from, os, edges);
        }
      },
      e.node);
}

inline void dot_calls(const AbstractPlan& plan, const Block& b, const std::string& from, std::ostringstream& os,
                      std::set<std::string>& edges) {
  for (const auto& s : b.stmts) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, PDeclare>) {
            if (n.init) dot_expr_calls(plan, *n.init, from, os, edges);
          } else if constexpr (std::is_same_v<T, PAssign>) {
            dot_expr_calls(plan, *n.value, from, os, edges);
          } else if constexpr (std::is_same_v<T, PForeach>) {
            dot_expr_calls(plan, *n.source, from, os, edges);
            dot_calls(plan, n.body, from, os, edges);
          } else {
            dot_expr_calls(plan, *n.cond, from, os, edges);
            dot_calls(plan, n.then_block, from, os, edges);
            dot_calls(plan, n.else_block, from, os, edges);
          }
        },
        s.node);
  }
}

}  // namespace detail

inline AbstractPlan lower(const frontend::TypedProgram& tp) { return detail::Lowerer(tp).run(); }

// Static call graph: one node per procedure plus the program entry.
// Procedures from imported libraries are left out unless requested.
inline std::string to_dot(const AbstractPlan& plan, bool include_imported = false) {
  std::ostringstream os;
  std::set<std::string> edges;
  if (include_imported) edges.insert("*");
  os << "digraph plan {\n";
  os << "  \"<main>\" [shape=doublecircle];\n";
  for (const auto& p : plan.procs)
    if (include_imported || !p.imported) os << "  \"" << p.name << "\" [shape=" << (p.atomic ? "box" : "ellipse") << "];\n";
  for (const auto& p : plan.procs)
    if (!p.atomic && (include_imported || !p.imported)) detail::dot_calls(plan, p.body, p.name, os, edges);
  detail::dot_calls(plan, plan.top, "<main>", os, edges);
  os << "}\n";
  return os.str();
}

}  // namespace miniswift::plan
