#pragma once

#include <malloc.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "miniswift/data/dataset.hpp"
#include "miniswift/data/mappers.hpp"
#include "miniswift/engine/config.hpp"
#include "miniswift/engine/runlog.hpp"
#include "miniswift/exec/stub.hpp"
#include "miniswift/plan/plan.hpp"
#include "miniswift/provenance/provenance.hpp"

namespace miniswift::engine {

namespace fs = std::filesystem;
using data::kNoNode;
using data::NodeId;

class EngineBug : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class PlanDigestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskState : std::uint8_t { waiting, ready, submitted, active, done, failed };

inline const char* to_string(TaskState s) {
  switch (s) {
    case TaskState::waiting: return "waiting";
    case TaskState::ready: return "ready";
    case TaskState::submitted: return "submitted";
    case TaskState::active: return "active";
    case TaskState::done: return "done";
    case TaskState::failed: return "failed";
  }
  return "?";
}

struct TaskTrace {
  std::int32_t id = 0;
  std::string proc;
  std::string key;
  std::string stage;
  std::string site;
  std::string host;
  TaskState state = TaskState::waiting;
  int attempts = 0;
  bool restored = false;
  double ready = -1, submit = -1, start = -1, end = -1;
};

struct ProducedDataset {
  std::string physical_path;
  std::string digest;
};

struct RunResult {
  enum class Status { ok, failed, interrupted };
  Status status = Status::ok;
  std::string run_id;
  std::size_t tasks = 0;        // task records created
  std::size_t done = 0;         // executed or restored successfully
  std::size_t failed = 0;       // including upstream failures
  std::size_t upstream_failed = 0;
  std::size_t executed = 0;     // successful executions in this run
  std::size_t restored = 0;     // satisfied from the restart log
  std::size_t attempts = 0;     // finished execution attempts
  std::size_t jobs = 0;         // provider submissions (bundles count once)
  double first_release = 0, last_end = 0, makespan = 0;
  std::vector<TaskTrace> trace;
  std::map<std::string, ProducedDataset> produced;  // leaf logical path -> file
  std::map<std::string, std::size_t> site_tasks;
  std::map<std::string, double> site_scores;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::size_t nodes = 0;
  std::size_t bookkeeping_bytes = 0;
  double bytes_per_task = 0;
  double heap_bytes_per_task = 0;

  bool ok() const { return status == Status::ok; }
  const char* status_text() const {
    switch (status) {
      case Status::ok: return "ok";
      case Status::failed: return "failed";
      case Status::interrupted: return "interrupted";
    }
    return "?";
  }
};

// Evaluates an abstract plan by data availability on one event loop. Each
// atomic call becomes a task record that fires when its input futures settle.
class Engine {
 public:
  Engine(const plan::AbstractPlan& plan, RunConfig config, fs::path base_dir = {},
         data::MapperRegistry mappers = data::MapperRegistry::with_builtins())
      : plan_(plan),
        cfg_(std::move(config)),
        base_dir_(std::move(base_dir)),
        mappers_(std::move(mappers)),
        loop_(cfg_.clock),
        store_(cfg_.run_dir / "data"),
        sched_(cfg_.policy, cfg_.seed) {
    if (cfg_.sites.empty()) throw std::invalid_argument("no execution sites configured");
    for (std::size_t i = 0; i < cfg_.sites.size(); ++i) {
      sched_.add_site(cfg_.sites[i].record);
      site_ids_.push_back(cfg_.sites[i].record.site_id);
    }
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  RunResult run();

  EventLoop& loop() { return loop_; }
  data::NodeStore& store() { return store_; }
  sched::Scheduler& scheduler() { return sched_; }

 private:
  struct Slot {
    NodeId node = kNoNode;
    bool alias = false;
    std::vector<std::function<void(NodeId)>> waiters;
  };

  struct Env {
    const plan::Block* block = nullptr;
    Env* lexical = nullptr;  // enclosing frame for foreach / if bodies
    std::string scope;
    std::vector<Slot> slots;
    std::vector<std::int32_t> writers;  // statements still able to write each slot
    std::int32_t outstanding = 0;
    std::int32_t n_outputs = 0, end_param = 0;  // proc frames: outputs, then inputs owned by the caller
    bool complete = false;
    std::function<void()> on_complete;
  };

  struct BlockInfo {
    std::vector<std::vector<int>> stmt_writes;
    std::vector<std::int32_t> writer_count;
  };

  struct Task {
    const plan::PProc* proc = nullptr;
    std::vector<NodeId> params;  // proc frame: outputs then inputs
    std::string key;
    std::int32_t stage = 0;
    std::int32_t pending = 0;
    TaskState state = TaskState::waiting;
    std::uint8_t attempt = 0;
    std::uint8_t consecutive = 0;
    std::int16_t site = -1;
    std::int16_t last_fail_site = -1;
    bool restored = false;
    double ready_t = -1, submit_t = -1, start_t = -1, end_t = -1;
    std::string host;
  };

  struct Unit {
    std::vector<std::int32_t> members;
    std::int16_t forced = -1;
    std::int16_t exclude = -1;
  };

  struct JobInfo {
    std::vector<std::int32_t> members;
    std::vector<exec::JobSpec> specs;  // kept for provenance
  };

  using Done = std::function<void()>;
  using NodeFn = std::function<void(NodeId)>;

  // ---- frames and slots

  Env* new_env(const plan::Block* block, Env* lexical, std::string scope) {
    envs_.emplace_back();
    Env* e = &envs_.back();
    e->block = block;
    e->lexical = lexical;
    e->scope = std::move(scope);
    e->slots.resize(block->slots.size());
    e->writers = info(block).writer_count;
    ++live_envs_;
    return e;
  }

  const BlockInfo& info(const plan::Block* b) {
    auto it = block_info_.find(b);
    if (it != block_info_.end()) return it->second;
    BlockInfo bi;
    bi.writer_count.assign(b->slots.size(), 0);
    for (const auto& s : b->stmts) {
      std::set<int> w;
      collect_writes(s, 0, w);
      for (int i : w) ++bi.writer_count[static_cast<std::size_t>(i)];
      bi.stmt_writes.emplace_back(w.begin(), w.end());
    }
    return block_info_.emplace(b, std::move(bi)).first->second;
  }

  static void collect_writes(const plan::PStmt& s, int depth, std::set<int>& out) {
    if (auto* d = std::get_if<plan::PDeclare>(&s.node)) {
      if (depth == 0) out.insert(d->slot);
    } else if (auto* a = std::get_if<plan::PAssign>(&s.node)) {
      if (a->target.root.up == depth) out.insert(a->target.root.index);
    } else if (auto* f = std::get_if<plan::PForeach>(&s.node)) {
      for (const auto& c : f->body.stmts) collect_writes(c, depth + 1, out);
    } else if (auto* i = std::get_if<plan::PIf>(&s.node)) {
      for (const auto& c : i->then_block.stmts) collect_writes(c, depth + 1, out);
      for (const auto& c : i->else_block.stmts) collect_writes(c, depth + 1, out);
    }
  }

  Env* frame(Env* env, int up) {
    while (up-- > 0) {
      if (!env->lexical) throw EngineBug("slot reference escapes its frame");
      env = env->lexical;
    }
    return env;
  }

  void with_slot(Env* env, plan::SlotRef ref, NodeFn fn) {
    Slot& s = frame(env, ref.up)->slots.at(static_cast<std::size_t>(ref.index));
    if (s.node != kNoNode) {
      fn(s.node);
      return;
    }
    s.waiters.push_back(std::move(fn));
  }

  void bind_slot(Env* env, int index, NodeId n, bool alias = false) {
    Slot& s = env->slots.at(static_cast<std::size_t>(index));
    if (s.node != kNoNode) throw EngineBug("slot bound twice");
    s.node = n;
    s.alias = alias;
    auto w = std::move(s.waiters);
    s.waiters.clear();
    s.waiters.shrink_to_fit();
    for (auto& fn : w) fn(n);
  }

  static std::string child_scope(const std::string& scope, const std::string& part) {
    return scope.empty() ? part : scope + "/" + part;
  }

  std::string name_in(const Env* env, const std::string& name) const { return child_scope(env->scope, name); }

  // ---- blocks and statements

  void run_block(Env* env, Done on_complete) {
    env->on_complete = std::move(on_complete);
    const auto& stmts = env->block->stmts;
    env->outstanding = static_cast<std::int32_t>(stmts.size()) + 1;
    for (int i = 0; i < env->n_outputs; ++i)
      if (env->writers[static_cast<std::size_t>(i)] == 0) finalize_slot(env, i);
    for (std::size_t i = 0; i < stmts.size(); ++i) {
      issue(env, stmts[i], [this, env, i] { stmt_done(env, i); });
    }
    env_step(env);
  }

  void stmt_done(Env* env, std::size_t i) {
    for (int slot : info(env->block).stmt_writes[i]) {
      if (--env->writers[static_cast<std::size_t>(slot)] == 0 && !is_proc_input(env, slot)) finalize_slot(env, slot);
    }
    env_step(env);
  }

  bool is_proc_input(const Env* env, int slot) const {
    return slot >= env->n_outputs && slot < env->end_param;
  }

  void env_step(Env* env) {
    if (--env->outstanding > 0) return;
    env->complete = true;
    --live_envs_;
    auto cb = std::move(env->on_complete);
    env->on_complete = nullptr;
    if (cb) cb();
  }

  void issue(Env* env, const plan::PStmt& st, Done done) {
    std::visit([&](const auto& node) { issue_node(env, st, node, std::move(done)); }, st.node);
  }

  void issue_node(Env* env, const plan::PStmt& st, const plan::PDeclare& d, Done done) {
    const auto& si = env->block->slots.at(static_cast<std::size_t>(d.slot));
    std::string logical = name_in(env, si.name);
    if (d.init) {
      if (auto* call = std::get_if<plan::PCall>(&d.init->node)) {
        NodeId n = store_.create(si.type, logical);
        bind_slot(env, d.slot, n);
        issue_call(env, st, *call, n, call_scope(env, st, *call, ""), std::move(done));
        return;
      }
      int slot = d.slot;
      eval(env, *d.init, st, [this, env, slot, done = std::move(done)](NodeId n) {
        bind_slot(env, slot, n, true);
        done();
      });
      return;
    }
    if (d.mapping) {
      issue_mapping(env, st, d, si, std::move(logical), std::move(done));
      return;
    }
    bind_slot(env, d.slot, store_.create(si.type, logical));
    done();
  }

  void issue_mapping(Env* env, const plan::PStmt& st, const plan::PDeclare& d, const plan::SlotInfo& si,
                     std::string logical, Done done) {
    const plan::PMapping& m = *d.mapping;
    bool output = si.written;
    NodeId early = kNoNode;
    if (!output) {
      early = store_.create(si.type, logical);
      bind_slot(env, d.slot, early);
    }
    auto desc = std::make_shared<data::MapperDescriptor>();
    desc->name = m.mapper;
    desc->base_dir = base_dir_;
    auto remaining = std::make_shared<int>(1);
    auto failed = std::make_shared<std::string>();
    auto finish = [this, env, &st, &si, slot = d.slot, logical, early, output, desc, failed, done]() {
      NodeId n = early;
      try {
        if (!failed->empty()) throw data::MappingError(*failed);
        if (output) {
          n = data::map_dataset(store_, mappers_, *desc, si.type, data::MapMode::output, logical);
          bind_slot(env, slot, n);
        } else {
          store_.bind(n, data::map_input(mappers_, *desc, *si.type));
        }
      } catch (const EngineBug&) {
        throw;
      } catch (const std::exception& e) {
        std::string msg = where(st.pos) + ": " + e.what();
        result_.errors.push_back(msg);
        if (n == kNoNode) {
          n = store_.create(si.type, logical);
          bind_slot(env, slot, n);
        }
        fail_tree(n, msg);
      }
      done();
    };
    for (const auto& p : m.params) {
      if (p.kind != frontend::MapperValue::Kind::variable) {
        desc->params[p.key] = p.text;
        continue;
      }
      ++*remaining;
      std::string key = p.key;
      with_slot(env, p.var, [this, desc, key, remaining, failed, finish](NodeId v) {
        store_.on_settled(v, [this, v, desc, key, remaining, failed, finish] {
          if (store_.failed(v))
            *failed = "mapper parameter '" + key + "' failed";
          else
            desc->params[key] = store_.type(v).is_file() ? store_.filename_of(v) : store_.value(v);
          if (--*remaining == 0) finish();
        });
      });
    }
    if (--*remaining == 0) finish();
  }

  void issue_node(Env* env, const plan::PStmt& st, const plan::PAssign& a, Done done) {
    if (auto* call = std::get_if<plan::PCall>(&a.value->node)) {
      std::string scope = call_scope(env, st, *call, "");
      eval_path(env, a.target, st, [this, env, &st, call, scope, done = std::move(done)](NodeId t) {
        issue_call(env, st, *call, t, scope, done);
      });
      return;
    }
    const plan::PExpr* value = a.value.get();
    eval_path(env, a.target, st, [this, env, value, &st, done = std::move(done)](NodeId t) {
      store_.at(t).has_writer = true;
      eval(env, *value, st, [this, t, &st](NodeId v) {
        store_.on_settled(v, [this, t, v, &st] { copy_value(t, v, st); });
      });
      done();
    });
  }

  void issue_node(Env* env, const plan::PStmt& st, const plan::PForeach& f, Done done) {
    eval(env, *f.source, st, [this, env, &f, &st, done = std::move(done)](NodeId src) {
      store_.on_closed(src, [this, env, &f, &st, src, done] { expand(env, f, st, src, done); });
    });
  }

  void expand(Env* env, const plan::PForeach& f, const plan::PStmt& st, NodeId src, Done done) {
    auto elems = store_.elements(src);
    if (elems.empty()) {
      done();
      return;
    }
    auto remaining = std::make_shared<std::size_t>(elems.size());
    std::string base = child_scope(env->scope, std::to_string(st.ordinal));
    for (auto [idx, e] : elems) {
      Env* child = new_env(&f.body, env, base + "[" + std::to_string(idx) + "]");
      bind_slot(child, f.elem_slot, e, true);
      if (f.index_slot >= 0) {
        const auto& si = f.body.slots.at(static_cast<std::size_t>(f.index_slot));
        NodeId in = store_.create(si.type, name_in(child, si.name));
        store_.resolve_leaf(in, std::to_string(idx));
        bind_slot(child, f.index_slot, in, true);
      }
      run_block(child, [remaining, done] {
        if (--*remaining == 0) done();
      });
    }
  }

  void issue_node(Env* env, const plan::PStmt& st, const plan::PIf& i, Done done) {
    eval(env, *i.cond, st, [this, env, &i, &st, done = std::move(done)](NodeId c) {
      store_.on_settled(c, [this, env, &i, &st, c, done] {
        if (store_.failed(c)) {
          done();
          return;
        }
        bool yes = store_.value(c) == "true";
        const plan::Block& b = yes ? i.then_block : i.else_block;
        Env* child = new_env(&b, env, child_scope(env->scope, std::to_string(st.ordinal) + (yes ? "?t" : "?f")));
        run_block(child, done);
      });
    });
  }

  // ---- calls

  std::string call_scope(const Env* env, const plan::PStmt& st, const plan::PCall& c, const std::string& tag) const {
    return child_scope(env->scope, std::to_string(st.ordinal) + tag + ":" + plan_.procs[static_cast<std::size_t>(c.proc)].name);
  }

  void issue_call(Env* env, const plan::PStmt& st, const plan::PCall& c, NodeId target, std::string scope, Done done) {
    const plan::PProc& proc = plan_.procs.at(static_cast<std::size_t>(c.proc));
    auto args = std::make_shared<std::vector<NodeId>>(c.args.size(), kNoNode);
    auto remaining = std::make_shared<std::size_t>(c.args.size() + 1);
    auto fire = [this, &proc, target, args, scope = std::move(scope), done]() {
      std::vector<NodeId> params;
      params.reserve(static_cast<std::size_t>(proc.n_outputs + proc.n_inputs));
      params.push_back(target);
      for (int k = 1; k < proc.n_outputs; ++k) {
        const auto& si = proc.body.slots[static_cast<std::size_t>(k)];
        params.push_back(store_.create(si.type, child_scope(scope, si.name)));
      }
      params.insert(params.end(), args->begin(), args->end());
      if (proc.atomic) {
        create_task(proc, std::move(params), scope);
        done();
      } else {
        call_compound(proc, std::move(params), scope, done);
      }
    };
    for (std::size_t k = 0; k < c.args.size(); ++k) {
      eval(env, *c.args[k], st, [args, remaining, k, fire](NodeId n) {
        (*args)[k] = n;
        if (--*remaining == 0) fire();
      });
    }
    if (--*remaining == 0) fire();
  }

  void call_compound(const plan::PProc& proc, std::vector<NodeId> params, const std::string& scope, Done done) {
    Env* e = new_env(&proc.body, nullptr, scope);
    e->end_param = proc.n_outputs + proc.n_inputs;
    e->n_outputs = proc.n_outputs;
    for (std::size_t k = 0; k < params.size(); ++k)
      bind_slot(e, static_cast<int>(k), params[k], static_cast<int>(k) >= proc.n_outputs);
    run_block(e, std::move(done));
  }

  // ---- expressions

  void eval(Env* env, const plan::PExpr& ex, const plan::PStmt& st, NodeFn cb) {
    if (auto* lit = std::get_if<plan::PLiteral>(&ex.node)) {
      NodeId n = store_.create(ex.type, "");
      store_.resolve_leaf(n, lit->text);
      cb(n);
    } else if (auto* p = std::get_if<plan::PPath>(&ex.node)) {
      eval_path(env, *p, st, std::move(cb));
    } else if (auto* c = std::get_if<plan::PCall>(&ex.node)) {
      std::string tag = "@" + std::to_string(ex.pos.line) + "." + std::to_string(ex.pos.col);
      NodeId t = store_.create(ex.type, name_in(env, "~" + std::to_string(st.ordinal) + tag));
      issue_call(env, st, *c, t, call_scope(env, st, *c, tag), [] {});
      cb(t);
    } else if (auto* u = std::get_if<plan::PUnary>(&ex.node)) {
      const plan::PExpr* self = &ex;
      eval(env, *u->operand, st, [this, self, u, cb = std::move(cb)](NodeId a) {
        store_.on_settled(a, [this, self, u, a, cb] { cb(compute(*self, u->op, {a})); });
      });
    } else if (auto* b = std::get_if<plan::PBinary>(&ex.node)) {
      const plan::PExpr* self = &ex;
      eval(env, *b->lhs, st, [this, env, self, b, &st, cb = std::move(cb)](NodeId l) {
        eval(env, *b->rhs, st, [this, self, b, l, cb](NodeId r) {
          store_.on_settled(l, [this, self, b, l, r, cb] {
            store_.on_settled(r, [this, self, b, l, r, cb] { cb(compute(*self, b->op, {l, r})); });
          });
        });
      });
    }
  }

  void eval_path(Env* env, const plan::PPath& p, const plan::PStmt& st, NodeFn cb) {
    with_slot(env, p.root, [this, env, &p, &st, cb = std::move(cb)](NodeId root) { walk(env, p, st, root, 0, cb); });
  }

  void walk(Env* env, const plan::PPath& p, const plan::PStmt& st, NodeId n, std::size_t i, NodeFn cb) {
    for (; i < p.steps.size(); ++i) {
      const auto& step = p.steps[i];
      if (!step.is_index()) {
        n = store_.field(n, step.field);
        continue;
      }
      eval(env, *step.index, st, [this, env, &p, &st, n, i, cb](NodeId ix) {
        store_.on_settled(ix, [this, env, &p, &st, n, i, ix, cb] {
          NodeId e = kNoNode;
          std::string why;
          if (store_.failed(ix)) {
            why = "index of " + store_.logical_path(n) + " failed";
          } else {
            e = store_.element(n, std::stoll(store_.value(ix)));
            if (e == kNoNode) why = "no element " + store_.logical_path(n) + "[" + store_.value(ix) + "]";
          }
          if (e == kNoNode) {
            NodeId f = store_.create(store_.type(n).element, "");
            fail_tree(f, why);
            cb(f);
            return;
          }
          walk(env, p, st, e, i + 1, cb);
        });
      });
      return;
    }
    cb(n);
  }

  NodeId compute(const plan::PExpr& ex, const std::string& op, std::vector<NodeId> xs) {
    NodeId out = store_.create(ex.type, "");
    for (NodeId x : xs)
      if (store_.failed(x)) {
        store_.fail(out, "operand failed");
        return out;
      }
    try {
      store_.resolve_leaf(out, apply_op(op, xs.size() == 1 ? nullptr : &store_.type(xs[0]), xs));
    } catch (const std::exception& e) {
      store_.fail(out, where(ex.pos) + ": " + e.what());
    }
    return out;
  }

  std::string apply_op(const std::string& op, const data::LogicalType* lt, const std::vector<NodeId>& xs) {
    auto v = [&](std::size_t i) -> const std::string& { return store_.value(xs[i]); };
    auto is = [&](std::size_t i, const char* name) { return store_.type(xs[i]).name == name; };
    if (xs.size() == 1) {
      if (op == "!") return v(0) == "true" ? "false" : "true";
      if (op == "-") {
        if (is(0, "int")) return std::to_string(-std::stoll(v(0)));
        return fmt(-std::stod(v(0)));
      }
      throw std::invalid_argument("unknown operator " + op);
    }
    (void)lt;
    if (op == "&&") return (v(0) == "true" && v(1) == "true") ? "true" : "false";
    if (op == "||") return (v(0) == "true" || v(1) == "true") ? "true" : "false";
    bool strings = is(0, "string") || is(1, "string");
    bool ints = is(0, "int") && is(1, "int");
    if (op == "+" && strings) return v(0) + v(1);
    if (op == "==" || op == "!=") {
      bool eq;
      if (strings || is(0, "boolean"))
        eq = v(0) == v(1);
      else if (ints)
        eq = std::stoll(v(0)) == std::stoll(v(1));
      else
        eq = std::stod(v(0)) == std::stod(v(1));
      return (eq == (op == "==")) ? "true" : "false";
    }
    if (op == "<" || op == "<=" || op == ">" || op == ">=") {
      int c;
      if (strings)
        c = v(0).compare(v(1));
      else if (ints) {
        auto a = std::stoll(v(0)), b = std::stoll(v(1));
        c = a < b ? -1 : a > b ? 1 : 0;
      } else {
        auto a = std::stod(v(0)), b = std::stod(v(1));
        c = a < b ? -1 : a > b ? 1 : 0;
      }
      bool r = op == "<" ? c < 0 : op == "<=" ? c <= 0 : op == ">" ? c > 0 : c >= 0;
      return r ? "true" : "false";
    }
    if (ints) {
      long long a = std::stoll(v(0)), b = std::stoll(v(1));
      if (op == "+") return std::to_string(a + b);
      if (op == "-") return std::to_string(a - b);
      if (op == "*") return std::to_string(a * b);
      if ((op == "/" || op == "%") && b == 0) throw std::domain_error("division by zero");
      if (op == "/") return std::to_string(a / b);
      if (op == "%") return std::to_string(a % b);
    } else {
      double a = std::stod(v(0)), b = std::stod(v(1));
      if (op == "+") return fmt(a + b);
      if (op == "-") return fmt(a - b);
      if (op == "*") return fmt(a * b);
      if (op == "/") return fmt(a / b);
      if (op == "%") return fmt(std::fmod(a, b));
    }
    throw std::invalid_argument("unknown operator " + op);
  }

  static std::string fmt(double d) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, p);
  }

  static std::string where(const frontend::SourcePos& p) {
    return std::to_string(p.line) + ":" + std::to_string(p.col);
  }

  // ---- dataset helpers

  void finalize_slot(Env* env, int i) {
    const Slot& s = env->slots.at(static_cast<std::size_t>(i));
    if (s.node == kNoNode || s.alias) return;
    finalize_node(s.node);
  }

  // Everything below `n` without a producer is now known to stay unwritten.
  void finalize_node(NodeId n) {
    if (store_.terminal(n) || store_.at(n).has_writer) return;
    const auto& t = store_.type(n);
    if (t.is_array()) {
      for (auto [idx, e] : store_.elements(n)) finalize_node(e);
      store_.close(n);
    } else if (t.is_struct()) {
      auto children = store_.at(n).children;
      for (NodeId c : children) finalize_node(c);
    } else {
      store_.fail(n, "no producer for " + store_.logical_path(n));
    }
  }

  void fail_tree(NodeId n, const std::string& reason) {
    store_.fail(n, reason);
    const auto& t = store_.type(n);
    if (t.is_array()) {
      for (auto [idx, e] : store_.elements(n)) fail_tree(e, reason);
      store_.close(n);
    } else if (t.is_struct()) {
      auto children = store_.at(n).children;
      for (NodeId c : children) fail_tree(c, reason);
    }
  }

  void collect_leaves(NodeId n, std::vector<NodeId>& out) const {
    const auto& node = store_.at(n);
    if (node.type->is_primitive() || node.type->is_file()) {
      out.push_back(n);
      return;
    }
    for (NodeId c : node.children)
      if (c != kNoNode) collect_leaves(c, out);
  }

  void copy_value(NodeId t, NodeId v, const plan::PStmt& st) {
    if (store_.failed(v)) {
      fail_tree(t, store_.error(v).empty() ? "source failed" : store_.error(v));
      return;
    }
    try {
      copy_tree(t, v);
    } catch (const data::DoubleAssignment& e) {
      result_.errors.push_back(where(st.pos) + ": " + e.what());
    }
  }

  void copy_tree(NodeId t, NodeId v) {
    const auto& ty = store_.type(t);
    if (ty.is_primitive()) {
      store_.resolve_leaf(t, store_.value(v));
    } else if (ty.is_file()) {
      std::string src = store_.value(v), dst = store_.value(t);
      if (store_.at(t).map_ctx >= 0 && !dst.empty() && dst != src && fs::exists(src)) {
        std::error_code ec;
        fs::create_directories(fs::path(dst).parent_path(), ec);
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
        store_.resolve_leaf(t);
      } else {
        store_.resolve_leaf(t, src);
      }
    } else if (ty.is_struct()) {
      for (std::size_t i = 0; i < ty.fields.size(); ++i)
        copy_tree(store_.field(t, static_cast<int>(i)), store_.field(v, static_cast<int>(i)));
    } else {
      for (auto [idx, e] : store_.elements(v)) {
        NodeId te = store_.element(t, idx);
        if (te == kNoNode) throw data::DoubleAssignment(store_.logical_path(t));
        copy_tree(te, e);
      }
      store_.close(t);
    }
  }

  // ---- tasks

  std::int32_t intern_stage(const std::string& scope) {
    std::string s;
    s.reserve(scope.size());
    int depth = 0;
    for (char c : scope) {
      if (c == '[') ++depth;
      if (depth == 0) s += c;
      if (c == ']') --depth;
    }
    auto [it, inserted] = stage_ids_.emplace(s, static_cast<std::int32_t>(stage_names_.size()));
    if (inserted) {
      stage_names_.push_back(s);
      stage_live_.push_back(0);
      stage_upstream_.emplace_back();
    }
    return it->second;
  }

  void create_task(const plan::PProc& proc, std::vector<NodeId> params, const std::string& scope) {
    auto tid = static_cast<std::int32_t>(tasks_.size());
    tasks_.emplace_back();
    Task& t = tasks_.back();
    t.proc = &proc;
    t.params = std::move(params);
    t.params.shrink_to_fit();
    t.key = store_.logical_path(t.params[0]);
    t.stage = intern_stage(scope);
    ++stage_live_[static_cast<std::size_t>(t.stage)];
    ++live_tasks_;
    for (int k = 0; k < proc.n_outputs; ++k) store_.at(t.params[static_cast<std::size_t>(k)]).has_writer = true;
    t.pending = proc.n_inputs + 1;
    for (int k = 0; k < proc.n_inputs; ++k) {
      NodeId in = t.params[static_cast<std::size_t>(proc.n_outputs + k)];
      store_.on_settled(in, [this, tid] { input_settled(tid); });
    }
    input_settled(tid);
  }

  void input_settled(std::int32_t tid) {
    if (--tasks_[static_cast<std::size_t>(tid)].pending == 0) inputs_ready(tid);
  }

  void inputs_ready(std::int32_t tid) {
    Task& t = tasks_[static_cast<std::size_t>(tid)];
    for (int k = 0; k < t.proc->n_inputs; ++k) {
      NodeId in = t.params[static_cast<std::size_t>(t.proc->n_outputs + k)];
      if (store_.failed(in)) {
        ++result_.upstream_failed;
        finish_failed(tid, "upstream failed: " + store_.logical_path(in));
        return;
      }
    }
    if (cfg_.resume && try_restore(tid)) return;
    t.state = TaskState::ready;
    t.ready_t = loop_.now();
    if (!cfg_.pipelining) {
      note_upstream(tid);
      if (blocked(t.stage)) {
        held_.push_back(tid);
        return;
      }
    }
    enqueue(Unit{{tid}, -1, -1});
  }

  std::vector<NodeId> output_leaves(const Task& t) const {
    std::vector<NodeId> out;
    for (int k = 0; k < t.proc->n_outputs; ++k) collect_leaves(t.params[static_cast<std::size_t>(k)], out);
    return out;
  }

  std::string producer_sig(const Task& t) const {
    Fnv1a64 h;
    h.update_u64(t.proc->signature);
    for (int k = 0; k < t.proc->n_inputs; ++k) {
      NodeId in = t.params[static_cast<std::size_t>(t.proc->n_outputs + k)];
      h.update("|");
      h.update(store_.logical_path(in));
      std::vector<NodeId> leaves;
      collect_leaves(in, leaves);
      for (NodeId l : leaves) {
        if (!store_.type(l).is_primitive()) continue;
        h.update("=");
        h.update(store_.value(l));
      }
    }
    return to_hex(h.value());
  }

  bool try_restore(std::int32_t tid) {
    Task& t = tasks_[static_cast<std::size_t>(tid)];
    auto leaves = output_leaves(t);
    if (leaves.empty()) return false;
    std::string sig = producer_sig(t);
    for (NodeId l : leaves) {
      auto it = prior_.produced.find(store_.logical_path(l));
      if (it == prior_.produced.end()) return false;
      if (it->second.producer_sig != sig)
        throw PlanDigestMismatch("producer of logged dataset '" + it->first + "' changed since the logged run");
      if (cfg_.materialize_outputs && store_.type(l).is_file() && !fs::exists(store_.value(l))) return false;
    }
    for (NodeId l : leaves) {
      const auto& rec = prior_.produced.at(store_.logical_path(l));
      try {
        if (store_.type(l).is_file())
          store_.resolve_leaf(l, std::nullopt, tid);
        else
          store_.resolve_leaf(l, rec.physical_path, tid);
      } catch (const data::DoubleAssignment& e) {
        throw EngineBug(e.what());
      }
      result_.produced[store_.logical_path(l)] = ProducedDataset{store_.value(l), rec.digest};
    }
    t.restored = true;
    ++result_.restored;
    finish_done(tid);
    return true;
  }

  // ---- barrier mode

  void note_upstream(std::int32_t tid) {
    const Task& t = tasks_[static_cast<std::size_t>(tid)];
    auto& up = stage_upstream_[static_cast<std::size_t>(t.stage)];
    std::vector<NodeId> leaves;
    for (int k = 0; k < t.proc->n_inputs; ++k)
      collect_leaves(t.params[static_cast<std::size_t>(t.proc->n_outputs + k)], leaves);
    for (NodeId l : leaves) {
      std::int32_t p = store_.at(l).producer;
      if (p < 0) continue;
      std::int32_t s = tasks_[static_cast<std::size_t>(p)].stage;
      if (s == t.stage || !up.insert(s).second) continue;
      const auto& more = stage_upstream_[static_cast<std::size_t>(s)];
      up.insert(more.begin(), more.end());
    }
  }

  bool blocked(std::int32_t stage) const {
    for (std::int32_t s : stage_upstream_[static_cast<std::size_t>(stage)])
      if (stage_live_[static_cast<std::size_t>(s)] > 0) return true;
    return false;
  }

  void release_held() {
    if (held_.empty()) return;
    std::vector<std::int32_t> still;
    std::vector<std::int32_t> go;
    for (auto tid : held_) (blocked(tasks_[static_cast<std::size_t>(tid)].stage) ? still : go).push_back(tid);
    held_ = std::move(still);
    for (auto tid : go) enqueue(Unit{{tid}, -1, -1});
  }

  // ---- dispatch

  void enqueue(Unit u) {
    if (sched_.policy().cluster_cap > 1 && u.forced < 0 && u.exclude < 0) {
      for (auto m : u.members) {
        if (cluster_buf_.empty()) {
          std::uint64_t gen = ++cluster_gen_;
          loop_.schedule_after(sched_.policy().cluster_window_s, [this, gen] {
            if (gen == cluster_gen_) flush_cluster();
          });
        }
        cluster_buf_.push_back(m);
        if (static_cast<int>(cluster_buf_.size()) >= sched_.policy().cluster_cap) flush_cluster();
      }
      return;
    }
    queue_.push_back(std::move(u));
    pump();
  }

  void flush_cluster() {
    if (cluster_buf_.empty()) return;
    ++cluster_gen_;
    queue_.push_back(Unit{std::move(cluster_buf_), -1, -1});
    cluster_buf_.clear();
    pump();
  }

  void pump() {
    if (pumping_) return;
    pumping_ = true;
    while (!queue_.empty() && !interrupted_) {
      Unit& u = queue_.front();
      const std::string& app = tasks_[static_cast<std::size_t>(u.members[0])].proc->executable;
      std::optional<std::string> site;
      if (u.forced >= 0) {
        const auto& rec = sched_.site(site_ids_[static_cast<std::size_t>(u.forced)]);
        if (!rec.has_app(app)) {
          u.forced = -1;
          continue;
        }
        if (!rec.under_throttle()) break;
        site = rec.site_id;
      } else {
        site = sched_.select_site(app, u.exclude >= 0 ? site_ids_[static_cast<std::size_t>(u.exclude)] : "");
      }
      if (!site) {
        bool anywhere = false;
        for (const auto& s : sched_.sites())
          if (s.has_app(app) && (u.exclude < 0 || s.site_id != site_ids_[static_cast<std::size_t>(u.exclude)]))
            anywhere = true;
        if (anywhere) break;
        if (u.exclude >= 0) {
          u.exclude = -1;
          continue;
        }
        Unit dead = std::move(u);
        queue_.pop_front();
        for (auto m : dead.members) finish_failed(m, "no site provides application '" + app + "'");
        continue;
      }
      Unit unit = std::move(u);
      queue_.pop_front();
      submit(unit, site_index(*site));
    }
    pumping_ = false;
  }

  std::int16_t site_index(const std::string& id) const {
    for (std::size_t i = 0; i < site_ids_.size(); ++i)
      if (site_ids_[i] == id) return static_cast<std::int16_t>(i);
    throw EngineBug("unknown site " + id);
  }

  exec::JobSpec build_job(std::int32_t tid) {
    Task& t = tasks_[static_cast<std::size_t>(tid)];
    const plan::PProc& p = *t.proc;
    exec::JobSpec j;
    j.key = t.key + "#" + std::to_string(t.attempt);
    j.executable = p.executable;
    for (const auto& a : p.args) {
      switch (a.kind) {
        case frontend::AppArg::Kind::literal: j.args.push_back(a.text); break;
        case frontend::AppArg::Kind::path: {
          NodeId n = app_path(t, a.path);
          std::vector<NodeId> leaves;
          collect_leaves(n, leaves);
          for (NodeId l : leaves)
            j.args.push_back(store_.type(l).is_file() ? exec::sandbox_rel(store_.value(l)) : store_.value(l));
          break;
        }
        case frontend::AppArg::Kind::filename_of: {
          for (NodeId l : store_.file_leaves(app_path(t, a.path))) j.args.push_back(exec::sandbox_rel(store_.value(l)));
          break;
        }
      }
    }
    std::vector<std::string> in_rel, out_rel;
    for (int k = 0; k < p.n_inputs; ++k)
      for (NodeId l : store_.file_leaves(t.params[static_cast<std::size_t>(p.n_outputs + k)])) {
        const std::string& path = store_.value(l);
        if (path.empty()) continue;
        j.stage_in.push_back({path, exec::sandbox_rel(path)});
        in_rel.push_back(j.stage_in.back().rel);
      }
    for (NodeId l : output_leaves(t)) {
      if (!store_.type(l).is_file()) continue;
      const std::string& path = store_.value(l);
      j.stage_out.push_back({exec::sandbox_rel(path), path});
      out_rel.push_back(j.stage_out.back().rel);
    }
    j.env[exec::kStageInEnv] = exec::join_lines(in_rel);
    j.env[exec::kStageOutEnv] = exec::join_lines(out_rel);
    j.sandbox_dir = (cfg_.run_dir / "jobs" / std::to_string(tid) / std::to_string(t.attempt)).string();
    j.declared_duration = cfg_.durations.sample(t.key);
    return j;
  }

  // Resolves an app-line path against the task's proc frame; indices here
  // must be literals or already-resolved parameters.
  NodeId app_path(const Task& t, const plan::PPath& path) {
    NodeId n = t.params.at(static_cast<std::size_t>(path.root.index));
    for (const auto& s : path.steps) {
      if (!s.is_index()) {
        n = store_.field(n, s.field);
        continue;
      }
      std::string v;
      if (auto* lit = std::get_if<plan::PLiteral>(&s.index->node))
        v = lit->text;
      else if (auto* pp = std::get_if<plan::PPath>(&s.index->node))
        v = store_.value(app_path(t, *pp));
      else
        throw std::invalid_argument("unsupported index expression in app line");
      n = store_.element(n, std::stoll(v));
      if (n == kNoNode) throw std::out_of_range("app line index out of range");
    }
    return n;
  }

  void submit(const Unit& u, std::int16_t site) {
    JobInfo info;
    info.members = u.members;
    exec::JobSpec job;
    try {
      if (u.members.size() == 1) {
        job = build_job(u.members[0]);
      } else {
        for (auto m : u.members) job.members.push_back(build_job(m));
        job.key = "bundle:" + job.members.front().key;
        job.executable = job.members.front().executable;
        job.sandbox_dir = (cfg_.run_dir / "jobs" / ("b" + std::to_string(++bundles_))).string();
        job.declared_duration = 0.0;
        for (const auto& m : job.members) *job.declared_duration += m.declared_duration.value_or(0.0);
      }
    } catch (const std::exception& e) {
      for (auto m : u.members) finish_failed(m, std::string("cannot build job: ") + e.what());
      return;
    }
    if (cfg_.provenance) {
      if (job.is_bundle())
        info.specs = job.members;
      else
        info.specs.push_back(job);
    }
    const std::string& sid = site_ids_[static_cast<std::size_t>(site)];
    double now = loop_.now();
    for (auto m : u.members) {
      Task& t = tasks_[static_cast<std::size_t>(m)];
      t.state = TaskState::submitted;
      t.site = site;
      t.submit_t = now;
    }
    sched_.on_dispatch(sid);
    ++result_.jobs;
    exec::JobId id;
    try {
      id = cfg_.sites[static_cast<std::size_t>(site)].provider->submit(std::move(job));
    } catch (const std::exception& e) {
      sched_.on_job_done(sid);
      exec::JobStatus st;
      st.phase = exec::Phase::failed;
      st.reason = std::string("submission failed: ") + e.what();
      for (std::size_t k = 0; k < u.members.size(); ++k) complete_task(u.members[k], st, site, nullptr);
      return;
    }
    jobs_.emplace(job_key(site, id), std::move(info));
  }

  static std::uint64_t job_key(std::int16_t site, exec::JobId id) {
    return (static_cast<std::uint64_t>(static_cast<std::uint16_t>(site)) << 48) ^ static_cast<std::uint64_t>(id);
  }

  void on_job_done(std::int16_t site, exec::JobId id, const exec::JobStatus& st) {
    auto it = jobs_.find(job_key(site, id));
    if (it == jobs_.end()) return;
    JobInfo info = std::move(it->second);
    jobs_.erase(it);
    sched_.on_job_done(site_ids_[static_cast<std::size_t>(site)]);
    if (interrupted_) return;
    if (info.members.size() == 1) {
      complete_task(info.members[0], st, site, info.specs.empty() ? nullptr : &info.specs[0]);
    } else {
      for (std::size_t k = 0; k < info.members.size(); ++k) {
        exec::JobStatus ms;
        if (k < st.members.size()) {
          ms = st.members[k];
        } else {
          ms.phase = exec::Phase::failed;
          ms.reason = st.reason.empty() ? "bundle member did not run" : st.reason;
          ms.host = st.host;
        }
        if (ms.host.empty()) ms.host = st.host;
        complete_task(info.members[k], ms, site, k < info.specs.size() ? &info.specs[k] : nullptr);
        if (interrupted_) break;
      }
    }
    pump();
  }

  void complete_task(std::int32_t tid, exec::JobStatus st, std::int16_t site, const exec::JobSpec* spec) {
    Task& t = tasks_[static_cast<std::size_t>(tid)];
    if (t.state != TaskState::submitted && t.state != TaskState::active)
      throw EngineBug("completion for task " + std::to_string(tid) + " in state " + to_string(t.state));
    ++result_.attempts;
    t.host = st.host;
    t.start_t = st.start_t;
    t.end_t = cfg_.clock == ClockMode::virtual_time ? st.end_t : loop_.now();
    auto leaves = output_leaves(t);
    if (st.succeeded() && cfg_.materialize_outputs) {
      for (NodeId l : leaves)
        if (store_.type(l).is_file() && !fs::exists(store_.value(l))) {
          st.phase = exec::Phase::failed;
          st.reason = "missing output: " + store_.value(l);
          break;
        }
    }
    const std::string& sid = site_ids_[static_cast<std::size_t>(site)];
    if (cfg_.provenance && spec) write_provenance(tid, *spec, st, sid);
    if (st.succeeded()) {
      sched_.update_score(sid, true);
      std::string sig = cfg_.restart_log ? producer_sig(t) : std::string();
      for (NodeId l : leaves) {
        try {
          store_.resolve_leaf(l, std::nullopt, tid);
        } catch (const data::DoubleAssignment& e) {
          throw EngineBug(e.what());
        }
        std::string logical = store_.logical_path(l);
        std::string digest;
        if (cfg_.materialize_outputs && store_.type(l).is_file())
          if (auto d = file_digest(store_.value(l))) digest = to_hex(*d);
        if (log_.is_open()) log_.produced(ProducedRecord{logical, store_.value(l), digest, loop_.now(), sig});
        result_.produced[logical] = ProducedDataset{store_.value(l), digest};
      }
      ++result_.executed;
      ++result_.site_tasks[sid];
      finish_done(tid);
      ++completions_;
      if (cfg_.interrupt_after_completions && completions_ >= *cfg_.interrupt_after_completions) interrupted_ = true;
      return;
    }
    sched_.update_score(sid, false);
    sched::FailedAttempt f;
    f.app = t.proc->executable;
    f.attempt = t.attempt;
    f.site = sid;
    f.host = st.host;
    t.consecutive = static_cast<std::uint8_t>(t.last_fail_site == site ? t.consecutive + 1 : 1);
    t.last_fail_site = site;
    f.consecutive_on_site = t.consecutive;
    f.error = sched_.classify(st);
    auto d = sched_.handle_failure(f, loop_.now());
    std::string why = st.reason.empty() ? "exit " + std::to_string(st.exit_code) : st.reason;
    switch (d.action) {
      case sched::FailureAction::fail_permanent:
        result_.errors.push_back(t.key + ": " + why + " (attempt " + std::to_string(t.attempt) + ")");
        finish_failed(tid, why);
        return;
      case sched::FailureAction::retry_same_site:
        ++t.attempt;
        t.state = TaskState::ready;
        enqueue(Unit{{tid}, site, -1});
        return;
      case sched::FailureAction::suspend_host_and_requeue:
        ++t.attempt;
        t.state = TaskState::ready;
        cfg_.sites[static_cast<std::size_t>(site)].provider->suspend_host(st.host, d.resume_time);
        enqueue(Unit{{tid}, site, -1});
        return;
      case sched::FailureAction::reschedule_other_site:
        ++t.attempt;
        t.consecutive = 0;
        t.last_fail_site = -1;
        t.state = TaskState::ready;
        enqueue(Unit{{tid}, -1, site});
        return;
    }
  }

  void write_provenance(std::int32_t tid, const exec::JobSpec& spec, const exec::JobStatus& st, const std::string& site) {
    const Task& t = tasks_[static_cast<std::size_t>(tid)];
    auto r = provenance::make_record(tid, t.attempt, spec, st, cfg_.materialize_outputs);
    r.proc = t.proc->name;
    r.site = site;
    r.environment = provenance::capture_environment(spec, cfg_.env_allowlist, cfg_.full_env);
    for (int k = 0; k < t.proc->n_inputs; ++k)
      r.inputs.push_back(store_.logical_path(t.params[static_cast<std::size_t>(t.proc->n_outputs + k)]));
    for (int k = 0; k < t.proc->n_outputs; ++k) r.outputs.push_back(store_.logical_path(t.params[static_cast<std::size_t>(k)]));
    if (!provenance::record_invocation(cfg_.run_dir, r))
      result_.warnings.push_back("cannot write provenance record for task " + std::to_string(tid));
  }

  void finish_done(std::int32_t tid) {
    tasks_[static_cast<std::size_t>(tid)].state = TaskState::done;
    ++result_.done;
    terminal(tid);
  }

  void finish_failed(std::int32_t tid, const std::string& reason) {
    Task& t = tasks_[static_cast<std::size_t>(tid)];
    t.state = TaskState::failed;
    ++result_.failed;
    for (int k = 0; k < t.proc->n_outputs; ++k) fail_tree(t.params[static_cast<std::size_t>(k)], reason);
    terminal(tid);
  }

  void terminal(std::int32_t tid) {
    const Task& t = tasks_[static_cast<std::size_t>(tid)];
    --live_tasks_;
    if (--stage_live_[static_cast<std::size_t>(t.stage)] == 0 && !cfg_.pipelining) release_held();
  }

  bool finished() const {
    if (interrupted_) return true;
    return top_done_ && live_envs_ == 0 && live_tasks_ == 0 && cluster_buf_.empty() && queue_.empty();
  }

  std::size_t bookkeeping() const {
    std::size_t b = store_.footprint();
    b += tasks_.size() * sizeof(Task);
    for (const auto& t : tasks_) {
      b += t.params.capacity() * sizeof(NodeId);
      if (t.key.capacity() > 15) b += t.key.capacity() + 1;
      if (t.host.capacity() > 15) b += t.host.capacity() + 1;
    }
    b += envs_.size() * sizeof(Env);
    for (const auto& e : envs_) {
      b += e.slots.capacity() * sizeof(Slot) + e.writers.capacity() * sizeof(std::int32_t);
      for (const auto& s : e.slots) b += s.waiters.capacity() * sizeof(NodeFn);
      if (e.scope.capacity() > 15) b += e.scope.capacity() + 1;
    }
    return b;
  }

  const plan::AbstractPlan& plan_;
  RunConfig cfg_;
  fs::path base_dir_;
  data::MapperRegistry mappers_;
  EventLoop loop_;
  data::NodeStore store_;
  sched::Scheduler sched_;
  std::vector<std::string> site_ids_;
  RunLog log_;
  RunLogState prior_;
  RunResult result_;

  std::deque<Env> envs_;
  std::unordered_map<const plan::Block*, BlockInfo> block_info_;
  std::deque<Task> tasks_;
  std::map<std::string, std::int32_t> stage_ids_;
  std::vector<std::string> stage_names_;
  std::vector<std::int32_t> stage_live_;
  std::vector<std::set<std::int32_t>> stage_upstream_;
  std::vector<std::int32_t> held_;
  std::vector<std::int32_t> cluster_buf_;
  std::uint64_t cluster_gen_ = 0;
  std::deque<Unit> queue_;
  std::unordered_map<std::uint64_t, JobInfo> jobs_;
  std::size_t bundles_ = 0;
  std::size_t live_tasks_ = 0;
  std::size_t live_envs_ = 0;
  std::size_t completions_ = 0;
  bool top_done_ = false;
  bool interrupted_ = false;
  bool pumping_ = false;
};

inline RunResult Engine::run() {
  fs::create_directories(cfg_.run_dir);
  std::size_t heap0 = mallinfo2().uordblks;
  fs::path log_path = cfg_.run_dir / "restart.log";
  if (cfg_.resume) prior_ = RunLog::load(log_path);
  if (cfg_.restart_log) {
    log_.open(log_path);
    log_.run_started(to_hex(plan_.digest), loop_.now());
  }
  result_.run_id = "run-" + to_hex(mix64(plan_.digest + static_cast<std::uint64_t>(prior_.runs) + 1));
  for (std::size_t i = 0; i < cfg_.sites.size(); ++i) {
    auto idx = static_cast<std::int16_t>(i);
    cfg_.sites[i].provider->attach(loop_, [this, idx](exec::JobId id, const exec::JobStatus& st) {
      on_job_done(idx, id, st);
    });
  }
  Env* top = new_env(&plan_.top, nullptr, "");
  run_block(top, [this] { top_done_ = true; });
  loop_.run([this] { return finished(); });

  if (!interrupted_ && !finished()) {
    std::size_t stalled = 0;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      auto st = tasks_[i].state;
      if (st == TaskState::done || st == TaskState::failed) continue;
      ++stalled;
      finish_failed(static_cast<std::int32_t>(i), "stalled");
    }
    result_.errors.push_back("run stalled with " + std::to_string(stalled) + " unfinished tasks and " +
                             std::to_string(live_envs_) + " unfinished scopes");
  }
  result_.tasks = tasks_.size();
  result_.nodes = store_.size();
  result_.bookkeeping_bytes = bookkeeping();
  std::size_t heap1 = mallinfo2().uordblks;
  if (!tasks_.empty()) {
    result_.bytes_per_task = static_cast<double>(result_.bookkeeping_bytes) / static_cast<double>(tasks_.size());
    result_.heap_bytes_per_task =
        heap1 > heap0 ? static_cast<double>(heap1 - heap0) / static_cast<double>(tasks_.size()) : 0.0;
  }
  for (auto& site : cfg_.sites) site.provider->shutdown();

  bool any_failed = result_.failed > 0 || !result_.errors.empty();
  for (const auto& s : top->slots)
    if (s.node != kNoNode && !s.alias && store_.failed(s.node)) any_failed = true;
  if (interrupted_)
    result_.status = RunResult::Status::interrupted;
  else
    result_.status = any_failed ? RunResult::Status::failed : RunResult::Status::ok;
  if (log_.is_open()) log_.run_finished(result_.status_text(), loop_.now());
  log_.close();

  double first = std::numeric_limits<double>::infinity(), last = 0;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const Task& t = tasks_[i];
    if (t.ready_t >= 0) first = std::min(first, t.ready_t);
    if (t.end_t >= 0) last = std::max(last, t.end_t);
    if (!cfg_.keep_trace) continue;
    TaskTrace tr;
    tr.id = static_cast<std::int32_t>(i);
    tr.proc = t.proc->name;
    tr.key = t.key;
    tr.stage = stage_names_[static_cast<std::size_t>(t.stage)];
    tr.site = t.site >= 0 ? site_ids_[static_cast<std::size_t>(t.site)] : "";
    tr.host = t.host;
    tr.state = t.state;
    tr.attempts = t.attempt + (t.submit_t >= 0 ? 1 : 0);
    tr.restored = t.restored;
    tr.ready = t.ready_t;
    tr.submit = t.submit_t;
    tr.start = t.start_t;
    tr.end = t.end_t;
    result_.trace.push_back(std::move(tr));
  }
  if (std::isfinite(first)) {
    result_.first_release = first;
    result_.last_end = last;
    result_.makespan = std::max(0.0, last - first);
  }
  for (const auto& s : sched_.sites()) result_.site_scores[s.site_id] = s.score;
  return std::move(result_);
}

inline RunResult evaluate(const plan::AbstractPlan& plan, RunConfig config, const fs::path& base_dir = {}) {
  Engine e(plan, std::move(config), base_dir);
  return e.run();
}

}  // namespace miniswift::engine
