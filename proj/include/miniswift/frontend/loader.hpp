#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniswift/frontend/parser.hpp"
#include "miniswift/frontend/typecheck.hpp"
#include "miniswift/plan/lower.hpp"

namespace miniswift::frontend {

// Any failure to turn a script file into a plan. The message is
// "<file>:<line>:<col>: ..." for located errors.
class CompileError : public std::runtime_error {
 public:
  CompileError(std::string msg, std::vector<std::string> diagnostics = {})
      : std::runtime_error(std::move(msg)), diagnostics_(std::move(diagnostics)) {}
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

struct Compiled {
  TypedProgram program;
  plan::AbstractPlan plan;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CompileError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Ast parse_file(const std::filesystem::path& p) {
  std::string src = read_text(p);
  try {
    return parse_source(src);
  } catch (const LexError& e) {
    throw CompileError(p.string() + ":" + e.what());
  } catch (const ParseError& e) {
    throw CompileError(p.string() + ":" + e.what());
  }
}

namespace detail {

inline void collect_imports(const std::filesystem::path& file, const Ast& ast, std::set<std::string>& seen,
                            std::vector<Ast>& libs, std::vector<std::string>& names) {
  for (const auto& imp : ast.imports) {
    auto target = std::filesystem::weakly_canonical(file.parent_path() / imp.path);
    if (!seen.insert(target.string()).second) continue;
    if (!std::filesystem::exists(target))
      throw CompileError(file.string() + ":" + std::to_string(imp.pos.line) + ":" + std::to_string(imp.pos.col) +
                         ": cannot import '" + imp.path + "'");
    Ast lib = parse_file(target);
    collect_imports(target, lib, seen, libs, names);
    libs.push_back(std::move(lib));
    names.push_back(target.filename().string());
  }
}

inline Compiled finish(TypedProgram tp, const std::string& origin) {
  if (!tp.ok()) {
    std::vector<std::string> diags;
    for (const auto& e : tp.errors) diags.push_back(origin + ":" + e.str());
    std::string msg = diags.front();
    if (diags.size() > 1) msg += " (and " + std::to_string(diags.size() - 1) + " more)";
    throw CompileError(msg, diags);
  }
  auto plan = plan::lower(tp);
  return Compiled{std::move(tp), std::move(plan)};
}

}  // namespace detail

// Parses a script and its imports (paths relative to the importing file),
// typechecks and lowers it.
inline Compiled compile_file(const std::filesystem::path& path) {
  auto file = std::filesystem::weakly_canonical(path);
  Ast main = parse_file(file);
  std::set<std::string> seen{file.string()};
  std::vector<Ast> libs;
  std::vector<std::string> names;
  detail::collect_imports(file, main, seen, libs, names);
  return detail::finish(typecheck(std::move(main), std::move(libs), std::move(names)), path.string());
}

// In-memory variant; imports are resolved against `base_dir`.
inline Compiled compile_source(std::string_view src, const std::filesystem::path& base_dir = ".") {
  Ast main;
  try {
    main = parse_source(src);
  } catch (const LexError& e) {
    throw CompileError(std::string("<source>:") + e.what());
  } catch (const ParseError& e) {
    throw CompileError(std::string("<source>:") + e.what());
  }
  std::set<std::string> seen;
  std::vector<Ast> libs;
  std::vector<std::string> names;
  detail::collect_imports(base_dir / "<source>", main, seen, libs, names);
  return detail::finish(typecheck(std::move(main), std::move(libs), std::move(names)), "<source>");
}

}  // namespace miniswift::frontend
