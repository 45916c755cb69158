#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "miniswift/frontend/ast.hpp"
#include "miniswift/frontend/lexer.hpp"

namespace miniswift::frontend {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int col, std::vector<std::string> expected, const std::string& found)
      : std::runtime_error(format(line, col, expected, found)),
        line_(line), col_(col), expected_(std::move(expected)) {}
  ParseError(int line, int col, const std::string& message)
      : std::runtime_error(std::to_string(line) + ":" + std::to_string(col) + ": parse error: " + message),
        line_(line), col_(col) {}

  int line() const { return line_; }
  int col() const { return col_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  static std::string format(int line, int col, const std::vector<std::string>& expected,
                            const std::string& found) {
    std::string s = std::to_string(line) + ":" + std::to_string(col) + ": parse error: expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) s += i + 1 == expected.size() ? " or " : ", ";
      s += expected[i];
    }
    return s + ", found " + found;
  }

  int line_;
  int col_;
  std::vector<std::string> expected_;
};

namespace detail {

class Parser {
 public:
  explicit Parser(const std::vector<Token>& toks) : toks_(toks) {
    if (toks_.empty() || toks_.back().kind != TokenKind::end)
      throw std::invalid_argument("token stream must end with an end token");
  }

  Ast parse_program() {
    Ast ast;
    while (!at_end()) {
      const Token& t = cur();
      if (t.is_keyword("import")) {
        advance();
        Import imp{expect_kind(TokenKind::string_literal).text, t.pos()};
        expect(";");
        ast.imports.push_back(std::move(imp));
      } else if (t.is_keyword("type")) {
        ast.types.push_back(parse_type_decl());
      } else if (t.is_punct("(")) {
        ast.procs.push_back(parse_proc());
      } else {
        ast.stmts.push_back(parse_stmt());
      }
    }
    ast.expr_count = next_expr_id_;
    return ast;
  }

 private:
  const Token& cur() const { return toks_[pos_]; }
  const Token& look(std::size_t k) const {
    return pos_ + k < toks_.size() ? toks_[pos_ + k] : toks_.back();
  }
  bool at_end() const { return cur().kind == TokenKind::end; }
  const Token& advance() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }

  static std::string describe(const Token& t) {
    if (t.kind == TokenKind::end) return "end of input";
    if (t.kind == TokenKind::string_literal) return "string \"" + t.text + "\"";
    return "'" + t.text + "'";
  }

  [[noreturn]] void fail(std::vector<std::string> expected) const {
    throw ParseError(cur().line, cur().col, std::move(expected), describe(cur()));
  }

  bool accept(std::string_view punct) {
    if (cur().is_punct(punct)) {
      advance();
      return true;
    }
    return false;
  }
  const Token& expect(std::string_view punct) {
    if (!cur().is_punct(punct)) fail({"'" + std::string(punct) + "'"});
    return advance();
  }
  const Token& expect_keyword(std::string_view kw) {
    if (!cur().is_keyword(kw)) fail({"'" + std::string(kw) + "'"});
    return advance();
  }
  const Token& expect_kind(TokenKind k) {
    if (cur().kind != k) fail({to_string(k)});
    return advance();
  }
  std::string expect_ident() { return expect_kind(TokenKind::ident).text; }

  TypeDecl parse_type_decl() {
    TypeDecl d;
    d.pos = expect_keyword("type").pos();
    d.name = expect_ident();
    expect("{");
    if (accept("}")) {
      d.kind = TypeDecl::Kind::opaque_file;
    } else {
      d.kind = TypeDecl::Kind::structure;
      while (!accept("}")) {
        FieldDecl f;
        f.pos = cur().pos();
        f.type.pos = cur().pos();
        f.type.name = expect_ident();
        f.name = expect_ident();
        f.type.is_array = parse_array_marker();
        expect(";");
        d.fields.push_back(std::move(f));
      }
    }
    accept(";");
    return d;
  }

  bool parse_array_marker() {
    if (cur().is_punct("[") && look(1).is_punct("]")) {
      advance();
      advance();
      return true;
    }
    return false;
  }

  std::vector<Param> parse_params() {
    std::vector<Param> ps;
    expect("(");
    if (accept(")")) return ps;
    do {
      Param p;
      p.pos = cur().pos();
      p.type.pos = cur().pos();
      p.type.name = expect_ident();
      p.name = expect_ident();
      p.type.is_array = parse_array_marker();
      ps.push_back(std::move(p));
    } while (accept(","));
    expect(")");
    return ps;
  }

  ProcDecl parse_proc() {
    ProcDecl d;
    d.pos = cur().pos();
    d.outputs = parse_params();
    d.name = expect_ident();
    d.inputs = parse_params();
    expect("{");
    if (cur().is_keyword("app")) {
      SourcePos app_pos = advance().pos();
      expect("{");
      d.app = parse_app_line();
      d.app->pos = app_pos;
      expect("}");
      expect("}");
    } else {
      while (!accept("}")) {
        if (at_end()) fail({"'}'"});
        d.body.push_back(parse_stmt());
      }
    }
    return d;
  }

  AppLine parse_app_line() {
    AppLine line;
    line.executable = expect_ident();
    while (!accept(";")) {
      AppArg a;
      a.pos = cur().pos();
      const Token& t = cur();
      if (t.kind == TokenKind::string_literal || t.kind == TokenKind::int_literal ||
          t.kind == TokenKind::float_literal) {
        a.kind = AppArg::Kind::literal;
        a.text = t.text;
        advance();
      } else if (t.is_punct("@")) {
        advance();
        const Token& fn = cur();
        if (fn.kind != TokenKind::ident) fail({"mapping function name"});
        if (fn.text != "filename")
          throw ParseError(fn.line, fn.col, "unknown mapping function @" + fn.text);
        advance();
        expect("(");
        a.kind = AppArg::Kind::filename_of;
        a.path = parse_path();
        expect(")");
      } else if (t.kind == TokenKind::ident) {
        a.kind = AppArg::Kind::path;
        a.path = parse_path();
      } else {
        fail({"';'", "argument"});
      }
      line.args.push_back(std::move(a));
    }
    return line;
  }

  StmtList parse_block() {
    expect("{");
    StmtList out;
    while (!accept("}")) {
      if (at_end()) fail({"'}'"});
      out.push_back(parse_stmt());
    }
    return out;
  }

  Stmt parse_stmt() {
    Stmt s;
    s.pos = cur().pos();
    const Token& t = cur();
    if (t.is_keyword("foreach")) {
      advance();
      Foreach f;
      if (cur().kind == TokenKind::ident && look(1).kind == TokenKind::ident) {
        TypeName tn;
        tn.pos = cur().pos();
        tn.name = expect_ident();
        f.elem_type = std::move(tn);
      }
      f.elem = expect_ident();
      if (accept(",")) f.index = expect_ident();
      expect_keyword("in");
      f.source = parse_expr();
      f.body = parse_block();
      s.node = std::move(f);
      return s;
    }
    if (t.is_keyword("if")) {
      s.node = parse_if();
      return s;
    }
    if (t.kind != TokenKind::ident) fail({"statement"});
    if (look(1).kind == TokenKind::ident) {
      VarDecl v;
      v.type.pos = cur().pos();
      v.type.name = expect_ident();
      v.name = expect_ident();
      v.type.is_array = parse_array_marker();
      if (cur().is_punct("<")) v.mapping = parse_mapping();
      if (accept("=")) v.init = parse_expr();
      expect(";");
      s.node = std::move(v);
      return s;
    }
    Assign a;
    a.target = parse_path();
    expect("=");
    a.value = parse_expr();
    expect(";");
    s.node = std::move(a);
    return s;
  }

  If parse_if() {
    expect_keyword("if");
    If node;
    expect("(");
    node.cond = parse_expr();
    expect(")");
    node.then_body = parse_block();
    if (cur().is_keyword("else")) {
      advance();
      if (cur().is_keyword("if")) {
        Stmt nested;
        nested.pos = cur().pos();
        nested.node = parse_if();
        node.else_body.push_back(std::move(nested));
      } else {
        node.else_body = parse_block();
      }
    }
    return node;
  }

  // `<name; k=v, k=v>`; `;` and `,` are both accepted between parameters.
  MapperBinding parse_mapping() {
    MapperBinding m;
    m.pos = expect("<").pos();
    m.mapper = expect_ident();
    while (accept(";") || accept(",")) {
      MapperParam p;
      p.key = expect_ident();
      expect("=");
      const Token& v = cur();
      p.value.pos = v.pos();
      p.value.text = v.text;
      switch (v.kind) {
        case TokenKind::string_literal: p.value.kind = MapperValue::Kind::string; break;
        case TokenKind::int_literal: p.value.kind = MapperValue::Kind::integer; break;
        case TokenKind::float_literal: p.value.kind = MapperValue::Kind::floating; break;
        case TokenKind::ident: p.value.kind = MapperValue::Kind::variable; break;
        case TokenKind::keyword:
          if (v.text == "true" || v.text == "false") {
            p.value.kind = MapperValue::Kind::boolean;
            break;
          }
          [[fallthrough]];
        default: fail({"mapper parameter value"});
      }
      advance();
      m.params.push_back(std::move(p));
    }
    expect(">");
    return m;
  }

  Path parse_path() {
    Path p;
    p.pos = cur().pos();
    p.root = expect_ident();
    while (true) {
      if (accept(".")) {
        PathStep st;
        st.member = expect_ident();
        p.steps.push_back(std::move(st));
      } else if (cur().is_punct("[")) {
        advance();
        PathStep st;
        st.index = parse_expr();
        expect("]");
        p.steps.push_back(std::move(st));
      } else {
        break;
      }
    }
    return p;
  }

  ExprPtr make(SourcePos pos) {
    auto e = std::make_unique<Expr>();
    e->id = next_expr_id_++;
    e->pos = pos;
    return e;
  }

  ExprPtr parse_expr() { return parse_binary(0); }

  static int precedence(const Token& t) {
    if (t.kind != TokenKind::punct) return -1;
    const std::string& s = t.text;
    if (s == "||") return 1;
    if (s == "&&") return 2;
    if (s == "==" || s == "!=") return 3;
    if (s == "<" || s == ">" || s == "<=" || s == ">=") return 4;
    if (s == "+" || s == "-") return 5;
    if (s == "*" || s == "/" || s == "%") return 6;
    return -1;
  }

  ExprPtr parse_binary(int min_prec) {
    ExprPtr lhs = parse_unary();
    while (true) {
      int prec = precedence(cur());
      if (prec < 0 || prec < min_prec) break;
      const Token& op = advance();
      ExprPtr rhs = parse_binary(prec + 1);
      auto e = make(op.pos());
      e->pos = lhs->pos;
      e->node = BinaryExpr{op.text, std::move(lhs), std::move(rhs)};
      lhs = std::move(e);
    }
    return lhs;
  }

  ExprPtr parse_unary() {
    if (cur().is_punct("!") || cur().is_punct("-")) {
      const Token& op = advance();
      ExprPtr operand = parse_unary();
      auto e = make(op.pos());
      e->node = UnaryExpr{op.text, std::move(operand)};
      return e;
    }
    return parse_primary();
  }

  ExprPtr parse_primary() {
    const Token& t = cur();
    SourcePos pos = t.pos();
    switch (t.kind) {
      case TokenKind::string_literal: {
        advance();
        auto e = make(pos);
        e->node = LiteralExpr{LiteralExpr::Kind::string, t.text};
        return e;
      }
      case TokenKind::int_literal: {
        advance();
        auto e = make(pos);
        e->node = LiteralExpr{LiteralExpr::Kind::integer, t.text};
        return e;
      }
      case TokenKind::float_literal: {
        advance();
        auto e = make(pos);
        e->node = LiteralExpr{LiteralExpr::Kind::floating, t.text};
        return e;
      }
      case TokenKind::keyword:
        if (t.text == "true" || t.text == "false") {
          advance();
          auto e = make(pos);
          e->node = LiteralExpr{LiteralExpr::Kind::boolean, t.text};
          return e;
        }
        break;
      case TokenKind::punct:
        if (t.text == "(") {
          advance();
          ExprPtr inner = parse_expr();
          expect(")");
          return inner;
        }
        break;
      case TokenKind::ident:
        if (look(1).is_punct("(")) {
          CallExpr call;
          call.proc = advance().text;
          expect("(");
          if (!accept(")")) {
            do {
              call.args.push_back(parse_expr());
            } while (accept(","));
            expect(")");
          }
          auto e = make(pos);
          e->node = std::move(call);
          return e;
        } else {
          auto e = make(pos);
          e->node = parse_path();
          return e;
        }
      default: break;
    }
    fail({"expression"});
  }

  const std::vector<Token>& toks_;
  std::size_t pos_ = 0;
  int next_expr_id_ = 0;
};

}  // namespace detail

inline Ast parse(const std::vector<Token>& tokens) { return detail::Parser(tokens).parse_program(); }

inline Ast parse_source(std::string_view src) { return parse(tokenize(src)); }

}  // namespace miniswift::frontend
