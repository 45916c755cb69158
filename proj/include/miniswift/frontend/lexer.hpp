#pragma once

#include <array>
#include <cctype>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace miniswift::frontend {

struct SourcePos {
  int line = 0;
  int col = 0;
};

enum class TokenKind { ident, string_literal, int_literal, float_literal, punct, keyword, end };

struct Token {
  TokenKind kind = TokenKind::end;
  std::string text;  // string literals exclude the quotes, escapes decoded
  int line = 1;
  int col = 1;

  SourcePos pos() const { return {line, col}; }
  bool is(TokenKind k, std::string_view t) const { return kind == k && text == t; }
  bool is_punct(std::string_view t) const { return is(TokenKind::punct, t); }
  bool is_keyword(std::string_view t) const { return is(TokenKind::keyword, t); }
};

inline const char* to_string(TokenKind k) {
  switch (k) {
    case TokenKind::ident: return "identifier";
    case TokenKind::string_literal: return "string";
    case TokenKind::int_literal: return "integer";
    case TokenKind::float_literal: return "float";
    case TokenKind::punct: return "punctuation";
    case TokenKind::keyword: return "keyword";
    case TokenKind::end: return "end of input";
  }
  return "?";
}

class LexError : public std::runtime_error {
 public:
  LexError(int line, int col, const std::string& what)
      : std::runtime_error(std::to_string(line) + ":" + std::to_string(col) + ": lex error: " + what),
        line_(line), col_(col) {}
  int line() const { return line_; }
  int col() const { return col_; }

 private:
  int line_;
  int col_;
};

inline bool is_keyword(std::string_view word) {
  static constexpr std::array<std::string_view, 9> kKeywords = {
      "type", "app", "foreach", "in", "if", "else", "import", "true", "false"};
  for (auto k : kKeywords)
    if (k == word) return true;
  return false;
}

// Splits SwiftScript source into tokens. `//` comments run to end of line;
// `/* */` block comments are also skipped. The returned stream always
// ends with a single `end` token.
inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  int line = 1, col = 1;

  auto advance = [&](std::size_t n = 1) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  auto peek = [&](std::size_t off = 0) -> char { return i + off < src.size() ? src[i + off] : '\0'; };

  while (i < src.size()) {
    char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance();
      continue;
    }
    if (c == '/' && peek(1) == '/') {
      while (i < src.size() && src[i] != '\n') advance();
      continue;
    }
    if (c == '/' && peek(1) == '*') {
      int sl = line, sc = col;
      advance(2);
      while (i < src.size() && !(src[i] == '*' && peek(1) == '/')) advance();
      if (i >= src.size()) throw LexError(sl, sc, "unterminated block comment");
      advance(2);
      continue;
    }

    Token tok;
    tok.line = line;
    tok.col = col;

    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t s = i;
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) advance();
      tok.text = std::string(src.substr(s, i - s));
      tok.kind = is_keyword(tok.text) ? TokenKind::keyword : TokenKind::ident;
      out.push_back(std::move(tok));
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t s = i;
      bool is_float = false;
      while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
      if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1)))) {
        is_float = true;
        advance();
        while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
      }
      if ((peek() == 'e' || peek() == 'E') &&
          (std::isdigit(static_cast<unsigned char>(peek(1))) ||
           ((peek(1) == '-' || peek(1) == '+') && std::isdigit(static_cast<unsigned char>(peek(2)))))) {
        is_float = true;
        advance(2);
        while (std::isdigit(static_cast<unsigned char>(peek()))) advance();
      }
      tok.text = std::string(src.substr(s, i - s));
      tok.kind = is_float ? TokenKind::float_literal : TokenKind::int_literal;
      out.push_back(std::move(tok));
      continue;
    }
    if (c == '"') {
      advance();
      std::string text;
      while (true) {
        if (i >= src.size() || src[i] == '\n') throw LexError(tok.line, tok.col, "unterminated string literal");
        char d = src[i];
        if (d == '"') {
          advance();
          break;
        }
        if (d == '\\') {
          char e = peek(1);
          switch (e) {
            case 'n': text += '\n'; break;
            case 't': text += '\t'; break;
            case '"': text += '"'; break;
            case '\\': text += '\\'; break;
            default: throw LexError(line, col, std::string("unknown escape \\") + e);
          }
          advance(2);
          continue;
        }
        text += d;
        advance();
      }
      tok.kind = TokenKind::string_literal;
      tok.text = std::move(text);
      out.push_back(std::move(tok));
      continue;
    }

    static constexpr std::array<std::string_view, 6> kTwo = {"==", "!=", "<=", ">=", "&&", "||"};
    bool matched = false;
    for (auto p : kTwo) {
      if (c == p[0] && peek(1) == p[1]) {
        tok.kind = TokenKind::punct;
        tok.text = std::string(p);
        advance(2);
        matched = true;
        break;
      }
    }
    if (matched) {
      out.push_back(std::move(tok));
      continue;
    }
    static constexpr std::string_view kOne = "{}()[];,.=<>@!+-*/%:";
    if (kOne.find(c) != std::string_view::npos) {
      tok.kind = TokenKind::punct;
      tok.text = std::string(1, c);
      advance();
      out.push_back(std::move(tok));
      continue;
    }
    throw LexError(line, col, std::string("illegal character '") + c + "'");
  }
  Token end;
  end.kind = TokenKind::end;
  end.line = line;
  end.col = col;
  out.push_back(end);
  return out;
}

}  // namespace miniswift::frontend
