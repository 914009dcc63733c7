// Copyright 2026 The cup Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <unordered_map>

#include "cup/text.hpp"

namespace cup::ir {

namespace {

enum class Tok : uint8_t { ident, integer, string, punct, newline, eof };

struct Token {
  Tok kind = Tok::eof;
  std::string text;
  int64_t value = 0;
  uint32_t line = 0;
  uint32_t column = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run(std::vector<Diagnostic>& errors) {
    std::vector<Token> out;
    bool line_start = true;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '\n') {
        out.push_back(make(Tok::newline, "\n"));
        advance();
        line_start = true;
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
        continue;
      }
      if (line_start && c == ';') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
        continue;
      }
      line_start = false;
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '@') {
        out.push_back(lex_ident());
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '-' && peek(1) && std::isdigit(static_cast<unsigned char>(peek(1))))) {
        out.push_back(lex_number(errors));
      } else if (c == '\'') {
        out.push_back(lex_char(errors));
      } else if (c == '"') {
        out.push_back(lex_string(errors));
      } else if (c == '-' && peek(1) == '>') {
        out.push_back(make(Tok::punct, "->"));
        advance(2);
      } else if (c == '.' && peek(1) == '.' && peek(2) == '.') {
        out.push_back(make(Tok::punct, "..."));
        advance(3);
      } else if (std::string_view("=,(){}:;").find(c) != std::string_view::npos) {
        out.push_back(make(Tok::punct, std::string(1, c)));
        advance();
      } else {
        errors.push_back({line_, col_, "", std::string("unexpected character '") + c + "'"});
        advance();
      }
    }
    out.push_back(make(Tok::newline, "\n"));
    out.push_back(make(Tok::eof, ""));
    return out;
  }

 private:
  char peek(size_t ahead) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  void advance(size_t n = 1) {
    for (size_t i = 0; i < n && pos_ < src_.size(); ++i) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
  }

  Token make(Tok kind, std::string text) const {
    Token t;
    t.kind = kind;
    t.text = std::move(text);
    t.line = line_;
    t.column = col_;
    return t;
  }

  Token lex_ident() {
    Token t = make(Tok::ident, "");
    size_t start = pos_;
    advance();
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
        // A trailing "..." belongs to the punctuation, not the identifier.
        if (c == '.' && peek(1) == '.') break;
        advance();
      } else {
        break;
      }
    }
    t.text = std::string(src_.substr(start, pos_ - start));
    return t;
  }

  Token lex_number(std::vector<Diagnostic>& errors) {
    Token t = make(Tok::integer, "");
    size_t start = pos_;
    bool negative = src_[pos_] == '-';
    if (negative) advance();
    bool hex = src_[pos_] == '0' && (peek(1) == 'x' || peek(1) == 'X');
    if (hex) advance(2);
    size_t digits = pos_;
    while (pos_ < src_.size() && (std::isxdigit(static_cast<unsigned char>(src_[pos_])) ||
                                  src_[pos_] == '_'))
      advance();
    t.text = std::string(src_.substr(start, pos_ - start));
    std::string body;
    for (char c : src_.substr(digits, pos_ - digits))
      if (c != '_') body += c;
    uint64_t magnitude = 0;
    auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), magnitude,
                                     hex ? 16 : 10);
    if (body.empty() || ec != std::errc() || ptr != body.data() + body.size() ||
        (!hex && !negative && magnitude > static_cast<uint64_t>(INT64_MAX)) ||
        (negative && magnitude > static_cast<uint64_t>(INT64_MAX) + 1)) {
      errors.push_back({t.line, t.column, "", "malformed integer literal '" + t.text + "'"});
    }
    t.value = static_cast<int64_t>(negative ? (0 - magnitude) : magnitude);
    return t;
  }

  // Returns the decoded byte of an escape or plain character.
  int lex_escaped(std::vector<Diagnostic>& errors) {
    char c = src_[pos_];
    if (c != '\\') {
      advance();
      return static_cast<unsigned char>(c);
    }
    advance();
    char e = pos_ < src_.size() ? src_[pos_] : '\0';
    advance();
    switch (e) {
      case 'n': return '\n';
      case 't': return '\t';
      case 'r': return '\r';
      case '0': return 0;
      case '\\': return '\\';
      case '\'': return '\'';
      case '"': return '"';
      case 'x': {
        int v = 0;
        for (int i = 0; i < 2; ++i) {
          char h = pos_ < src_.size() ? src_[pos_] : '\0';
          if (!std::isxdigit(static_cast<unsigned char>(h))) {
            errors.push_back({line_, col_, "", "malformed \\x escape"});
            return v;
          }
          v = v * 16 + (std::isdigit(static_cast<unsigned char>(h))
                            ? h - '0'
                            : std::tolower(static_cast<unsigned char>(h)) - 'a' + 10);
          advance();
        }
        return v;
      }
      default:
        errors.push_back({line_, col_, "", std::string("unknown escape '\\") + e + "'"});
        return e;
    }
  }

  Token lex_char(std::vector<Diagnostic>& errors) {
    Token t = make(Tok::integer, "");
    advance();
    if (pos_ >= src_.size() || src_[pos_] == '\n') {
      errors.push_back({t.line, t.column, "", "unterminated character literal"});
      return t;
    }
    t.value = lex_escaped(errors);
    if (pos_ < src_.size() && src_[pos_] == '\'') {
      advance();
    } else {
      errors.push_back({t.line, t.column, "", "unterminated character literal"});
    }
    t.text = std::to_string(t.value);
    return t;
  }

  Token lex_string(std::vector<Diagnostic>& errors) {
    Token t = make(Tok::string, "");
    advance();
    while (pos_ < src_.size() && src_[pos_] != '"' && src_[pos_] != '\n')
      t.text.push_back(static_cast<char>(lex_escaped(errors)));
    if (pos_ < src_.size() && src_[pos_] == '"') {
      advance();
    } else {
      errors.push_back({t.line, t.column, "", "unterminated string literal"});
    }
    return t;
  }

  std::string_view src_;
  size_t pos_ = 0;
  uint32_t line_ = 1;
  uint32_t col_ = 1;
};

struct SyntaxError {
  Diagnostic diag;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, std::string source_name)
      : toks_(std::move(toks)) {
    module_.source_name = std::move(source_name);
  }

  Module run(std::vector<Diagnostic>& errors) {
    while (!at(Tok::eof)) {
      if (at(Tok::newline) || at_punct(";")) {
        ++pos_;
        continue;
      }
      try {
        top_item();
      } catch (const SyntaxError& e) {
        errors.push_back(e.diag);
        recover_top_level();
      }
    }
    return std::move(module_);
  }

 private:
  const Token& cur() const { return toks_[pos_]; }
  bool at(Tok k) const { return cur().kind == k; }
  bool at_punct(std::string_view p) const { return at(Tok::punct) && cur().text == p; }
  bool at_ident(std::string_view s) const { return at(Tok::ident) && cur().text == s; }

  [[noreturn]] void fail(const std::string& msg) const {
    std::string got = cur().kind == Tok::eof       ? "end of input"
                      : cur().kind == Tok::newline ? "end of line"
                                                   : "'" + cur().text + "'";
    throw SyntaxError{{cur().line, cur().column, fn_ ? fn_->name : "", msg + ", got " + got}};
  }

  void expect_punct(std::string_view p) {
    if (!at_punct(p)) fail("expected '" + std::string(p) + "'");
    ++pos_;
  }

  void expect_keyword(std::string_view kw) {
    if (!at_ident(kw)) fail("expected '" + std::string(kw) + "'");
    ++pos_;
  }

  std::string expect_ident(std::string_view what) {
    if (!at(Tok::ident)) fail("expected " + std::string(what));
    return toks_[pos_++].text;
  }

  int64_t expect_int(std::string_view what) {
    if (!at(Tok::integer)) fail("expected " + std::string(what));
    return toks_[pos_++].value;
  }

  void end_of_statement() {
    if (at(Tok::newline) || at_punct(";")) {
      ++pos_;
      return;
    }
    if (at_punct("}") || at(Tok::eof)) return;
    fail("expected end of statement");
  }

  void recover_top_level() {
    fn_ = nullptr;
    int depth = 0;
    while (!at(Tok::eof)) {
      if (at_punct("{")) ++depth;
      if (at_punct("}")) {
        if (--depth <= 0) {
          ++pos_;
          return;
        }
      }
      if (depth == 0 && at(Tok::newline)) {
        ++pos_;
        return;
      }
      ++pos_;
    }
  }

  void top_item() {
    if (at_ident("global")) {
      ++pos_;
      global_def(false);
    } else if (at_ident("extern")) {
      ++pos_;
      expect_keyword("global");
      global_def(true);
    } else if (at_ident("ctor")) {
      ++pos_;
      module_.constructors.push_back(expect_ident("constructor function name"));
      end_of_statement();
    } else if (at_ident("func")) {
      ++pos_;
      function();
    } else {
      fail("expected 'global', 'extern', 'ctor' or 'func'");
    }
  }

  uint32_t element_type() {
    std::string t = expect_ident("element type");
    if (t == "int8") return 1;
    if (t == "int16") return 2;
    if (t == "int32") return 4;
    if (t == "int64") return 8;
    --pos_;
    fail("expected int8, int16, int32 or int64");
  }

  void global_def(bool is_extern) {
    GlobalDef g;
    g.is_extern = is_extern;
    g.name = expect_ident("global name");
    expect_punct("=");
    g.elem_size = element_type();
    if (at_ident("x")) {
      ++pos_;
      int64_t len = expect_int("array length");
      if (len < 1) {
        --pos_;
        fail("array length must be at least 1");
      }
      g.length = static_cast<uint64_t>(len);
      g.is_array = true;
    }
    if (at(Tok::string) || at_punct("{")) {
      if (is_extern) fail("extern globals cannot have initializers");
      initializer(g);
    }
    module_.globals.push_back(std::move(g));
    end_of_statement();
  }

  void initializer(GlobalDef& g) {
    std::vector<uint8_t> bytes(g.size_bytes(), 0);
    if (at(Tok::string)) {
      const std::string& s = cur().text;
      if (g.elem_size != 1) fail("string initializers need int8 elements");
      if (s.size() > bytes.size()) fail("initializer longer than the global");
      std::copy(s.begin(), s.end(), bytes.begin());
      ++pos_;
    } else {
      expect_punct("{");
      uint64_t idx = 0;
      while (!at_punct("}")) {
        int64_t v = expect_int("initializer value");
        if (idx >= g.length) fail("initializer longer than the global");
        for (uint32_t b = 0; b < g.elem_size; ++b)
          bytes[idx * g.elem_size + b] = static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * b));
        ++idx;
        if (!at_punct("}")) expect_punct(",");
      }
      ++pos_;
    }
    bool all_zero = std::all_of(bytes.begin(), bytes.end(), [](uint8_t b) { return b == 0; });
    if (!all_zero) g.init = std::move(bytes);
  }

  ValueKind value_kind(bool allow_void) {
    std::string k = expect_ident("value kind");
    if (k == "i64") return ValueKind::i64;
    if (k == "ptr") return ValueKind::ptr;
    if (allow_void && k == "void") return ValueKind::void_;
    --pos_;
    fail(allow_void ? "expected i64, ptr or void" : "expected i64 or ptr");
  }

  uint32_t reg(const std::string& name) {
    auto it = regs_.find(name);
    if (it != regs_.end()) return it->second;
    uint32_t r = fn_->add_reg(name);
    regs_.emplace(name, r);
    return r;
  }

  void function() {
    Function f;
    f.name = expect_ident("function name");
    module_.functions.push_back(std::move(f));
    fn_ = &module_.functions.back();
    regs_.clear();
    instr_index_ = 0;

    expect_punct("(");
    while (!at_punct(")")) {
      if (at_punct("...")) {
        ++pos_;
        fn_->is_variadic = true;
        if (!at_punct(")")) fail("'...' must be the last parameter");
        break;
      }
      Param p;
      p.name = expect_ident("parameter name");
      expect_punct(":");
      p.kind = value_kind(false);
      if (regs_.count(p.name)) fail("duplicate parameter '" + p.name + "'");
      reg(p.name);
      fn_->params.push_back(std::move(p));
      if (!at_punct(")")) expect_punct(",");
    }
    ++pos_;
    if (at_punct("->")) {
      ++pos_;
      fn_->returns = value_kind(true);
    }
    while (at(Tok::newline)) ++pos_;
    expect_punct("{");

    fn_->blocks.push_back({"entry", {}});
    bool entry_touched = false;
    for (;;) {
      if (at(Tok::newline) || at_punct(";")) {
        ++pos_;
        continue;
      }
      if (at_punct("}")) {
        ++pos_;
        break;
      }
      if (at(Tok::eof)) fail("expected '}'");
      if (at(Tok::ident) && toks_[pos_ + 1].kind == Tok::punct && toks_[pos_ + 1].text == ":") {
        std::string label = cur().text;
        pos_ += 2;
        if (!entry_touched && fn_->blocks.size() == 1 && fn_->blocks[0].instrs.empty()) {
          fn_->blocks[0].name = label;
        } else {
          fn_->blocks.push_back({label, {}});
        }
        entry_touched = true;
        continue;
      }
      entry_touched = true;
      fn_->blocks.back().instrs.push_back(statement());
      end_of_statement();
    }
    if (fn_->blocks.size() == 1 && fn_->blocks[0].instrs.empty()) {
      Instr r;
      r.op = Opcode::ret;
      r.loc = {toks_[pos_ - 1].line, instr_index_++};
      fn_->blocks[0].instrs.push_back(r);
    }
    fn_ = nullptr;
  }

  Operand operand() {
    if (at(Tok::integer)) return Operand::of_imm(toks_[pos_++].value);
    if (at(Tok::ident) && cur().text[0] != '@') return Operand::of_reg(reg(toks_[pos_++].text));
    fail("expected register or integer operand");
  }

  uint32_t access_size() {
    int64_t s = expect_int("access size");
    if (s < 0 || s > 0xffff) {
      --pos_;
      fail("access size out of range");
    }
    return static_cast<uint32_t>(s);
  }

  Instr statement() {
    Instr in;
    in.loc = {cur().line, instr_index_++};
    std::optional<std::string> dst;
    if (at(Tok::ident) && toks_[pos_ + 1].kind == Tok::punct && toks_[pos_ + 1].text == "=") {
      dst = cur().text;
      pos_ += 2;
    }
    std::string op = expect_ident("instruction");
    auto need_dst = [&](bool needed) {
      if (needed && !dst) fail("'" + op + "' needs a destination register");
      if (!needed && dst) fail("'" + op + "' does not produce a value");
    };

    if (op == "stack_alloc") {
      need_dst(true);
      in.op = Opcode::stack_alloc;
      in.size = access_size();
      expect_keyword("x");
      int64_t len = expect_int("element count");
      in.length = static_cast<uint64_t>(len);
      if (at_ident("addr_taken")) {
        ++pos_;
        in.address_taken = true;
      }
    } else if (op == "malloc") {
      need_dst(true);
      in.op = Opcode::heap_alloc;
      in.operands = {operand()};
    } else if (op == "free") {
      need_dst(false);
      in.op = Opcode::heap_free;
      in.operands = {operand()};
    } else if (op == "realloc") {
      need_dst(true);
      in.op = Opcode::heap_realloc;
      Operand p = operand();
      expect_punct(",");
      in.operands = {p, operand()};
    } else if (op == "load") {
      need_dst(true);
      in.op = Opcode::load;
      in.size = access_size();
      in.operands = {operand()};
    } else if (op == "store") {
      need_dst(false);
      in.op = Opcode::store;
      in.size = access_size();
      Operand p = operand();
      expect_punct(",");
      in.operands = {p, operand()};
    } else if (op == "ptradd") {
      need_dst(true);
      in.op = Opcode::ptr_add;
      Operand p = operand();
      expect_punct(",");
      in.operands = {p, operand()};
    } else if (op == "ptrtoint" || op == "inttoptr" || op == "mov") {
      need_dst(true);
      in.op = op == "ptrtoint" ? Opcode::ptr_to_int
              : op == "inttoptr" ? Opcode::int_to_ptr
                                 : Opcode::copy;
      in.operands = {operand()};
    } else if (op == "call") {
      std::string callee = expect_ident("callee");
      if (callee[0] == '@') {
        in.op = Opcode::intrinsic;
        in.symbol = callee.substr(1);
      } else {
        in.op = Opcode::call;
        in.symbol = callee;
      }
      expect_punct("(");
      while (!at_punct(")")) {
        in.operands.push_back(operand());
        if (!at_punct(")")) expect_punct(",");
      }
      ++pos_;
    } else if (op == "br") {
      need_dst(false);
      in.op = Opcode::br;
      in.targets = {expect_ident("block label")};
    } else if (op == "condbr") {
      need_dst(false);
      in.op = Opcode::cond_br;
      in.operands = {operand()};
      expect_punct(",");
      std::string t = expect_ident("block label");
      expect_punct(",");
      in.targets = {t, expect_ident("block label")};
    } else if (op == "ret") {
      need_dst(false);
      in.op = Opcode::ret;
      if (!at(Tok::newline) && !at_punct(";") && !at_punct("}")) in.operands = {operand()};
    } else if (op == "global_addr") {
      need_dst(true);
      in.op = Opcode::global_addr;
      in.symbol = expect_ident("global name");
    } else if (auto b = binop_from_string(op)) {
      need_dst(true);
      in.op = Opcode::binop;
      in.binop = *b;
      Operand a = operand();
      expect_punct(",");
      in.operands = {a, operand()};
    } else {
      --pos_;
      fail("unknown instruction '" + op + "'");
    }
    if (dst) in.dst = reg(*dst);
    return in;
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
  Module module_;
  Function* fn_ = nullptr;
  std::unordered_map<std::string, uint32_t> regs_;
  uint32_t instr_index_ = 0;
};

}  // namespace

ParseResult parse(std::string_view text, std::string source_name) {
  ParseResult result;
  Lexer lexer(text);
  auto toks = lexer.run(result.errors);
  Parser parser(std::move(toks), std::move(source_name));
  Module m = parser.run(result.errors);
  if (!result.errors.empty()) return result;
  result.errors = validate(m);
  if (result.errors.empty()) result.module = std::move(m);
  return result;
}

Module parse_or_throw(std::string_view text, std::string source_name) {
  auto r = parse(text, std::move(source_name));
  if (!r.ok()) throw ParseError(std::move(r.errors));
  return std::move(*r.module);
}

}  // namespace cup::ir
