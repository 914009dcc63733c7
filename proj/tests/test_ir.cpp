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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cup/text.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace cup::ir;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> corpus_files() {
  std::vector<fs::path> out;
  if (!fs::exists(CUP_CORPUS_DIR)) return out;
  for (const auto& e : fs::recursive_directory_iterator(CUP_CORPUS_DIR))
    if (e.path().extension() == ".mir") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

bool mentions(const std::vector<Diagnostic>& ds, std::string_view needle) {
  return std::any_of(ds.begin(), ds.end(),
                     [&](const Diagnostic& d) { return d.message.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("minimal program parses to one function with one stack_alloc") {
  auto r = parse("func main() { a = stack_alloc 4 x 10; ret 0 }");
  REQUIRE(r.ok());
  const Module& m = *r.module;
  REQUIRE(m.functions.size() == 1);
  const Function& f = m.functions[0];
  CHECK(f.name == "main");
  REQUIRE(f.blocks.size() == 1);
  REQUIRE(f.blocks[0].instrs.size() == 2);
  const Instr& a = f.blocks[0].instrs[0];
  CHECK(a.op == Opcode::stack_alloc);
  CHECK(a.size == 4);
  CHECK(a.length == 10);
  CHECK_FALSE(a.address_taken);
  CHECK(f.blocks[0].instrs[1].op == Opcode::ret);
}

TEST_CASE("printing the minimal program matches the golden file") {
  Module m = parse_or_throw("func main() { a = stack_alloc 4 x 10; ret 0 }");
  CHECK(print(m) == slurp(fs::path(CUP_TESTDATA_DIR) / "minimal.golden.mir"));
  // Stable across repeated calls.
  CHECK(print(m) == print(m));
}

TEST_CASE("empty-body function prints header and ret only") {
  Module m = parse_or_throw("func f() {}\nfunc main() { ret 0 }");
  CHECK(print(*m.find_function("f")) == "func f() -> i64 {\n  ret\n}\n");
}

TEST_CASE("undefined register use is a validation error naming the register") {
  auto r = parse("func main() {\n  x = load 4 ghost\n  ret x\n}\n");
  REQUIRE_FALSE(r.ok());
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].message.find("'ghost'") != std::string::npos);
  CHECK(r.errors[0].line == 2);
}

TEST_CASE("syntax errors carry positions") {
  auto r = parse("func main() {\n  a = frobnicate 1\n  ret 0\n}\n");
  REQUIRE_FALSE(r.ok());
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[0].message.find("unknown instruction") != std::string::npos);

  auto r2 = parse("global g = int32 x\n");
  REQUIRE_FALSE(r2.ok());
  CHECK(r2.errors[0].line == 1);
  CHECK_THROWS_AS(parse_or_throw("func main( {"), ParseError);
}

TEST_CASE("validate reports duplicate function names once") {
  Module m = parse_or_throw("func f() { ret 1 }\nfunc main() { ret 0 }");
  m.functions.push_back(m.functions[0]);
  auto v = validate(m);
  CHECK(v.size() == 1);
  CHECK(mentions(v, "duplicate function name 'f'"));
}

TEST_CASE("validate rejects a load of size 3") {
  Module m = parse_or_throw("func main(p: i64) {\n  q = inttoptr p\n  x = load 4 q\n  ret x\n}\n");
  CHECK(validate(m).empty());
  m.functions[0].blocks[0].instrs[1].size = 3;
  auto v = validate(m);
  CHECK(v.size() == 1);
  CHECK(mentions(v, "load size 3"));
}

TEST_CASE("structural invariants") {
  SUBCASE("no main") {
    auto r = parse("func f() { ret 0 }");
    CHECK(mentions(r.errors, "no 'main'"));
  }
  SUBCASE("double assignment") {
    auto r = parse("func main() { x = add 1, 2; x = add 3, 4; ret x }");
    CHECK(mentions(r.errors, "assigned more than once"));
  }
  SUBCASE("jump to missing block") {
    auto r = parse("func main() { br nowhere }");
    CHECK(mentions(r.errors, "undefined block 'nowhere'"));
  }
  SUBCASE("use not dominated by def") {
    auto r = parse(
        "func main(c: i64) {\n  condbr c, a, b\na:\n  x = add 1, 2\n  br b\nb:\n  ret x\n}\n");
    CHECK(mentions(r.errors, "dominates"));
  }
  SUBCASE("loop-carried use through dominating def is fine") {
    auto r = parse(
        "func main() {\n  s = stack_alloc 8 x 1\n  store 8 s, 0\n  br head\nhead:\n"
        "  i = load 8 s\n  c = slt i, 10\n  condbr c, body, done\nbody:\n  j = add i, 1\n"
        "  store 8 s, j\n  br head\ndone:\n  ret i\n}\n");
    CHECK(r.ok());
  }
  SUBCASE("stack_alloc outside the entry block") {
    auto r = parse("func main() {\n  br next\nnext:\n  a = stack_alloc 4 x 4\n  ret 0\n}\n");
    CHECK(mentions(r.errors, "outside the entry block"));
  }
  SUBCASE("scalar slot whose address escapes") {
    auto r = parse("func g(p: ptr) { ret 0 }\nfunc main() { s = stack_alloc 4 x 1; call g(s); ret 0 }");
    CHECK(mentions(r.errors, "addr_taken"));
    auto ok = parse("func g(p: ptr) { ret 0 }\nfunc main() { s = stack_alloc 4 x 1 addr_taken; call g(s); ret 0 }");
    CHECK(ok.ok());
  }
  SUBCASE("scalar slot accessed at the wrong width") {
    auto r = parse("func main() { s = stack_alloc 4 x 1; x = load 8 s; ret x }");
    CHECK(mentions(r.errors, "scalar slot"));
  }
  SUBCASE("intrinsic misuse") {
    auto r = parse("func main() { x = call @memset(1, 2, 3); ret 0 }");
    CHECK(mentions(r.errors, "does not produce a value"));
    auto r2 = parse("func main() { x = call @va_arg(0); ret x }");
    CHECK(mentions(r2.errors, "non-variadic"));
    auto r3 = parse("func main() { x = call @nope(); ret x }");
    CHECK(mentions(r3.errors, "unknown intrinsic"));
  }
  SUBCASE("call arity") {
    auto r = parse("func g(a: i64, b: i64) { ret a }\nfunc main() { x = call g(1); ret x }");
    CHECK(mentions(r.errors, "expected 2"));
    auto v = parse("func g(a: i64, ...) { ret a }\nfunc main() { x = call g(1, 2, 3); ret x }");
    CHECK(v.ok());
  }
  SUBCASE("constructors must resolve") {
    auto r = parse("ctor missing\nfunc main() { ret 0 }");
    CHECK(mentions(r.errors, "'missing'"));
  }
  SUBCASE("global element size") {
    Module m = parse_or_throw("global g = int32 x 4\nfunc main() { ret 0 }");
    m.globals[0].elem_size = 3;
    CHECK(mentions(validate(m), "element size 3"));
  }
}

TEST_CASE("comments, separators and literals") {
  const char* text =
      "; leading comment\n"
      "global msg = int8 x 8 \"hi\\n\"\n"
      "global tbl = int16 x 4 {1, -2, 0x7fff}\n"
      "global s = int64 {42}\n"
      "extern global ext = int32 x 16\n"
      "ctor init\n"
      "func init() -> void { ret }\n"
      "func main(n: i64) {\n"
      "  ; comment inside a body\n"
      "  c = add 'A', 0x10; d = sub c, -1\n"
      "  ret d\n"
      "}\n";
  auto r = parse(text);
  REQUIRE(r.ok());
  const Module& m = *r.module;
  CHECK(m.globals.size() == 4);
  CHECK(m.globals[0].init[0] == 'h');
  CHECK(m.globals[0].init[2] == '\n');
  CHECK(m.globals[1].init[2] == 0xfe);
  CHECK(m.globals[3].is_extern);
  CHECK(m.constructors == std::vector<std::string>{"init"});
  const auto& add = m.find_function("main")->blocks[0].instrs[0];
  CHECK(add.operands[0].imm == 65);
  CHECK(add.operands[1].imm == 16);
  Module again = parse_or_throw(print(m));
  CHECK(equivalent(m, again));
  CHECK(print(again) == print(m));
}

TEST_CASE("large immediates print in hex and round-trip") {
  Module m = parse_or_throw(
      "func main() { a = or 0x8000000000000000, 0xffffffff; b = and a, -1; ret b }");
  std::string text = print(m);
  CHECK(text.find("0x8000000000000000") != std::string::npos);
  CHECK(equivalent(parse_or_throw(text), m));
}

TEST_CASE("round trip and injectivity over the corpus") {
  auto files = corpus_files();
  REQUIRE(files.size() >= 80);
  std::vector<std::string> printed;
  for (const auto& p : files) {
    CAPTURE(p.string());
    auto r = parse(slurp(p), p.string());
    REQUIRE(r.ok());
    std::string text = print(*r.module);
    Module again = parse_or_throw(text);
    CHECK(equivalent(*r.module, again));
    CHECK(print(again) == text);
    printed.push_back(text);
  }
  // print is injective: distinct modules never share a canonical text.
  for (size_t i = 0; i < files.size(); ++i) {
    for (size_t j = i + 1; j < files.size(); ++j) {
      if (printed[i] != printed[j]) continue;
      Module a = parse_or_throw(printed[i]);
      Module b = parse_or_throw(printed[j]);
      CHECK(equivalent(a, b));
    }
  }
}

TEST_CASE("validate rejects mutated corpus modules") {
  // Each mutation breaks exactly one invariant of a valid module.
  int mutated = 0;
  for (const auto& p : corpus_files()) {
    Module base = parse_or_throw(slurp(p));
    REQUIRE(validate(base).empty());
    for (size_t fi = 0; fi < base.functions.size(); ++fi) {
      const Function& f = base.functions[fi];
      for (size_t bi = 0; bi < f.blocks.size(); ++bi) {
        for (size_t ii = 0; ii < f.blocks[bi].instrs.size(); ++ii) {
          const Instr& in = f.blocks[bi].instrs[ii];
          Module m = base;
          Instr& target = m.functions[fi].blocks[bi].instrs[ii];
          if (in.op == Opcode::load || in.op == Opcode::store) {
            target.size = 3;
          } else if (in.op == Opcode::call) {
            target.symbol = "no_such_function";
          } else if (in.op == Opcode::br) {
            target.targets[0] = "no_such_block";
          } else if (in.op == Opcode::global_addr) {
            target.symbol = "no_such_global";
          } else {
            continue;
          }
          ++mutated;
          CAPTURE(p.string());
          CHECK_FALSE(validate(m).empty());
        }
      }
    }
  }
  CHECK(mutated > 100);
}
