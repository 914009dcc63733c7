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
#include <map>
#include <random>
#include <sstream>

#include "cup/capability.hpp"
#include "cup/instrument.hpp"
#include "cup/text.hpp"
#include "doctest.h"

using namespace cup;
using namespace cup::instrument;
using ir::Operand;

namespace {

namespace L = cap::layout;

ir::Module mod(const std::string& text) { return ir::parse_or_throw(text, "test.mir"); }

// Straight-line evaluator for expanded sequences: binops, mov and aligned
// 8-byte loads/stores against a word map. Unwritten words read as zero.
struct Eval {
  std::vector<uint64_t> regs;
  std::map<uint64_t, uint64_t> mem;

  uint64_t val(const Operand& o) const {
    return o.is_reg() ? regs.at(o.reg) : static_cast<uint64_t>(o.imm);
  }

  void run(const ir::Function& f, const std::vector<ir::Instr>& code) {
    regs.resize(f.reg_names.size());
    for (const auto& in : code) {
      switch (in.op) {
        case ir::Opcode::binop:
          regs[*in.dst] = ir::eval_binop(in.binop, val(in.operands[0]), val(in.operands[1]));
          break;
        case ir::Opcode::copy: regs[*in.dst] = val(in.operands[0]); break;
        case ir::Opcode::load: {
          REQUIRE(in.size == 8);
          auto it = mem.find(val(in.operands[0]));
          regs[*in.dst] = it == mem.end() ? 0 : it->second;
          break;
        }
        case ir::Opcode::store:
          REQUIRE(in.size == 8);
          mem[val(in.operands[0])] = val(in.operands[1]);
          break;
        default: FAIL("unexpected opcode in expanded sequence");
      }
    }
  }

  // Mirrors a table into the guest layout.
  void load_table(const cap::MetadataTable& t, uint32_t upto) {
    for (uint32_t id = 0; id < upto; ++id) {
      const auto& e = t.entry(id);
      if (e.base) mem[L::kTableBase + 16 * id] = e.base;
      if (e.end) mem[L::kTableBase + 16 * id + 8] = e.end;
    }
    mem[L::kNextEntryAddr] = t.next_entry();
  }

  void expect_table(const cap::MetadataTable& t, uint32_t upto) {
    for (uint32_t id = 0; id < upto; ++id) {
      INFO("entry " << id);
      CHECK(word(L::kTableBase + 16 * id) == t.entry(id).base);
      CHECK(word(L::kTableBase + 16 * id + 8) == t.entry(id).end);
    }
    CHECK(word(L::kNextEntryAddr) == t.next_entry());
  }

  uint64_t word(uint64_t a) const {
    auto it = mem.find(a);
    return it == mem.end() ? 0 : it->second;
  }
};

// A scratch function with two input registers for emitting sequences.
struct Scratch {
  ir::Function f;
  std::vector<ir::Instr> code;
  uint32_t a, b, c;
  Scratch() {
    f.name = "scratch";
    a = f.add_reg("a");
    b = f.add_reg("b");
    c = f.add_reg("c");
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::filesystem::path> corpus_files() {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::exists(CUP_CORPUS_DIR))
    for (const auto& e : fs::recursive_directory_iterator(CUP_CORPUS_DIR))
      if (e.path().extension() == ".mir") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

const char* kSetGet = R"(func set(x: ptr, val: i64) -> void {
  store 4 x, val
  ret
}

func main() -> i64 {
  escapes = stack_alloc 4 x 5
  local = stack_alloc 4 x 5
  e2 = ptradd escapes, 8
  call set(e2, 10)
  l2 = ptradd local, 8
  store 4 l2, 10
  ret 0
}
)";

size_t count_intrinsic(const ir::Function& f, std::string_view name) {
  size_t n = 0;
  for (const auto& b : f.blocks)
    for (const auto& in : b.instrs) n += in.op == ir::Opcode::intrinsic && in.symbol == name;
  return n;
}

}  // namespace

TEST_CASE("module without protected objects is unchanged") {
  const std::string text = R"(global s = int64 {4}

func main(n: i64) -> i64 {
  i = stack_alloc 8 x 1
  store 8 i, n
  v = load 8 i
  g = global_addr s
  w = load 8 g
  r = add v, w
  ret r
}
)";
  auto m = mod(text);
  for (Mode mode : {Mode::intrinsic, Mode::expanded}) {
    auto im = instrument_module(m, mode);
    CHECK(ir::print(im.module) == text);
    CHECK(im.provenance.empty());
  }
}

TEST_CASE("set/get example lowering in intrinsic mode") {
  auto m = mod(kSetGet);
  auto im = instrument_module(m, Mode::intrinsic);
  CHECK(ir::validate(im.module).empty());
  const auto& main = *im.module.find_function("main");
  const auto& set = *im.module.find_function("set");
  CHECK(count_intrinsic(main, "cup.alloc_meta") == 1);
  CHECK(count_intrinsic(main, "cup.free_meta") == 1);
  CHECK(count_intrinsic(main, "cup.check_local") == 1);
  CHECK(count_intrinsic(main, "cup.check") == 0);
  CHECK(count_intrinsic(main, "cup.ptradd") == 1);  // only the escaping array
  CHECK(count_intrinsic(set, "cup.check") == 1);
  const std::string text = ir::print(im.module);
  CHECK(text.find("escapes.raw = stack_alloc 4 x 5") != std::string::npos);
  CHECK(text.find("escapes = call @cup.alloc_meta(escapes.raw, escapes.end)") != std::string::npos);
  CHECK(text.find("local.end = add local, 20") != std::string::npos);
  CHECK(text.find("lchk = call @cup.check_local(l2, local, local.end, 4)") != std::string::npos);
  CHECK(text.find("chk = call @cup.check(x, 4)\n  store 4 chk, val") != std::string::npos);
  // Printed output parses back to the same module.
  CHECK(ir::equivalent(ir::parse_or_throw(text, "re.mir"), im.module));
}

TEST_CASE("set/get example lowering in expanded mode uses no runtime intrinsics") {
  auto im = instrument_module(mod(kSetGet), Mode::expanded);
  CHECK(ir::validate(im.module).empty());
  for (const auto& f : im.module.functions)
    for (const auto& b : f.blocks)
      for (const auto& in : b.instrs)
        CHECK_FALSE((in.op == ir::Opcode::intrinsic && ir::is_runtime_intrinsic(in.symbol)));
  const std::string text = ir::print(im.module);
  CHECK(ir::equivalent(ir::parse_or_throw(text, "re.mir"), im.module));
}

TEST_CASE("expanded ptr_add matches capability_core") {
  auto run = [](uint64_t w, int64_t delta) {
    Scratch s;
    Emitter e(s.f, Mode::expanded);
    e.set_output(&s.code);
    Operand r = e.ptr_add(Operand::of_reg(s.a), Operand::of_reg(s.b));
    Eval ev;
    ev.regs.assign(s.f.reg_names.size(), 0);
    ev.regs[s.a] = w;
    ev.regs[s.b] = static_cast<uint64_t>(delta);
    ev.run(s.f, s.code);
    return ev.regs[r.reg];
  };
  CHECK(run(cap::encode(1, 0).raw, 8) == cap::encode(1, 8).raw);
  CHECK(run(cap::encode(1, 0xffffffffU).raw, 1) == cap::encode(1, 0).raw);
  CHECK(run(0x2000, 16) == 0x2010);
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20000; ++i) {
    uint64_t w = rng();
    auto d = static_cast<int64_t>(rng() % 2 ? rng() : rng() % 4096);
    REQUIRE(run(w, d) == cap::ptr_add({w}, d).raw);
  }
}

TEST_CASE("expanded check matches MetadataTable::check") {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 200; ++round) {
    cap::MetadataTable t(64);
    std::vector<uint32_t> live;
    for (int k = 0; k < 12; ++k) {
      if (!live.empty() && rng() % 3 == 0) {
        size_t at = rng() % live.size();
        t.release(live[at]);
        live.erase(live.begin() + static_cast<long>(at));
      } else {
        uint64_t base = 0x1000'0000 + (rng() % 0x10000) * 16;
        live.push_back(t.allocate(base, base + 1 + rng() % 100).id);
      }
    }
    Scratch s;
    Emitter e(s.f, Mode::expanded);
    e.set_output(&s.code);
    const uint32_t size = 1U << (round % 4);
    Operand r = e.check(Operand::of_reg(s.a), size);
    for (int q = 0; q < 50; ++q) {
      uint64_t w;
      switch (rng() % 3) {
        case 0: w = cap::encode(rng() % 14, static_cast<uint32_t>(rng() % 120)).raw; break;
        case 1: w = cap::encode(rng() % 14, static_cast<uint32_t>(rng())).raw; break;
        default: w = rng() % (1ULL << 49); break;
      }
      Eval ev;
      ev.load_table(t, 64);
      ev.regs.assign(s.f.reg_names.size(), 0);
      ev.regs[s.a] = w;
      ev.run(s.f, s.code);
      REQUIRE(ev.regs[r.reg] == t.check({w}, size));
    }
  }
}

TEST_CASE("expanded local check equals check_bounds") {
  Scratch s;
  Emitter e(s.f, Mode::expanded);
  e.set_output(&s.code);
  Operand r = e.check_local(Operand::of_reg(s.a), Operand::of_reg(s.b), Operand::of_reg(s.c), 4);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20000; ++i) {
    uint64_t base = 0x7000'0000'0000ULL - (rng() % 0x100000);
    uint64_t end = base + 1 + rng() % 256;
    uint64_t p = base - 64 + rng() % 400;
    Eval ev;
    ev.regs.assign(s.f.reg_names.size(), 0);
    ev.regs[s.a] = p;
    ev.regs[s.b] = base;
    ev.regs[s.c] = end;
    ev.run(s.f, s.code);
    REQUIRE(ev.regs[r.reg] == (p | cap::check_bounds(base, end, p, 4)));
  }
}

TEST_CASE("expanded metadata maintenance follows the table") {
  std::mt19937_64 rng(17);
  for (int round = 0; round < 300; ++round) {
    cap::MetadataTable ref(64);
    Eval ev;
    ev.load_table(ref, 64);
    std::vector<cap::EnrichedWord> live;
    for (int k = 0; k < 20; ++k) {
      Scratch s;
      Emitter e(s.f, Mode::expanded);
      e.set_output(&s.code);
      ev.regs.assign(8, 0);
      const int what = static_cast<int>(rng() % 4);
      if (what == 0 || live.empty()) {
        uint64_t base = 0x1000 * (1 + rng() % 1000);
        uint64_t end = base + 1 + rng() % 64;
        Operand r = e.alloc_meta(Operand::of_imm(static_cast<int64_t>(base)),
                                 Operand::of_imm(static_cast<int64_t>(end)));
        ev.regs.resize(s.f.reg_names.size());
        ev.run(s.f, s.code);
        auto a = ref.allocate(base, end);
        REQUIRE(ev.regs[r.reg] == a.word.raw);
        live.push_back(a.word);
      } else if (what == 1) {
        size_t at = rng() % live.size();
        e.free_meta(Operand::of_reg(s.a));
        ev.regs.resize(s.f.reg_names.size());
        ev.regs[s.a] = cap::ptr_add(live[at], static_cast<int64_t>(rng() % 8)).raw;
        ev.run(s.f, s.code);
        ref.release(live[at].id_bits());
        live.erase(live.begin() + static_cast<long>(at));
      } else if (what == 2) {
        // Unenriched words leave the table alone.
        e.free_meta(Operand::of_reg(s.a));
        ev.regs.resize(s.f.reg_names.size());
        ev.regs[s.a] = 0x1234'5678;
        ev.run(s.f, s.code);
      } else {
        const bool enriched = rng() % 2;
        uint64_t base = 0x1000 * (1 + rng() % 1000);
        uint64_t end = base + 1 + rng() % 64;
        size_t at = rng() % live.size();
        Operand r = e.realloc_meta(Operand::of_reg(s.a), Operand::of_imm(static_cast<int64_t>(base)),
                                   Operand::of_imm(static_cast<int64_t>(end)));
        ev.regs.resize(s.f.reg_names.size());
        ev.regs[s.a] = enriched ? live[at].raw : 0;
        ev.run(s.f, s.code);
        if (enriched) {
          ref.mutable_entry(live[at].id_bits()) = {base, end};
          REQUIRE(ev.regs[r.reg] == cap::encode(live[at].id_bits(), 0).raw);
        } else {
          auto a = ref.allocate(base, end);
          REQUIRE(ev.regs[r.reg] == a.word.raw);
          live.push_back(a.word);
        }
      }
      ev.expect_table(ref, 64);
    }
  }
}

TEST_CASE("int to pointer casts") {
  auto m = mod(R"(func main() -> i64 {
  h = malloc 16
  x = ptrtoint h
  y = mov x
  q = inttoptr y
  z = add x, 4
  r = inttoptr z
  c = inttoptr 0x3000
  ret 0
}
)");
  auto im = instrument_module(m, Mode::intrinsic);
  const std::string text = ir::print(im.module);
  CHECK(text.find("q = inttoptr y") != std::string::npos);
  CHECK(text.find("cast.low48 = and z, 0xffffffffffff\n  r = inttoptr cast.low48") != std::string::npos);
  CHECK(text.find("cast.low48.1 = and 12288, 0xffffffffffff\n  c = inttoptr cast.low48.1") !=
        std::string::npos);
}

TEST_CASE("heap operations") {
  auto m = mod(R"(func main() -> i64 {
  p = malloc 10
  q = realloc p, 40
  free q
  ret 0
}
)");
  auto im = instrument_module(m, Mode::intrinsic);
  const std::string text = ir::print(im.module);
  CHECK(text.find(R"(  p.raw = malloc 10
  p.empty = eq 10, 0
  p.lim = add p.raw, 10
  p.end = add p.lim, p.empty
  p = call @cup.alloc_meta(p.raw, p.end)
  chk = call @cup.check(p, 1)
  q.raw = realloc chk, 40
)") != std::string::npos);
  CHECK(text.find("q = call @cup.realloc_meta(p, q.raw, q.end)") != std::string::npos);
  CHECK(text.find("chk.1 = call @cup.check(q, 1)\n  free chk.1\n  call @cup.free_meta(q)") !=
        std::string::npos);
}

TEST_CASE("global arrays go through a companion pointer") {
  auto m = mod(R"(global g = int32 x 16
ctor init

func init() -> void {
  a = global_addr g
  store 4 a, 1
  ret
}

func main() -> i64 {
  b = global_addr g
  p = ptradd b, 60
  v = load 4 p
  ret v
}
)");
  for (Mode mode : {Mode::intrinsic, Mode::expanded}) {
    auto im = instrument_module(m, mode);
    CHECK(ir::validate(im.module).empty());
    REQUIRE(im.module.constructors.size() == 2);
    CHECK(im.module.constructors[0] == "__cup_init_globals");
    CHECK(im.module.constructors[1] == "init");
    const auto* comp = im.module.find_global("g__cup");
    REQUIRE(comp);
    CHECK_FALSE(comp->is_array);
    CHECK(im.module.functions[0].name == "__cup_init_globals");
    const std::string text = ir::print(im.module);
    CHECK(text.find("b.cup = global_addr g__cup\n  b = load 8 b.cup") != std::string::npos);
  }
  auto ext = mod("extern global e = int32 x 4\n\nfunc main() -> i64 {\n  ret 0\n}\n");
  CHECK_THROWS_AS(instrument_module(ext, Mode::intrinsic), InstrumentError);
}

TEST_CASE("stack metadata is released before every return in reverse order") {
  auto m = mod(R"(func f(c: i64) -> i64 {
  a = stack_alloc 4 x 4
  b = stack_alloc 8 x 2
  call @memset(a, 0, 16)
  call @memset(b, 0, 16)
  condbr c, x, y
x:
  ret 1
y:
  ret 2
}

func main() -> i64 {
  r = call f(1)
  ret r
}
)");
  auto im = instrument_module(m, Mode::intrinsic);
  const auto& f = *im.module.find_function("f");
  for (const auto& blk : f.blocks) {
    const auto& in = blk.instrs;
    if (in.back().op != ir::Opcode::ret) continue;
    REQUIRE(in.size() >= 3);
    const auto& first = in[in.size() - 3];
    const auto& second = in[in.size() - 2];
    CHECK(first.symbol == "cup.free_meta");
    CHECK(f.reg_names[first.operands[0].reg] == "b");
    CHECK(second.symbol == "cup.free_meta");
    CHECK(f.reg_names[second.operands[0].reg] == "a");
  }
}

TEST_CASE("removing a check group substitutes its input") {
  auto im = instrument_module(mod(kSetGet), Mode::expanded);
  size_t removable = 0;
  for (const auto& g : im.groups) {
    if (g.reason != Reason::check && g.reason != Reason::local_bounds) continue;
    if (!g.result) continue;
    ++removable;
    ir::Module m = remove_group(im, g.id);
    CHECK(ir::validate(m).empty());
    CHECK(m.functions[g.function].instr_count() < im.module.functions[g.function].instr_count());
  }
  CHECK(removable == 2);
  for (const auto& g : im.groups)
    if (g.reason == Reason::alloc_meta) CHECK_THROWS_AS(remove_group(im, g.id), InstrumentError);
}

TEST_CASE("provenance JSON") {
  auto im = instrument_module(mod(kSetGet), Mode::intrinsic);
  std::string j = provenance_json(im);
  CHECK(j.find("\"reason\": \"alloc_meta\"") != std::string::npos);
  CHECK(j.find("\"reason\": \"check\"") != std::string::npos);
  CHECK(j.find("\"reason\": \"local_bounds\"") != std::string::npos);
  CHECK(j.find("\"reason\": \"dealloc_meta\"") != std::string::npos);
  for (const auto& p : im.provenance) {
    const auto& in = im.module.functions[p.function].blocks[p.block].instrs.at(p.index);
    CHECK(in.op != ir::Opcode::ret);
  }
}

TEST_CASE("corpus instruments cleanly in both modes") {
  auto files = corpus_files();
  REQUIRE(files.size() >= 80);
  for (const auto& path : files) {
    INFO(path.string());
    auto m = ir::parse_or_throw(slurp(path), path.string());
    for (Mode mode : {Mode::intrinsic, Mode::expanded}) {
      auto a = instrument_module(m, mode);
      auto b = instrument_module(m, mode);
      CHECK(ir::validate(a.module).empty());
      CHECK(ir::print(a.module) == ir::print(b.module));
      for (const auto& g : a.groups)
        if ((g.reason == Reason::check || g.reason == Reason::local_bounds) && g.result)
          CHECK(ir::validate(remove_group(a, g.id)).empty());
      // Every enriched stack allocation is released before every return, last
      // allocated first.
      if (mode != Mode::intrinsic) continue;
      for (const auto& f : a.module.functions) {
        // Enriched stack registers, in allocation order.
        std::vector<uint32_t> stack_caps;
        for (const auto& in : f.blocks[0].instrs) {
          if (in.op != ir::Opcode::intrinsic || in.symbol != "cup.alloc_meta" || !in.operands[0].is_reg())
            continue;
          for (const auto& x : f.blocks[0].instrs)
            if (x.dst == in.operands[0].reg && x.op == ir::Opcode::stack_alloc) stack_caps.push_back(*in.dst);
        }
        for (const auto& blk : f.blocks) {
          if (blk.instrs.back().op != ir::Opcode::ret) continue;
          std::vector<uint32_t> released;  // nearest the ret first
          for (size_t k = blk.instrs.size() - 1; k-- > 0;) {
            const auto& in = blk.instrs[k];
            if (in.symbol != "cup.free_meta") break;
            if (std::find(stack_caps.begin(), stack_caps.end(), in.operands[0].reg) != stack_caps.end())
              released.push_back(in.operands[0].reg);
          }
          CHECK(released == stack_caps);
        }
      }
    }
  }
}
