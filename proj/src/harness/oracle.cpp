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

// Shadow interpreter that knows, for every pointer value, which allocation it
// was derived from. It never looks at capability metadata.

#include <map>
#include <random>
#include <unordered_map>

#include "cup/harness.hpp"
#include "cup/memory.hpp"

namespace cup::harness {

namespace {

using ir::Instr;
using ir::Opcode;
using vm::ExecutionResult;
using vm::GuestMemory;
using vm::HeapAllocator;

constexpr size_t kMaxFrames = 100'000;
constexpr uint8_t kPoison = 0xdd;
constexpr uint64_t kStackLimit = 64ULL << 20;
constexpr size_t kOutputLimit = 1 << 20;

enum class Prov : uint8_t { none, direct, laundered };

struct Value {
  uint64_t v = 0;
  uint32_t obj = 0;
  Prov prov = Prov::none;
};

struct Object {
  uint64_t base = 0;
  uint64_t size = 0;
  bool live = true;
  ObjectRegion region = ObjectRegion::heap;
  ObjectKey key;
};

struct FaultStop {
  vm::HardwareFault fault;
};
struct ErrorStop {
  std::string message;
};

bool is_comparison(ir::BinOp op) { return op >= ir::BinOp::eq; }

class Shadow {
 public:
  Shadow(const ir::Module& m, const OracleConfig& c) : m_(m), cfg_(c), heap_(mem_), rng_(c.seed) {
    objects_.emplace_back();  // index 0: no object
  }

  OracleTrace run(const std::vector<int64_t>& args) {
    OracleTrace t;
    auto& r = t.result;
    try {
      prepare();
      for (const auto& ctor : m_.constructors) invoke(index_of(ctor), {});
      const auto main = fn_index_.find("main");
      if (main == fn_index_.end()) throw ErrorStop{"module has no main"};
      const auto& mf = m_.functions[main->second];
      if (args.size() > mf.params.size())
        throw ErrorStop{"main takes " + std::to_string(mf.params.size()) + " arguments"};
      std::vector<Value> a(mf.params.size());
      for (size_t i = 0; i < args.size(); ++i) a[i].v = static_cast<uint64_t>(args[i]);
      r.exit_code = static_cast<int64_t>(invoke(main->second, std::move(a)).v);
      r.kind = ExecutionResult::Kind::exit;
    } catch (const FaultStop& f) {
      r.kind = ExecutionResult::Kind::hardware_fault;
      r.fault = f.fault;
    } catch (const ErrorStop& e) {
      r.kind = ExecutionResult::Kind::vm_error;
      r.error = e.message;
    }
    r.output = std::move(out_);
    r.steps = steps_;
    t.violations = std::move(violations_);
    t.unknown_provenance = unknown_;
    t.accesses = accesses_;
    return t;
  }

 private:
  struct Frame {
    uint32_t fn = 0;
    std::vector<Value> regs;
    uint32_t block = 0;
    uint32_t ip = 0;
    uint64_t saved_sp = 0;
    std::vector<Value> varargs;
    std::optional<uint32_t> ret_dst;
    std::vector<uint32_t> objects;
  };

  uint32_t index_of(const std::string& name) const {
    auto it = fn_index_.find(name);
    if (it == fn_index_.end()) throw ErrorStop{"call to undefined function " + name};
    return it->second;
  }

  void prepare() {
    for (uint32_t k = 0; k < m_.functions.size(); ++k) fn_index_[m_.functions[k].name] = k;
    blocks_.resize(m_.functions.size());
    for (uint32_t k = 0; k < m_.functions.size(); ++k)
      for (uint32_t b = 0; b < m_.functions[k].blocks.size(); ++b)
        blocks_[k][m_.functions[k].blocks[b].name] = b;
    uint64_t at = vm::kGlobalBase;
    for (const auto& g : m_.globals) {
      if (g.is_extern) throw ErrorStop{"extern global '" + g.name + "' is not defined"};
      const uint64_t size = g.size_bytes();
      mem_.map(at, size);
      if (!g.init.empty()) mem_.write(at, g.init.data(), g.init.size());
      globals_[g.name] = new_object(at, size, ObjectRegion::global, {"@" + g.name, 0, 0});
      at = (at + size + 15) / 16 * 16;
    }
  }

  vm::Site site() const {
    const Frame& fr = frames_.back();
    return {m_.functions[fr.fn].name, current_ ? current_->loc.instr_index : 0,
            current_ ? current_->loc.line : 0};
  }

  void step(uint64_t n = 1) {
    steps_ += n;
    if (steps_ > cfg_.step_limit) throw ErrorStop{"step limit exceeded"};
  }

  [[noreturn]] void fault(uint64_t addr, bool non_canonical) {
    throw FaultStop{{site(), addr, non_canonical}};
  }

  uint32_t new_object(uint64_t base, uint64_t size, ObjectRegion region, ObjectKey key) {
    objects_.push_back({base, size, true, region, std::move(key)});
    return static_cast<uint32_t>(objects_.size() - 1);
  }

  ObjectKey key_here() {
    const auto s = site();
    const uint64_t n = ++occurrences_[{s.function, s.instr_index}];
    return {s.function, s.instr_index, n};
  }

  // --- provenance checks ----------------------------------------------------

  // Returns false (and records a violation) when `p` may not touch `size`
  // bytes.
  bool permitted(const Value& p, uint64_t size) {
    ++accesses_;
    if (p.obj == 0 || p.prov == Prov::laundered) {
      ++unknown_;
      return true;
    }
    const Object& o = objects_[p.obj];
    const int64_t off = static_cast<int64_t>(p.v - o.base);
    ViolationKind kind;
    if (!o.live)
      kind = ViolationKind::temporal;
    else if (p.v < o.base)
      kind = ViolationKind::spatial_under;
    else if (static_cast<unsigned __int128>(p.v) + size > static_cast<unsigned __int128>(o.base) + o.size)
      kind = ViolationKind::spatial_over;
    else
      return true;
    record(kind, o, off, size);
    return false;
  }

  void record(ViolationKind kind, const Object& o, int64_t off, uint64_t size) {
    violations_.push_back({kind, site(), o.key, o.region, o.base, o.size, off, size});
  }

  // --- memory ----------------------------------------------------------------

  void clear_shadow(uint64_t addr, uint64_t n) {
    if (shadow_.empty()) return;
    auto it = shadow_.lower_bound(addr >= 7 ? addr - 7 : 0);
    while (it != shadow_.end() && it->first < addr + n) it = shadow_.erase(it);
  }

  uint64_t raw_load(uint64_t addr, uint32_t size) {
    if (!vm::canonical(addr)) fault(addr, true);
    uint8_t buf[8] = {};
    if (auto f = mem_.read(addr, buf, size)) fault(f->addr, f->non_canonical);
    uint64_t v = 0;
    for (uint32_t i = 0; i < size; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  void raw_store(uint64_t addr, uint32_t size, uint64_t v) {
    if (!vm::canonical(addr)) fault(addr, true);
    uint8_t buf[8];
    for (uint32_t i = 0; i < size; ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
    if (auto f = mem_.write(addr, buf, size)) fault(f->addr, f->non_canonical);
  }

  Value load(const Value& p, uint32_t size) {
    if (!permitted(p, size)) return {};
    Value out{raw_load(p.v, size)};
    if (size == 8) {
      auto it = shadow_.find(p.v);
      if (it != shadow_.end()) {
        out.obj = it->second.obj;
        out.prov = it->second.prov;
      }
    }
    return out;
  }

  void store(const Value& p, uint32_t size, const Value& v) {
    if (!permitted(p, size)) return;
    raw_store(p.v, size, v.v);
    clear_shadow(p.v, size);
    if (size == 8 && v.obj != 0) shadow_[p.v] = v;
  }

  // Byte `i` of the range starting at `p`, or nullopt if the access is
  // suppressed. Only the first suppressed byte of a call is recorded.
  std::optional<uint64_t> byte_at(const Value& p, uint64_t i, bool& reported) {
    const Value q{p.v + i, p.obj, p.prov};
    const size_t before = violations_.size();
    const uint64_t accesses = accesses_;
    const bool ok = permitted(q, 1);
    if (i != 0) accesses_ = accesses;
    if (!ok) {
      if (reported) violations_.resize(before);
      reported = true;
      return std::nullopt;
    }
    const uint64_t a = q.v;
    if (!vm::canonical(a)) fault(a, true);
    if (!mem_.mapped(a)) fault(a, false);
    return a;
  }

  // --- execution ---------------------------------------------------------------

  Value val(const Frame& fr, const ir::Operand& o) const {
    return o.is_reg() ? fr.regs[o.reg] : Value{static_cast<uint64_t>(o.imm)};
  }

  void push_frame(uint32_t fn, std::vector<Value> args, std::optional<uint32_t> ret_dst) {
    if (frames_.size() >= kMaxFrames) throw ErrorStop{"call depth exceeded"};
    const auto& f = m_.functions[fn];
    Frame fr;
    fr.fn = fn;
    fr.regs.assign(f.reg_names.size(), {});
    const size_t np = f.params.size();
    if (args.size() < np || (!f.is_variadic && args.size() != np))
      throw ErrorStop{"wrong number of arguments to " + f.name};
    for (size_t i = 0; i < np; ++i) fr.regs[i] = args[i];
    fr.varargs.assign(args.begin() + static_cast<long>(np), args.end());
    fr.saved_sp = sp_;
    fr.ret_dst = ret_dst;
    frames_.push_back(std::move(fr));
    current_ = nullptr;
  }

  uint32_t target(const Frame& fr, const std::string& label) const {
    const auto& map = blocks_[fr.fn];
    auto it = map.find(label);
    if (it == map.end()) throw ErrorStop{"jump to undefined block " + label};
    return it->second;
  }

  Value invoke(uint32_t fn, std::vector<Value> args) {
    const size_t depth = frames_.size();
    push_frame(fn, std::move(args), std::nullopt);
    Value result;
    while (frames_.size() > depth) {
      Frame& fr = frames_.back();
      const auto& f = m_.functions[fr.fn];
      const auto& block = f.blocks[fr.block];
      if (fr.ip >= block.instrs.size()) throw ErrorStop{"fell off the end of a block"};
      const Instr& in = block.instrs[fr.ip++];
      current_ = &in;
      step();
      switch (in.op) {
        case Opcode::stack_alloc: {
          const uint64_t size = static_cast<uint64_t>(in.size) * in.length;
          const uint64_t nsp = (sp_ - size) & ~15ULL;
          if (size > kStackLimit || vm::kStackTop - nsp > kStackLimit)
            throw ErrorStop{"stack overflow"};
          sp_ = nsp;
          mem_.map(sp_, size);
          const uint32_t id = new_object(sp_, size, ObjectRegion::stack, key_here());
          fr.objects.push_back(id);
          fr.regs[*in.dst] = {sp_, id, Prov::direct};
          break;
        }
        case Opcode::heap_alloc: {
          const uint64_t n = val(fr, in.operands[0]).v;
          const uint64_t p = heap_.malloc(n);
          fr.regs[*in.dst] = p ? Value{p, new_object(p, n, ObjectRegion::heap, key_here()), Prov::direct}
                               : Value{};
          break;
        }
        case Opcode::heap_free:
          heap_free(val(fr, in.operands[0]));
          break;
        case Opcode::heap_realloc:
          fr.regs[*in.dst] = heap_realloc(val(fr, in.operands[0]), val(fr, in.operands[1]).v);
          break;
        case Opcode::load:
          fr.regs[*in.dst] = load(val(fr, in.operands[0]), in.size);
          break;
        case Opcode::store:
          store(val(fr, in.operands[0]), in.size, val(fr, in.operands[1]));
          break;
        case Opcode::ptr_add: {
          const Value a = val(fr, in.operands[0]), d = val(fr, in.operands[1]);
          Value r{a.v + d.v, a.obj, a.prov};
          if (a.obj == 0 && d.obj != 0) r = {r.v, d.obj, Prov::laundered};
          fr.regs[*in.dst] = r;
          break;
        }
        case Opcode::ptr_to_int:
        case Opcode::int_to_ptr:
        case Opcode::copy:
          fr.regs[*in.dst] = val(fr, in.operands[0]);
          break;
        case Opcode::binop: {
          const Value a = val(fr, in.operands[0]), b = val(fr, in.operands[1]);
          Value r;
          try {
            r.v = ir::eval_binop(in.binop, a.v, b.v);
          } catch (const std::domain_error&) {
            throw ErrorStop{"division by zero"};
          }
          if (!is_comparison(in.binop) && (a.obj || b.obj)) {
            r.obj = a.obj ? a.obj : b.obj;
            r.prov = Prov::laundered;
          }
          fr.regs[*in.dst] = r;
          break;
        }
        case Opcode::global_addr: {
          const uint32_t id = globals_.at(in.symbol);
          fr.regs[*in.dst] = {objects_[id].base, id, Prov::direct};
          break;
        }
        case Opcode::call: {
          std::vector<Value> a;
          a.reserve(in.operands.size());
          for (const auto& o : in.operands) a.push_back(val(fr, o));
          push_frame(index_of(in.symbol), std::move(a), in.dst);
          break;
        }
        case Opcode::intrinsic: {
          const Value v = intrinsic(fr, in);
          if (in.dst) fr.regs[*in.dst] = v;
          break;
        }
        case Opcode::br:
          fr.block = target(fr, in.targets[0]);
          fr.ip = 0;
          break;
        case Opcode::cond_br:
          fr.block = target(fr, in.targets[val(fr, in.operands[0]).v != 0 ? 0 : 1]);
          fr.ip = 0;
          break;
        case Opcode::ret: {
          const Value v = in.operands.empty() ? Value{} : val(fr, in.operands[0]);
          for (auto it = fr.objects.rbegin(); it != fr.objects.rend(); ++it) {
            Object& o = objects_[*it];
            mem_.fill(o.base, kPoison, o.size);
            o.live = false;
          }
          sp_ = fr.saved_sp;
          const auto dst = fr.ret_dst;
          frames_.pop_back();
          if (frames_.size() == depth)
            result = v;
          else if (dst)
            frames_.back().regs[*dst] = v;
          current_ = nullptr;
          break;
        }
      }
    }
    return result;
  }

  // A pointer handed to free/realloc must be the live start of its object.
  bool releasable(const Value& p) {
    if (p.obj == 0 || p.prov == Prov::laundered) {
      ++unknown_;
      return true;
    }
    const Object& o = objects_[p.obj];
    const int64_t off = static_cast<int64_t>(p.v - o.base);
    if (!o.live)
      record(ViolationKind::temporal, o, off, 1);
    else if (p.v < o.base)
      record(ViolationKind::spatial_under, o, off, 1);
    else if (p.v != o.base)
      record(ViolationKind::spatial_over, o, off, 1);
    else
      return true;
    return false;
  }

  void check_header(uint64_t p) {
    if (!vm::canonical(p)) fault(p, true);
    if (!mem_.mapped(p - HeapAllocator::kHeaderSize)) fault(p - HeapAllocator::kHeaderSize, false);
  }

  void heap_free(const Value& p) {
    if (p.v == 0) return;
    if (!releasable(p)) return;
    check_header(p.v);
    if (!heap_.free(p.v)) throw ErrorStop{"invalid free of 0x" + hex(p.v)};
    if (p.obj) objects_[p.obj].live = false;
  }

  Value heap_realloc(const Value& p, uint64_t n) {
    if (p.v != 0 && !releasable(p)) {
      const uint64_t q = heap_.malloc(n);
      return q ? Value{q, new_object(q, n, ObjectRegion::heap, key_here()), Prov::direct} : Value{};
    }
    if (p.v != 0) check_header(p.v);
    const uint64_t old_size = p.v && p.obj ? objects_[p.obj].size : 0;
    auto r = heap_.realloc(p.v, n);
    if (!r.ok && p.v != 0 && !heap_.live(p.v)) throw ErrorStop{"invalid realloc of 0x" + hex(p.v)};
    if (!r.ok) return {};
    if (p.v != 0 && p.obj) objects_[p.obj].live = false;
    if (r.moved && p.v != 0) {
      const uint64_t keep = std::min(old_size, n);
      std::vector<std::pair<uint64_t, Value>> moved;
      for (auto it = shadow_.lower_bound(p.v); it != shadow_.end() && it->first + 8 <= p.v + keep; ++it)
        moved.emplace_back(r.addr + (it->first - p.v), it->second);
      clear_shadow(r.addr, n);
      for (const auto& [a, v] : moved) shadow_[a] = v;
    }
    return {r.addr, new_object(r.addr, n, ObjectRegion::heap, key_here()), Prov::direct};
  }

  static std::string hex(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(v));
    return buf;
  }

  Value intrinsic(Frame& fr, const Instr& in) {
    auto arg = [&](size_t i) { return val(fr, in.operands.at(i)); };
    const std::string& s = in.symbol;
    if (s == "memcpy") {
      const Value d = arg(0), src = arg(1);
      const uint64_t n = arg(2).v;
      step(n);
      bool rs = false, rd = false;
      std::vector<std::pair<uint64_t, Value>> ptrs;
      for (uint64_t i = 0; i < n; ++i) {
        const auto sa = byte_at(src, i, rs);
        const uint8_t b = sa ? mem_.byte(*sa) : 0;
        if (sa && i + 8 <= n) {
          auto it = shadow_.find(*sa);
          if (it != shadow_.end()) ptrs.emplace_back(i, it->second);
        }
        if (const auto da = byte_at(d, i, rd)) {
          mem_.set_byte(*da, b);
          clear_shadow(*da, 1);
        }
      }
      for (const auto& [i, v] : ptrs) shadow_[d.v + i] = v;
      return {};
    }
    if (s == "memset") {
      const Value d = arg(0);
      const auto c = static_cast<uint8_t>(arg(1).v);
      const uint64_t n = arg(2).v;
      step(n);
      bool rd = false;
      for (uint64_t i = 0; i < n; ++i)
        if (const auto da = byte_at(d, i, rd)) {
          mem_.set_byte(*da, c);
          clear_shadow(*da, 1);
        }
      return {};
    }
    if (s == "strcpy") {
      const Value d = arg(0), src = arg(1);
      bool rs = false, rd = false;
      for (uint64_t i = 0;; ++i) {
        step();
        const auto sa = byte_at(src, i, rs);
        const uint8_t b = sa ? mem_.byte(*sa) : 0;
        if (const auto da = byte_at(d, i, rd)) {
          mem_.set_byte(*da, b);
          clear_shadow(*da, 1);
        }
        if (b == 0) break;
      }
      return {};
    }
    if (s == "strlen") {
      const Value src = arg(0);
      bool rs = false;
      for (uint64_t i = 0;; ++i) {
        step();
        const auto sa = byte_at(src, i, rs);
        if (!sa || mem_.byte(*sa) == 0) return {i};
      }
    }
    if (s == "print") {
      const Value p = arg(0);
      const uint64_t n = arg(1).v;
      step(n);
      bool rp = false;
      for (uint64_t i = 0; i < n; ++i) {
        const auto a = byte_at(p, i, rp);
        if (a && out_.size() < kOutputLimit) out_.push_back(static_cast<char>(mem_.byte(*a)));
      }
      return {};
    }
    if (s == "print_int") {
      if (out_.size() < kOutputLimit) out_ += std::to_string(static_cast<int64_t>(arg(0).v)) + "\n";
      return {};
    }
    if (s == "rand") return {rng_() >> 33};
    if (s == "va_arg") {
      const uint64_t i = arg(0).v;
      if (i >= fr.varargs.size()) throw ErrorStop{"va_arg index out of range"};
      return fr.varargs[i];
    }
    throw ErrorStop{"the oracle does not execute @" + s};
  }

  const ir::Module& m_;
  OracleConfig cfg_;
  GuestMemory mem_;
  HeapAllocator heap_;
  std::mt19937_64 rng_;

  std::unordered_map<std::string, uint32_t> fn_index_;
  std::vector<std::unordered_map<std::string, uint32_t>> blocks_;
  std::unordered_map<std::string, uint32_t> globals_;
  std::vector<Object> objects_;
  std::map<uint64_t, Value> shadow_;
  std::map<std::pair<std::string, uint32_t>, uint64_t> occurrences_;
  std::vector<Frame> frames_;
  const Instr* current_ = nullptr;
  uint64_t sp_ = vm::kStackTop;
  uint64_t steps_ = 0;

  std::vector<Violation> violations_;
  uint64_t unknown_ = 0;
  uint64_t accesses_ = 0;
  std::string out_;
};

}  // namespace

std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::spatial_over: return "spatial_over";
    case ViolationKind::spatial_under: return "spatial_under";
    case ViolationKind::temporal: return "temporal";
  }
  return "?";
}

std::string_view to_string(ObjectRegion r) {
  switch (r) {
    case ObjectRegion::stack: return "stack";
    case ObjectRegion::heap: return "heap";
    case ObjectRegion::global: return "global";
  }
  return "?";
}

OracleTrace oracle_run(const ir::Module& m, const std::vector<int64_t>& args,
                       const OracleConfig& config) {
  return Shadow(m, config).run(args);
}

}  // namespace cup::harness
