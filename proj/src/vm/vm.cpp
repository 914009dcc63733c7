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

#include "cup/vm.hpp"

#include <random>
#include <sstream>
#include <unordered_map>

#include "cup/memory.hpp"
#include "json.hpp"

namespace cup::vm {

namespace {

namespace L = cap::layout;
using ir::Instr;
using ir::Opcode;

constexpr size_t kMaxFrames = 100'000;
constexpr uint8_t kPoison = 0xdd;

struct FaultStop {
  HardwareFault fault;
};
struct ErrorStop {
  std::string message;
};

std::string hex(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

struct PreparedFn {
  const ir::Function* f = nullptr;
  // Per block, per instruction: resolved branch targets and callee index.
  std::vector<std::vector<std::array<uint32_t, 2>>> targets;
  std::vector<std::vector<int32_t>> callee;
};

class Machine {
 public:
  Machine(const ir::Module& m, const Config& c)
      : m_(m), cfg_(c), table_(c.table_capacity), heap_(mem_), rng_(c.seed) {}

  ExecutionResult run(const std::vector<int64_t>& args) {
    ExecutionResult r;
    try {
      prepare();
      for (const auto& ctor : m_.constructors) invoke(fn_index_.at(ctor), {});
      const auto main = fn_index_.find("main");
      if (main == fn_index_.end()) throw ErrorStop{"module has no main"};
      const auto& mf = m_.functions[main->second];
      if (args.size() > mf.params.size())
        throw ErrorStop{"main takes " + std::to_string(mf.params.size()) + " arguments"};
      std::vector<uint64_t> a(mf.params.size(), 0);
      for (size_t i = 0; i < args.size(); ++i) a[i] = static_cast<uint64_t>(args[i]);
      r.exit_code = static_cast<int64_t>(invoke(main->second, std::move(a)));
      r.kind = ExecutionResult::Kind::exit;
    } catch (const FaultStop& f) {
      r.kind = ExecutionResult::Kind::hardware_fault;
      r.fault = f.fault;
    } catch (const ErrorStop& e) {
      r.kind = ExecutionResult::Kind::vm_error;
      r.error = e.message;
    }
    r.output = std::move(out_);
    r.trace = std::move(trace_);
    r.trace_truncated = truncated_;
    r.steps = steps_;
    r.next_entry = table_.next_entry();
    r.live_capabilities = table_.live_count();
    return r;
  }

 private:
  struct Frame {
    uint32_t fn = 0;
    std::vector<uint64_t> regs;
    uint32_t block = 0;
    uint32_t ip = 0;
    uint64_t saved_sp = 0;
    std::vector<uint64_t> varargs;
    std::optional<uint32_t> ret_dst;
    std::vector<std::pair<uint64_t, uint64_t>> allocs;
  };

  void prepare() {
    for (uint32_t k = 0; k < m_.functions.size(); ++k) fn_index_[m_.functions[k].name] = k;
    prepared_.resize(m_.functions.size());
    for (uint32_t k = 0; k < m_.functions.size(); ++k) {
      const auto& f = m_.functions[k];
      auto& p = prepared_[k];
      p.f = &f;
      std::unordered_map<std::string, uint32_t> blocks;
      for (uint32_t b = 0; b < f.blocks.size(); ++b) blocks[f.blocks[b].name] = b;
      p.targets.resize(f.blocks.size());
      p.callee.resize(f.blocks.size());
      for (uint32_t b = 0; b < f.blocks.size(); ++b) {
        for (const auto& in : f.blocks[b].instrs) {
          std::array<uint32_t, 2> t{0, 0};
          for (size_t j = 0; j < in.targets.size() && j < 2; ++j) {
            auto it = blocks.find(in.targets[j]);
            if (it == blocks.end()) throw ErrorStop{"jump to undefined block " + in.targets[j]};
            t[j] = it->second;
          }
          p.targets[b].push_back(t);
          int32_t callee = -1;
          if (in.op == Opcode::call) {
            auto it = fn_index_.find(in.symbol);
            if (it == fn_index_.end()) throw ErrorStop{"call to undefined function " + in.symbol};
            callee = static_cast<int32_t>(it->second);
          }
          p.callee[b].push_back(callee);
        }
      }
    }
    uint64_t at = kGlobalBase;
    for (const auto& g : m_.globals) {
      if (g.is_extern) throw ErrorStop{"extern global '" + g.name + "' is not defined"};
      const uint64_t size = g.size_bytes();
      mem_.map(at, size);
      if (!g.init.empty()) mem_.write(at, g.init.data(), g.init.size());
      globals_[g.name] = at;
      at = (at + size + 15) / 16 * 16;
    }
  }

  // --- tracing -----------------------------------------------------------

  Site site() const {
    const Frame& fr = frames_.back();
    const auto& f = m_.functions[fr.fn];
    const Instr* in = current_;
    return {f.name, in ? in->loc.instr_index : 0, in ? in->loc.line : 0};
  }

  void emit(EventKind k, uint64_t id = 0, uint64_t a = 0, uint64_t b = 0) {
    if (!cfg_.trace) return;
    if (trace_.size() >= cfg_.trace_limit) {
      truncated_ = true;
      return;
    }
    trace_.push_back({k, site(), id, a, b});
  }

  [[noreturn]] void fault(uint64_t addr, bool non_canonical) {
    throw FaultStop{{site(), addr, non_canonical}};
  }

  void step(uint64_t n = 1) {
    steps_ += n;
    if (steps_ > cfg_.step_limit) throw ErrorStop{"step limit exceeded"};
  }

  // --- memory ------------------------------------------------------------

  static bool in_window(uint64_t a) { return a >= L::kWindowBegin && a < L::kWindowEnd; }

  cap::MetadataEntry& entry_for_write(uint64_t id) {
    if (id >= table_.capacity()) throw ErrorStop{"capability table exhausted"};
    return table_.mutable_entry(id);
  }

  uint64_t window_read(uint64_t a, uint32_t size) {
    if (size != 8 || a % 8) throw ErrorStop{"misaligned metadata table access at " + hex(a)};
    if (a < L::kTableBase) {
      if (a == L::kNextEntryAddr) return table_.next_entry();
      return scratch_[(a - L::kWindowBegin) / 8];
    }
    const uint64_t id = (a - L::kTableBase) / L::kEntrySize;
    if (id >= table_.capacity()) throw ErrorStop{"capability table exhausted"};
    const auto& e = table_.entry(id);
    if ((a - L::kTableBase) % L::kEntrySize == 0) return e.base;
    emit(EventKind::meta_lookup, id);
    return e.end;
  }

  void window_write(uint64_t a, uint32_t size, uint64_t v) {
    if (size != 8 || a % 8) throw ErrorStop{"misaligned metadata table access at " + hex(a)};
    if (a < L::kTableBase) {
      if (a == L::kNextEntryAddr)
        table_.set_next_entry(static_cast<uint32_t>(v));
      else
        scratch_[(a - L::kWindowBegin) / 8] = v;
      return;
    }
    const uint64_t id = (a - L::kTableBase) / L::kEntrySize;
    auto& e = entry_for_write(id);
    if ((a - L::kTableBase) % L::kEntrySize == 0) {
      e.base = v;
      return;
    }
    e.end = v;
    if (v != 0)
      emit(EventKind::meta_alloc, id, e.base, v);
    else
      emit(EventKind::meta_free, id);
  }

  uint64_t load(uint64_t addr, uint32_t size) {
    if (!canonical(addr)) fault(addr, true);
    if (in_window(addr)) return window_read(addr, size);
    uint8_t buf[8] = {};
    if (auto f = mem_.read(addr, buf, size)) fault(f->addr, f->non_canonical);
    uint64_t v = 0;
    for (uint32_t i = 0; i < size; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  void store(uint64_t addr, uint32_t size, uint64_t v) {
    if (!canonical(addr)) fault(addr, true);
    if (in_window(addr)) return window_write(addr, size, v);
    uint8_t buf[8];
    for (uint32_t i = 0; i < size; ++i) buf[i] = static_cast<uint8_t>(v >> (8 * i));
    if (auto f = mem_.write(addr, buf, size)) fault(f->addr, f->non_canonical);
  }

  // --- capability runtime --------------------------------------------------

  uint64_t lookup(uint64_t w, uint32_t size, bool traced) {
    const auto d = cap::decode({w});
    if (d.effective_id >= table_.capacity()) throw ErrorStop{"capability table exhausted"};
    if (traced) emit(EventKind::meta_lookup, d.effective_id, d.enriched ? d.offset : w);
    return table_.check({w}, size);
  }

  // Address of byte i of the object `w` refers to, checked like a one-byte
  // dereference.
  uint64_t byte_addr(uint64_t w, uint64_t i) {
    const uint64_t a = lookup(cap::ptr_add({w}, static_cast<int64_t>(i)).raw, 1, i == 0);
    if (!canonical(a)) fault(a, true);
    if (in_window(a) || !mem_.mapped(a)) fault(a, false);
    return a;
  }

  uint64_t alloc_meta(uint64_t base, uint64_t end) {
    if (!(base < end)) throw ErrorStop{"capability needs base < end"};
    try {
      auto a = table_.allocate(base, end);
      emit(EventKind::meta_alloc, a.id, base, end);
      return a.word.raw;
    } catch (const cap::CapabilityExhausted&) {
      throw ErrorStop{"capability table exhausted"};
    }
  }

  // --- execution -----------------------------------------------------------

  uint64_t val(const Frame& fr, const ir::Operand& o) const {
    return o.is_reg() ? fr.regs[o.reg] : static_cast<uint64_t>(o.imm);
  }

  void push_frame(uint32_t fn, std::vector<uint64_t> args, std::optional<uint32_t> ret_dst) {
    if (frames_.size() >= kMaxFrames) throw ErrorStop{"call depth exceeded"};
    const auto& f = m_.functions[fn];
    Frame fr;
    fr.fn = fn;
    fr.regs.assign(f.reg_names.size(), 0);
    const size_t np = f.params.size();
    if (args.size() < np || (!f.is_variadic && args.size() != np))
      throw ErrorStop{"wrong number of arguments to " + f.name};
    for (size_t i = 0; i < np; ++i) fr.regs[i] = args[i];
    fr.varargs.assign(args.begin() + static_cast<long>(np), args.end());
    fr.saved_sp = sp_;
    fr.ret_dst = ret_dst;
    frames_.push_back(std::move(fr));
    current_ = nullptr;
    emit(EventKind::call_enter, 0, table_.next_entry());
  }

  // Runs `fn` to completion and returns its result.
  uint64_t invoke(uint32_t fn, std::vector<uint64_t> args) {
    const size_t base = frames_.size();
    push_frame(fn, std::move(args), std::nullopt);
    uint64_t result = 0;
    while (frames_.size() > base) {
      Frame& fr = frames_.back();
      const auto& pf = prepared_[fr.fn];
      const auto& block = pf.f->blocks[fr.block];
      if (fr.ip >= block.instrs.size()) throw ErrorStop{"fell off the end of a block"};
      const uint32_t ip = fr.ip++;
      const Instr& in = block.instrs[ip];
      current_ = &in;
      step();
      switch (in.op) {
        case Opcode::stack_alloc: {
          const uint64_t size = static_cast<uint64_t>(in.size) * in.length;
          const uint64_t nsp = (sp_ - size) & ~15ULL;
          if (size > cfg_.stack_limit || kStackTop - nsp > cfg_.stack_limit)
            throw ErrorStop{"stack overflow"};
          sp_ = nsp;
          mem_.map(sp_, size);
          fr.allocs.emplace_back(sp_, size);
          fr.regs[*in.dst] = sp_;
          emit(EventKind::stack_alloc, 0, sp_, size);
          break;
        }
        case Opcode::heap_alloc: {
          const uint64_t n = val(fr, in.operands[0]);
          const uint64_t p = heap_.malloc(n);
          fr.regs[*in.dst] = p;
          if (p) emit(EventKind::heap_alloc, 0, p, n);
          break;
        }
        case Opcode::heap_free: {
          const uint64_t p = val(fr, in.operands[0]);
          if (p == 0) break;
          if (!canonical(p)) fault(p, true);
          if (!mem_.mapped(p - HeapAllocator::kHeaderSize)) fault(p - HeapAllocator::kHeaderSize, false);
          if (!heap_.free(p)) throw ErrorStop{"invalid free of " + hex(p)};
          emit(EventKind::heap_free, 0, p);
          break;
        }
        case Opcode::heap_realloc: {
          const uint64_t p = val(fr, in.operands[0]);
          const uint64_t n = val(fr, in.operands[1]);
          if (p != 0) {
            if (!canonical(p)) fault(p, true);
            if (!mem_.mapped(p - HeapAllocator::kHeaderSize))
              fault(p - HeapAllocator::kHeaderSize, false);
          }
          auto r = heap_.realloc(p, n);
          if (!r.ok && p != 0 && !heap_.live(p)) throw ErrorStop{"invalid realloc of " + hex(p)};
          if (r.ok && r.moved && p != 0) emit(EventKind::heap_free, 0, p);
          if (r.ok) emit(EventKind::heap_alloc, 0, r.addr, n);
          fr.regs[*in.dst] = r.ok ? r.addr : 0;
          break;
        }
        case Opcode::load:
          fr.regs[*in.dst] = load(val(fr, in.operands[0]), in.size);
          break;
        case Opcode::store:
          store(val(fr, in.operands[0]), in.size, val(fr, in.operands[1]));
          break;
        case Opcode::ptr_add:
          fr.regs[*in.dst] = val(fr, in.operands[0]) + val(fr, in.operands[1]);
          break;
        case Opcode::ptr_to_int:
        case Opcode::int_to_ptr:
        case Opcode::copy:
          fr.regs[*in.dst] = val(fr, in.operands[0]);
          break;
        case Opcode::binop:
          try {
            fr.regs[*in.dst] =
                ir::eval_binop(in.binop, val(fr, in.operands[0]), val(fr, in.operands[1]));
          } catch (const std::domain_error&) {
            throw ErrorStop{"division by zero"};
          }
          break;
        case Opcode::global_addr:
          fr.regs[*in.dst] = globals_.at(in.symbol);
          break;
        case Opcode::call: {
          std::vector<uint64_t> args;
          args.reserve(in.operands.size());
          for (const auto& o : in.operands) args.push_back(val(fr, o));
          push_frame(static_cast<uint32_t>(pf.callee[fr.block][ip]), std::move(args), in.dst);
          break;
        }
        case Opcode::intrinsic: {
          const uint64_t v = intrinsic(fr, in);
          if (in.dst) fr.regs[*in.dst] = v;
          break;
        }
        case Opcode::br:
          fr.block = pf.targets[fr.block][ip][0];
          fr.ip = 0;
          break;
        case Opcode::cond_br:
          fr.block = pf.targets[fr.block][ip][val(fr, in.operands[0]) != 0 ? 0 : 1];
          fr.ip = 0;
          break;
        case Opcode::ret: {
          const uint64_t v = in.operands.empty() ? 0 : val(fr, in.operands[0]);
          emit(EventKind::call_exit, 0, table_.next_entry());
          for (auto it = fr.allocs.rbegin(); it != fr.allocs.rend(); ++it) {
            mem_.fill(it->first, kPoison, it->second);
            emit(EventKind::stack_free, 0, it->first, it->second);
          }
          sp_ = fr.saved_sp;
          const auto dst = fr.ret_dst;
          frames_.pop_back();
          if (frames_.size() == base) {
            result = v;
          } else if (dst) {
            frames_.back().regs[*dst] = v;
          }
          current_ = nullptr;
          break;
        }
      }
    }
    return result;
  }

  uint64_t intrinsic(Frame& fr, const Instr& in) {
    auto arg = [&](size_t i) { return val(fr, in.operands.at(i)); };
    const std::string& s = in.symbol;
    if (s == "cup.check") return lookup(arg(0), static_cast<uint32_t>(arg(1)), true);
    if (s == "cup.check_local") {
      const uint64_t p = arg(0);
      const uint64_t bit = cap::check_bounds(arg(1), arg(2), p, arg(3));
      emit(EventKind::local_check, 0, p, bit);
      return p | bit;
    }
    if (s == "cup.ptradd") return cap::ptr_add({arg(0)}, static_cast<int64_t>(arg(1))).raw;
    if (s == "cup.alloc_meta") return alloc_meta(arg(0), arg(1));
    if (s == "cup.free_meta") {
      const cap::EnrichedWord w{arg(0)};
      if (!w.enriched()) return 0;
      const uint32_t id = w.id_bits();
      if (id >= table_.capacity()) throw ErrorStop{"capability table exhausted"};
      if (!table_.is_live(id)) throw ErrorStop{"release of capability " + std::to_string(id) + " that is not live"};
      table_.release(id);
      emit(EventKind::meta_free, id);
      return 0;
    }
    if (s == "cup.realloc_meta") {
      const cap::EnrichedWord w{arg(0)};
      const uint64_t base = arg(1), end = arg(2);
      if (!(base < end)) throw ErrorStop{"capability needs base < end"};
      if (!w.enriched()) return alloc_meta(base, end);
      const uint32_t id = w.id_bits();
      auto& e = entry_for_write(id);
      e.end = 0;
      emit(EventKind::meta_free, id);
      e = {base, end};
      emit(EventKind::meta_alloc, id, base, end);
      return cap::encode(id, 0).raw;
    }
    if (s == "memcpy") {
      const uint64_t d = arg(0), src = arg(1), n = arg(2);
      step(n);
      for (uint64_t i = 0; i < n; ++i) {
        const uint8_t b = mem_.byte(byte_addr(src, i));
        mem_.set_byte(byte_addr(d, i), b);
      }
      return 0;
    }
    if (s == "memset") {
      const uint64_t d = arg(0), n = arg(2);
      const auto c = static_cast<uint8_t>(arg(1));
      step(n);
      for (uint64_t i = 0; i < n; ++i) mem_.set_byte(byte_addr(d, i), c);
      return 0;
    }
    if (s == "strcpy") {
      const uint64_t d = arg(0), src = arg(1);
      for (uint64_t i = 0;; ++i) {
        step();
        const uint8_t b = mem_.byte(byte_addr(src, i));
        mem_.set_byte(byte_addr(d, i), b);
        if (b == 0) break;
      }
      return 0;
    }
    if (s == "strlen") {
      const uint64_t src = arg(0);
      for (uint64_t i = 0;; ++i) {
        step();
        if (mem_.byte(byte_addr(src, i)) == 0) return i;
      }
    }
    if (s == "print") {
      const uint64_t p = arg(0), n = arg(1);
      step(n);
      for (uint64_t i = 0; i < n; ++i) {
        const uint64_t a = p + i;
        if (!canonical(a)) fault(a, true);
        if (in_window(a) || !mem_.mapped(a)) fault(a, false);
        if (out_.size() < cfg_.output_limit) out_.push_back(static_cast<char>(mem_.byte(a)));
      }
      return 0;
    }
    if (s == "print_int") {
      if (out_.size() < cfg_.output_limit) out_ += std::to_string(static_cast<int64_t>(arg(0))) + "\n";
      return 0;
    }
    if (s == "rand") return rng_() >> 33;
    if (s == "va_arg") {
      const uint64_t i = arg(0);
      if (i >= fr.varargs.size()) throw ErrorStop{"va_arg index out of range"};
      return fr.varargs[i];
    }
    throw ErrorStop{"unknown intrinsic @" + s};
  }

  const ir::Module& m_;
  Config cfg_;
  GuestMemory mem_;
  cap::MetadataTable table_;
  HeapAllocator heap_;
  std::mt19937_64 rng_;
  std::array<uint64_t, 8> scratch_{};

  std::unordered_map<std::string, uint32_t> fn_index_;
  std::vector<PreparedFn> prepared_;
  std::unordered_map<std::string, uint64_t> globals_;
  std::vector<Frame> frames_;
  const Instr* current_ = nullptr;
  uint64_t sp_ = kStackTop;
  uint64_t steps_ = 0;

  std::string out_;
  std::vector<Event> trace_;
  bool truncated_ = false;
};

}  // namespace

std::string Site::str() const {
  return function + "#" + std::to_string(instr_index) + " (line " + std::to_string(line) + ")";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::call_enter: return "call_enter";
    case EventKind::call_exit: return "call_exit";
    case EventKind::meta_alloc: return "meta_alloc";
    case EventKind::meta_free: return "meta_free";
    case EventKind::meta_lookup: return "meta_lookup";
    case EventKind::local_check: return "local_check";
    case EventKind::stack_alloc: return "stack_alloc";
    case EventKind::stack_free: return "stack_free";
    case EventKind::heap_alloc: return "heap_alloc";
    case EventKind::heap_free: return "heap_free";
  }
  return "?";
}

bool ExecutionResult::equivalent(const ExecutionResult& o) const {
  if (kind != o.kind || output != o.output) return false;
  switch (kind) {
    case Kind::exit: return exit_code == o.exit_code;
    case Kind::hardware_fault: return fault->site.same_place(o.fault->site);
    case Kind::vm_error: return error == o.error;
  }
  return false;
}

std::string ExecutionResult::describe() const {
  switch (kind) {
    case Kind::exit: return "exit(" + std::to_string(exit_code) + ")";
    case Kind::hardware_fault:
      return "hardware_fault at " + fault->site.str() + " addr " + hex(fault->addr) +
             (fault->non_canonical ? " (non-canonical)" : " (unmapped)");
    case Kind::vm_error: return "vm_error: " + error;
  }
  return "?";
}

std::string ExecutionResult::outcome_json() const {
  using nlohmann::json;
  json j;
  switch (kind) {
    case Kind::exit:
      j = {{"outcome", "exit"}, {"code", exit_code}};
      break;
    case Kind::hardware_fault:
      j = {{"outcome", "hardware_fault"},
           {"function", fault->site.function},
           {"instr_index", fault->site.instr_index},
           {"line", fault->site.line},
           {"addr", hex(fault->addr)},
           {"reason", fault->non_canonical ? "non_canonical" : "unmapped"}};
      break;
    case Kind::vm_error:
      j = {{"outcome", "vm_error"}, {"message", error}};
      break;
  }
  return j.dump();
}

ExecutionResult run(const ir::Module& m, const std::vector<int64_t>& args, const Config& config) {
  return Machine(m, config).run(args);
}

std::string trace_json(const ExecutionResult& r, int indent) {
  using nlohmann::json;
  json events = json::array();
  for (const auto& e : r.trace) {
    json j{{"kind", to_string(e.kind)}, {"function", e.site.function},
           {"instr_index", e.site.instr_index}};
    switch (e.kind) {
      case EventKind::meta_alloc:
        j["id"] = e.id;
        j["base"] = hex(e.a);
        j["end"] = hex(e.b);
        break;
      case EventKind::meta_free: j["id"] = e.id; break;
      case EventKind::meta_lookup:
        j["id"] = e.id;
        j["offset"] = hex(e.a);
        break;
      case EventKind::call_enter:
      case EventKind::call_exit: j["next_entry"] = e.a; break;
      case EventKind::local_check:
        j["addr"] = hex(e.a);
        j["failed"] = e.b != 0;
        break;
      case EventKind::stack_alloc:
      case EventKind::stack_free:
      case EventKind::heap_alloc:
        j["addr"] = hex(e.a);
        j["size"] = e.b;
        break;
      case EventKind::heap_free: j["addr"] = hex(e.a); break;
    }
    events.push_back(std::move(j));
  }
  json out{{"result", json::parse(r.outcome_json())}, {"events", events},
           {"truncated", r.trace_truncated}, {"next_entry", r.next_entry},
           {"live_capabilities", r.live_capabilities}};
  return out.dump(indent);
}

}  // namespace cup::vm
