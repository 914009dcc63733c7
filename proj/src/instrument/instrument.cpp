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

#include "cup/instrument.hpp"

#include <algorithm>
#include <map>

#include "cup/capability.hpp"
#include "json.hpp"

namespace cup::instrument {

using analysis::Classification;
using analysis::InstrRef;
using analysis::RootKind;
using ir::BinOp;
using ir::Instr;
using ir::Opcode;
using ir::Operand;

namespace {

constexpr int64_t kTable = static_cast<int64_t>(cap::layout::kTableBase);
constexpr int64_t kNext = static_cast<int64_t>(cap::layout::kNextEntryAddr);
constexpr int64_t kSink = static_cast<int64_t>(cap::layout::kSinkAddr);
constexpr int64_t kBit63 = static_cast<int64_t>(cap::kEnrichedBit);
constexpr int64_t kLow32 = static_cast<int64_t>(cap::kOffsetMask);
constexpr int64_t kHigh32 = static_cast<int64_t>(cap::kHighHalfMask);
constexpr int64_t kIdMask = 0x7fff'ffff;
constexpr int64_t kLow48 = static_cast<int64_t>(cap::kUserSpaceEnd - 1);

Operand imm(int64_t v) { return Operand::of_imm(v); }
Operand reg(uint32_t r) { return Operand::of_reg(r); }

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::intrinsic ? "intrinsic" : "expanded"; }

std::optional<Mode> mode_from_string(std::string_view s) {
  if (s == "intrinsic") return Mode::intrinsic;
  if (s == "expanded") return Mode::expanded;
  return std::nullopt;
}

std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::alloc_meta: return "alloc_meta";
    case Reason::dealloc_meta: return "dealloc_meta";
    case Reason::check: return "check";
    case Reason::local_bounds: return "local_bounds";
    case Reason::unenrich_for_intrinsic: return "unenrich_for_intrinsic";
    case Reason::global_ctor: return "global_ctor";
    case Reason::ptr_arith: return "ptr_arith";
    case Reason::global_use: return "global_use";
    case Reason::cast: return "cast";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Emitter

Emitter::Emitter(ir::Function& f, Mode mode) : f_(f), mode_(mode) {
  names_.insert(f.reg_names.begin(), f.reg_names.end());
}

uint32_t Emitter::fresh(std::string_view hint) {
  std::string base(hint);
  if (names_.insert(base).second) return f_.add_reg(base);
  uint32_t& n = counters_[base];
  for (;;) {
    std::string candidate = base + "." + std::to_string(++n);
    if (names_.insert(candidate).second) return f_.add_reg(std::move(candidate));
  }
}

Instr Emitter::make(Opcode op) const {
  Instr in;
  in.op = op;
  in.loc = loc_;
  return in;
}

Operand Emitter::bin(BinOp op, Operand a, Operand b, std::string_view hint,
                     std::optional<uint32_t> dst) {
  Instr in = make(Opcode::binop);
  in.binop = op;
  in.dst = dst ? *dst : fresh(hint);
  in.operands = {a, b};
  Operand r = reg(*in.dst);
  out_->push_back(std::move(in));
  return r;
}

Operand Emitter::load8(Operand addr, std::string_view hint) {
  Instr in = make(Opcode::load);
  in.size = 8;
  in.dst = fresh(hint);
  in.operands = {addr};
  Operand r = reg(*in.dst);
  out_->push_back(std::move(in));
  return r;
}

void Emitter::store8(Operand addr, Operand value) {
  Instr in = make(Opcode::store);
  in.size = 8;
  in.operands = {addr, value};
  out_->push_back(std::move(in));
}

Operand Emitter::intrinsic(std::string_view name, std::vector<Operand> args,
                           std::optional<uint32_t> dst, std::string_view hint) {
  Instr in = make(Opcode::intrinsic);
  in.symbol = std::string(name);
  in.operands = std::move(args);
  const auto* info = ir::find_intrinsic(name);
  if (info && info->has_result) in.dst = dst ? *dst : fresh(hint);
  std::optional<Operand> r;
  if (in.dst) r = reg(*in.dst);
  out_->push_back(std::move(in));
  return r.value_or(imm(0));
}

Operand Emitter::check(Operand w, uint32_t size, std::optional<uint32_t> dst) {
  if (mode_ == Mode::intrinsic) return intrinsic("cup.check", {w, imm(size)}, dst, "chk");
  Operand m = bin(BinOp::ashr, w, imm(63), "chk.mask");
  Operand hi = bin(BinOp::lshr, w, imm(32), "chk.hi");
  Operand idb = bin(BinOp::and_, hi, imm(kIdMask), "chk.idbits");
  Operand id = bin(BinOp::and_, idb, m, "chk.id");
  Operand eo = bin(BinOp::shl, id, imm(4), "chk.eoff");
  Operand ea = bin(BinOp::add, eo, imm(kTable), "chk.entry");
  Operand base = load8(ea, "chk.base");
  Operand ee = bin(BinOp::add, ea, imm(8), "chk.endp");
  Operand end = load8(ee, "chk.end");
  Operand lo = bin(BinOp::and_, w, imm(kLow32), "chk.lo");
  Operand lom = bin(BinOp::and_, lo, m, "chk.lom");
  Operand nm = bin(BinOp::xor_, m, imm(-1), "chk.nmask");
  Operand rawm = bin(BinOp::and_, w, nm, "chk.raw");
  Operand off = bin(BinOp::or_, lom, rawm, "chk.off");
  Operand addr = bin(BinOp::add, base, off, "chk.addr");
  Operand d1 = bin(BinOp::sub, addr, base, "chk.lo_d");
  Operand top = bin(BinOp::add, addr, imm(size), "chk.top");
  Operand d2 = bin(BinOp::sub, end, top, "chk.hi_d");
  Operand fail = bin(BinOp::or_, d1, d2, "chk.fail");
  Operand bit = bin(BinOp::and_, fail, imm(kBit63), "chk.bit");
  return bin(BinOp::or_, addr, bit, "chk", dst);
}

Operand Emitter::check_local(Operand p, Operand lb, Operand le, uint32_t size,
                             std::optional<uint32_t> dst) {
  if (mode_ == Mode::intrinsic)
    return intrinsic("cup.check_local", {p, lb, le, imm(size)}, dst, "lchk");
  Operand d1 = bin(BinOp::sub, p, lb, "lchk.lo_d");
  Operand top = bin(BinOp::add, p, imm(size), "lchk.top");
  Operand d2 = bin(BinOp::sub, le, top, "lchk.hi_d");
  Operand fail = bin(BinOp::or_, d1, d2, "lchk.fail");
  Operand bit = bin(BinOp::and_, fail, imm(kBit63), "lchk.bit");
  return bin(BinOp::or_, p, bit, "lchk", dst);
}

Operand Emitter::ptr_add(Operand w, Operand delta, std::optional<uint32_t> dst) {
  if (mode_ == Mode::intrinsic) return intrinsic("cup.ptradd", {w, delta}, dst, "padd");
  Operand m = bin(BinOp::ashr, w, imm(63), "padd.mask");
  Operand sum = bin(BinOp::add, w, delta, "padd.sum");
  Operand hi = bin(BinOp::and_, w, imm(kHigh32), "padd.hi");
  Operand lo = bin(BinOp::and_, sum, imm(kLow32), "padd.lo");
  Operand e = bin(BinOp::or_, hi, lo, "padd.enr");
  Operand em = bin(BinOp::and_, e, m, "padd.enrm");
  Operand nm = bin(BinOp::xor_, m, imm(-1), "padd.nmask");
  Operand sm = bin(BinOp::and_, sum, nm, "padd.rawm");
  return bin(BinOp::or_, em, sm, "padd", dst);
}

Operand Emitter::alloc_meta(Operand base, Operand end, std::optional<uint32_t> dst) {
  if (mode_ == Mode::intrinsic) return intrinsic("cup.alloc_meta", {base, end}, dst, "enr");
  Operand id = load8(imm(kNext), "meta.id");
  Operand eo = bin(BinOp::shl, id, imm(4), "meta.eoff");
  Operand ea = bin(BinOp::add, eo, imm(kTable), "meta.entry");
  Operand off = load8(ea, "meta.link");
  store8(ea, base);
  Operand ee = bin(BinOp::add, ea, imm(8), "meta.endp");
  store8(ee, end);
  Operand n1 = bin(BinOp::add, id, off, "meta.n1");
  Operand n2 = bin(BinOp::add, n1, imm(1), "meta.n2");
  Operand nx = bin(BinOp::and_, n2, imm(kLow32), "meta.next");
  store8(imm(kNext), nx);
  Operand tag = bin(BinOp::or_, id, imm(0x8000'0000), "meta.tag");
  return bin(BinOp::shl, tag, imm(32), "enr", dst);
}

void Emitter::free_meta(Operand w) {
  if (mode_ == Mode::intrinsic) {
    intrinsic("cup.free_meta", {w}, std::nullopt, "");
    return;
  }
  // Unenriched words redirect every write to the sink entry and leave
  // next_entry unchanged.
  Operand m = bin(BinOp::ashr, w, imm(63), "fm.mask");
  Operand hi = bin(BinOp::lshr, w, imm(32), "fm.hi");
  Operand idb = bin(BinOp::and_, hi, imm(kIdMask), "fm.idbits");
  Operand id = bin(BinOp::and_, idb, m, "fm.id");
  Operand eo = bin(BinOp::shl, id, imm(4), "fm.eoff");
  Operand ea = bin(BinOp::add, eo, imm(kTable), "fm.entry");
  Operand nm = bin(BinOp::xor_, m, imm(-1), "fm.nmask");
  Operand eam = bin(BinOp::and_, ea, m, "fm.entm");
  Operand snk = bin(BinOp::and_, imm(kSink), nm, "fm.sink");
  Operand tgt = bin(BinOp::or_, eam, snk, "fm.target");
  Operand nx = load8(imm(kNext), "fm.next");
  Operand l1 = bin(BinOp::sub, nx, id, "fm.l1");
  Operand link = bin(BinOp::sub, l1, imm(1), "fm.link");
  store8(tgt, link);
  Operand te = bin(BinOp::add, tgt, imm(8), "fm.endp");
  store8(te, imm(0));
  Operand keep = bin(BinOp::and_, nx, nm, "fm.keep");
  Operand nn = bin(BinOp::or_, id, keep, "fm.newnext");
  store8(imm(kNext), nn);
}

Operand Emitter::realloc_meta(Operand w, Operand new_base, Operand end,
                              std::optional<uint32_t> dst) {
  if (mode_ == Mode::intrinsic)
    return intrinsic("cup.realloc_meta", {w, new_base, end}, dst, "enr");
  // Enriched words keep their ID; others take a fresh entry from next_entry.
  // The old entry is invalidated first so the update reads as free + reuse.
  Operand m = bin(BinOp::ashr, w, imm(63), "rm.mask");
  Operand nm = bin(BinOp::xor_, m, imm(-1), "rm.nmask");
  Operand hi = bin(BinOp::lshr, w, imm(32), "rm.hi");
  Operand idb = bin(BinOp::and_, hi, imm(kIdMask), "rm.idbits");
  Operand old = bin(BinOp::and_, idb, m, "rm.old");
  Operand oo = bin(BinOp::shl, old, imm(4), "rm.ooff");
  Operand oa = bin(BinOp::add, oo, imm(kTable), "rm.oentry");
  Operand oam = bin(BinOp::and_, oa, m, "rm.oentm");
  Operand snk = bin(BinOp::and_, imm(kSink), nm, "rm.sink");
  Operand otgt = bin(BinOp::or_, oam, snk, "rm.otarget");
  Operand oend = bin(BinOp::add, otgt, imm(8), "rm.oendp");
  store8(oend, imm(0));
  Operand nx = load8(imm(kNext), "rm.next");
  Operand fresh_id = bin(BinOp::and_, nx, nm, "rm.fresh");
  Operand id = bin(BinOp::or_, old, fresh_id, "rm.id");
  Operand eo = bin(BinOp::shl, id, imm(4), "rm.eoff");
  Operand ea = bin(BinOp::add, eo, imm(kTable), "rm.entry");
  Operand off = load8(ea, "rm.link");
  store8(ea, new_base);
  Operand ee = bin(BinOp::add, ea, imm(8), "rm.endp");
  store8(ee, end);
  Operand n1 = bin(BinOp::add, nx, off, "rm.n1");
  Operand n2 = bin(BinOp::add, n1, imm(1), "rm.n2");
  Operand n3 = bin(BinOp::and_, n2, imm(kLow32), "rm.n3");
  Operand adv = bin(BinOp::and_, n3, nm, "rm.adv");
  Operand stay = bin(BinOp::and_, nx, m, "rm.stay");
  Operand nn = bin(BinOp::or_, adv, stay, "rm.newnext");
  store8(imm(kNext), nn);
  Operand tag = bin(BinOp::or_, id, imm(0x8000'0000), "rm.tag");
  return bin(BinOp::shl, tag, imm(32), "enr", dst);
}

// ---------------------------------------------------------------------------
// Module rewriting

namespace {

struct LocalBounds {
  uint32_t base;
  uint32_t end;
};

class Rewriter {
 public:
  Rewriter(const ir::Module& m, const analysis::Plan& plan, Mode mode)
      : in_(m), plan_(plan), mode_(mode) {}

  InstrumentedModule run() {
    if (!plan_.diagnostics.empty()) {
      std::string msg = "instrumentation refused:";
      for (const auto& d : plan_.diagnostics) msg += " " + d.message + ";";
      throw InstrumentError(msg);
    }
    if (plan_.functions.size() != in_.functions.size())
      throw InstrumentError("plan does not match module");
    out_.module = in_;
    auto& mod = out_.module;
    for (const auto& rw : plan_.rewrites) {
      companions_[rw.global] = rw.companion_pointer;
      ir::GlobalDef c;
      c.name = rw.companion_pointer;
      c.elem_size = 8;
      c.length = 1;
      mod.globals.push_back(std::move(c));
    }
    // The constructor goes first so function indices shift by one.
    uint32_t shift = plan_.rewrites.empty() ? 0 : 1;
    if (shift) {
      mod.functions.insert(mod.functions.begin(), ir::Function{});
      mod.constructors.insert(mod.constructors.begin(), std::string(analysis::kGlobalCtor));
      build_ctor(mod.functions[0]);
    }
    for (uint32_t k = 0; k < in_.functions.size(); ++k) {
      if (plan_.functions[k].name != in_.functions[k].name)
        throw InstrumentError("plan does not match module");
      rewrite_function(k + shift, in_.functions[k], plan_.functions[k]);
    }
    return std::move(out_);
  }

 private:
  uint32_t new_group(Reason r, uint32_t fn, ir::SourceLoc loc) {
    Group g;
    g.id = static_cast<uint32_t>(out_.groups.size());
    g.reason = r;
    g.function = fn;
    g.loc = loc;
    out_.groups.push_back(g);
    return g.id;
  }

  // Runs `emit` and records everything it appended to the current block.
  template <typename F>
  uint32_t tagged(Reason r, uint32_t fn, uint32_t block, std::vector<Instr>& out,
                  ir::SourceLoc loc, F&& emit) {
    uint32_t g = new_group(r, fn, loc);
    size_t before = out.size();
    emit(g);
    for (size_t i = before; i < out.size(); ++i)
      out_.provenance.push_back({fn, block, static_cast<uint32_t>(i), r, g});
    return g;
  }

  void build_ctor(ir::Function& f) {
    f.name = std::string(analysis::kGlobalCtor);
    f.returns = ir::ValueKind::void_;
    f.blocks.push_back({"entry", {}});
    auto& out = f.blocks[0].instrs;
    Emitter e(f, mode_);
    e.set_output(&out);
    uint32_t idx = 0;
    for (const auto& rw : plan_.rewrites) {
      const auto* g = in_.find_global(rw.global);
      e.set_loc({0, idx});
      tagged(Reason::global_ctor, 0, 0, out, {0, idx}, [&](uint32_t) {
        Instr ga;
        ga.op = Opcode::global_addr;
        ga.symbol = rw.global;
        ga.dst = e.fresh(rw.global + ".base");
        ga.loc = {0, idx};
        out.push_back(ga);
        Operand base = reg(*ga.dst);
        Operand end = e.bin(BinOp::add, base, imm(static_cast<int64_t>(g->size_bytes())),
                            rw.global + ".end");
        Operand w = e.alloc_meta(base, end);
        Instr ca;
        ca.op = Opcode::global_addr;
        ca.symbol = rw.companion_pointer;
        ca.dst = e.fresh(rw.companion_pointer);
        ca.loc = {0, idx};
        out.push_back(ca);
        e.store8(reg(*ca.dst), w);
      });
      ++idx;
    }
    Instr r;
    r.op = Opcode::ret;
    r.loc = {0, idx};
    out.push_back(r);
    out_.provenance.push_back({0, 0, static_cast<uint32_t>(out.size() - 1), Reason::global_ctor,
                               new_group(Reason::global_ctor, 0, {0, idx})});
  }

  bool needs_ptr_lowering(const analysis::FunctionPlan& fp, const analysis::Root& r) const {
    if (r.kind == RootKind::global_scalar) return false;
    if (r.kind == RootKind::stack_alloc) {
      auto c = fp.stack_class(r);
      return c && *c == Classification::metadata_checked;
    }
    return true;
  }

  void rewrite_function(uint32_t fn, const ir::Function& src, const analysis::FunctionPlan& fp) {
    ir::Function& f = out_.module.functions[fn];
    Emitter e(f, mode_);

    std::map<uint32_t, LocalBounds> local;       // alloc register -> bounds
    std::vector<uint32_t> meta_stack;            // enriched stack registers, in order
    for (const auto& a : fp.allocations)
      if (a.region == analysis::Region::stack && a.classification == Classification::metadata_checked)
        meta_stack.push_back(*a.reg);

    for (uint32_t b = 0; b < src.blocks.size(); ++b) {
      std::vector<Instr> out;
      e.set_output(&out);
      for (uint32_t i = 0; i < src.blocks[b].instrs.size(); ++i) {
        Instr in = src.blocks[b].instrs[i];
        const InstrRef here{b, i};
        e.set_loc(in.loc);
        auto tag = [&](Reason r, auto&& emit) { return tagged(r, fn, b, out, in.loc, emit); };

        switch (in.op) {
          case Opcode::stack_alloc: {
            const auto* a = fp.allocation_at(here);
            if (!a || a->classification == Classification::unprotected) {
              out.push_back(in);
              break;
            }
            const uint32_t dst = *in.dst;
            const auto size = static_cast<int64_t>(a->size_bytes);
            if (a->classification == Classification::local_checked) {
              out.push_back(in);
              uint32_t end = 0;
              tag(Reason::local_bounds, [&](uint32_t) {
                end = e.bin(BinOp::add, reg(dst), imm(size), f.reg_names[dst] + ".end").reg;
              });
              local[dst] = {dst, end};
              break;
            }
            in.dst = e.fresh(f.reg_names[dst] + ".raw");
            const uint32_t raw = *in.dst;
            out.push_back(in);
            tag(Reason::alloc_meta, [&](uint32_t) {
              Operand end = e.bin(BinOp::add, reg(raw), imm(size), f.reg_names[dst] + ".end");
              e.alloc_meta(reg(raw), end, dst);
            });
            break;
          }
          case Opcode::heap_alloc: {
            const uint32_t dst = *in.dst;
            const Operand n = in.operands[0];
            in.dst = e.fresh(f.reg_names[dst] + ".raw");
            const uint32_t raw = *in.dst;
            out.push_back(in);
            tag(Reason::alloc_meta, [&](uint32_t) {
              Operand end = heap_end(e, reg(raw), n, f.reg_names[dst]);
              e.alloc_meta(reg(raw), end, dst);
            });
            break;
          }
          case Opcode::heap_realloc: {
            const uint32_t dst = *in.dst;
            const Operand p = in.operands[0];
            const Operand n = in.operands[1];
            Operand u;
            tag(Reason::unenrich_for_intrinsic, [&](uint32_t g) {
              u = e.check(p, 1);
              out_.groups[g].input = p;
              out_.groups[g].result = u.reg;
            });
            in.operands[0] = u;
            in.dst = e.fresh(f.reg_names[dst] + ".raw");
            const uint32_t raw = *in.dst;
            out.push_back(in);
            tag(Reason::alloc_meta, [&](uint32_t) {
              Operand end = heap_end(e, reg(raw), n, f.reg_names[dst]);
              e.realloc_meta(p, reg(raw), end, dst);
            });
            break;
          }
          case Opcode::heap_free: {
            const Operand p = in.operands[0];
            Operand u;
            tag(Reason::unenrich_for_intrinsic, [&](uint32_t g) {
              u = e.check(p, 1);
              out_.groups[g].input = p;
              out_.groups[g].result = u.reg;
            });
            in.operands[0] = u;
            out.push_back(in);
            tag(Reason::dealloc_meta, [&](uint32_t) { e.free_meta(p); });
            break;
          }
          case Opcode::load:
          case Opcode::store: {
            const auto* d = fp.deref_at(here);
            if (!d) {
              out.push_back(in);
              break;
            }
            const Operand p = in.operands[0];
            Operand c;
            if (d->local) {
              const LocalBounds lb = local.at(root_reg(fp, d->root));
              tag(Reason::local_bounds, [&](uint32_t g) {
                c = e.check_local(p, reg(lb.base), reg(lb.end), in.size);
                set_check(g, p, c, in.size);
              });
            } else {
              tag(Reason::check, [&](uint32_t g) {
                c = e.check(p, in.size);
                set_check(g, p, c, in.size);
              });
            }
            in.operands[0] = c;
            out.push_back(in);
            break;
          }
          case Opcode::ptr_add: {
            if (!in.operands[0].is_reg() ||
                !needs_ptr_lowering(fp, fp.roots[in.operands[0].reg])) {
              out.push_back(in);
              break;
            }
            tag(Reason::ptr_arith, [&](uint32_t) { e.ptr_add(in.operands[0], in.operands[1], in.dst); });
            break;
          }
          case Opcode::int_to_ptr: {
            const Operand x = in.operands[0];
            if (x.is_reg() && fp.from_ptr_to_int[x.reg]) {
              out.push_back(in);
              break;
            }
            tag(Reason::cast, [&](uint32_t) {
              in.operands[0] = e.bin(BinOp::and_, x, imm(kLow48), "cast.low48");
            });
            out.push_back(in);
            break;
          }
          case Opcode::global_addr: {
            auto it = companions_.find(in.symbol);
            if (it == companions_.end()) {
              out.push_back(in);
              break;
            }
            tag(Reason::global_use, [&](uint32_t) {
              Instr ca = in;
              ca.symbol = it->second;
              ca.dst = e.fresh(f.reg_names[*in.dst] + ".cup");
              out.push_back(ca);
              Instr ld;
              ld.op = Opcode::load;
              ld.size = 8;
              ld.dst = in.dst;
              ld.operands = {reg(*ca.dst)};
              ld.loc = in.loc;
              out.push_back(ld);
            });
            break;
          }
          case Opcode::intrinsic: {
            if (in.symbol == "print") {
              const Operand p = in.operands[0];
              const Operand n = in.operands[1];
              tag(Reason::unenrich_for_intrinsic, [&](uint32_t) {
                Operand u = e.check(p, 1);
                Operand z = e.bin(BinOp::eq, n, imm(0), "pr.empty");
                Operand n1 = e.bin(BinOp::add, n, z, "pr.len");
                Operand last = e.bin(BinOp::sub, n1, imm(1), "pr.lastoff");
                Operand q = e.ptr_add(p, last);
                Operand v = e.check(q, 1);
                Operand bit = e.bin(BinOp::and_, v, imm(kBit63), "pr.fail");
                in.operands[0] = e.bin(BinOp::or_, u, bit, "pr.ptr");
              });
            }
            out.push_back(in);
            break;
          }
          case Opcode::ret: {
            if (!meta_stack.empty()) {
              tag(Reason::dealloc_meta, [&](uint32_t) {
                for (auto it = meta_stack.rbegin(); it != meta_stack.rend(); ++it)
                  e.free_meta(reg(*it));
              });
            }
            out.push_back(in);
            break;
          }
          default:
            out.push_back(in);
            break;
        }
      }
      f.blocks[b].instrs = std::move(out);
    }
  }

  uint32_t root_reg(const analysis::FunctionPlan& fp, const analysis::Root& r) const {
    return *fp.allocation_at(*r.def)->reg;
  }

  void set_check(uint32_t g, Operand input, Operand result, uint32_t size) {
    out_.groups[g].input = input;
    out_.groups[g].result = result.reg;
    out_.groups[g].access_size = size;
  }

  // end = raw + n + (n == 0): zero-byte objects still get a one-byte entry.
  static Operand heap_end(Emitter& e, Operand raw, Operand n, std::string name) {
    Operand z = e.bin(BinOp::eq, n, imm(0), name + ".empty");
    Operand t = e.bin(BinOp::add, raw, n, name + ".lim");
    return e.bin(BinOp::add, t, z, name + ".end");
  }

  const ir::Module& in_;
  const analysis::Plan& plan_;
  Mode mode_;
  InstrumentedModule out_;
  std::map<std::string, std::string> companions_;
};

}  // namespace

InstrumentedModule instrument_module(const ir::Module& m, const analysis::Plan& plan, Mode mode) {
  return Rewriter(m, plan, mode).run();
}

InstrumentedModule instrument_module(const ir::Module& m, Mode mode) {
  return instrument_module(m, analysis::analyze(m), mode);
}

ir::Module remove_group(const InstrumentedModule& im, uint32_t group) {
  if (group >= im.groups.size()) throw InstrumentError("no such instrumentation group");
  const Group& g = im.groups[group];
  if ((g.reason != Reason::check && g.reason != Reason::local_bounds) || !g.result)
    throw InstrumentError("group " + std::to_string(group) + " is not a removable check");
  ir::Module m = im.module;
  ir::Function& f = m.functions[g.function];
  std::map<uint32_t, std::vector<uint32_t>> doomed;  // block -> indices
  for (const auto& p : im.provenance)
    if (p.group == group) doomed[p.block].push_back(p.index);
  for (auto& [b, idx] : doomed) {
    auto& instrs = f.blocks[b].instrs;
    std::sort(idx.begin(), idx.end());
    for (auto it = idx.rbegin(); it != idx.rend(); ++it)
      instrs.erase(instrs.begin() + *it);
  }
  for (auto& b : f.blocks)
    for (auto& in : b.instrs)
      for (auto& o : in.operands)
        if (o.is_reg() && o.reg == *g.result) o = g.input;
  return m;
}

std::string provenance_json(const InstrumentedModule& im, int indent) {
  using nlohmann::json;
  const auto& fns = im.module.functions;
  json inserted = json::array();
  for (const auto& p : im.provenance)
    inserted.push_back({{"function", fns[p.function].name},
                        {"block", fns[p.function].blocks[p.block].name},
                        {"index", p.index},
                        {"reason", to_string(p.reason)},
                        {"group", p.group}});
  json groups = json::array();
  for (const auto& g : im.groups) {
    json j{{"id", g.id},
           {"reason", to_string(g.reason)},
           {"function", fns[g.function].name},
           {"line", g.loc.line},
           {"instr_index", g.loc.instr_index}};
    if (g.result) {
      const auto& names = fns[g.function].reg_names;
      j["result"] = names[*g.result];
      j["input"] = g.input.is_reg() ? json(names[g.input.reg]) : json(g.input.imm);
    }
    if (g.access_size) j["access_size"] = g.access_size;
    groups.push_back(j);
  }
  return json{{"inserted", inserted}, {"groups", groups}}.dump(indent);
}

}  // namespace cup::instrument
