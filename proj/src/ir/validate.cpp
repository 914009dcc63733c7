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

#include <set>
#include <unordered_map>
#include <unordered_set>

#include "cup/text.hpp"

namespace cup::ir {

namespace {

bool valid_access_size(uint64_t s) { return s == 1 || s == 2 || s == 4 || s == 8; }

// Iterative dominator sets over blocks; dom[b] has bit d set iff d dominates b.
std::vector<std::vector<bool>> dominators(const Function& f) {
  const size_t n = f.blocks.size();
  std::vector<std::vector<size_t>> preds(n);
  for (size_t b = 0; b < n; ++b) {
    if (f.blocks[b].instrs.empty()) continue;
    for (const auto& t : f.blocks[b].instrs.back().targets)
      if (auto idx = f.find_block(t)) preds[*idx].push_back(b);
  }
  std::vector<std::vector<bool>> dom(n, std::vector<bool>(n, true));
  if (n == 0) return dom;
  dom[0].assign(n, false);
  dom[0][0] = true;
  for (bool changed = true; changed;) {
    changed = false;
    for (size_t b = 1; b < n; ++b) {
      std::vector<bool> next(n, true);
      if (preds[b].empty()) continue;  // unreachable: leave as "everything"
      for (size_t p : preds[b])
        for (size_t i = 0; i < n; ++i) next[i] = next[i] && dom[p][i];
      next[b] = true;
      if (next != dom[b]) {
        dom[b] = std::move(next);
        changed = true;
      }
    }
  }
  return dom;
}

class Validator {
 public:
  explicit Validator(const Module& m) : m_(m) {}

  std::vector<Diagnostic> run() {
    module_level();
    for (const auto& f : m_.functions) function(f);
    return std::move(out_);
  }

 private:
  void report(uint32_t line, const std::string& fn, std::string msg) {
    out_.push_back({line, 0, fn, std::move(msg)});
  }

  void module_level() {
    std::set<std::string> names;
    size_t mains = 0;
    for (const auto& f : m_.functions) {
      if (!names.insert(f.name).second)
        report(0, f.name, "duplicate function name '" + f.name + "'");
      if (f.name == "main") ++mains;
    }
    if (mains == 0) report(0, "", "module has no 'main' function");
    if (const Function* main = m_.find_function("main")) {
      for (const auto& p : main->params)
        if (p.kind != ValueKind::i64) report(0, "main", "main parameters must be i64");
    }
    for (const auto& c : m_.constructors) {
      const Function* f = m_.find_function(c);
      if (!f)
        report(0, "", "constructor '" + c + "' is not a defined function");
      else if (!f->params.empty() || f->is_variadic)
        report(0, c, "constructor '" + c + "' must take no parameters");
    }
    std::set<std::string> gnames;
    for (const auto& g : m_.globals) {
      if (!gnames.insert(g.name).second) report(0, "", "duplicate global name '" + g.name + "'");
      if (!valid_access_size(g.elem_size))
        report(0, "", "global '" + g.name + "' has element size " +
                          std::to_string(g.elem_size) + " (must be 1, 2, 4 or 8)");
      if (g.length < 1) report(0, "", "global '" + g.name + "' has length 0");
      if (!g.is_array && g.length != 1)
        report(0, "", "scalar global '" + g.name + "' must have length 1");
      if (!g.init.empty() && g.init.size() != g.size_bytes())
        report(0, "", "global '" + g.name + "' initializer size mismatch");
      if (g.size_bytes() > 0xffffffffULL)
        report(0, "", "global '" + g.name + "' exceeds 4 GiB");
    }
  }

  void function(const Function& f) {
    const std::string& fn = f.name;
    if (f.blocks.empty()) {
      report(0, fn, "function has no blocks");
      return;
    }
    if (f.params.size() > f.reg_names.size()) {
      report(0, fn, "parameter registers missing");
      return;
    }
    std::set<std::string> labels;
    for (const auto& b : f.blocks)
      if (!labels.insert(b.name).second) report(0, fn, "duplicate block label '" + b.name + "'");

    // Definition sites. Parameters are defined before the entry block.
    struct Def {
      long block;
      size_t index;
    };
    std::unordered_map<uint32_t, Def> defs;
    for (uint32_t p = 0; p < f.params.size(); ++p) defs[p] = {-1, 0};
    std::unordered_set<uint32_t> scalar_slots;

    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const auto& block = f.blocks[b];
      if (block.instrs.empty()) {
        report(0, fn, "block '" + block.name + "' is empty");
        continue;
      }
      for (size_t i = 0; i < block.instrs.size(); ++i) {
        const Instr& in = block.instrs[i];
        bool last = i + 1 == block.instrs.size();
        if (in.is_terminator() && !last)
          report(in.loc.line, fn, "terminator in the middle of block '" + block.name + "'");
        if (last && !in.is_terminator())
          report(in.loc.line, fn, "block '" + block.name + "' does not end with a terminator");
        if (in.dst) {
          if (*in.dst >= f.reg_names.size()) {
            report(in.loc.line, fn, "destination register out of range");
          } else if (!defs.emplace(*in.dst, Def{static_cast<long>(b), i}).second) {
            report(in.loc.line, fn,
                   "register '" + f.reg_names[*in.dst] + "' is assigned more than once");
          }
        }
        if (in.op == Opcode::stack_alloc && in.dst && in.length == 1 && !in.address_taken)
          scalar_slots.insert(*in.dst);
        instr(f, b, in);
      }
    }

    auto dom = dominators(f);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const auto& block = f.blocks[b];
      for (size_t i = 0; i < block.instrs.size(); ++i) {
        const Instr& in = block.instrs[i];
        for (size_t k = 0; k < in.operands.size(); ++k) {
          const Operand& o = in.operands[k];
          if (!o.is_reg()) continue;
          if (o.reg >= f.reg_names.size()) {
            report(in.loc.line, fn, "operand register out of range");
            continue;
          }
          auto it = defs.find(o.reg);
          const std::string& name = f.reg_names[o.reg];
          if (it == defs.end()) {
            report(in.loc.line, fn, "register '" + name + "' is used but never defined");
            continue;
          }
          const Def& d = it->second;
          if (d.block >= 0) {
            bool ok = static_cast<size_t>(d.block) == b ? d.index < i
                                                        : dom[b][static_cast<size_t>(d.block)];
            if (!ok)
              report(in.loc.line, fn,
                     "register '" + name + "' is used before its definition dominates the use");
          }
          // Non-address-taken scalar slots are only accessed at fixed
          // offsets: as the address of a full-width load or store.
          if (scalar_slots.count(o.reg)) {
            bool direct = (in.op == Opcode::load || in.op == Opcode::store) && k == 0;
            if (!direct) {
              report(in.loc.line, fn,
                     "scalar slot '" + name +
                         "' escapes a fixed-offset access; mark it addr_taken");
            }
          }
        }
        if ((in.op == Opcode::load || in.op == Opcode::store) && in.operands[0].is_reg() &&
            scalar_slots.count(in.operands[0].reg)) {
          const Instr* alloc = find_def(f, in.operands[0].reg);
          if (alloc && alloc->size != in.size)
            report(in.loc.line, fn,
                   "access of " + std::to_string(in.size) + " bytes to a " +
                       std::to_string(alloc->size) + "-byte scalar slot");
        }
      }
    }
  }

  static const Instr* find_def(const Function& f, uint32_t reg) {
    for (const auto& b : f.blocks)
      for (const auto& in : b.instrs)
        if (in.dst == reg) return &in;
    return nullptr;
  }

  void arity(const Function& f, const Instr& in, size_t n) {
    if (in.operands.size() != n)
      report(in.loc.line, f.name, "wrong operand count for instruction");
  }

  void instr(const Function& f, size_t block, const Instr& in) {
    const std::string& fn = f.name;
    switch (in.op) {
      case Opcode::stack_alloc:
        if (block != 0) report(in.loc.line, fn, "stack_alloc outside the entry block");
        if (!valid_access_size(in.size))
          report(in.loc.line, fn, "stack_alloc element size " + std::to_string(in.size) +
                                      " (must be 1, 2, 4 or 8)");
        if (in.length < 1) report(in.loc.line, fn, "stack_alloc of zero elements");
        if (in.length > 0 && in.size * in.length > 0xffffffffULL)
          report(in.loc.line, fn, "stack_alloc exceeds 4 GiB");
        arity(f, in, 0);
        break;
      case Opcode::heap_alloc:
      case Opcode::heap_free:
      case Opcode::ptr_to_int:
      case Opcode::int_to_ptr:
      case Opcode::copy:
        arity(f, in, 1);
        break;
      case Opcode::load:
        arity(f, in, 1);
        if (!valid_access_size(in.size))
          report(in.loc.line, fn,
                 "load size " + std::to_string(in.size) + " (must be 1, 2, 4 or 8)");
        break;
      case Opcode::store:
        arity(f, in, 2);
        if (!valid_access_size(in.size))
          report(in.loc.line, fn,
                 "store size " + std::to_string(in.size) + " (must be 1, 2, 4 or 8)");
        break;
      case Opcode::heap_realloc:
      case Opcode::ptr_add:
      case Opcode::binop:
        arity(f, in, 2);
        break;
      case Opcode::call: {
        const Function* callee = m_.find_function(in.symbol);
        if (!callee) {
          report(in.loc.line, fn, "call to undefined function '" + in.symbol + "'");
          break;
        }
        size_t np = callee->params.size();
        if (in.operands.size() < np || (!callee->is_variadic && in.operands.size() != np))
          report(in.loc.line, fn, "call to '" + in.symbol + "' with " +
                                      std::to_string(in.operands.size()) + " arguments, expected " +
                                      std::to_string(np));
        if (in.dst && callee->returns == ValueKind::void_)
          report(in.loc.line, fn, "'" + in.symbol + "' returns void");
        break;
      }
      case Opcode::intrinsic: {
        const IntrinsicInfo* info = find_intrinsic(in.symbol);
        if (!info) {
          report(in.loc.line, fn, "unknown intrinsic '@" + in.symbol + "'");
          break;
        }
        if (in.operands.size() != info->arity)
          report(in.loc.line, fn, "@" + in.symbol + " takes " + std::to_string(info->arity) +
                                      " arguments");
        if (in.dst && !info->has_result)
          report(in.loc.line, fn, "@" + in.symbol + " does not produce a value");
        for (size_t k = 0; k < in.operands.size(); ++k)
          if ((info->imm_args >> k & 1) && !in.operands[k].is_imm())
            report(in.loc.line, fn, "@" + in.symbol + " argument " + std::to_string(k + 1) +
                                        " must be an integer literal");
        if (in.symbol == "va_arg" && !f.is_variadic)
          report(in.loc.line, fn, "@va_arg in a non-variadic function");
        if ((in.symbol == "cup.check" || in.symbol == "cup.check_local") &&
            in.operands.size() == info->arity && in.operands.back().is_imm() &&
            !valid_access_size(static_cast<uint64_t>(in.operands.back().imm)))
          report(in.loc.line, fn, "check size must be 1, 2, 4 or 8");
        break;
      }
      case Opcode::br:
      case Opcode::cond_br:
        arity(f, in, in.op == Opcode::br ? 0 : 1);
        if (in.targets.size() != (in.op == Opcode::br ? 1u : 2u))
          report(in.loc.line, fn, "wrong number of branch targets");
        for (const auto& t : in.targets)
          if (!f.find_block(t)) report(in.loc.line, fn, "jump to undefined block '" + t + "'");
        break;
      case Opcode::ret:
        if (in.operands.size() > 1) report(in.loc.line, fn, "ret takes at most one operand");
        if (!in.operands.empty() && f.returns == ValueKind::void_)
          report(in.loc.line, fn, "void function returns a value");
        break;
      case Opcode::global_addr:
        arity(f, in, 0);
        if (!m_.find_global(in.symbol))
          report(in.loc.line, fn, "reference to undefined global '" + in.symbol + "'");
        break;
    }
  }

  const Module& m_;
  std::vector<Diagnostic> out_;
};

}  // namespace

std::vector<Diagnostic> validate(const Module& m) { return Validator(m).run(); }

}  // namespace cup::ir
