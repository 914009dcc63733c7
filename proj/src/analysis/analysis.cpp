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

#include "cup/analysis.hpp"

#include <algorithm>
#include <functional>
#include <unordered_map>

#include "json.hpp"

namespace cup::analysis {

using ir::Function;
using ir::Instr;
using ir::Module;
using ir::Opcode;

std::string_view to_string(Region r) {
  switch (r) {
    case Region::stack: return "stack";
    case Region::heap: return "heap";
    case Region::global: return "global";
  }
  return "?";
}

std::string_view to_string(Classification c) {
  switch (c) {
    case Classification::metadata_checked: return "metadata_checked";
    case Classification::local_checked: return "local_checked";
    case Classification::unprotected: return "unprotected";
  }
  return "?";
}

std::string_view to_string(EscapeReason r) {
  switch (r) {
    case EscapeReason::aliased: return "aliased";
    case EscapeReason::stored_through_param_pointer: return "stored_through_param_pointer";
    case EscapeReason::assigned_to_global: return "assigned_to_global";
    case EscapeReason::passed_to_callee: return "passed_to_callee";
    case EscapeReason::returned: return "returned";
  }
  return "?";
}

std::string_view to_string(RootKind k) {
  switch (k) {
    case RootKind::stack_alloc: return "stack_alloc";
    case RootKind::heap_alloc: return "heap_alloc";
    case RootKind::global_array: return "global_array";
    case RootKind::global_scalar: return "global_scalar";
    case RootKind::param: return "param";
    case RootKind::call_result: return "call_result";
    case RootKind::loaded_value: return "loaded_value";
    case RootKind::int_cast: return "int_cast";
    case RootKind::other: return "other";
  }
  return "?";
}

namespace {

const Instr& at(const Function& f, InstrRef r) { return f.blocks[r.block].instrs[r.index]; }

bool is_protected_stack(const Instr& in) { return in.length > 1 || in.address_taken; }

bool is_comparison(ir::BinOp op) { return op >= ir::BinOp::eq; }

// Definition site of every register; parameters have none.
std::vector<std::optional<InstrRef>> def_sites(const Function& f) {
  std::vector<std::optional<InstrRef>> defs(f.reg_names.size());
  for (uint32_t b = 0; b < f.blocks.size(); ++b)
    for (uint32_t i = 0; i < f.blocks[b].instrs.size(); ++i)
      if (auto d = f.blocks[b].instrs[i].dst) defs[*d] = InstrRef{b, i};
  return defs;
}

struct RootSolver {
  const Module& m;
  const Function& f;
  std::vector<std::optional<InstrRef>> defs;
  std::vector<std::optional<Root>> memo;
  // Pointer register whose ptrtoint result a register directly copies.
  std::vector<std::optional<uint32_t>> cast_source;
  std::vector<bool> cast_done;

  RootSolver(const Module& mod, const Function& fn)
      : m(mod), f(fn), defs(def_sites(fn)), memo(fn.reg_names.size()),
        cast_source(fn.reg_names.size()), cast_done(fn.reg_names.size()) {}

  std::optional<uint32_t> ptr_source(uint32_t reg) {
    if (cast_done[reg]) return cast_source[reg];
    cast_done[reg] = true;
    if (!defs[reg]) return std::nullopt;
    const Instr& in = at(f, *defs[reg]);
    if (in.op == Opcode::ptr_to_int && in.operands[0].is_reg())
      cast_source[reg] = in.operands[0].reg;
    else if (in.op == Opcode::copy && in.operands[0].is_reg())
      cast_source[reg] = ptr_source(in.operands[0].reg);
    return cast_source[reg];
  }

  Root root(uint32_t reg) {
    if (memo[reg]) return *memo[reg];
    Root r;
    if (reg < f.params.size()) {
      r.kind = RootKind::param;
      r.param = reg;
    } else if (defs[reg]) {
      const Instr& in = at(f, *defs[reg]);
      r.def = defs[reg];
      switch (in.op) {
        case Opcode::stack_alloc: r.kind = RootKind::stack_alloc; break;
        case Opcode::heap_alloc:
        case Opcode::heap_realloc: r.kind = RootKind::heap_alloc; break;
        case Opcode::global_addr: {
          const auto* g = m.find_global(in.symbol);
          r.kind = g && g->is_array ? RootKind::global_array : RootKind::global_scalar;
          r.global = in.symbol;
          break;
        }
        case Opcode::ptr_add:
        case Opcode::copy:
          if (in.operands[0].is_reg()) return memo[reg] = root(in.operands[0].reg), *memo[reg];
          r.kind = RootKind::other;
          break;
        case Opcode::int_to_ptr:
          if (in.operands[0].is_reg()) {
            if (auto src = ptr_source(in.operands[0].reg))
              return memo[reg] = root(*src), *memo[reg];
          }
          r.kind = RootKind::int_cast;
          break;
        case Opcode::call: r.kind = RootKind::call_result; break;
        case Opcode::load: r.kind = RootKind::loaded_value; break;
        default: r.kind = RootKind::other; break;
      }
    }
    memo[reg] = r;
    return r;
  }
};

bool same_alloc(const Root& r, InstrRef alloc) {
  return r.kind == RootKind::stack_alloc && r.def && *r.def == alloc;
}

// True if `reg` reaches its root through at least one mov.
bool via_copy(const Function& f, const std::vector<std::optional<InstrRef>>& defs, uint32_t reg) {
  while (defs[reg]) {
    const Instr& in = at(f, *defs[reg]);
    if (in.op == Opcode::copy) return true;
    if ((in.op == Opcode::ptr_add || in.op == Opcode::int_to_ptr || in.op == Opcode::ptr_to_int) &&
        in.operands[0].is_reg()) {
      reg = in.operands[0].reg;
      continue;
    }
    return false;
  }
  return false;
}

}  // namespace

std::vector<Root> compute_roots(const Module& m, const Function& f) {
  RootSolver s(m, f);
  std::vector<Root> out;
  out.reserve(f.reg_names.size());
  for (uint32_t r = 0; r < f.reg_names.size(); ++r) out.push_back(s.root(r));
  return out;
}

EscapeReport classify_escape(const Module& m, const Function& f, InstrRef alloc) {
  EscapeReport rep;
  rep.alloc = alloc;
  auto roots = compute_roots(m, f);
  auto defs = def_sites(f);
  std::vector<bool> derived(roots.size());
  for (size_t r = 0; r < roots.size(); ++r) derived[r] = same_alloc(roots[r], alloc);
  // Integers copied out of ptrtoint still carry the allocation's address.
  RootSolver casts(m, f);

  std::vector<EscapeReason> reasons;
  auto add = [&](EscapeReason why, uint32_t reg) {
    reasons.push_back(why);
    if (via_copy(f, defs, reg)) reasons.push_back(EscapeReason::aliased);
  };

  for (const auto& block : f.blocks) {
    for (const auto& in : block.instrs) {
      for (size_t k = 0; k < in.operands.size(); ++k) {
        const auto& o = in.operands[k];
        if (!o.is_reg()) continue;
        bool hit = derived[o.reg];
        if (!hit) {
          // Integer images of the pointer escape just like the pointer does.
          auto src = casts.ptr_source(o.reg);
          hit = src && derived[*src] && in.op != Opcode::int_to_ptr && in.op != Opcode::copy;
        }
        if (!hit) continue;
        switch (in.op) {
          case Opcode::load:
          case Opcode::cond_br:
          case Opcode::copy:
            break;
          case Opcode::store:
            if (k == 1) {
              Root dst = in.operands[0].is_reg() ? roots[in.operands[0].reg] : Root{};
              if (dst.kind == RootKind::param)
                add(EscapeReason::stored_through_param_pointer, o.reg);
              else if (dst.kind == RootKind::global_array || dst.kind == RootKind::global_scalar)
                add(EscapeReason::assigned_to_global, o.reg);
              else
                add(EscapeReason::aliased, o.reg);
            }
            break;
          case Opcode::ptr_add:
            if (k != 0) add(EscapeReason::aliased, o.reg);
            break;
          case Opcode::binop:
            if (!is_comparison(in.binop)) add(EscapeReason::aliased, o.reg);
            break;
          case Opcode::call:
          case Opcode::intrinsic:
          case Opcode::heap_free:
          case Opcode::heap_realloc:
            add(EscapeReason::passed_to_callee, o.reg);
            break;
          case Opcode::ret:
            add(EscapeReason::returned, o.reg);
            break;
          case Opcode::int_to_ptr:
            if (derived[o.reg]) add(EscapeReason::aliased, o.reg);
            break;
          default:  // ptrtoint and anything unexpected
            add(EscapeReason::aliased, o.reg);
            break;
        }
      }
    }
  }
  std::sort(reasons.begin(), reasons.end());
  reasons.erase(std::unique(reasons.begin(), reasons.end()), reasons.end());
  rep.reasons = std::move(reasons);
  rep.escapes = !rep.reasons.empty();
  return rep;
}

std::vector<DerefSite> collect_dereferences(const Module& m, const Function& f,
                                            const std::vector<Root>& roots,
                                            const std::vector<InstrRef>& local_allocs) {
  (void)m;
  std::vector<DerefSite> out;
  for (uint32_t b = 0; b < f.blocks.size(); ++b) {
    for (uint32_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
      const Instr& in = f.blocks[b].instrs[i];
      if (in.op != Opcode::load && in.op != Opcode::store) continue;
      Root r = in.operands[0].is_reg() ? roots[in.operands[0].reg] : Root{};
      if (r.kind == RootKind::global_scalar) continue;
      if (r.kind == RootKind::stack_alloc && !is_protected_stack(at(f, *r.def))) continue;
      DerefSite d;
      d.instr = {b, i};
      d.access_size = in.size;
      d.local = r.kind == RootKind::stack_alloc &&
                std::find(local_allocs.begin(), local_allocs.end(), *r.def) != local_allocs.end();
      d.root = std::move(r);
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<GlobalRewrite> plan_global_rewrites(const Module& m,
                                                std::vector<ir::Diagnostic>* diags) {
  std::vector<GlobalRewrite> out;
  auto report = [&](std::string msg) {
    if (diags) diags->push_back({0, 0, "", std::move(msg)});
  };
  for (const auto& g : m.globals) {
    if (!g.is_array) continue;
    if (g.is_extern) {
      report("unsupported-extern-global: array '" + g.name +
             "' is defined outside the module and cannot be instrumented");
      continue;
    }
    std::string companion = g.name + std::string(kCompanionSuffix);
    if (m.find_global(companion))
      report("global '" + companion + "' collides with the companion pointer of '" + g.name + "'");
    out.push_back({g.name, companion, std::string(kGlobalCtor)});
  }
  if (!out.empty() && m.find_function(kGlobalCtor))
    report("function '" + std::string(kGlobalCtor) + "' is reserved for instrumentation");
  return out;
}

const ProtectedAlloc* FunctionPlan::allocation_at(InstrRef site) const {
  for (const auto& a : allocations)
    if (a.site == site) return &a;
  return nullptr;
}

const DerefSite* FunctionPlan::deref_at(InstrRef site) const {
  for (const auto& d : derefs)
    if (d.instr == site) return &d;
  return nullptr;
}

std::optional<Classification> FunctionPlan::stack_class(const Root& r) const {
  if (r.kind != RootKind::stack_alloc || !r.def) return std::nullopt;
  const auto* a = allocation_at(*r.def);
  if (!a) return std::nullopt;
  return a->classification;
}

const FunctionPlan* Plan::find(std::string_view function) const {
  for (const auto& f : functions)
    if (f.name == function) return &f;
  return nullptr;
}

namespace {

FunctionPlan plan_function(const Module& m, const Function& f) {
  FunctionPlan fp;
  fp.name = f.name;
  fp.roots = compute_roots(m, f);
  RootSolver casts(m, f);
  fp.from_ptr_to_int.resize(f.reg_names.size());
  for (uint32_t r = 0; r < f.reg_names.size(); ++r)
    fp.from_ptr_to_int[r] = casts.ptr_source(r).has_value();

  std::vector<InstrRef> local;
  for (uint32_t b = 0; b < f.blocks.size(); ++b) {
    for (uint32_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
      const Instr& in = f.blocks[b].instrs[i];
      ProtectedAlloc a;
      a.function = f.name;
      a.site = InstrRef{b, i};
      a.reg = in.dst;
      if (in.op == Opcode::stack_alloc) {
        a.region = Region::stack;
        a.size_bytes = static_cast<uint64_t>(in.size) * in.length;
        if (!is_protected_stack(in)) {
          a.classification = Classification::unprotected;
        } else {
          EscapeReport e = classify_escape(m, f, {b, i});
          a.classification =
              e.escapes ? Classification::metadata_checked : Classification::local_checked;
          if (!e.escapes) local.push_back({b, i});
          fp.escapes.push_back(std::move(e));
        }
      } else if (in.op == Opcode::heap_alloc || in.op == Opcode::heap_realloc) {
        a.region = Region::heap;
      } else {
        continue;
      }
      fp.allocations.push_back(std::move(a));
    }
  }
  fp.derefs = collect_dereferences(m, f, fp.roots, local);
  return fp;
}

}  // namespace

std::vector<ProtectedAlloc> find_protected_allocations(const Module& m) {
  std::vector<ProtectedAlloc> out;
  for (const auto& f : m.functions)
    for (auto& a : plan_function(m, f).allocations)
      if (a.classification != Classification::unprotected) out.push_back(std::move(a));
  for (const auto& g : m.globals) {
    if (!g.is_array || g.is_extern) continue;
    ProtectedAlloc a;
    a.global = g.name;
    a.region = Region::global;
    a.size_bytes = g.size_bytes();
    out.push_back(std::move(a));
  }
  return out;
}

Plan analyze(const Module& m) {
  Plan p;
  for (const auto& f : m.functions) p.functions.push_back(plan_function(m, f));
  for (const auto& g : m.globals) {
    if (!g.is_array || g.is_extern) continue;
    ProtectedAlloc a;
    a.global = g.name;
    a.region = Region::global;
    a.size_bytes = g.size_bytes();
    p.globals.push_back(std::move(a));
  }
  p.rewrites = plan_global_rewrites(m, &p.diagnostics);
  return p;
}

std::string to_json(const Module& m, const Plan& p, int indent) {
  using nlohmann::json;
  auto where = [&](const Function& f, InstrRef r) {
    const Instr& in = at(f, r);
    return json{{"block", f.blocks[r.block].name}, {"index", in.loc.instr_index},
                {"line", in.loc.line}};
  };
  json fns = json::array();
  for (size_t k = 0; k < p.functions.size(); ++k) {
    const auto& fp = p.functions[k];
    const Function& f = m.functions[k];
    json allocs = json::array();
    for (const auto& a : fp.allocations) {
      json j = where(f, *a.site);
      j["register"] = a.reg ? f.reg_names[*a.reg] : "";
      j["region"] = to_string(a.region);
      j["classification"] = to_string(a.classification);
      if (a.region == Region::stack) j["size"] = a.size_bytes;
      for (const auto& e : fp.escapes) {
        if (!(e.alloc == *a.site)) continue;
        j["escapes"] = e.escapes;
        json rs = json::array();
        for (auto r : e.reasons) rs.push_back(to_string(r));
        j["reasons"] = rs;
      }
      allocs.push_back(j);
    }
    json derefs = json::array();
    for (const auto& d : fp.derefs) {
      json j = where(f, d.instr);
      j["access_size"] = d.access_size;
      j["check"] = d.local ? "local" : "metadata";
      j["root"] = to_string(d.root.kind);
      if (d.root.kind == RootKind::param) j["root_param"] = f.params[d.root.param].name;
      if (!d.root.global.empty()) j["root_global"] = d.root.global;
      if (d.root.def) j["root_index"] = at(f, *d.root.def).loc.instr_index;
      derefs.push_back(j);
    }
    fns.push_back({{"name", fp.name}, {"allocations", allocs}, {"derefs", derefs}});
  }
  json globals = json::array();
  for (const auto& g : p.globals)
    globals.push_back({{"name", g.global}, {"size", g.size_bytes}, {"classification", "metadata_checked"}});
  json rewrites = json::array();
  for (const auto& r : p.rewrites)
    rewrites.push_back({{"global", r.global}, {"companion", r.companion_pointer},
                        {"constructor", r.constructor}});
  json diags = json::array();
  for (const auto& d : p.diagnostics) diags.push_back(d.message);
  json out{{"module", m.source_name}, {"functions", fns}, {"globals", globals},
           {"global_rewrites", rewrites}, {"diagnostics", diags}};
  return out.dump(indent);
}

}  // namespace cup::analysis
