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

// Analysis phase: which allocations need protection, which stack allocations
// escape their function, and which loads/stores must be checked.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cup/ir.hpp"

namespace cup::analysis {

enum class Region : uint8_t { stack, heap, global };
enum class Classification : uint8_t { metadata_checked, local_checked, unprotected };

enum class EscapeReason : uint8_t {
  aliased,
  stored_through_param_pointer,
  assigned_to_global,
  passed_to_callee,
  returned,
};

/// Where a pointer value ultimately comes from, following ptradd, mov and
/// matched ptrtoint/inttoptr pairs.
enum class RootKind : uint8_t {
  stack_alloc,
  heap_alloc,
  global_array,
  global_scalar,
  param,
  call_result,
  loaded_value,
  int_cast,  // inttoptr without a matching ptrtoint
  other,
};

std::string_view to_string(Region r);
std::string_view to_string(Classification c);
std::string_view to_string(EscapeReason r);
std::string_view to_string(RootKind k);

struct InstrRef {
  uint32_t block = 0;
  uint32_t index = 0;
  friend bool operator==(const InstrRef&, const InstrRef&) = default;
};

struct Root {
  RootKind kind = RootKind::other;
  // Defining instruction for allocation, call, load and cast roots.
  std::optional<InstrRef> def;
  // Parameter index for param roots.
  uint32_t param = 0;
  // Global name for global roots.
  std::string global;
};

struct ProtectedAlloc {
  std::string function;  // empty for globals
  std::optional<InstrRef> site;
  std::string global;  // global allocations only
  Region region = Region::stack;
  Classification classification = Classification::metadata_checked;
  std::optional<uint32_t> reg;  // result register of stack/heap allocations
  uint64_t size_bytes = 0;      // stack and global allocations
};

struct EscapeReport {
  InstrRef alloc;
  bool escapes = false;
  std::vector<EscapeReason> reasons;  // sorted, unique
};

struct DerefSite {
  InstrRef instr;
  Root root;
  uint32_t access_size = 0;
  bool local = false;  // checked against local base/end instead of the table
};

struct GlobalRewrite {
  std::string global;
  std::string companion_pointer;
  std::string constructor;
};

struct FunctionPlan {
  std::string name;
  // Every stack allocation, plus every heap allocation/reallocation.
  std::vector<ProtectedAlloc> allocations;
  std::vector<EscapeReport> escapes;  // one per protected stack allocation
  std::vector<DerefSite> derefs;
  // Root of every register, indexed by register number.
  std::vector<Root> roots;
  // Registers holding an integer copied directly out of ptrtoint.
  std::vector<bool> from_ptr_to_int;

  const ProtectedAlloc* allocation_at(InstrRef site) const;
  const DerefSite* deref_at(InstrRef site) const;
  /// Classification of the stack allocation a root refers to, if any.
  std::optional<Classification> stack_class(const Root& r) const;
};

struct Plan {
  std::vector<FunctionPlan> functions;  // parallel to Module::functions
  std::vector<ProtectedAlloc> globals;
  std::vector<GlobalRewrite> rewrites;
  std::vector<ir::Diagnostic> diagnostics;  // instrumentation is refused if non-empty

  const FunctionPlan* find(std::string_view function) const;
};

inline constexpr std::string_view kCompanionSuffix = "__cup";
inline constexpr std::string_view kGlobalCtor = "__cup_init_globals";

/// Protected allocations of the whole module: stack arrays and address-taken
/// slots, heap (re)allocations and defined global arrays.
std::vector<ProtectedAlloc> find_protected_allocations(const ir::Module& m);

/// Roots of every register of `f`.
std::vector<Root> compute_roots(const ir::Module& m, const ir::Function& f);

EscapeReport classify_escape(const ir::Module& m, const ir::Function& f, InstrRef alloc);

/// Loads and stores whose address needs a check, given the per-register roots
/// and the set of local-checked stack allocations.
std::vector<DerefSite> collect_dereferences(const ir::Module& m, const ir::Function& f,
                                            const std::vector<Root>& roots,
                                            const std::vector<InstrRef>& local_allocs);

std::vector<GlobalRewrite> plan_global_rewrites(const ir::Module& m,
                                                std::vector<ir::Diagnostic>* diags = nullptr);

Plan analyze(const ir::Module& m);

/// JSON rendering of a plan for `cup analyze --report json`.
std::string to_json(const ir::Module& m, const Plan& p, int indent = 2);

}  // namespace cup::analysis
