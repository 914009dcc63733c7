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

// Interpreter for (instrumented or plain) Mini-IR over the simulated guest
// address space. Loads and stores obey the canonical-address rule, so an
// enriched word that reaches memory unchecked faults.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cup/capability.hpp"
#include "cup/ir.hpp"

namespace cup::vm {

struct Site {
  std::string function;
  uint32_t instr_index = 0;
  uint32_t line = 0;

  bool same_place(const Site& o) const {
    return function == o.function && instr_index == o.instr_index;
  }
  std::string str() const;
};

struct HardwareFault {
  Site site;
  uint64_t addr = 0;
  bool non_canonical = true;  // otherwise an unmapped page
};

enum class EventKind : uint8_t {
  call_enter,   // a = next_entry
  call_exit,    // a = next_entry
  meta_alloc,   // id, a = base, b = end
  meta_free,    // id
  meta_lookup,  // id (effective), a = offset or raw address
  local_check,  // a = address, b = failure bit
  stack_alloc,  // a = address, b = size
  stack_free,   // a = address, b = size
  heap_alloc,   // a = address, b = requested size
  heap_free,    // a = address
};

std::string_view to_string(EventKind k);

struct Event {
  EventKind kind;
  Site site;
  uint64_t id = 0;
  uint64_t a = 0;
  uint64_t b = 0;
};

struct Config {
  uint64_t table_capacity = cap::kDefaultCapacity;
  uint64_t seed = 0;
  uint64_t step_limit = 50'000'000;
  uint64_t stack_limit = 64ULL << 20;
  bool trace = false;
  size_t trace_limit = 2'000'000;
  size_t output_limit = 1 << 20;
};

struct ExecutionResult {
  enum class Kind : uint8_t { exit, hardware_fault, vm_error };
  Kind kind = Kind::exit;
  int64_t exit_code = 0;
  std::optional<HardwareFault> fault;
  std::string error;
  std::string output;
  std::vector<Event> trace;
  bool trace_truncated = false;
  uint64_t steps = 0;
  uint32_t next_entry = 1;
  size_t live_capabilities = 0;

  bool exited_ok() const { return kind == Kind::exit && exit_code == 0; }
  /// Outcome, exit code, fault site, output and error message agree.
  bool equivalent(const ExecutionResult& o) const;
  std::string describe() const;
  /// One-line JSON describing the outcome.
  std::string outcome_json() const;
};

ExecutionResult run(const ir::Module& m, const std::vector<int64_t>& args = {},
                    const Config& config = {});

std::string trace_json(const ExecutionResult& r, int indent = -1);

}  // namespace cup::vm
