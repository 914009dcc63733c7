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

// Instrumentation pass: enriches protected allocations, maintains their
// metadata and checks every collected dereference. Two lowerings share one
// code path: `intrinsic` emits cup.* calls executed by the VM, `expanded`
// emits plain IR against the guest-mapped metadata table.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cup/analysis.hpp"
#include "cup/ir.hpp"

namespace cup::instrument {

enum class Mode : uint8_t { intrinsic, expanded };

enum class Reason : uint8_t {
  alloc_meta,
  dealloc_meta,
  check,         // table lookup guarding a load or store
  local_bounds,  // local base/end registers and the checks against them
  unenrich_for_intrinsic,
  global_ctor,
  ptr_arith,
  global_use,  // companion-pointer load replacing a global array address
  cast,        // low-48-bit mask of an unmatched inttoptr
};

std::string_view to_string(Mode m);
std::optional<Mode> mode_from_string(std::string_view s);
std::string_view to_string(Reason r);

/// One inserted instruction, addressed by its position in the output module.
struct Inserted {
  uint32_t function = 0;
  uint32_t block = 0;
  uint32_t index = 0;
  Reason reason = Reason::check;
  uint32_t group = 0;
};

/// The instructions emitted for one logical operation. For check groups,
/// `result` is the register holding the checked address and `input` the
/// operand it was computed from.
struct Group {
  uint32_t id = 0;
  Reason reason = Reason::check;
  uint32_t function = 0;
  ir::Operand input;
  std::optional<uint32_t> result;
  ir::SourceLoc loc;  // of the guarded instruction
  uint32_t access_size = 0;
};

struct InstrumentedModule {
  ir::Module module;
  std::vector<Inserted> provenance;
  std::vector<Group> groups;  // indexed by group id
};

class InstrumentError : public std::runtime_error {
 public:
  explicit InstrumentError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Throws InstrumentError if the plan carries diagnostics or does not match
/// the module.
InstrumentedModule instrument_module(const ir::Module& m, const analysis::Plan& plan, Mode mode);
InstrumentedModule instrument_module(const ir::Module& m, Mode mode);

/// Deletes every instruction of a check or local-bounds check group and
/// substitutes its result with its input.
ir::Module remove_group(const InstrumentedModule& im, uint32_t group);

std::string provenance_json(const InstrumentedModule& im, int indent = 2);

/// Emitters for the individual runtime operations, appending to the current
/// output vector and adding temporaries to `f`. Exposed for testing the
/// lowerings in isolation.
class Emitter {
 public:
  Emitter(ir::Function& f, Mode mode);

  void set_output(std::vector<ir::Instr>* out) { out_ = out; }
  void set_loc(ir::SourceLoc loc) { loc_ = loc; }
  Mode mode() const { return mode_; }

  ir::Operand check(ir::Operand w, uint32_t size, std::optional<uint32_t> dst = {});
  ir::Operand check_local(ir::Operand p, ir::Operand lb, ir::Operand le, uint32_t size,
                          std::optional<uint32_t> dst = {});
  ir::Operand ptr_add(ir::Operand w, ir::Operand delta, std::optional<uint32_t> dst = {});
  ir::Operand alloc_meta(ir::Operand base, ir::Operand end, std::optional<uint32_t> dst = {});
  void free_meta(ir::Operand w);
  ir::Operand realloc_meta(ir::Operand w, ir::Operand new_base, ir::Operand end,
                           std::optional<uint32_t> dst = {});

  ir::Operand bin(ir::BinOp op, ir::Operand a, ir::Operand b, std::string_view hint = "t",
                  std::optional<uint32_t> dst = {});
  ir::Operand load8(ir::Operand addr, std::string_view hint);
  void store8(ir::Operand addr, ir::Operand value);
  ir::Operand intrinsic(std::string_view name, std::vector<ir::Operand> args,
                        std::optional<uint32_t> dst, std::string_view hint);
  uint32_t fresh(std::string_view hint);

 private:
  ir::Instr make(ir::Opcode op) const;

  ir::Function& f_;
  std::vector<ir::Instr>* out_ = nullptr;
  Mode mode_;
  ir::SourceLoc loc_;
  std::unordered_set<std::string> names_;
  std::unordered_map<std::string, uint32_t> counters_;
};

}  // namespace cup::instrument
