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

// Mini-IR: a register-based, single-assignment program representation with
// explicit stack/heap/global allocations, byte-sized loads and stores, pointer
// arithmetic and int<->pointer casts. Text form uses the `.mir` extension.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cup::ir {

enum class ValueKind : uint8_t { i64, ptr, void_ };

enum class Opcode : uint8_t {
  stack_alloc,
  heap_alloc,    // `malloc`
  heap_free,     // `free`
  heap_realloc,  // `realloc`
  load,
  store,
  ptr_add,
  ptr_to_int,
  int_to_ptr,
  binop,
  copy,  // `mov`
  call,
  intrinsic,
  br,
  cond_br,
  ret,
  global_addr,
};

enum class BinOp : uint8_t {
  add, sub, mul, sdiv, srem, udiv, urem,
  and_, or_, xor_, shl, lshr, ashr,
  eq, ne, slt, sle, sgt, sge, ult, ule, ugt, uge,
};

std::string_view to_string(ValueKind k);
std::string_view to_string(BinOp op);
std::optional<BinOp> binop_from_string(std::string_view s);

/// Evaluates a binary operator on 64-bit two's-complement values. Shift
/// amounts are taken modulo 64. Throws std::domain_error on division by zero.
uint64_t eval_binop(BinOp op, uint64_t a, uint64_t b);

struct Operand {
  enum class Tag : uint8_t { reg, imm };
  Tag tag = Tag::imm;
  uint32_t reg = 0;
  int64_t imm = 0;

  static Operand of_reg(uint32_t r) { return {Tag::reg, r, 0}; }
  static Operand of_imm(int64_t v) { return {Tag::imm, 0, v}; }
  bool is_reg() const { return tag == Tag::reg; }
  bool is_imm() const { return tag == Tag::imm; }

  friend bool operator==(const Operand&, const Operand&) = default;
};

struct SourceLoc {
  uint32_t line = 0;
  // Position of the instruction in its function, counting across blocks in
  // textual order. Instructions synthesized by instrumentation inherit the
  // location of the instruction they guard, so fault sites stay comparable
  // between instrumented and uninstrumented runs.
  uint32_t instr_index = 0;
};

/// One IR instruction. Fields beyond `op`, `dst` and `operands` are only
/// meaningful for the opcodes noted beside them.
///
/// Operand layout per opcode:
///   heap_alloc [size]        heap_free [ptr]      heap_realloc [ptr, size]
///   load [ptr]               store [ptr, value]   ptr_add [ptr, delta]
///   ptr_to_int/int_to_ptr/copy [src]              binop [a, b]
///   call/intrinsic [args...] cond_br [cond]       ret [] or [value]
struct Instr {
  Opcode op = Opcode::ret;
  std::optional<uint32_t> dst;
  std::vector<Operand> operands;
  BinOp binop = BinOp::add;
  uint32_t size = 0;             // load/store access size; stack_alloc element size
  uint64_t length = 0;           // stack_alloc element count
  bool address_taken = false;    // stack_alloc
  std::string symbol;            // callee, intrinsic or global name
  std::vector<std::string> targets;  // br: 1, cond_br: 2 block labels
  SourceLoc loc;

  bool is_terminator() const {
    return op == Opcode::br || op == Opcode::cond_br || op == Opcode::ret;
  }
};

struct Param {
  std::string name;
  ValueKind kind = ValueKind::i64;
};

struct Block {
  std::string name;
  std::vector<Instr> instrs;
};

struct Function {
  std::string name;
  std::vector<Param> params;
  bool is_variadic = false;
  ValueKind returns = ValueKind::i64;
  std::vector<Block> blocks;
  // Register names indexed by register number. Parameters occupy the first
  // params.size() slots.
  std::vector<std::string> reg_names;

  uint32_t add_reg(std::string name);
  /// Adds a register whose name starts with `hint` and does not clash with
  /// any existing register.
  uint32_t fresh_reg(std::string_view hint);
  std::optional<uint32_t> find_reg(std::string_view name) const;
  std::optional<size_t> find_block(std::string_view name) const;
  size_t instr_count() const;
};

struct GlobalDef {
  std::string name;
  uint32_t elem_size = 8;
  uint64_t length = 1;
  bool is_array = false;
  bool is_extern = false;
  // Either empty (zero-initialized) or exactly elem_size * length bytes.
  std::vector<uint8_t> init;

  uint64_t size_bytes() const { return elem_size * length; }
};

struct Module {
  std::string source_name;
  std::vector<GlobalDef> globals;
  std::vector<Function> functions;
  // Functions run before main, in order.
  std::vector<std::string> constructors;

  const Function* find_function(std::string_view name) const;
  Function* find_function(std::string_view name);
  const GlobalDef* find_global(std::string_view name) const;
};

/// Structural equality resolving registers by name; source locations are
/// ignored.
bool equivalent(const Module& a, const Module& b);

struct Diagnostic {
  uint32_t line = 0;
  uint32_t column = 0;
  std::string function;
  std::string message;

  std::string str() const;
};

/// Built-in operations executed by the VM rather than by IR code.
struct IntrinsicInfo {
  std::string_view name;
  uint32_t arity;
  bool has_result;
  // Bitmask of argument positions that must be integer literals.
  uint32_t imm_args = 0;
};

const IntrinsicInfo* find_intrinsic(std::string_view name);
const std::vector<IntrinsicInfo>& intrinsics();

/// True for names reserved to instrumentation (`cup.*`).
bool is_runtime_intrinsic(std::string_view name);

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(std::vector<Diagnostic> diags);
  const std::vector<Diagnostic>& diagnostics() const { return diags_; }

 private:
  std::vector<Diagnostic> diags_;
};

}  // namespace cup::ir
