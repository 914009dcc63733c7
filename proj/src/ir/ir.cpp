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

#include "cup/ir.hpp"

#include <array>
#include <sstream>

namespace cup::ir {

namespace {

constexpr std::array<std::string_view, 23> kBinOpNames = {
    "add", "sub", "mul", "sdiv", "srem", "udiv", "urem",
    "and", "or",  "xor", "shl",  "lshr", "ashr",
    "eq",  "ne",  "slt", "sle",  "sgt",  "sge",  "ult", "ule", "ugt", "uge",
};

}  // namespace

std::string_view to_string(ValueKind k) {
  switch (k) {
    case ValueKind::i64: return "i64";
    case ValueKind::ptr: return "ptr";
    case ValueKind::void_: return "void";
  }
  return "?";
}

std::string_view to_string(BinOp op) { return kBinOpNames[static_cast<size_t>(op)]; }

std::optional<BinOp> binop_from_string(std::string_view s) {
  for (size_t i = 0; i < kBinOpNames.size(); ++i)
    if (kBinOpNames[i] == s) return static_cast<BinOp>(i);
  return std::nullopt;
}

uint64_t eval_binop(BinOp op, uint64_t a, uint64_t b) {
  const auto sa = static_cast<int64_t>(a);
  const auto sb = static_cast<int64_t>(b);
  switch (op) {
    case BinOp::add: return a + b;
    case BinOp::sub: return a - b;
    case BinOp::mul: return a * b;
    case BinOp::sdiv:
      if (b == 0) throw std::domain_error("division by zero");
      if (sa == INT64_MIN && sb == -1) return a;
      return static_cast<uint64_t>(sa / sb);
    case BinOp::srem:
      if (b == 0) throw std::domain_error("division by zero");
      if (sa == INT64_MIN && sb == -1) return 0;
      return static_cast<uint64_t>(sa % sb);
    case BinOp::udiv:
      if (b == 0) throw std::domain_error("division by zero");
      return a / b;
    case BinOp::urem:
      if (b == 0) throw std::domain_error("division by zero");
      return a % b;
    case BinOp::and_: return a & b;
    case BinOp::or_: return a | b;
    case BinOp::xor_: return a ^ b;
    case BinOp::shl: return a << (b & 63);
    case BinOp::lshr: return a >> (b & 63);
    case BinOp::ashr: return static_cast<uint64_t>(sa >> (b & 63));
    case BinOp::eq: return a == b;
    case BinOp::ne: return a != b;
    case BinOp::slt: return sa < sb;
    case BinOp::sle: return sa <= sb;
    case BinOp::sgt: return sa > sb;
    case BinOp::sge: return sa >= sb;
    case BinOp::ult: return a < b;
    case BinOp::ule: return a <= b;
    case BinOp::ugt: return a > b;
    case BinOp::uge: return a >= b;
  }
  return 0;
}

uint32_t Function::add_reg(std::string name) {
  reg_names.push_back(std::move(name));
  return static_cast<uint32_t>(reg_names.size() - 1);
}

uint32_t Function::fresh_reg(std::string_view hint) {
  std::string base(hint);
  if (!find_reg(base)) return add_reg(base);
  for (uint32_t n = 1;; ++n) {
    std::string candidate = base + "." + std::to_string(n);
    if (!find_reg(candidate)) return add_reg(std::move(candidate));
  }
}

std::optional<uint32_t> Function::find_reg(std::string_view name) const {
  for (size_t i = 0; i < reg_names.size(); ++i)
    if (reg_names[i] == name) return static_cast<uint32_t>(i);
  return std::nullopt;
}

std::optional<size_t> Function::find_block(std::string_view name) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name == name) return i;
  return std::nullopt;
}

size_t Function::instr_count() const {
  size_t n = 0;
  for (const auto& b : blocks) n += b.instrs.size();
  return n;
}

const Function* Module::find_function(std::string_view name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

Function* Module::find_function(std::string_view name) {
  for (auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

const GlobalDef* Module::find_global(std::string_view name) const {
  for (const auto& g : globals)
    if (g.name == name) return &g;
  return nullptr;
}

namespace {

bool same_operand(const Function& fa, const Operand& a, const Function& fb, const Operand& b) {
  if (a.tag != b.tag) return false;
  if (a.is_imm()) return a.imm == b.imm;
  return fa.reg_names.at(a.reg) == fb.reg_names.at(b.reg);
}

bool same_instr(const Function& fa, const Instr& a, const Function& fb, const Instr& b) {
  if (a.op != b.op || a.dst.has_value() != b.dst.has_value()) return false;
  if (a.dst && fa.reg_names.at(*a.dst) != fb.reg_names.at(*b.dst)) return false;
  if (a.operands.size() != b.operands.size()) return false;
  for (size_t i = 0; i < a.operands.size(); ++i)
    if (!same_operand(fa, a.operands[i], fb, b.operands[i])) return false;
  if (a.op == Opcode::binop && a.binop != b.binop) return false;
  return a.size == b.size && a.length == b.length && a.address_taken == b.address_taken &&
         a.symbol == b.symbol && a.targets == b.targets;
}

bool same_function(const Function& a, const Function& b) {
  if (a.name != b.name || a.is_variadic != b.is_variadic || a.returns != b.returns) return false;
  if (a.params.size() != b.params.size() || a.blocks.size() != b.blocks.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].name != b.params[i].name || a.params[i].kind != b.params[i].kind)
      return false;
  for (size_t i = 0; i < a.blocks.size(); ++i) {
    const auto& ba = a.blocks[i];
    const auto& bb = b.blocks[i];
    if (ba.name != bb.name || ba.instrs.size() != bb.instrs.size()) return false;
    for (size_t j = 0; j < ba.instrs.size(); ++j)
      if (!same_instr(a, ba.instrs[j], b, bb.instrs[j])) return false;
  }
  return true;
}

}  // namespace

bool equivalent(const Module& a, const Module& b) {
  if (a.constructors != b.constructors) return false;
  if (a.globals.size() != b.globals.size() || a.functions.size() != b.functions.size())
    return false;
  for (size_t i = 0; i < a.globals.size(); ++i) {
    const auto& ga = a.globals[i];
    const auto& gb = b.globals[i];
    if (ga.name != gb.name || ga.elem_size != gb.elem_size || ga.length != gb.length ||
        ga.is_array != gb.is_array || ga.is_extern != gb.is_extern || ga.init != gb.init)
      return false;
  }
  for (size_t i = 0; i < a.functions.size(); ++i)
    if (!same_function(a.functions[i], b.functions[i])) return false;
  return true;
}

std::string Diagnostic::str() const {
  std::ostringstream os;
  os << "line " << line;
  if (column) os << ":" << column;
  if (!function.empty()) os << " (in " << function << ")";
  os << ": " << message;
  return os.str();
}

const std::vector<IntrinsicInfo>& intrinsics() {
  static const std::vector<IntrinsicInfo> table = {
      {"memcpy", 3, false},
      {"memset", 3, false},
      {"strcpy", 2, false},
      {"strlen", 1, true},
      {"print", 2, false},
      {"print_int", 1, false},
      {"rand", 0, true},
      {"va_arg", 1, true, 0b1},
      {"cup.alloc_meta", 2, true},
      {"cup.free_meta", 1, false},
      {"cup.check", 2, true, 0b10},
      {"cup.check_local", 4, true, 0b1000},
      {"cup.ptradd", 2, true},
      {"cup.realloc_meta", 3, true},
  };
  return table;
}

const IntrinsicInfo* find_intrinsic(std::string_view name) {
  for (const auto& info : intrinsics())
    if (info.name == name) return &info;
  return nullptr;
}

bool is_runtime_intrinsic(std::string_view name) { return name.starts_with("cup."); }

namespace {

std::string join_diagnostics(const std::vector<Diagnostic>& diags) {
  std::string out;
  for (const auto& d : diags) {
    if (!out.empty()) out += "\n";
    out += d.str();
  }
  return out;
}

}  // namespace

ParseError::ParseError(std::vector<Diagnostic> diags)
    : std::runtime_error(join_diagnostics(diags)), diags_(std::move(diags)) {}

}  // namespace cup::ir
