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

#include <sstream>

#include "cup/text.hpp"

namespace cup::ir {

namespace {

std::string format_imm(int64_t v) {
  if (v >= -65536 && v <= 65536) return std::to_string(v);
  std::ostringstream os;
  os << "0x" << std::hex << static_cast<uint64_t>(v);
  return os.str();
}

std::string_view element_type(uint32_t size) {
  switch (size) {
    case 1: return "int8";
    case 2: return "int16";
    case 4: return "int32";
    default: return "int64";
  }
}

bool printable_string(const std::vector<uint8_t>& bytes, size_t used) {
  for (size_t i = 0; i < used; ++i) {
    uint8_t b = bytes[i];
    if (b != 0 && b != '\n' && b != '\t' && (b < 0x20 || b > 0x7e)) return false;
  }
  return true;
}

void print_global(std::ostream& os, const GlobalDef& g) {
  if (g.is_extern) os << "extern ";
  os << "global " << g.name << " = " << element_type(g.elem_size);
  if (g.is_array) os << " x " << g.length;
  if (!g.init.empty()) {
    size_t used = g.init.size();
    while (used > 0 && g.init[used - 1] == 0) --used;
    if (g.elem_size == 1 && printable_string(g.init, used)) {
      os << " \"";
      for (size_t i = 0; i < used; ++i) {
        switch (char c = static_cast<char>(g.init[i])) {
          case '\0': os << "\\0"; break;
          case '\n': os << "\\n"; break;
          case '\t': os << "\\t"; break;
          case '"': os << "\\\""; break;
          case '\\': os << "\\\\"; break;
          default: os << c;
        }
      }
      os << "\"";
    } else {
      uint64_t elems = (used + g.elem_size - 1) / g.elem_size;
      os << " {";
      for (uint64_t e = 0; e < elems; ++e) {
        uint64_t v = 0;
        for (uint32_t b = 0; b < g.elem_size; ++b)
          v |= static_cast<uint64_t>(g.init[e * g.elem_size + b]) << (8 * b);
        // Sign-extend so negative initializers print naturally.
        int64_t sv = g.elem_size == 8 ? static_cast<int64_t>(v)
                                      : static_cast<int64_t>(v << (64 - 8 * g.elem_size)) >>
                                            (64 - 8 * g.elem_size);
        os << (e ? ", " : "") << format_imm(sv);
      }
      os << "}";
    }
  }
  os << "\n";
}

class FunctionPrinter {
 public:
  explicit FunctionPrinter(const Function& f) : f_(f) {}

  void print(std::ostream& os) const {
    os << "func " << f_.name << "(";
    for (size_t i = 0; i < f_.params.size(); ++i)
      os << (i ? ", " : "") << f_.params[i].name << ": " << to_string(f_.params[i].kind);
    if (f_.is_variadic) os << (f_.params.empty() ? "..." : ", ...");
    os << ") -> " << to_string(f_.returns) << " {\n";
    for (size_t b = 0; b < f_.blocks.size(); ++b) {
      const auto& block = f_.blocks[b];
      if (b != 0 || block.name != "entry") os << block.name << ":\n";
      for (const auto& in : block.instrs) {
        os << "  ";
        instr(os, in);
        os << "\n";
      }
    }
    os << "}\n";
  }

 private:
  std::string op(const Operand& o) const {
    return o.is_reg() ? f_.reg_names.at(o.reg) : format_imm(o.imm);
  }

  void instr(std::ostream& os, const Instr& in) const {
    if (in.dst) os << f_.reg_names.at(*in.dst) << " = ";
    const auto& ops = in.operands;
    switch (in.op) {
      case Opcode::stack_alloc:
        os << "stack_alloc " << in.size << " x " << in.length;
        if (in.address_taken) os << " addr_taken";
        break;
      case Opcode::heap_alloc: os << "malloc " << op(ops[0]); break;
      case Opcode::heap_free: os << "free " << op(ops[0]); break;
      case Opcode::heap_realloc: os << "realloc " << op(ops[0]) << ", " << op(ops[1]); break;
      case Opcode::load: os << "load " << in.size << " " << op(ops[0]); break;
      case Opcode::store:
        os << "store " << in.size << " " << op(ops[0]) << ", " << op(ops[1]);
        break;
      case Opcode::ptr_add: os << "ptradd " << op(ops[0]) << ", " << op(ops[1]); break;
      case Opcode::ptr_to_int: os << "ptrtoint " << op(ops[0]); break;
      case Opcode::int_to_ptr: os << "inttoptr " << op(ops[0]); break;
      case Opcode::copy: os << "mov " << op(ops[0]); break;
      case Opcode::binop:
        os << to_string(in.binop) << " " << op(ops[0]) << ", " << op(ops[1]);
        break;
      case Opcode::call:
      case Opcode::intrinsic:
        os << "call " << (in.op == Opcode::intrinsic ? "@" : "") << in.symbol << "(";
        for (size_t i = 0; i < ops.size(); ++i) os << (i ? ", " : "") << op(ops[i]);
        os << ")";
        break;
      case Opcode::br: os << "br " << in.targets.at(0); break;
      case Opcode::cond_br:
        os << "condbr " << op(ops[0]) << ", " << in.targets.at(0) << ", " << in.targets.at(1);
        break;
      case Opcode::ret:
        os << "ret";
        if (!ops.empty()) os << " " << op(ops[0]);
        break;
      case Opcode::global_addr: os << "global_addr " << in.symbol; break;
    }
  }

  const Function& f_;
};

}  // namespace

std::string print(const Function& f) {
  std::ostringstream os;
  FunctionPrinter(f).print(os);
  return os.str();
}

std::string print(const Module& m) {
  std::ostringstream os;
  for (const auto& g : m.globals) print_global(os, g);
  for (const auto& c : m.constructors) os << "ctor " << c << "\n";
  for (const auto& f : m.functions) {
    if (os.tellp() > 0) os << "\n";
    FunctionPrinter(f).print(os);
  }
  return os.str();
}

}  // namespace cup::ir
