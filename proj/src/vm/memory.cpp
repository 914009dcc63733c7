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

#include <cstring>

#include "cup/memory.hpp"

namespace cup::vm {

GuestMemory::Page* GuestMemory::page(uint64_t addr) const {
  const uint64_t index = addr / kPageSize;
  if (index == last_index_) return last_page_;
  auto it = pages_.find(index);
  if (it == pages_.end()) return nullptr;
  last_index_ = index;
  last_page_ = it->second.get();
  return last_page_;
}

void GuestMemory::map(uint64_t addr, uint64_t len) {
  if (len == 0) return;
  for (uint64_t p = addr / kPageSize; p <= (addr + len - 1) / kPageSize; ++p) {
    auto& slot = pages_[p];
    if (!slot) slot = std::make_unique<Page>(Page{});
  }
}

bool GuestMemory::mapped(uint64_t addr) const { return canonical(addr) && page(addr) != nullptr; }

std::optional<MemFault> GuestMemory::probe(uint64_t addr, uint64_t n) const {
  for (uint64_t i = 0; i < n; ++i) {
    const uint64_t a = addr + i;
    if (!canonical(a)) return MemFault{a, true};
    if (!page(a)) return MemFault{a, false};
  }
  return std::nullopt;
}

std::optional<MemFault> GuestMemory::read(uint64_t addr, void* dst, uint64_t n) const {
  if (auto f = probe(addr, n)) return f;
  auto* out = static_cast<uint8_t*>(dst);
  for (uint64_t i = 0; i < n; ++i) out[i] = byte(addr + i);
  return std::nullopt;
}

std::optional<MemFault> GuestMemory::write(uint64_t addr, const void* src, uint64_t n) {
  if (auto f = probe(addr, n)) return f;
  const auto* in = static_cast<const uint8_t*>(src);
  for (uint64_t i = 0; i < n; ++i) set_byte(addr + i, in[i]);
  return std::nullopt;
}

uint8_t GuestMemory::byte(uint64_t addr) const { return (*page(addr))[addr % kPageSize]; }

void GuestMemory::set_byte(uint64_t addr, uint8_t v) { (*page(addr))[addr % kPageSize] = v; }

void GuestMemory::fill(uint64_t addr, uint8_t v, uint64_t n) {
  for (uint64_t i = 0; i < n; ++i) set_byte(addr + i, v);
}

}  // namespace cup::vm
