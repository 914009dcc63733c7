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

// Simulated guest address space: sparse 4 KB pages, the canonical-address
// rule and a musl-like heap allocator with inline headers.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>

namespace cup::vm {

inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint64_t kHeapBase = 0x0000'1000'0000'0000ULL;
inline constexpr uint64_t kGlobalBase = 0x0000'0800'0000'0000ULL;
inline constexpr uint64_t kStackTop = 0x0000'7000'0000'0000ULL;

/// Bits 63..48 all zero.
inline bool canonical(uint64_t addr) { return (addr >> 48) == 0; }

struct MemFault {
  uint64_t addr;
  bool non_canonical;  // otherwise unmapped
};

class GuestMemory {
 public:
  /// Maps every page overlapping [addr, addr + len); new pages read as zero.
  void map(uint64_t addr, uint64_t len);
  bool mapped(uint64_t addr) const;

  /// Copies bytes, faulting on the first non-canonical or unmapped byte
  /// before anything is modified.
  std::optional<MemFault> read(uint64_t addr, void* dst, uint64_t n) const;
  std::optional<MemFault> write(uint64_t addr, const void* src, uint64_t n);
  /// Byte access for callers that already validated the address.
  uint8_t byte(uint64_t addr) const;
  void set_byte(uint64_t addr, uint8_t v);
  void fill(uint64_t addr, uint8_t v, uint64_t n);

  size_t page_count() const { return pages_.size(); }

 private:
  using Page = std::array<uint8_t, kPageSize>;
  Page* page(uint64_t addr) const;
  std::optional<MemFault> probe(uint64_t addr, uint64_t n) const;

  std::unordered_map<uint64_t, std::unique_ptr<Page>> pages_;
  mutable uint64_t last_index_ = ~0ULL;
  mutable Page* last_page_ = nullptr;
};

/// First-fit allocator over the heap region. Each chunk is preceded by a
/// 16-byte header {rounded size | in-use bit, requested size} written into
/// guest memory; capacities are multiples of 16.
class HeapAllocator {
 public:
  static constexpr uint64_t kHeaderSize = 16;
  static constexpr uint64_t kGranule = 16;
  static constexpr uint64_t kMaxRequest = 1ULL << 32;

  explicit HeapAllocator(GuestMemory& mem) : mem_(mem) {}

  static uint64_t rounded(uint64_t n);

  /// Returns 0 when the request cannot be satisfied.
  uint64_t malloc(uint64_t n);
  /// False if `p` is not the start of a live chunk.
  bool free(uint64_t p);

  struct Realloc {
    bool ok = false;
    uint64_t addr = 0;
    bool moved = false;
  };
  Realloc realloc(uint64_t p, uint64_t n);

  bool live(uint64_t p) const;
  std::optional<uint64_t> requested(uint64_t p) const;
  std::optional<uint64_t> capacity(uint64_t p) const;
  uint64_t top() const { return top_; }

 private:
  struct Chunk {
    uint64_t capacity;
    uint64_t requested;
    bool live;
  };
  void write_header(uint64_t p, const Chunk& c);

  GuestMemory& mem_;
  uint64_t top_ = kHeapBase;
  std::map<uint64_t, Chunk> chunks_;  // user address -> chunk
  std::set<uint64_t> free_;           // user addresses of free chunks
};

}  // namespace cup::vm
