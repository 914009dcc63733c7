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

// Hybrid capability metadata: a 64-bit guest word either carries a plain
// address (bit 63 clear) or an enriched {capability ID, offset} pair. The ID
// indexes a table of exact {base, end} bounds whose free entries form an
// intrusive list threaded through their `base` fields.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cup::cap {

inline constexpr uint64_t kEnrichedBit = 1ULL << 63;
inline constexpr uint64_t kIdLimit = 1ULL << 31;
inline constexpr uint64_t kOffsetMask = 0xffff'ffffULL;
inline constexpr uint64_t kHighHalfMask = 0xffff'ffff'0000'0000ULL;
/// One past the highest user-space address; entry 0 spans [0, kUserSpaceEnd).
inline constexpr uint64_t kUserSpaceEnd = 1ULL << 48;
inline constexpr uint32_t kDefaultCapacity = 1U << 20;

/// Where the table and its cursor live in the guest address space. Expanded
/// instrumentation reads and writes these addresses directly.
namespace layout {
inline constexpr uint64_t kTableBase = 0x0000'5000'0000'0000ULL;
inline constexpr uint64_t kEntrySize = 16;
inline constexpr uint64_t kNextEntryAddr = kTableBase - 16;
/// Scratch entry that absorbs masked-off metadata writes for unenriched words.
inline constexpr uint64_t kSinkAddr = kTableBase - 64;
inline constexpr uint64_t kWindowBegin = kTableBase - 64;
inline constexpr uint64_t kWindowEnd = kTableBase + kIdLimit * kEntrySize;
}  // namespace layout

struct EncodingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct CapabilityExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidFree : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnrichedWord {
  uint64_t raw = 0;

  bool enriched() const { return (raw & kEnrichedBit) != 0; }
  uint32_t id_bits() const { return static_cast<uint32_t>(raw >> 32) & 0x7fff'ffffU; }
  uint32_t offset() const { return static_cast<uint32_t>(raw & kOffsetMask); }

  friend bool operator==(EnrichedWord, EnrichedWord) = default;
};

struct Decoded {
  bool enriched = false;
  uint32_t effective_id = 0;
  uint32_t offset = 0;

  friend bool operator==(const Decoded&, const Decoded&) = default;
};

/// (1 << 63) | (id << 32) | offset. Throws EncodingError for id >= 2^31.
EnrichedWord encode(uint64_t id, uint32_t offset);

/// Unenriched words decode to effective ID 0, the whole-user-space entry.
Decoded decode(EnrichedWord w);

/// Branchless bounds test: bit 63 of the result is set iff the `size`-byte
/// access at `addr` leaves [base, end). All arithmetic wraps modulo 2^64.
inline uint64_t check_bounds(uint64_t base, uint64_t end, uint64_t addr, uint64_t size) {
  return ((addr - base) | (end - (addr + size))) & kEnrichedBit;
}

/// Comparison-and-branch form of the same test, kept for benchmarking.
uint64_t check_bounds_branching(uint64_t base, uint64_t end, uint64_t addr, uint64_t size);

/// Pointer arithmetic that only ever touches the offset field of an enriched
/// word; unenriched words get a plain 64-bit add.
EnrichedWord ptr_add(EnrichedWord w, int64_t delta);

struct MetadataEntry {
  uint64_t base = 0;
  uint64_t end = 0;  // exclusive; 0 marks a free entry

  friend bool operator==(const MetadataEntry&, const MetadataEntry&) = default;
};

class MetadataTable {
 public:
  struct Allocation {
    uint32_t id;
    EnrichedWord word;
  };

  explicit MetadataTable(uint64_t capacity = kDefaultCapacity);

  /// Takes the entry at next_entry. Requires base < end.
  Allocation allocate(uint64_t base, uint64_t end);
  /// Pushes `id` onto the free list. Throws InvalidFree for ID 0 or an
  /// entry that is not live.
  void release(uint32_t id);

  /// Decodes `w`, rebuilds the address from the entry's base and returns it
  /// with bit 63 set if the access fails the bounds test. Unenriched words
  /// keep their address and are tested against entry 0.
  uint64_t check(EnrichedWord w, uint32_t size) const;

  const MetadataEntry& entry(uint64_t id) const;
  /// Raw access for guest-mapped table reads and writes. Grows the backing
  /// store on demand; entries never written read as zero.
  MetadataEntry& mutable_entry(uint64_t id);

  uint32_t next_entry() const { return next_entry_; }
  void set_next_entry(uint32_t v) { next_entry_ = v; }
  uint64_t capacity() const { return capacity_; }
  bool is_live(uint64_t id) const;
  size_t live_count() const;

  /// IDs visited from next_entry up to the never-used region.
  std::vector<uint32_t> free_chain() const;
  /// Broken table invariants, one message each; empty when consistent.
  std::vector<std::string> verify() const;
  /// One "id base end live|free" line per touched entry, hex addresses.
  std::string dump() const;

 private:
  std::vector<MetadataEntry> entries_;
  uint64_t capacity_;
  uint32_t next_entry_ = 1;
};

}  // namespace cup::cap
