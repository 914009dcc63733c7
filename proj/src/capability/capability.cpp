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

#include "cup/capability.hpp"

#include <cstdio>
#include <set>
#include <sstream>

namespace cup::cap {

EnrichedWord encode(uint64_t id, uint32_t offset) {
  if (id >= kIdLimit) throw EncodingError("capability ID " + std::to_string(id) + " exceeds 31 bits");
  return {kEnrichedBit | (id << 32) | offset};
}

Decoded decode(EnrichedWord w) {
  // Arithmetic shift turns the flag bit into an all-ones or all-zeros mask.
  const auto mask = static_cast<uint32_t>(static_cast<int64_t>(w.raw) >> 63);
  return {w.enriched(), w.id_bits() & mask, w.offset()};
}

uint64_t check_bounds_branching(uint64_t base, uint64_t end, uint64_t addr, uint64_t size) {
  if (addr < base) return kEnrichedBit;
  if (addr + size < addr || addr + size > end) return kEnrichedBit;
  return 0;
}

EnrichedWord ptr_add(EnrichedWord w, int64_t delta) {
  if (!w.enriched()) return {w.raw + static_cast<uint64_t>(delta)};
  const uint64_t low = (w.raw + static_cast<uint64_t>(delta)) & kOffsetMask;
  return {(w.raw & kHighHalfMask) | low};
}

MetadataTable::MetadataTable(uint64_t capacity) : capacity_(capacity) {
  if (capacity < 2 || capacity > kIdLimit)
    throw std::invalid_argument("table capacity must be in [2, 2^31]");
  entries_.resize(1);
  entries_[0] = {0, kUserSpaceEnd};
}

MetadataTable::Allocation MetadataTable::allocate(uint64_t base, uint64_t end) {
  if (!(base < end)) throw std::invalid_argument("capability needs base < end");
  const uint32_t id = next_entry_;
  if (id >= capacity_) throw CapabilityExhausted("capability table exhausted");
  MetadataEntry& e = mutable_entry(id);
  const uint64_t offset = e.base;
  e.base = base;
  e.end = end;
  next_entry_ = static_cast<uint32_t>(id + offset + 1);
  return {id, encode(id, 0)};
}

void MetadataTable::release(uint32_t id) {
  if (id == 0) throw InvalidFree("free of reserved capability 0");
  if (!is_live(id)) throw InvalidFree("free of capability " + std::to_string(id) + " that is not live");
  MetadataEntry& e = mutable_entry(id);
  e.base = static_cast<uint64_t>(next_entry_) - id - 1;
  e.end = 0;
  next_entry_ = id;
}

uint64_t MetadataTable::check(EnrichedWord w, uint32_t size) const {
  const Decoded d = decode(w);
  const MetadataEntry& e = entry(d.effective_id);
  const uint64_t addr = e.base + (d.enriched ? d.offset : w.raw);
  return addr | check_bounds(e.base, e.end, addr, size);
}

const MetadataEntry& MetadataTable::entry(uint64_t id) const {
  static const MetadataEntry kZero{};
  return id < entries_.size() ? entries_[id] : kZero;
}

MetadataEntry& MetadataTable::mutable_entry(uint64_t id) {
  if (id >= capacity_) throw CapabilityExhausted("capability table exhausted");
  if (id >= entries_.size()) entries_.resize(id + 1);
  return entries_[id];
}

bool MetadataTable::is_live(uint64_t id) const {
  return id != 0 && id < entries_.size() && entries_[id].end != 0;
}

size_t MetadataTable::live_count() const {
  size_t n = 0;
  for (size_t i = 1; i < entries_.size(); ++i) n += entries_[i].end != 0;
  return n;
}

std::vector<uint32_t> MetadataTable::free_chain() const {
  std::vector<uint32_t> chain;
  uint64_t cur = next_entry_;
  while (cur < entries_.size() && chain.size() <= capacity_) {
    chain.push_back(static_cast<uint32_t>(cur));
    cur = (cur + entries_[cur].base + 1) & kOffsetMask;
  }
  return chain;
}

std::vector<std::string> MetadataTable::verify() const {
  std::vector<std::string> problems;
  if (entries_[0] != MetadataEntry{0, kUserSpaceEnd}) problems.emplace_back("entry 0 was modified");
  if (next_entry_ < 1 || next_entry_ > capacity_)
    problems.push_back("next_entry " + std::to_string(next_entry_) + " outside [1, capacity]");
  std::set<uint32_t> seen;
  uint64_t cur = next_entry_;
  size_t steps = 0;
  while (cur < entries_.size()) {
    if (++steps > capacity_) {
      problems.emplace_back("free list does not terminate");
      break;
    }
    if (!seen.insert(static_cast<uint32_t>(cur)).second) {
      problems.push_back("free list revisits entry " + std::to_string(cur));
      break;
    }
    if (cur == 0 || entries_[cur].end != 0) {
      problems.push_back("free list reaches live entry " + std::to_string(cur));
      break;
    }
    cur = (cur + entries_[cur].base + 1) & kOffsetMask;
  }
  for (size_t i = 1; i < entries_.size(); ++i)
    if (entries_[i].end != 0 && entries_[i].base >= entries_[i].end)
      problems.push_back("live entry " + std::to_string(i) + " has base >= end");
  return problems;
}

std::string MetadataTable::dump() const {
  std::ostringstream os;
  char buf[96];
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    std::snprintf(buf, sizeof buf, "%zu 0x%016llx 0x%016llx %s\n", i,
                  static_cast<unsigned long long>(e.base), static_cast<unsigned long long>(e.end),
                  (i == 0 || e.end != 0) ? "live" : "free");
    os << buf;
  }
  return os.str();
}

}  // namespace cup::cap
