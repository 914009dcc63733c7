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

#include <random>
#include <set>
#include <vector>

#include "cup/capability.hpp"
#include "doctest.h"

using namespace cup::cap;

namespace {

// Exact containment test, computed without wrap-around.
bool naive_in_bounds(uint64_t base, uint64_t end, uint64_t addr, uint64_t size) {
  using u128 = unsigned __int128;
  return base <= addr && u128(addr) + size <= u128(end);
}

// Reference model of ID reuse: freed IDs form a stack; fresh IDs grow by one.
struct IdModel {
  std::vector<uint32_t> freed;
  uint32_t fresh = 1;
  std::set<uint32_t> live;

  uint32_t alloc() {
    uint32_t id;
    if (!freed.empty()) {
      id = freed.back();
      freed.pop_back();
    } else {
      id = fresh++;
    }
    live.insert(id);
    return id;
  }
  void release(uint32_t id) {
    live.erase(id);
    freed.push_back(id);
  }
};

}  // namespace

TEST_CASE("encode matches the documented bit layout") {
  CHECK(encode(1, 0).raw == 0x8000000100000000ULL);
  CHECK(encode(0, 0).raw == 0x8000000000000000ULL);
  CHECK(encode(5, 255).raw == 0x80000005000000FFULL);
  CHECK(encode(kIdLimit - 1, 0xffffffffU).raw == 0xffffffffffffffffULL);
  CHECK_THROWS_AS(encode(kIdLimit, 0), EncodingError);
}

TEST_CASE("decode examples") {
  CHECK(decode({0x8000000100000000ULL}) == Decoded{true, 1, 0});
  CHECK(decode({0x0000700000001000ULL}) == Decoded{false, 0, 0x1000});
  CHECK(decode({0x80000005000000FFULL}) == Decoded{true, 5, 255});
}

TEST_CASE("decode(encode(i, o)) is the identity on 10^5 random pairs") {
  std::mt19937_64 rng(0xC0FFEE);
  for (int i = 0; i < 100000; ++i) {
    uint64_t id = rng() % kIdLimit;
    auto off = static_cast<uint32_t>(rng());
    Decoded d = decode(encode(id, off));
    REQUIRE(d.enriched);
    REQUIRE(d.effective_id == id);
    REQUIRE(d.offset == off);
  }
}

TEST_CASE("free list hand trace") {
  MetadataTable t(64);
  CHECK(t.allocate(0x1000, 0x1010).id == 1);
  CHECK(t.allocate(0x2000, 0x2010).id == 2);
  auto third = t.allocate(0x3000, 0x3010);
  CHECK(third.id == 3);
  CHECK(third.word.raw == 0x8000000300000000ULL);
  CHECK(t.next_entry() == 4);

  t.release(2);
  CHECK(t.entry(2) == MetadataEntry{1, 0});
  CHECK(t.next_entry() == 2);
  t.release(1);
  CHECK(t.entry(1) == MetadataEntry{0, 0});
  CHECK(t.next_entry() == 1);

  CHECK(t.allocate(0x4000, 0x4008).id == 1);
  CHECK(t.next_entry() == 2);
  CHECK(t.allocate(0x5000, 0x5008).id == 2);
  CHECK(t.next_entry() == 4);
  CHECK(t.verify().empty());
}

TEST_CASE("free stores a modular offset when the successor precedes the freed ID") {
  MetadataTable t(64);
  for (int i = 0; i < 5; ++i) t.allocate(0x1000 * (i + 1), 0x1000 * (i + 1) + 8);
  t.release(2);  // next = 2
  t.release(5);  // base[5] = 2 - 5 - 1 = -4 (mod 2^64)
  CHECK(t.entry(5).base == static_cast<uint64_t>(-4));
  CHECK(t.allocate(0x9000, 0x9008).id == 5);
  CHECK(t.next_entry() == 2);
  CHECK(t.allocate(0xa000, 0xa008).id == 2);
  CHECK(t.next_entry() == 6);
}

TEST_CASE("allocation and free errors") {
  MetadataTable t(4);
  CHECK_THROWS_AS(t.allocate(0x1000, 0x1000), std::invalid_argument);
  t.allocate(1, 2);
  t.allocate(3, 4);
  t.allocate(5, 6);
  CHECK(t.next_entry() == 4);
  CHECK_THROWS_AS(t.allocate(7, 8), CapabilityExhausted);
  CHECK_THROWS_AS(t.release(0), InvalidFree);
  t.release(2);
  CHECK_THROWS_AS(t.release(2), InvalidFree);
  CHECK_THROWS_AS(t.release(3000), InvalidFree);
}

TEST_CASE("random alloc/free sequences follow the stack model") {
  std::mt19937_64 rng(42);
  for (int seq = 0; seq < 10000; ++seq) {
    MetadataTable t(256);
    IdModel model;
    int ops = 1 + static_cast<int>(rng() % 40);
    bool last_was_free = false;
    uint32_t last_freed = 0;
    for (int k = 0; k < ops; ++k) {
      bool do_free = !model.live.empty() && (rng() % 3 == 0);
      if (do_free) {
        auto it = model.live.begin();
        std::advance(it, static_cast<long>(rng() % model.live.size()));
        uint32_t id = *it;
        t.release(id);
        model.release(id);
        last_was_free = true;
        last_freed = id;
      } else {
        uint64_t base = 0x10000 + (rng() % 0x100000);
        uint32_t id = t.allocate(base, base + 1 + rng() % 64).id;
        REQUIRE(id == model.alloc());
        if (last_was_free) REQUIRE(id == last_freed);
        last_was_free = false;
      }
    }
    // Live IDs and the free chain are disjoint; the chain only visits free entries.
    for (uint32_t id : t.free_chain()) REQUIRE_FALSE(t.is_live(id));
    for (uint32_t id : model.live) REQUIRE(t.is_live(id));
    REQUIRE(t.live_count() == model.live.size());
    REQUIRE(t.verify().empty());
  }
}

TEST_CASE("check_bounds examples") {
  CHECK(check_bounds(0x1000, 0x1028, 0x1024, 4) == 0);
  CHECK(check_bounds(0x1000, 0x1028, 0x1025, 4) == kEnrichedBit);
  CHECK(check_bounds(0x1000, 0x1028, 0x0ffc, 4) == kEnrichedBit);
}

TEST_CASE("check through the table") {
  MetadataTable t(16);
  auto a = t.allocate(0x1000, 0x1028);
  REQUIRE(a.id == 1);
  CHECK(t.check(encode(1, 0), 4) == 0x1000);
  CHECK(t.check(encode(1, 36), 4) == 0x1024);
  uint64_t past = t.check(encode(1, 40), 1);
  CHECK((past & kEnrichedBit) != 0);
  CHECK((past & ~kEnrichedBit) == 0x1028);
  // Unenriched words are sandboxed by entry 0.
  CHECK(t.check({0x2000}, 8) == 0x2000);
  CHECK((t.check({kUserSpaceEnd - 4}, 8) & kEnrichedBit) != 0);
  // Negative offsets wrap to huge offsets and fail the upper bound.
  CHECK((t.check(ptr_add(encode(1, 0), -4), 4) & kEnrichedBit) != 0);
}

TEST_CASE("use after free fails before the ID is reused") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    MetadataTable t(64);
    for (int k = 0; k < 1 + static_cast<int>(rng() % 8); ++k)
      t.allocate(0x1000 * (k + 1), 0x1000 * (k + 1) + 64);
    uint32_t victim = 1 + static_cast<uint32_t>(rng() % (t.next_entry() - 1));
    t.release(victim);
    auto off = static_cast<uint32_t>(rng());
    uint32_t size = 1U << (rng() % 4);
    REQUIRE((t.check(encode(victim, off), size) & kEnrichedBit) != 0);
  }
}

TEST_CASE("ptr_add only touches the offset field") {
  CHECK(ptr_add(encode(1, 0), 8) == encode(1, 8));
  CHECK(ptr_add(encode(1, 0xffffffffU), 1) == encode(1, 0));
  CHECK(ptr_add({0x2000}, 16).raw == 0x2010);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100000; ++i) {
    EnrichedWord w = encode(rng() % kIdLimit, static_cast<uint32_t>(rng()));
    auto delta = static_cast<int64_t>(rng());
    EnrichedWord r = ptr_add(w, delta);
    REQUIRE((r.raw & kHighHalfMask) == (w.raw & kHighHalfMask));
    REQUIRE(r.offset() == static_cast<uint32_t>(w.offset() + static_cast<uint64_t>(delta)));
  }
}

TEST_CASE("branchless check equals the naive comparison (randomized)") {
  std::mt19937_64 rng(2024);
  size_t disagreements = 0;
  for (int i = 0; i < 1000000; ++i) {
    uint64_t base = rng() & (kUserSpaceEnd - 1);
    uint64_t end = base + 1 + (rng() & 0xfffffffe);
    uint64_t addr;
    switch (rng() % 3) {
      case 0: addr = base + (rng() % (end - base + 64)) - 32; break;
      case 1: addr = base + static_cast<uint64_t>(static_cast<int64_t>(rng() % (1ULL << 34)) - (1LL << 33)); break;
      default: addr = rng() & (kUserSpaceEnd - 1); break;
    }
    uint64_t size = 1ULL << (rng() % 4);
    bool fast = check_bounds(base, end, addr, size) == 0;
    disagreements += fast != naive_in_bounds(base, end, addr, size);
    disagreements += (check_bounds_branching(base, end, addr, size) == 0) != naive_in_bounds(base, end, addr, size);
  }
  CHECK(disagreements == 0);
}

TEST_CASE("branchless check equals the naive comparison (exhaustive window)") {
  for (uint64_t window : {0ULL, 0x1000ULL}) {
    size_t disagreements = 0;
    for (uint64_t size : {1, 2, 4, 8})
      for (uint64_t base = window; base < window + 64; ++base)
        for (uint64_t end = window; end < window + 64; ++end)
          for (uint64_t addr = window; addr < window + 64; ++addr)
            disagreements += (check_bounds(base, end, addr, size) == 0) !=
                             naive_in_bounds(base, end, addr, size);
    CHECK(disagreements == 0);
  }
}

TEST_CASE("debug dump lists touched entries") {
  MetadataTable t(8);
  t.allocate(0x1000, 0x1028);
  t.allocate(0x2000, 0x2004);
  t.release(1);
  std::string d = t.dump();
  CHECK(d.find("0 0x0000000000000000 0x0001000000000000 live") != std::string::npos);
  CHECK(d.find("1 0x0000000000000001 0x0000000000000000 free") != std::string::npos);
  CHECK(d.find("2 0x0000000000002000 0x0000000000002004 live") != std::string::npos);
}
