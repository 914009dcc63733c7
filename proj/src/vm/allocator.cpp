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

#include <algorithm>

#include "cup/memory.hpp"

namespace cup::vm {

uint64_t HeapAllocator::rounded(uint64_t n) {
  return std::max<uint64_t>(kGranule, (n + kGranule - 1) / kGranule * kGranule);
}

void HeapAllocator::write_header(uint64_t p, const Chunk& c) {
  const uint64_t words[2] = {c.capacity | (c.live ? 1 : 0), c.requested};
  mem_.write(p - kHeaderSize, words, sizeof words);
}

uint64_t HeapAllocator::malloc(uint64_t n) {
  if (n > kMaxRequest) return 0;
  const uint64_t need = rounded(n);
  for (uint64_t p : free_) {
    Chunk& c = chunks_.at(p);
    if (c.capacity < need) continue;
    free_.erase(p);
    c.live = true;
    c.requested = n;
    write_header(p, c);
    return p;
  }
  const uint64_t p = top_ + kHeaderSize;
  if (!canonical(p + need)) return 0;
  mem_.map(top_, kHeaderSize + need);
  top_ = p + need;
  Chunk c{need, n, true};
  chunks_[p] = c;
  write_header(p, c);
  return p;
}

bool HeapAllocator::free(uint64_t p) {
  auto it = chunks_.find(p);
  if (it == chunks_.end() || !it->second.live) return false;
  it->second.live = false;
  free_.insert(p);
  write_header(p, it->second);
  return true;
}

HeapAllocator::Realloc HeapAllocator::realloc(uint64_t p, uint64_t n) {
  if (p == 0) {
    uint64_t q = malloc(n);
    return {q != 0, q, true};
  }
  auto it = chunks_.find(p);
  if (it == chunks_.end() || !it->second.live || n > kMaxRequest) return {};
  Chunk& c = it->second;
  const uint64_t need = rounded(n);
  if (need <= c.capacity) {
    c.requested = n;
    write_header(p, c);
    return {true, p, false};
  }
  if (p + c.capacity == top_) {
    mem_.map(top_, need - c.capacity);
    top_ = p + need;
    c.capacity = need;
    c.requested = n;
    write_header(p, c);
    return {true, p, false};
  }
  const uint64_t old_req = c.requested;
  const uint64_t q = malloc(n);
  if (q == 0) return {};
  for (uint64_t i = 0; i < std::min(old_req, n); ++i) mem_.set_byte(q + i, mem_.byte(p + i));
  free(p);
  return {true, q, true};
}

bool HeapAllocator::live(uint64_t p) const {
  auto it = chunks_.find(p);
  return it != chunks_.end() && it->second.live;
}

std::optional<uint64_t> HeapAllocator::requested(uint64_t p) const {
  auto it = chunks_.find(p);
  if (it == chunks_.end() || !it->second.live) return std::nullopt;
  return it->second.requested;
}

std::optional<uint64_t> HeapAllocator::capacity(uint64_t p) const {
  auto it = chunks_.find(p);
  if (it == chunks_.end() || !it->second.live) return std::nullopt;
  return it->second.capacity;
}

}  // namespace cup::vm
