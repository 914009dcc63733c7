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

// Random well-formed programs with at most one injected memory-safety bug.
// The patched twin differs from the buggy program only at the bug.

#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cup/harness.hpp"

namespace cup::harness {

namespace {

enum class Region { stack, heap, global };
enum class Bug { over, under, long_stride, size_edge, uaf, uaf_reuse, stack_uar };

struct Obj {
  std::string reg;
  Region region;
  uint32_t es;
  uint64_t len;
  bool escapes;
  uint64_t bytes() const { return es * len; }
};

std::string type_name(uint32_t es) { return "int" + std::to_string(es * 8); }

class Gen {
 public:
  Gen(uint64_t seed, const GenParams& p) : rng_(seed), p_(p) {}

  CorpusCase build(uint64_t seed) {
    CorpusCase c;
    c.name = "gen-" + std::to_string(seed);
    c.require_violation = false;

    const bool inject = coin(p_.bug_rate);
    for (uint32_t k = 0; k < p_.n_objects; ++k) objs_.push_back(make_object());
    for (const auto& o : objs_) declare(o);
    entry_ << "  i.slot = stack_alloc 8 x 1\n";
    entry_ << "  sum.slot = stack_alloc 8 x 1\n";
    both("  store 8 sum.slot, 0\n");

    const uint32_t bug_at = inject ? uniform(0, p_.n_accesses) : ~0u;
    for (uint32_t a = 0; a <= p_.n_accesses; ++a) {
      if (a == bug_at) inject_bug(c);
      if (a < p_.n_accesses) access();
    }
    for (const auto& o : objs_)
      if (o.region == Region::heap) both("  free " + o.reg + "\n");
    both("  total = load 8 sum.slot\n  call @print_int(total)\n  ret 0\n}\n");

    std::string head = helpers();
    c.buggy = globals_.str() + head + "func main() -> i64 {\n" + entry_.str() + body_.str();
    c.patched = globals_.str() + head + "func main() -> i64 {\n" + entry_.str() + patched_body_.str();
    c.seed = seed;
    return c;
  }

 private:
  bool coin(double p) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }
  uint32_t uniform(uint32_t lo, uint32_t hi) {
    return std::uniform_int_distribution<uint32_t>(lo, hi)(rng_);
  }
  std::string fresh(const std::string& hint) { return hint + std::to_string(counter_++); }

  // Appends to both variants.
  void both(const std::string& s) {
    body_ << s;
    patched_body_ << s;
  }

  Obj make_object(std::optional<Region> region = {}) {
    static constexpr uint32_t sizes[] = {1, 2, 4, 8};
    Obj o;
    o.region = region ? *region : static_cast<Region>(uniform(0, 2));
    o.es = sizes[uniform(0, 3)];
    o.len = uniform(2, p_.max_len);
    o.escapes = coin(0.5);
    o.reg = fresh("obj");
    return o;
  }

  void declare(const Obj& o) {
    switch (o.region) {
      case Region::stack:
        entry_ << "  " << o.reg << " = stack_alloc " << o.es << " x " << o.len << "\n";
        break;
      case Region::heap:
        both("  " + o.reg + " = malloc " + std::to_string(o.bytes()) + "\n");
        break;
      case Region::global: {
        const std::string g = "g." + o.reg;
        globals_ << "global " << g << " = " << type_name(o.es) << " x " << o.len << "\n";
        both("  " + o.reg + " = global_addr " + g + "\n");
        break;
      }
    }
  }

  // An in-bounds access to `o` at element `idx`, either inline or through a
  // helper when the object escapes.
  void touch(const Obj& o, uint64_t idx, bool is_store) { touch_at(o, idx * o.es, o.es, is_store, true); }

  void touch_at(const Obj& o, int64_t off, uint32_t size, bool is_store, bool in_both,
                bool via_helper_allowed = true) {
    std::ostringstream s;
    const bool helper = via_helper_allowed && o.escapes;
    if (helper) {
      used_helpers_[size] = true;
      if (is_store) {
        s << "  " << fresh("r") << " = call put" << size << "(" << o.reg << ", " << off << ", "
          << uniform(0, 200) << ")\n";
      } else {
        const std::string x = fresh("x");
        s << "  " << x << " = call get" << size << "(" << o.reg << ", " << off << ")\n";
        accumulate(s, x);
      }
    } else {
      const std::string p = fresh("p");
      s << "  " << p << " = ptradd " << o.reg << ", " << off << "\n";
      if (is_store) {
        s << "  store " << size << " " << p << ", " << uniform(0, 200) << "\n";
      } else {
        const std::string x = fresh("x");
        s << "  " << x << " = load " << size << " " << p << "\n";
        accumulate(s, x);
      }
    }
    if (in_both)
      both(s.str());
    else
      body_ << s.str();
  }

  void accumulate(std::ostringstream& s, const std::string& x) {
    const std::string a = fresh("acc"), b = fresh("acc");
    s << "  " << a << " = load 8 sum.slot\n";
    s << "  " << b << " = add " << a << ", " << x << "\n";
    s << "  store 8 sum.slot, " << b << "\n";
  }

  void access() {
    const Obj& o = objs_[uniform(0, static_cast<uint32_t>(objs_.size() - 1))];
    switch (uniform(0, 9)) {
      case 0: fill_loop(o); break;
      case 1:
        both("  call @memset(" + o.reg + ", " + std::to_string(uniform(0, 255)) + ", " +
             std::to_string(o.bytes()) + ")\n");
        break;
      default: touch(o, uniform(0, static_cast<uint32_t>(o.len - 1)), coin(0.5)); break;
    }
  }

  void fill_loop(const Obj& o) {
    const std::string head = fresh("head"), body = fresh("body"), done = fresh("done");
    const std::string iv = fresh("i"), c = fresh("c"), off = fresh("off"), p = fresh("p"),
                      nx = fresh("n");
    std::ostringstream s;
    s << "  store 8 i.slot, 0\n  br " << head << "\n";
    s << head << ":\n  " << iv << " = load 8 i.slot\n";
    s << "  " << c << " = slt " << iv << ", " << o.len << "\n";
    s << "  condbr " << c << ", " << body << ", " << done << "\n";
    s << body << ":\n  " << off << " = mul " << iv << ", " << o.es << "\n";
    s << "  " << p << " = ptradd " << o.reg << ", " << off << "\n";
    s << "  store " << o.es << " " << p << ", " << iv << "\n";
    s << "  " << nx << " = add " << iv << ", 1\n  store 8 i.slot, " << nx << "\n";
    s << "  br " << head << "\n" << done << ":\n";
    both(s.str());
  }

  void inject_bug(CorpusCase& c) {
    const auto bug = static_cast<Bug>(uniform(0, 6));
    auto& e = c.expect;
    e.expected_miss = false;
    std::optional<Region> region;
    if (bug == Bug::uaf || bug == Bug::uaf_reuse) region = Region::heap;
    if (bug == Bug::stack_uar) region = Region::stack;
    if (bug == Bug::stack_uar) {
      stack_uar(c);
      return;
    }
    Obj o = make_object(region);
    if (bug == Bug::size_edge && o.es == 8 && o.len < 2) o.len = 2;
    declare(o);
    e.region = o.region == Region::stack ? "stack" : o.region == Region::heap ? "heap" : "global";
    touch(o, 0, true);
    const bool store = coin(0.5);
    switch (bug) {
      case Bug::over:
        e.violation_kind = "spatial_over";
        e.description = "access past the end";
        touch_at(o, static_cast<int64_t>(o.bytes() + o.es * uniform(0, 2)), o.es, store, false);
        break;
      case Bug::under:
        e.violation_kind = "spatial_under";
        e.description = "access before the start";
        touch_at(o, -static_cast<int64_t>(o.es * uniform(1, 3)), o.es, store, false);
        break;
      case Bug::long_stride: {
        e.violation_kind = "long_stride";
        e.description = "far out-of-bounds stride";
        const int64_t far = 4096LL * uniform(1, 64);
        touch_at(o, coin(0.5) ? static_cast<int64_t>(o.bytes()) + far : -far, o.es, store, false);
        break;
      }
      case Bug::size_edge:
        e.violation_kind = "element_size_edge";
        e.description = "8-byte access to the last element";
        touch_at(o, static_cast<int64_t>(o.bytes()) - (o.es == 8 ? 4 : o.es), 8, store, false);
        break;
      case Bug::uaf:
        e.violation_kind = "uaf";
        e.description = "use after free";
        body_ << "  free " << o.reg << "\n";
        touch_at(o, static_cast<int64_t>(o.es * uniform(0, static_cast<uint32_t>(o.len - 1))), o.es,
                 store, false);
        patched_body_ << "  free " << o.reg << "\n";
        return;
      case Bug::uaf_reuse: {
        e.violation_kind = "uaf";
        e.expected_miss = true;
        e.description = "use after free once the entry is reused";
        const std::string fresh_obj = fresh("reuse");
        body_ << "  free " << o.reg << "\n";
        both("  " + fresh_obj + " = malloc " + std::to_string(o.bytes()) + "\n");
        touch_at(o, static_cast<int64_t>(o.es * uniform(0, static_cast<uint32_t>(o.len - 1))), o.es,
                 store, false);
        patched_body_ << "  free " << o.reg << "\n";
        both("  free " + fresh_obj + "\n");
        return;
      }
      case Bug::stack_uar: break;
    }
    if (o.region == Region::heap) both("  free " + o.reg + "\n");
  }

  // A helper returns the address of its own escaping array.
  void stack_uar(CorpusCase& c) {
    c.expect.violation_kind = "uaf";
    c.expect.region = "stack";
    c.expect.description = "use after return";
    const std::string fn = fresh("dangle");
    const uint32_t es = 4;
    const uint64_t len = uniform(2, p_.max_len);
    extra_ << "func " << fn << "() -> ptr {\n  buf = stack_alloc " << es << " x " << len
           << "\n  store " << es << " buf, 7\n  ret buf\n}\n\n";
    const std::string d = fresh("d");
    both("  " + d + " = call " + fn + "()\n");
    const std::string x = fresh("x");
    body_ << "  " << x << " = load " << es << " " << d << "\n";
  }

  std::string helpers() const {
    std::ostringstream s;
    for (const auto& [size, used] : used_helpers_) {
      if (!used) continue;
      s << "func put" << size << "(p: ptr, off: i64, v: i64) -> i64 {\n"
        << "  q = ptradd p, off\n  store " << size << " q, v\n  ret 0\n}\n\n";
      s << "func get" << size << "(p: ptr, off: i64) -> i64 {\n"
        << "  q = ptradd p, off\n  v = load " << size << " q\n  ret v\n}\n\n";
    }
    s << extra_.str();
    return s.str();
  }

  std::mt19937_64 rng_;
  GenParams p_;
  std::vector<Obj> objs_;
  std::ostringstream globals_, entry_, body_, patched_body_, extra_;
  std::map<uint32_t, bool> used_helpers_;
  uint64_t counter_ = 0;
};

}  // namespace

CorpusCase generate_program(uint64_t seed, const GenParams& p) {
  if (p.n_objects < 1 || p.n_objects > 16) throw std::invalid_argument("n_objects must be in 1..16");
  if (p.max_len < 2 || p.max_len > 256) throw std::invalid_argument("max_len must be in 2..256");
  if (p.n_accesses < 1 || p.n_accesses > 128)
    throw std::invalid_argument("n_accesses must be in 1..128");
  if (!(p.bug_rate >= 0 && p.bug_rate <= 1)) throw std::invalid_argument("bug_rate must be in [0, 1]");
  return Gen(seed, p).build(seed);
}

}  // namespace cup::harness
