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

// Acceptance run: one PASS/FAIL line per criterion with its wall time.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cup/capability.hpp"
#include "cup/harness.hpp"
#include "cup/text.hpp"
#include "json.hpp"

using namespace cup;
using namespace cup::harness;

namespace {

struct Result {
  bool pass = false;
  std::string note;
};

using Criterion = std::function<Result()>;

bool naive_in_bounds(uint64_t base, uint64_t end, uint64_t addr, uint64_t size) {
  using u128 = unsigned __int128;
  return base <= addr && u128(addr) + size <= u128(end);
}

// Fuzz cases vary size and shape with the seed; every tenth has no bug.
CorpusCase fuzz_case(uint64_t s) {
  GenParams p;
  p.n_objects = 1 + static_cast<uint32_t>(s % 8);
  p.max_len = 2 + static_cast<uint32_t>(s % 63);
  p.n_accesses = 4 + static_cast<uint32_t>(s % 41);
  p.bug_rate = s % 10 == 0 ? 0.0 : 1.0;
  return generate_program(s, p);
}

const std::vector<CorpusCase>& corpus() {
  static const auto cases = load_corpus(CUP_CORPUS_DIR);
  return cases;
}

std::string summary_note(const std::vector<Verdict>& vs) {
  const auto s = summarize(vs);
  std::ostringstream os;
  os << s.overall.total << " cases: " << s.overall.tp << " TP, " << s.overall.tn << " TN, "
     << s.overall.fp << " FP, " << s.overall.fn << " FN, " << s.overall.expected_miss
     << " expected_miss, " << s.overall.invalid << " invalid";
  if (s.undesignated_misses) os << ", " << s.undesignated_misses << " undesignated misses";
  for (const auto& v : vs)
    if (!v.invalid.empty() || v.outcome == Outcome::FP || v.outcome == Outcome::FN) {
      os << "; first problem " << v.name << ": " << (v.invalid.empty() ? v.detail : v.invalid);
      break;
    }
  return os.str();
}

Result codec_and_table() {
  std::mt19937_64 rng(1);
  size_t bad = 0;
  for (int i = 0; i < 100000; ++i) {
    const uint64_t id = rng() % cap::kIdLimit;
    const auto off = static_cast<uint32_t>(rng());
    const auto d = cap::decode(cap::encode(id, off));
    bad += !(d.enriched && d.effective_id == id && d.offset == off);
  }
  cap::MetadataTable t(16);
  std::vector<uint32_t> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(t.allocate(0x1000 * (i + 1), 0x1000 * (i + 1) + 16).id);
  t.release(2);
  t.release(1);
  const uint32_t r1 = t.allocate(0x8000, 0x8010).id;
  const uint32_t r2 = t.allocate(0x9000, 0x9010).id;
  const bool trace_ok = ids == std::vector<uint32_t>{1, 2, 3} && r1 == 1 && r2 == 2 && t.next_entry() == 4;
  return {bad == 0 && trace_ok, std::to_string(bad) + " round-trip mismatches; hand trace " +
                                    (trace_ok ? "matches" : "differs")};
}

Result branchless_equivalence() {
  std::mt19937_64 rng(2024);
  size_t bad = 0;
  for (int i = 0; i < 1000000; ++i) {
    const uint64_t base = rng() & (cap::kUserSpaceEnd - 1);
    const uint64_t end = base + 1 + (rng() & 0xfffffffe);
    uint64_t addr;
    switch (rng() % 3) {
      case 0: addr = base + (rng() % (end - base + 64)) - 32; break;
      case 1: addr = base + static_cast<uint64_t>(static_cast<int64_t>(rng() % (1ULL << 34)) - (1LL << 33)); break;
      default: addr = rng() & (cap::kUserSpaceEnd - 1); break;
    }
    const uint64_t size = 1ULL << (rng() % 4);
    bad += (cap::check_bounds(base, end, addr, size) == 0) != naive_in_bounds(base, end, addr, size);
  }
  size_t exhaustive = 0;
  for (uint64_t size : {1, 2, 4, 8})
    for (uint64_t base = 0x1000; base < 0x1040; ++base)
      for (uint64_t end = 0x1000; end < 0x1040; ++end)
        for (uint64_t addr = 0x1000; addr < 0x1040; ++addr) {
          ++exhaustive;
          bad += (cap::check_bounds(base, end, addr, size) == 0) != naive_in_bounds(base, end, addr, size);
        }
  return {bad == 0, std::to_string(bad) + " disagreements over 1000000 random and " +
                        std::to_string(exhaustive) + " exhaustive tuples"};
}

Result corpus_gate() {
  bool pass = corpus().size() >= 40;
  std::string note;
  for (auto mode : {instrument::Mode::intrinsic, instrument::Mode::expanded}) {
    RunOptions opt;
    opt.mode = mode;
    const auto vs = run_cases(corpus(), opt);
    bool evidence = true;
    for (const auto& v : vs)
      if (v.outcome == Outcome::expected_miss && !v.evidence) evidence = false;
    pass = pass && gate_passes(vs) && evidence;
    note += std::string(note.empty() ? "" : " | ") + std::string(instrument::to_string(mode)) + ": " +
            summary_note(vs);
  }
  return {pass, note};
}

Result fuzz_gate() {
  std::vector<CorpusCase> cases;
  for (uint64_t s = 1; s <= 1000; ++s) cases.push_back(fuzz_case(s));
  const auto vs = run_cases(cases);
  const auto s = summarize(vs);
  return {s.overall.fp == 0 && s.overall.fn == 0 && s.overall.invalid == 0 && s.undesignated_misses == 0,
          summary_note(vs)};
}

Result mutation_gate() {
  size_t programs = 0, mutants = 0, faulted = 0;
  std::string first_bad;
  for (const auto& c : corpus()) {
    if (programs == 20) break;
    bool any = false;
    for (auto mode : {instrument::Mode::intrinsic, instrument::Mode::expanded}) {
      for (const auto& m : mutation_suite(c, mode)) {
        any = true;
        ++mutants;
        faulted += m.faulted_at_site;
        if (!m.faulted_at_site && first_bad.empty())
          first_bad = c.name + " " + m.site.str() + ": " + m.result.describe();
      }
    }
    programs += any;
  }
  return {programs == 20 && mutants > 0 && faulted == mutants,
          std::to_string(faulted) + "/" + std::to_string(mutants) + " mutants fault over " +
              std::to_string(programs) + " programs" + (first_bad.empty() ? "" : "; " + first_bad)};
}

Result mode_equivalence() {
  std::vector<std::pair<std::string, std::string>> programs;
  for (const auto& c : corpus()) {
    programs.emplace_back(c.name + "/buggy", c.buggy);
    programs.emplace_back(c.name + "/patched", c.patched);
  }
  for (uint64_t s = 5000; s < 5200; ++s) {
    const auto c = fuzz_case(s);
    programs.emplace_back(c.name + "/buggy", c.buggy);
    programs.emplace_back(c.name + "/patched", c.patched);
  }
  std::vector<int> same(programs.size(), 0);
  std::vector<std::string> why(programs.size());
  parallel_for(programs.size(), 0, [&](size_t i) {
    const auto m = ir::parse_or_throw(programs[i].second, programs[i].first);
    std::vector<int64_t> args;
    for (const auto& c : corpus())
      if (programs[i].first.rfind(c.name + "/", 0) == 0) args = c.args;
    const auto a = vm::run(instrument::instrument_module(m, instrument::Mode::intrinsic).module, args);
    const auto b = vm::run(instrument::instrument_module(m, instrument::Mode::expanded).module, args);
    same[i] = a.equivalent(b);
    if (!same[i]) why[i] = programs[i].first + ": " + a.describe() + " vs " + b.describe();
  });
  size_t diff = 0;
  std::string first;
  for (size_t i = 0; i < programs.size(); ++i)
    if (!same[i]) {
      ++diff;
      if (first.empty()) first = why[i];
    }
  return {diff == 0, std::to_string(programs.size() - diff) + "/" + std::to_string(programs.size()) +
                         " programs identical" + (first.empty() ? "" : "; " + first)};
}

Result id_pressure() {
  const char* text = R"(func work(n: i64) -> i64 {
  a = stack_alloc 4 x 32
  b = stack_alloc 8 x 16
  i = stack_alloc 8 x 1
  store 8 i, 0
  br head
head:
  k = load 8 i
  c = slt k, n
  condbr c, body, done
body:
  off = mul k, 4
  p = ptradd a, off
  store 4 p, k
  m = and k, 15
  off8 = mul m, 8
  q = ptradd b, off8
  store 8 q, k
  nx = add k, 1
  store 8 i, nx
  br head
done:
  v = load 4 a
  ret v
}

func main() -> i64 {
  h = malloc 64
  x = call work(32)
  y = call work(8)
  free h
  ret 0
})";
  const auto m = ir::parse_or_throw(text, "pressure.mir");
  bool pass = true;
  size_t calls = 0;
  for (auto mode : {instrument::Mode::intrinsic, instrument::Mode::expanded}) {
    vm::Config cfg;
    cfg.trace = true;
    const auto r = vm::run(instrument::instrument_module(m, mode).module, {}, cfg);
    pass = pass && r.exited_ok();
    std::vector<uint64_t> enter;
    for (const auto& e : r.trace) {
      if (e.site.function != "work") continue;
      if (e.kind == vm::EventKind::meta_alloc || e.kind == vm::EventKind::meta_free) pass = false;
      if (e.kind == vm::EventKind::call_enter) enter.push_back(e.a);
      if (e.kind == vm::EventKind::call_exit) {
        ++calls;
        if (enter.empty() || enter.back() != e.a) pass = false;
        if (!enter.empty()) enter.pop_back();
      }
    }
  }
  return {pass && calls == 4, std::to_string(calls) + " calls of a local-array function; next_entry " +
                                  (pass ? "unchanged" : "changed")};
}

Result uaf_determinism() {
  size_t eligible = 0, deterministic = 0, skipped = 0;
  std::string first_bad;
  for (const auto& c : corpus()) {
    if (c.expect.violation_kind != "uaf" || c.expect.expected_miss) continue;
    const auto m = ir::parse_or_throw(c.buggy, c.name);
    for (auto mode : {instrument::Mode::intrinsic, instrument::Mode::expanded}) {
      const auto im = instrument::instrument_module(m, mode);
      vm::Config cfg;
      cfg.trace = true;
      cfg.seed = c.seed;
      const auto r = vm::run(im.module, c.args, cfg);
      // The entry the faulting lookup read must be freed: its latest
      // metadata event is meta_free.
      std::optional<uint64_t> id;
      if (r.kind == vm::ExecutionResult::Kind::hardware_fault)
        for (auto it = r.trace.rbegin(); it != r.trace.rend(); ++it)
          if (it->kind == vm::EventKind::meta_lookup && it->site.same_place(r.fault->site)) {
            id = it->id;
            break;
          }
      bool freed = false;
      if (id)
        for (auto it = r.trace.rbegin(); it != r.trace.rend(); ++it)
          if (it->id == *id &&
              (it->kind == vm::EventKind::meta_alloc || it->kind == vm::EventKind::meta_free)) {
            freed = it->kind == vm::EventKind::meta_free;
            break;
          }
      if (id && !freed) {
        ++skipped;  // the ID was reused before the access
        continue;
      }
      ++eligible;
      bool same = r.kind == vm::ExecutionResult::Kind::hardware_fault && id;
      for (uint64_t seed : {1, 2, 3}) {
        auto again = cfg;
        again.seed = seed;
        again.trace = false;
        same = same && vm::run(im.module, c.args, again).equivalent(r);
      }
      const auto v = run_case(c, {mode});
      same = same && v.outcome == Outcome::TP;
      deterministic += same;
      if (!same && first_bad.empty()) first_bad = c.name + ": " + r.describe();
    }
  }
  return {eligible > 0 && deterministic == eligible,
          std::to_string(deterministic) + "/" + std::to_string(eligible) +
              " case runs fault on a freed entry (" + std::to_string(skipped) +
              " runs with the ID already reused excluded)" + (first_bad.empty() ? "" : "; " + first_bad)};
}

nlohmann::json bench_json;

Result benchmark() {
  const auto b = microbenchmark(10'000'000);
  bench_json = {{"checks", b.checks},
                {"branchless_ns_per_check", b.branchless_ns},
                {"branching_ns_per_check", b.branching_ns},
                {"failing_checks", b.failures}};
  char buf[200];
  std::snprintf(buf, sizeof buf, "%.3f ns branchless vs %.3f ns branching per check over %llu checks",
                b.branchless_ns, b.branching_ns, static_cast<unsigned long long>(b.checks));
  return {true, buf};
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    double limit_s;  // 0: no limit
    Criterion run;
  };
  const std::vector<Entry> criteria = {
      {"codec and table unit suite", 5, codec_and_table},
      {"branchless check equivalence", 30, branchless_equivalence},
      {"corpus gate (both modes)", 120, corpus_gate},
      {"differential fuzz gate (1000 cases)", 600, fuzz_gate},
      {"fail-closed mutation suite", 300, mutation_gate},
      {"mode equivalence", 0, mode_equivalence},
      {"ID-pressure property", 0, id_pressure},
      {"UAF-before-reuse determinism", 0, uaf_determinism},
      {"bounds-check microbenchmark (informational)", 0, benchmark},
  };
  int failures = 0;
  nlohmann::json report = nlohmann::json::array();
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Result o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.note += "; exceeded " + std::to_string(static_cast<int>(c.limit_s)) + " s";
    }
    failures += !o.pass;
    std::printf("%s %zu %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, secs, o.note.c_str());
    std::fflush(stdout);
    report.push_back({{"criterion", i + 1}, {"name", c.name}, {"pass", o.pass}, {"seconds", secs},
                      {"note", o.note}});
  }
  std::ofstream("acceptance_report.json") << nlohmann::json{{"criteria", report}, {"benchmark", bench_json}}.dump(2)
                                          << "\n";
  return failures ? 1 : 0;
}
