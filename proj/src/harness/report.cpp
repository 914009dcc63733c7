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

#include <chrono>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

#include "cup/capability.hpp"
#include "cup/harness.hpp"
#include "json.hpp"

namespace cup::harness {

using nlohmann::json;

void Counts::add(const Verdict& v) {
  ++total;
  if (!v.invalid.empty()) {
    ++invalid;
    return;
  }
  switch (v.outcome) {
    case Outcome::TP: ++tp; break;
    case Outcome::TN: ++tn; break;
    case Outcome::FP: ++fp; break;
    case Outcome::FN: ++fn; break;
    case Outcome::expected_miss: ++expected_miss; break;
  }
}

double Counts::fp_rate() const { return total ? static_cast<double>(fp) / total : 0.0; }
double Counts::fn_rate() const { return tp + fn ? static_cast<double>(fn) / (tp + fn) : 0.0; }

namespace {

struct Tuple {
  uint64_t base, end, addr, size;
};

[[gnu::noinline]] uint64_t run_branchless(const std::vector<Tuple>& t, uint64_t n) {
  uint64_t acc = 0;
  const size_t m = t.size();
  for (uint64_t i = 0; i < n; ++i) {
    const Tuple& x = t[i & (m - 1)];
    acc += cap::check_bounds(x.base, x.end, x.addr, x.size) >> 63;
  }
  return acc;
}

[[gnu::noinline]] uint64_t run_branching(const std::vector<Tuple>& t, uint64_t n) {
  uint64_t acc = 0;
  const size_t m = t.size();
  for (uint64_t i = 0; i < n; ++i) {
    const Tuple& x = t[i & (m - 1)];
    acc += cap::check_bounds_branching(x.base, x.end, x.addr, x.size) >> 63;
  }
  return acc;
}

std::string kind_label(const Verdict& v) {
  if (!v.expect.violation_kind.empty()) return v.expect.violation_kind;
  return v.oracle_first ? std::string(to_string(v.oracle_first->kind)) : "none";
}

std::string region_label(const Verdict& v) {
  if (!v.expect.region.empty()) return v.expect.region;
  return v.oracle_first ? std::string(to_string(v.oracle_first->region)) : "none";
}

std::string hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

json counts_json(const Counts& c) {
  return {{"total", c.total}, {"TP", c.tp},       {"TN", c.tn},
          {"FP", c.fp},       {"FN", c.fn},       {"expected_miss", c.expected_miss},
          {"invalid", c.invalid}, {"fp_rate", c.fp_rate()}, {"fn_rate", c.fn_rate()}};
}

json verdict_json(const Verdict& v) {
  json j{{"name", v.name},
         {"kind", kind_label(v)},
         {"region", region_label(v)},
         {"outcome", v.invalid.empty() ? std::string(to_string(v.outcome)) : "invalid"},
         {"patched_outcome", to_string(v.patched_outcome)},
         {"buggy_outcome", to_string(v.buggy_outcome)},
         {"expected_miss_designated", v.expect.expected_miss},
         {"architecture_dependent", v.expect.architecture_dependent},
         {"oracle_violations", v.oracle_violations},
         {"unknown_provenance", v.unknown_provenance}};
  if (!v.expect.description.empty()) j["description"] = v.expect.description;
  if (!v.invalid.empty()) {
    j["invalid"] = v.invalid;
    return j;
  }
  j["patched_run"] = json::parse(v.patched_run.outcome_json());
  j["buggy_run"] = json::parse(v.buggy_run.outcome_json());
  if (v.oracle_first) {
    const auto& o = *v.oracle_first;
    j["first_violation"] = {{"kind", to_string(o.kind)},
                            {"function", o.site.function},
                            {"instr_index", o.site.instr_index},
                            {"line", o.site.line},
                            {"region", to_string(o.region)},
                            {"object", {{"function", o.object.function},
                                        {"instr_index", o.object.instr_index},
                                        {"occurrence", o.object.occurrence}}},
                            {"object_base", hex(o.object_base)},
                            {"object_size", o.object_size},
                            {"offset", o.offset},
                            {"access_size", o.access_size}};
  }
  if (v.evidence) {
    const auto& e = *v.evidence;
    j["reuse_evidence"] = {{"id", e.reused_id},
                           {"original_base", hex(e.original_base)},
                           {"new_base", hex(e.new_base)},
                           {"new_end", hex(e.new_end)},
                           {"offset", e.offset},
                           {"free_event", e.free_event},
                           {"realloc_event", e.realloc_event},
                           {"lookup_event", e.lookup_event}};
  }
  if (!v.detail.empty()) j["detail"] = v.detail;
  return j;
}

}  // namespace

BenchResult microbenchmark(uint64_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tuple> tuples(1 << 14);  // power of two for the index mask
  for (auto& t : tuples) {
    t.base = rng() >> 20;
    t.end = t.base + 1 + rng() % 4096;
    t.size = 1ULL << (rng() % 4);
    const uint64_t span = t.end - t.base;
    t.addr = rng() % 2 ? t.base + rng() % span : t.end - t.size + 1 + rng() % 64;
  }
  using clock = std::chrono::steady_clock;
  BenchResult r;
  r.checks = n;
  auto t0 = clock::now();
  const uint64_t a = run_branchless(tuples, n);
  auto t1 = clock::now();
  const uint64_t b = run_branching(tuples, n);
  auto t2 = clock::now();
  if (a != b) throw std::logic_error("branchless and branching bounds tests disagree");
  r.failures = a;
  const double dn = n ? static_cast<double>(n) : 1.0;
  r.branchless_ns = std::chrono::duration<double, std::nano>(t1 - t0).count() / dn;
  r.branching_ns = std::chrono::duration<double, std::nano>(t2 - t1).count() / dn;
  return r;
}

Summary summarize(const std::vector<Verdict>& verdicts) {
  Summary s;
  std::map<std::string, Counts> kinds, regions;
  for (const auto& v : verdicts) {
    s.overall.add(v);
    kinds[kind_label(v)].add(v);
    regions[region_label(v)].add(v);
    if (v.invalid.empty() && v.outcome == Outcome::expected_miss && !v.expect.expected_miss)
      ++s.undesignated_misses;
  }
  s.by_kind.assign(kinds.begin(), kinds.end());
  s.by_region.assign(regions.begin(), regions.end());
  return s;
}

bool gate_passes(const std::vector<Verdict>& verdicts) {
  const auto s = summarize(verdicts);
  return s.overall.fp == 0 && s.overall.fn == 0 && s.overall.invalid == 0 &&
         s.undesignated_misses == 0;
}

std::string report_json(const std::vector<Verdict>& verdicts, const std::optional<BenchResult>& bench,
                        int indent) {
  const auto s = summarize(verdicts);
  json j;
  j["mode"] = verdicts.empty() ? "expanded" : std::string(instrument::to_string(verdicts[0].mode));
  j["summary"] = counts_json(s.overall);
  j["summary"]["undesignated_misses"] = s.undesignated_misses;
  j["summary"]["passed"] = gate_passes(verdicts);
  j["by_kind"] = json::object();
  for (const auto& [k, c] : s.by_kind) j["by_kind"][k] = counts_json(c);
  j["by_region"] = json::object();
  for (const auto& [k, c] : s.by_region) j["by_region"][k] = counts_json(c);
  j["cases"] = json::array();
  for (const auto& v : verdicts) j["cases"].push_back(verdict_json(v));
  if (bench)
    j["benchmark"] = {{"checks", bench->checks},
                      {"branchless_ns_per_check", bench->branchless_ns},
                      {"branching_ns_per_check", bench->branching_ns},
                      {"failing_checks", bench->failures}};
  return j.dump(indent);
}

std::string report_text(const std::vector<Verdict>& verdicts, const std::optional<BenchResult>& bench) {
  const auto s = summarize(verdicts);
  std::ostringstream os;
  char line[256];
  auto row = [&](const std::string& label, const Counts& c) {
    std::snprintf(line, sizeof line, "%-22s %5zu %4zu %4zu %4zu %4zu %5zu %4zu %7.3f %7.3f\n",
                  label.c_str(), c.total, c.tp, c.tn, c.fp, c.fn, c.expected_miss, c.invalid,
                  c.fp_rate(), c.fn_rate());
    os << line;
  };
  auto header = [&](const char* title) {
    std::snprintf(line, sizeof line, "%-22s %5s %4s %4s %4s %4s %5s %4s %7s %7s\n", title, "total",
                  "TP", "TN", "FP", "FN", "miss", "inv", "fp_rate", "fn_rate");
    os << line;
  };
  for (const auto& v : verdicts) {
    os << (v.invalid.empty() ? std::string(to_string(v.outcome)) : "invalid") << "\t" << v.name;
    if (!v.invalid.empty())
      os << "\t" << v.invalid;
    else if (!v.detail.empty())
      os << "\t" << v.detail;
    os << "\n";
  }
  os << "\n";
  header("kind");
  for (const auto& [k, c] : s.by_kind) row(k, c);
  os << "\n";
  header("region");
  for (const auto& [k, c] : s.by_region) row(k, c);
  os << "\n";
  row("all", s.overall);
  if (s.undesignated_misses) os << "expected_miss on undesignated cases: " << s.undesignated_misses << "\n";
  if (bench) {
    std::snprintf(line, sizeof line, "bounds test: %.3f ns branchless, %.3f ns branching (%llu checks)\n",
                  bench->branchless_ns, bench->branching_ns,
                  static_cast<unsigned long long>(bench->checks));
    os << line;
  }
  return os.str();
}

}  // namespace cup::harness
