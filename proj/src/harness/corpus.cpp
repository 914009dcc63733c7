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
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cup/harness.hpp"
#include "cup/text.hpp"
#include "json.hpp"

namespace cup::harness {

namespace fs = std::filesystem;
using vm::EventKind;
using vm::ExecutionResult;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool kind_matches(const std::string& expected, ViolationKind got) {
  if (expected.empty()) return true;
  if (expected == "uaf" || expected == "temporal") return got == ViolationKind::temporal;
  if (expected == "long_stride")
    return got == ViolationKind::spatial_over || got == ViolationKind::spatial_under;
  if (expected == "spatial_over" || expected == "element_size_edge")
    return got == ViolationKind::spatial_over;
  if (expected == "spatial_under") return got == ViolationKind::spatial_under;
  return false;
}

std::optional<ir::Module> parse_variant(const std::string& text, const std::string& name,
                                        std::string& error) {
  auto r = ir::parse(text, name);
  if (r.ok()) return std::move(r.module);
  error = name + ": " + (r.errors.empty() ? std::string("parse failed") : r.errors[0].str());
  return std::nullopt;
}

// Finds a lookup at the violating site whose ID was released by the
// violated object and since handed to another allocation.
std::optional<ReuseEvidence> find_reuse(const std::vector<vm::Event>& trace, const Violation& v) {
  for (size_t l = 0; l < trace.size(); ++l) {
    const auto& e = trace[l];
    if (e.kind != EventKind::meta_lookup || e.id == 0 || !e.site.same_place(v.site)) continue;
    const uint64_t id = e.id;
    auto last_before = [&](size_t limit, EventKind k, auto&& pred) -> std::optional<size_t> {
      for (size_t i = limit; i-- > 0;)
        if (trace[i].kind == k && trace[i].id == id && pred(trace[i])) return i;
      return std::nullopt;
    };
    auto any = [](const vm::Event&) { return true; };
    const auto r = last_before(l, EventKind::meta_alloc, any);
    if (!r) continue;
    const auto fr = last_before(*r, EventKind::meta_free, any);
    if (!fr) continue;
    const auto a = last_before(*fr, EventKind::meta_alloc,
                               [&](const vm::Event& x) { return x.a == v.object_base; });
    if (!a) continue;
    ReuseEvidence ev;
    ev.reused_id = id;
    ev.original_base = trace[*a].a;
    ev.new_base = trace[*r].a;
    ev.new_end = trace[*r].b;
    ev.offset = v.offset;
    ev.free_event = *fr;
    ev.realloc_event = *r;
    ev.lookup_event = l;
    return ev;
  }
  return std::nullopt;
}

ExecutionResult without_trace(ExecutionResult r) {
  r.trace.clear();
  r.trace.shrink_to_fit();
  return r;
}

}  // namespace

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::TP: return "TP";
    case Outcome::TN: return "TN";
    case Outcome::FP: return "FP";
    case Outcome::FN: return "FN";
    case Outcome::expected_miss: return "expected_miss";
  }
  return "?";
}

CorpusCase load_case(const fs::path& dir) {
  CorpusCase c;
  c.name = dir.filename().string();
  c.buggy = slurp(dir / "buggy.mir");
  c.patched = slurp(dir / "patched.mir");
  const auto j = nlohmann::json::parse(slurp(dir / "expect.json"));
  auto& e = c.expect;
  e.violation_kind = j.value("violation_kind", "");
  e.region = j.value("region", "");
  e.expected_miss = j.value("expected_miss", false);
  e.architecture_dependent = j.value("architecture_dependent", false);
  e.description = j.value("description", "");
  if (j.contains("args")) c.args = j["args"].get<std::vector<int64_t>>();
  c.seed = j.value("seed", uint64_t{0});
  return c;
}

std::vector<CorpusCase> load_corpus(const fs::path& dir) {
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "expect.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<CorpusCase> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_case(d));
  return out;
}

Verdict run_case(const CorpusCase& c, const RunOptions& opt) {
  Verdict v;
  v.name = c.name;
  v.expect = c.expect;
  v.mode = opt.mode;

  const auto buggy = parse_variant(c.buggy, c.name + "/buggy.mir", v.invalid);
  const auto patched = buggy ? parse_variant(c.patched, c.name + "/patched.mir", v.invalid) : std::nullopt;
  if (!buggy || !patched) return v;

  vm::Config plain_cfg;
  plain_cfg.seed = c.seed;
  plain_cfg.step_limit = opt.step_limit;
  const auto patched_plain = vm::run(*patched, c.args, plain_cfg);
  if (!patched_plain.exited_ok()) {
    v.invalid = "patched variant does not exit 0 uninstrumented: " + patched_plain.describe();
    return v;
  }
  const OracleConfig ocfg{c.seed, opt.step_limit};
  const auto patched_oracle = oracle_run(*patched, c.args, ocfg);
  if (!patched_oracle.violations.empty()) {
    v.invalid = "patched variant has a " + std::string(to_string(patched_oracle.violations[0].kind)) +
                " violation at " + patched_oracle.violations[0].site.str();
    return v;
  }
  const auto buggy_oracle = oracle_run(*buggy, c.args, ocfg);
  v.oracle_violations = buggy_oracle.violations.size();
  v.unknown_provenance = buggy_oracle.unknown_provenance;
  if (const auto* first = buggy_oracle.first()) {
    v.oracle_first = *first;
    if (!kind_matches(c.expect.violation_kind, first->kind)) {
      v.invalid = "oracle reports " + std::string(to_string(first->kind)) + " but the case expects " +
                  c.expect.violation_kind;
      return v;
    }
  } else if (c.require_violation && !c.expect.architecture_dependent) {
    v.invalid = "buggy variant has no violation";
    return v;
  }

  instrument::InstrumentedModule ib, ip;
  try {
    ib = instrument::instrument_module(*buggy, opt.mode);
    ip = instrument::instrument_module(*patched, opt.mode);
  } catch (const instrument::InstrumentError& e) {
    v.invalid = std::string("instrumentation failed: ") + e.what();
    return v;
  }

  vm::Config cfg = plain_cfg;
  cfg.table_capacity = opt.table_capacity;
  v.patched_run = vm::run(ip.module, c.args, cfg);
  if (v.patched_run.equivalent(patched_plain)) {
    v.patched_outcome = Outcome::TN;
  } else {
    v.patched_outcome = Outcome::FP;
    v.detail = "patched: " + v.patched_run.describe() + " instead of " + patched_plain.describe();
  }

  cfg.trace = true;
  auto run = vm::run(ib.module, c.args, cfg);
  const Violation* first = v.oracle_first ? &*v.oracle_first : nullptr;
  switch (run.kind) {
    case ExecutionResult::Kind::hardware_fault:
      if (first && run.fault->site.same_place(first->site)) {
        v.buggy_outcome = Outcome::TP;
      } else {
        v.buggy_outcome = Outcome::FP;
        v.detail += (v.detail.empty() ? "" : "; ") + std::string("buggy: fault at ") + run.fault->site.str() +
                    (first ? " but first violation at " + first->site.str() : " without a violation");
      }
      break;
    case ExecutionResult::Kind::vm_error:
    case ExecutionResult::Kind::exit:
      if (first) {
        if (first->kind == ViolationKind::temporal) v.evidence = find_reuse(run.trace, *first);
        v.buggy_outcome = v.evidence ? Outcome::expected_miss : Outcome::FN;
        if (!v.evidence)
          v.detail += (v.detail.empty() ? "" : "; ") + std::string("buggy: ") + run.describe() +
                      " despite " + std::string(to_string(first->kind)) + " at " + first->site.str();
      } else {
        const auto buggy_plain = vm::run(*buggy, c.args, plain_cfg);
        if (run.equivalent(buggy_plain)) {
          v.buggy_outcome = Outcome::TN;
        } else {
          v.buggy_outcome = Outcome::FP;
          v.detail += (v.detail.empty() ? "" : "; ") + std::string("buggy: ") + run.describe() +
                      " instead of " + buggy_plain.describe();
        }
      }
      break;
  }
  v.buggy_run = without_trace(std::move(run));
  v.outcome = v.patched_outcome == Outcome::FP ? Outcome::FP : v.buggy_outcome;
  return v;
}

std::vector<MutantResult> mutation_suite(const CorpusCase& c, instrument::Mode mode) {
  const auto m = ir::parse_or_throw(c.patched, c.name + "/patched.mir");
  const auto im = instrument::instrument_module(m, mode);
  vm::Config cfg;
  cfg.seed = c.seed;
  cfg.trace = true;
  const auto base = vm::run(im.module, c.args, cfg);
  std::set<std::pair<std::string, uint32_t>> enriched_sites;
  for (const auto& e : base.trace)
    if (e.kind == EventKind::meta_lookup && e.id != 0)
      enriched_sites.emplace(e.site.function, e.site.instr_index);

  std::vector<MutantResult> out;
  cfg.trace = false;
  for (const auto& g : im.groups) {
    if (g.reason != instrument::Reason::check) continue;
    const auto& fn = im.module.functions[g.function].name;
    if (!enriched_sites.count({fn, g.loc.instr_index})) continue;
    MutantResult r;
    r.case_name = c.name;
    r.group = g.id;
    r.site = {fn, g.loc.instr_index, g.loc.line};
    r.result = vm::run(instrument::remove_group(im, g.id), c.args, cfg);
    r.faulted_at_site = r.result.kind == ExecutionResult::Kind::hardware_fault &&
                        r.result.fault->non_canonical && r.result.fault->site.same_place(r.site);
    out.push_back(std::move(r));
  }
  return out;
}

void parallel_for(size_t n, unsigned threads, const std::function<void(size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<size_t>(threads, std::max<size_t>(n, 1)));
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

std::vector<Verdict> run_cases(const std::vector<CorpusCase>& cases, const RunOptions& opt,
                               unsigned threads) {
  std::vector<Verdict> out(cases.size());
  parallel_for(cases.size(), threads, [&](size_t i) { out[i] = run_case(cases[i], opt); });
  return out;
}

}  // namespace cup::harness
