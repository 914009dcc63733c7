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

// Ground-truth oracle, corpus runner, random program generator and FP/FN
// reporting.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cup/instrument.hpp"
#include "cup/ir.hpp"
#include "cup/vm.hpp"

namespace cup::harness {

// ---------------------------------------------------------------------------
// Oracle

enum class ViolationKind : uint8_t { spatial_over, spatial_under, temporal };
std::string_view to_string(ViolationKind k);

enum class ObjectRegion : uint8_t { stack, heap, global };
std::string_view to_string(ObjectRegion r);

/// Identifies an allocation independently of addresses: the allocating
/// instruction and how many times it had run (1-based). Globals use their
/// name and occurrence 0.
struct ObjectKey {
  std::string function;
  uint32_t instr_index = 0;
  uint64_t occurrence = 0;
  friend bool operator==(const ObjectKey&, const ObjectKey&) = default;
};

struct Violation {
  ViolationKind kind = ViolationKind::spatial_over;
  vm::Site site;
  ObjectKey object;
  ObjectRegion region = ObjectRegion::heap;
  uint64_t object_base = 0;
  uint64_t object_size = 0;
  int64_t offset = 0;  // accessed address minus object base
  uint64_t access_size = 0;
};

struct OracleTrace {
  std::vector<Violation> violations;
  // Dereferences of pointers whose provenance was lost to integer arithmetic.
  uint64_t unknown_provenance = 0;
  uint64_t accesses = 0;
  vm::ExecutionResult result;  // how the shadow run ended; trace is empty

  const Violation* first() const { return violations.empty() ? nullptr : &violations[0]; }
};

struct OracleConfig {
  uint64_t seed = 0;
  uint64_t step_limit = 50'000'000;
};

/// Runs an uninstrumented module with exact pointer provenance, recording
/// every bounds or liveness violation and suppressing the offending access.
OracleTrace oracle_run(const ir::Module& m, const std::vector<int64_t>& args = {},
                       const OracleConfig& config = {});

// ---------------------------------------------------------------------------
// Cases and verdicts

struct Expectation {
  std::string violation_kind;  // spatial_over, spatial_under, uaf, long_stride, element_size_edge
  std::string region;          // stack, heap, global
  bool expected_miss = false;
  bool architecture_dependent = false;
  std::string description;
};

struct CorpusCase {
  std::string name;
  std::string buggy;    // module text
  std::string patched;  // module text
  Expectation expect;
  std::vector<int64_t> args;
  uint64_t seed = 0;
  // Handwritten cases must contain a violation unless architecture dependent.
  bool require_violation = true;
};

/// Loads corpus/<name>/{buggy.mir, patched.mir, expect.json}, sorted by name.
std::vector<CorpusCase> load_corpus(const std::filesystem::path& dir);
CorpusCase load_case(const std::filesystem::path& dir);

enum class Outcome : uint8_t { TP, TN, FP, FN, expected_miss };
std::string_view to_string(Outcome o);

/// Why a clean run of a temporal violation is attributed to ID reuse.
struct ReuseEvidence {
  uint64_t reused_id = 0;
  uint64_t original_base = 0;
  uint64_t new_base = 0;
  uint64_t new_end = 0;
  int64_t offset = 0;
  size_t free_event = 0;
  size_t realloc_event = 0;
  size_t lookup_event = 0;
};

struct Verdict {
  std::string name;
  Expectation expect;
  instrument::Mode mode = instrument::Mode::expanded;
  Outcome outcome = Outcome::TN;
  Outcome patched_outcome = Outcome::TN;
  Outcome buggy_outcome = Outcome::TN;
  vm::ExecutionResult patched_run;  // instrumented, trace dropped
  vm::ExecutionResult buggy_run;    // instrumented, trace dropped
  std::optional<Violation> oracle_first;
  size_t oracle_violations = 0;
  uint64_t unknown_provenance = 0;
  std::optional<ReuseEvidence> evidence;
  // Set when the case itself is malformed.
  std::string invalid;
  std::string detail;
};

struct RunOptions {
  instrument::Mode mode = instrument::Mode::expanded;
  uint64_t table_capacity = cap::kDefaultCapacity;
  uint64_t step_limit = 50'000'000;
};

Verdict run_case(const CorpusCase& c, const RunOptions& opt = {});

/// Runs cases on `threads` workers (0 = hardware concurrency); results are in
/// input order.
std::vector<Verdict> run_cases(const std::vector<CorpusCase>& cases, const RunOptions& opt = {},
                               unsigned threads = 0);

/// Applies `fn(i)` for i in [0, n) on a worker pool.
void parallel_for(size_t n, unsigned threads, const std::function<void(size_t)>& fn);

// ---------------------------------------------------------------------------
// Fail-closed mutants

struct MutantResult {
  std::string case_name;
  uint32_t group = 0;
  vm::Site site;  // the dereference the removed check guarded
  vm::ExecutionResult result;
  // Faulted on a non-canonical address at `site`.
  bool faulted_at_site = false;
};

/// For every check group of the instrumented patched program whose
/// dereference saw an enriched word, removes the group and runs the mutant.
std::vector<MutantResult> mutation_suite(const CorpusCase& c,
                                         instrument::Mode mode = instrument::Mode::expanded);

// ---------------------------------------------------------------------------
// Generator

struct GenParams {
  uint32_t n_objects = 4;    // 1..16
  uint32_t max_len = 16;     // 2..256
  uint32_t n_accesses = 12;  // 1..128
  double bug_rate = 1.0;     // 0..1
};

/// Throws std::invalid_argument for parameters outside the documented ranges.
CorpusCase generate_program(uint64_t seed, const GenParams& params = {});

// ---------------------------------------------------------------------------
// Reporting

struct Counts {
  size_t total = 0, tp = 0, tn = 0, fp = 0, fn = 0, expected_miss = 0, invalid = 0;
  void add(const Verdict& v);
  double fp_rate() const;  // FP / total
  double fn_rate() const;  // FN / (TP + FN)
};

struct BenchResult {
  uint64_t checks = 0;
  double branchless_ns = 0;
  double branching_ns = 0;
  uint64_t failures = 0;  // how many synthetic checks failed (same for both)
};

/// Times the branchless and branching bounds tests on `n` synthetic tuples.
BenchResult microbenchmark(uint64_t n, uint64_t seed = 1);

struct Summary {
  Counts overall;
  std::vector<std::pair<std::string, Counts>> by_kind;
  std::vector<std::pair<std::string, Counts>> by_region;
  // expected_miss verdicts on cases not designated for it.
  size_t undesignated_misses = 0;
};

Summary summarize(const std::vector<Verdict>& verdicts);

std::string report_json(const std::vector<Verdict>& verdicts,
                        const std::optional<BenchResult>& bench = {}, int indent = 2);
std::string report_text(const std::vector<Verdict>& verdicts,
                        const std::optional<BenchResult>& bench = {});

/// True if the run has no FP, FN or invalid case and every expected_miss is
/// designated.
bool gate_passes(const std::vector<Verdict>& verdicts);

}  // namespace cup::harness
