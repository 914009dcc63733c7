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

// Command-line front end: validate, analyze, instrument, run, generate and
// harness.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cup/analysis.hpp"
#include "cup/harness.hpp"
#include "cup/instrument.hpp"
#include "cup/text.hpp"
#include "cup/vm.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cup;

namespace {

constexpr int kFaultExit = 42;
constexpr int kErrorExit = 2;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Parses or prints every diagnostic and returns nullopt.
std::optional<ir::Module> load(const std::string& path) {
  auto r = ir::parse(slurp(path), path);
  if (!r.ok()) {
    for (const auto& d : r.errors) std::cerr << path << ": " << d.str() << "\n";
    return std::nullopt;
  }
  return std::move(r.module);
}

instrument::Mode parse_mode(const std::string& s) {
  auto m = instrument::mode_from_string(s);
  if (!m) throw CLI::ValidationError("--mode", "expected intrinsic or expanded");
  return *m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cup: capability-based memory safety on a toy IR"};
  app.require_subcommand(1);

  std::string input;

  auto* validate = app.add_subcommand("validate", "Parse and validate a module");
  validate->add_option("file", input, "Module (.mir)")->required();

  std::string report_format = "json";
  auto* analyze = app.add_subcommand("analyze", "Print the instrumentation plan");
  analyze->add_option("file", input, "Module (.mir)")->required();
  analyze->add_option("--report", report_format, "Output format")->check(CLI::IsMember({"json"}));

  std::string output, mode_name = "expanded";
  auto* instr = app.add_subcommand("instrument", "Instrument a module");
  instr->add_option("file", input, "Module (.mir)")->required();
  instr->add_option("-o,--output", output, "Instrumented module; provenance goes to <output>.prov.json")
      ->required();
  instr->add_option("--mode", mode_name, "intrinsic or expanded");

  std::vector<int64_t> args;
  std::string trace_path, run_mode;
  uint64_t table_size = cap::kDefaultCapacity, seed = 0, step_limit = 50'000'000;
  auto* run = app.add_subcommand("run", "Execute a module in the VM");
  run->add_option("file", input, "Module (.mir)")->required();
  run->add_option("--args", args, "Integer arguments to main");
  run->add_option("--trace", trace_path, "Write the event trace as JSON");
  run->add_option("--table-size", table_size, "Metadata table capacity")->check(CLI::Range(2ULL, 1ULL << 31));
  run->add_option("--seed", seed, "Seed for @rand");
  run->add_option("--step-limit", step_limit, "Instruction budget");
  run->add_option("--instrument", run_mode, "Instrument in memory first (intrinsic or expanded)");

  uint64_t gen_seed = 0;
  harness::GenParams gen;
  std::string gen_dir;
  auto* generate = app.add_subcommand("generate", "Write a random buggy/patched pair");
  generate->add_option("--seed", gen_seed, "Generator seed");
  generate->add_option("--objects", gen.n_objects, "Objects per program (1..16)");
  generate->add_option("--max-len", gen.max_len, "Maximum array length (2..256)");
  generate->add_option("--accesses", gen.n_accesses, "Accesses per program (1..128)");
  generate->add_option("--bug-rate", gen.bug_rate, "Probability of injecting a bug");
  generate->add_option("-o,--output", gen_dir, "Case directory to create")->required();

  std::string report_path;
  unsigned threads = 0;
  uint64_t fuzz = 0, fuzz_seed = 1, bench = 0;
  bool text = false;
  auto* harn = app.add_subcommand("harness", "Run a corpus against the oracle");
  harn->add_option("corpus", input, "Corpus directory")->required();
  harn->add_option("--mode", mode_name, "intrinsic or expanded");
  harn->add_option("--report", report_path, "Write the JSON report here");
  harn->add_option("--threads", threads, "Worker threads (0 = all cores)");
  harn->add_option("--fuzz", fuzz, "Also run this many generated cases");
  harn->add_option("--fuzz-seed", fuzz_seed, "First generator seed");
  harn->add_option("--bench", bench, "Run the bounds-check microbenchmark with this many checks");
  harn->add_option("--table-size", table_size, "Metadata table capacity")->check(CLI::Range(2ULL, 1ULL << 31));
  harn->add_flag("--text", text, "Print the text table instead of a summary line");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      if (!load(input)) return 1;
      std::cout << "ok\n";
      return 0;
    }

    if (*analyze) {
      auto m = load(input);
      if (!m) return 1;
      const auto plan = analysis::analyze(*m);
      std::cout << analysis::to_json(*m, plan) << "\n";
      return plan.diagnostics.empty() ? 0 : 1;
    }

    if (*instr) {
      auto m = load(input);
      if (!m) return 1;
      const auto im = instrument::instrument_module(*m, parse_mode(mode_name));
      spit(output, ir::print(im.module));
      spit(output + ".prov.json", instrument::provenance_json(im) + "\n");
      return 0;
    }

    if (*run) {
      auto m = load(input);
      if (!m) return 1;
      if (!run_mode.empty()) m = instrument::instrument_module(*m, parse_mode(run_mode)).module;
      vm::Config cfg;
      cfg.table_capacity = table_size;
      cfg.seed = seed;
      cfg.step_limit = step_limit;
      cfg.trace = !trace_path.empty();
      const auto r = vm::run(*m, args, cfg);
      std::cout << r.output << std::flush;
      if (cfg.trace) spit(trace_path, vm::trace_json(r, 1) + "\n");
      switch (r.kind) {
        case vm::ExecutionResult::Kind::exit: return r.exit_code == 0 ? 0 : 1;
        case vm::ExecutionResult::Kind::hardware_fault:
          std::cerr << r.outcome_json() << "\n";
          return kFaultExit;
        case vm::ExecutionResult::Kind::vm_error:
          std::cerr << r.outcome_json() << "\n";
          return kErrorExit;
      }
    }

    if (*generate) {
      const auto c = harness::generate_program(gen_seed, gen);
      fs::create_directories(gen_dir);
      spit((fs::path(gen_dir) / "buggy.mir").string(), c.buggy);
      spit((fs::path(gen_dir) / "patched.mir").string(), c.patched);
      nlohmann::json e{{"violation_kind", c.expect.violation_kind},
                       {"region", c.expect.region},
                       {"expected_miss", c.expect.expected_miss},
                       {"architecture_dependent", c.expect.architecture_dependent},
                       {"description", c.expect.description},
                       {"seed", gen_seed}};
      spit((fs::path(gen_dir) / "expect.json").string(), e.dump(2) + "\n");
      return 0;
    }

    if (*harn) {
      auto cases = harness::load_corpus(input);
      for (uint64_t i = 0; i < fuzz; ++i) cases.push_back(harness::generate_program(fuzz_seed + i));
      harness::RunOptions opt;
      opt.mode = parse_mode(mode_name);
      opt.table_capacity = table_size;
      const auto verdicts = harness::run_cases(cases, opt, threads);
      std::optional<harness::BenchResult> b;
      if (bench) b = harness::microbenchmark(bench);
      if (!report_path.empty()) spit(report_path, harness::report_json(verdicts, b) + "\n");
      if (text) {
        std::cout << harness::report_text(verdicts, b);
      } else {
        const auto s = harness::summarize(verdicts).overall;
        std::cout << s.total << " cases: " << s.tp << " TP, " << s.tn << " TN, " << s.fp << " FP, "
                  << s.fn << " FN, " << s.expected_miss << " expected_miss, " << s.invalid
                  << " invalid\n";
      }
      return harness::gate_passes(verdicts) ? 0 : 1;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "cup: " << e.what() << "\n";
    return kErrorExit;
  }
  return 0;
}
