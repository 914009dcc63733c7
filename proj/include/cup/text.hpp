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

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cup/ir.hpp"

namespace cup::ir {

struct ParseResult {
  std::optional<Module> module;
  std::vector<Diagnostic> errors;

  bool ok() const { return module.has_value(); }
};

/// Parses and validates `.mir` text. On failure `module` is empty and
/// `errors` holds syntax errors, or validation errors if the text parsed.
ParseResult parse(std::string_view text, std::string source_name = "<input>");

/// Like parse(), but throws ParseError.
Module parse_or_throw(std::string_view text, std::string source_name = "<input>");

/// Canonical text. Deterministic; parse(print(m)) is equivalent to m.
std::string print(const Module& m);
std::string print(const Function& f);

/// Returns one diagnostic per broken invariant; empty iff `m` is valid.
std::vector<Diagnostic> validate(const Module& m);

}  // namespace cup::ir
