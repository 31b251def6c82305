// Copyright 2026 The metanas Authors.
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

#include <stdexcept>
#include <string>
#include <string_view>

namespace metanas {

enum class ErrorKind {
  invalid_config,
  invalid_arguments,
  decode_failure,
  invalid_individual,
  empty_population,
  kind_mismatch,
  insufficient_candidates,
  point_outside_reference,
  singular_system,
  dimension_mismatch,
  length_mismatch,
  degenerate_denominator,
  non_finite_loss,
  shape_mismatch,
  task_failure,
  empty_schedule,
  invalid_spec,
  malformed_file,
  io_failure,
  version_mismatch,
  corrupt_checkpoint,
  numeric_divergence,
  enumeration_bound,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config: return "invalid-config";
    case ErrorKind::invalid_arguments: return "invalid-arguments";
    case ErrorKind::decode_failure: return "decode-failure";
    case ErrorKind::invalid_individual: return "invalid-individual";
    case ErrorKind::empty_population: return "empty-population";
    case ErrorKind::kind_mismatch: return "kind-mismatch";
    case ErrorKind::insufficient_candidates: return "insufficient-candidates";
    case ErrorKind::point_outside_reference: return "point-outside-reference";
    case ErrorKind::singular_system: return "singular-system";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::degenerate_denominator: return "degenerate-denominator";
    case ErrorKind::non_finite_loss: return "non-finite-loss";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::task_failure: return "task-failure";
    case ErrorKind::empty_schedule: return "empty-schedule";
    case ErrorKind::invalid_spec: return "invalid-spec";
    case ErrorKind::malformed_file: return "malformed-file";
    case ErrorKind::io_failure: return "io-failure";
    case ErrorKind::version_mismatch: return "version-mismatch";
    case ErrorKind::corrupt_checkpoint: return "corrupt-checkpoint";
    case ErrorKind::numeric_divergence: return "numeric-divergence";
    case ErrorKind::enumeration_bound: return "enumeration-bound";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so
/// that callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace metanas
