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

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/random.hpp"

namespace metanas {

/// The twelve candidate operations. Underlying values are the stable 1-based
/// indices used by the text genotype format.
enum class OperationKind : std::uint8_t {
  Identity = 1,
  Conv1x1 = 2,
  Conv3x3 = 3,
  Conv1x3_3x1 = 4,
  Conv1x7_7x1 = 5,
  MaxPool2 = 6,
  MaxPool3 = 7,
  MaxPool5 = 8,
  AvgPool2 = 9,
  AvgPool3 = 10,
  AvgPool5 = 11,
  SELayer = 12,
};

inline constexpr int kNumOperations = 12;

inline constexpr std::array<std::string_view, kNumOperations> kOperationNames = {
    "identity", "conv1x1",  "conv3x3",  "conv1x3_3x1", "conv1x7_7x1", "maxpool2",
    "maxpool3", "maxpool5", "avgpool2", "avgpool3",    "avgpool5",    "se_layer"};

constexpr int to_index(OperationKind op) noexcept { return static_cast<int>(op); }

constexpr bool is_valid_operation_index(int index) noexcept {
  return index >= 1 && index <= kNumOperations;
}

inline OperationKind operation_from_index(int index) {
  if (!is_valid_operation_index(index))
    fail(ErrorKind::invalid_arguments, "operation index out of range: " + std::to_string(index));
  return static_cast<OperationKind>(index);
}

constexpr std::string_view to_string(OperationKind op) noexcept {
  return kOperationNames[static_cast<std::size_t>(to_index(op) - 1)];
}

inline OperationKind operation_from_name(std::string_view name) {
  for (int i = 0; i < kNumOperations; ++i)
    if (kOperationNames[static_cast<std::size_t>(i)] == name) return static_cast<OperationKind>(i + 1);
  fail(ErrorKind::invalid_arguments, "unknown operation name: " + std::string(name));
}

constexpr bool is_convolution(OperationKind op) noexcept {
  return op == OperationKind::Conv1x1 || op == OperationKind::Conv3x3 ||
         op == OperationKind::Conv1x3_3x1 || op == OperationKind::Conv1x7_7x1;
}

constexpr bool is_pooling(OperationKind op) noexcept {
  return to_index(op) >= to_index(OperationKind::MaxPool2) &&
         to_index(op) <= to_index(OperationKind::AvgPool5);
}

/// Links are ordered (l_in0, l_in1, l_0, ..., l_{j-1}) for the node at position j.
struct NodeGene {
  std::vector<std::uint8_t> links;
  OperationKind op = OperationKind::Identity;

  bool has_input() const noexcept {
    return std::any_of(links.begin(), links.end(), [](std::uint8_t b) { return b != 0; });
  }

  friend bool operator==(const NodeGene&, const NodeGene&) = default;
};

constexpr std::size_t required_link_count(std::size_t position) noexcept { return position + 2; }

enum class CellKind : std::uint8_t { normal, reduction };

constexpr std::string_view to_string(CellKind kind) noexcept {
  return kind == CellKind::normal ? "normal" : "reduction";
}

struct CellGenotype {
  CellKind kind = CellKind::normal;
  std::vector<NodeGene> nodes;

  std::size_t size() const noexcept { return nodes.size(); }

  /// Number of genes in the flattened cell vector: every link bit plus one
  /// operation gene per node.
  std::size_t gene_count() const noexcept {
    std::size_t n = 0;
    for (const auto& node : nodes) n += node.links.size() + 1;
    return n;
  }

  std::size_t link_bit_count() const noexcept {
    std::size_t n = 0;
    for (const auto& node : nodes) n += node.links.size();
    return n;
  }

  double link_density() const noexcept {
    std::size_t ones = 0, total = 0;
    for (const auto& node : nodes) {
      total += node.links.size();
      ones += static_cast<std::size_t>(std::count(node.links.begin(), node.links.end(), 1));
    }
    return total == 0 ? 0.0 : static_cast<double>(ones) / static_cast<double>(total);
  }

  friend bool operator==(const CellGenotype&, const CellGenotype&) = default;
};

struct Individual {
  std::uint64_t id = 0;
  CellGenotype normal{CellKind::normal, {}};
  CellGenotype reduction{CellKind::reduction, {}};
  int birth_generation = 0;

  const CellGenotype& cell(CellKind kind) const noexcept {
    return kind == CellKind::normal ? normal : reduction;
  }
  CellGenotype& cell(CellKind kind) noexcept {
    return kind == CellKind::normal ? normal : reduction;
  }
};

inline bool same_genotype(const Individual& a, const Individual& b) {
  return a.normal == b.normal && a.reduction == b.reduction;
}

/// Monotone id issuer shared by everything that creates individuals in a run.
class IdSequence {
 public:
  explicit IdSequence(std::uint64_t next = 1) : next_(next) {}
  std::uint64_t next() noexcept { return next_++; }
  std::uint64_t peek() const noexcept { return next_; }

 private:
  std::uint64_t next_;
};

inline constexpr int kMinNodes = 5;
inline constexpr int kMaxNodes = 12;

/// Admissible genotypes: node-count range, allowed operations, and the
/// initialization probability for the two input links. `shared_cell` ties the
/// reduction cell to the normal cell (single-cell spaces used for
/// enumeration).
struct SearchSpace {
  int min_nodes = kMinNodes;
  int max_nodes = kMaxNodes;
  std::vector<OperationKind> ops = all_operations();
  double p_hi = 0.9;
  bool shared_cell = false;

  static std::vector<OperationKind> all_operations() {
    std::vector<OperationKind> out;
    for (int i = 1; i <= kNumOperations; ++i) out.push_back(static_cast<OperationKind>(i));
    return out;
  }

  bool allows(OperationKind op) const {
    return std::find(ops.begin(), ops.end(), op) != ops.end();
  }

  void check() const {
    if (min_nodes < 1 || max_nodes > kMaxNodes || min_nodes > max_nodes)
      fail(ErrorKind::invalid_config, "node range [" + std::to_string(min_nodes) + ", " +
                                          std::to_string(max_nodes) + "] is not admissible");
    if (!(p_hi > 0.0 && p_hi <= 1.0))
      fail(ErrorKind::invalid_config, "p_hi must lie in (0, 1]");
    if (ops.empty()) fail(ErrorKind::invalid_config, "operation set is empty");
  }

  /// The default space additionally pins the node range to [5, 12].
  void check_default_bounds() const {
    check();
    if (min_nodes < kMinNodes)
      fail(ErrorKind::invalid_config, "min_nodes below 5 outside a restricted space");
  }
};

/// Forces l_in0 = 1 on every inputless node and fixes link-vector lengths
/// (zero-padding or truncating) to match node positions.
inline void repair(CellGenotype& cell) {
  for (std::size_t j = 0; j < cell.nodes.size(); ++j) {
    auto& node = cell.nodes[j];
    node.links.resize(required_link_count(j), 0);
    if (!node.has_input()) node.links[0] = 1;
  }
}

inline void sync_shared_cell(Individual& ind) {
  ind.reduction.nodes = ind.normal.nodes;
  ind.reduction.kind = CellKind::reduction;
}

inline NodeGene random_node(std::size_t position, const SearchSpace& space, Rng& rng) {
  NodeGene node;
  node.links.resize(required_link_count(position));
  node.links[0] = bernoulli(rng, space.p_hi) ? 1 : 0;
  node.links[1] = bernoulli(rng, space.p_hi) ? 1 : 0;
  for (std::size_t t = 2; t < node.links.size(); ++t) node.links[t] = bernoulli(rng, 0.5) ? 1 : 0;
  node.op = space.ops[uniform_index(rng, space.ops.size())];
  return node;
}

inline CellGenotype random_cell(CellKind kind, const SearchSpace& space, Rng& rng) {
  const int n = std::uniform_int_distribution<int>(space.min_nodes, space.max_nodes)(rng);
  CellGenotype cell{kind, {}};
  for (int j = 0; j < n; ++j) cell.nodes.push_back(random_node(static_cast<std::size_t>(j), space, rng));
  repair(cell);
  return cell;
}

inline Individual random_individual(const SearchSpace& space, Rng& rng, std::uint64_t id = 0,
                                    int birth_generation = 0) {
  space.check();
  Individual ind;
  ind.id = id;
  ind.birth_generation = birth_generation;
  ind.normal = random_cell(CellKind::normal, space, rng);
  if (space.shared_cell)
    sync_shared_cell(ind);
  else
    ind.reduction = random_cell(CellKind::reduction, space, rng);
  return ind;
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind { link_length, op_index, node_count, inputless_node, cell_kind, shared_cell };

struct Violation {
  ViolationKind kind;
  CellKind cell;
  int node = -1;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  bool has(ViolationKind kind) const {
    return std::any_of(violations.begin(), violations.end(),
                       [kind](const Violation& v) { return v.kind == kind; });
  }
  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += v.message;
    }
    return out;
  }
};

namespace detail {

inline void validate_cell(const CellGenotype& cell, CellKind expected, const SearchSpace* space,
                          ValidationReport& report) {
  const auto where = [&](std::size_t j) {
    return std::string(to_string(expected)) + " node " + std::to_string(j);
  };
  if (cell.kind != expected)
    report.violations.push_back({ViolationKind::cell_kind, expected, -1,
                                 std::string(to_string(expected)) + " cell has wrong kind"});
  const int lo = space ? space->min_nodes : 1;
  const int hi = space ? space->max_nodes : kMaxNodes;
  const auto n = static_cast<int>(cell.nodes.size());
  if (n < lo || n > hi)
    report.violations.push_back({ViolationKind::node_count, expected, -1,
                                 std::string(to_string(expected)) + " cell node count " +
                                     std::to_string(n) + " outside [" + std::to_string(lo) +
                                     ", " + std::to_string(hi) + "]"});
  for (std::size_t j = 0; j < cell.nodes.size(); ++j) {
    const auto& node = cell.nodes[j];
    if (node.links.size() != required_link_count(j))
      report.violations.push_back({ViolationKind::link_length, expected, static_cast<int>(j),
                                   where(j) + ": link length " + std::to_string(node.links.size()) +
                                       " (expected " + std::to_string(required_link_count(j)) + ")"});
    const int op = to_index(node.op);
    if (!is_valid_operation_index(op) || (space && !space->allows(node.op)))
      report.violations.push_back({ViolationKind::op_index, expected, static_cast<int>(j),
                                   where(j) + ": operation index " + std::to_string(op) +
                                       " not admissible"});
    if (!node.has_input())
      report.violations.push_back(
          {ViolationKind::inputless_node, expected, static_cast<int>(j), where(j) + ": inputless node"});
  }
}

}  // namespace detail

/// Structural checks only (no node-count bounds beyond [1, 12]); this is
/// what decoding requires.
inline ValidationReport validate_structure(const Individual& ind) {
  ValidationReport report;
  detail::validate_cell(ind.normal, CellKind::normal, nullptr, report);
  detail::validate_cell(ind.reduction, CellKind::reduction, nullptr, report);
  return report;
}

inline ValidationReport validate(const Individual& ind, const SearchSpace& space = {}) {
  ValidationReport report;
  detail::validate_cell(ind.normal, CellKind::normal, &space, report);
  detail::validate_cell(ind.reduction, CellKind::reduction, &space, report);
  if (space.shared_cell && ind.normal.nodes != ind.reduction.nodes)
    report.violations.push_back(
        {ViolationKind::shared_cell, CellKind::reduction, -1, "reduction cell differs from shared normal cell"});
  return report;
}

// ---------------------------------------------------------------------------
// Text format: one line per cell, `kind;bits:op;bits:op;...`

inline std::string serialize_cell(const CellGenotype& cell) {
  std::string out(to_string(cell.kind));
  for (const auto& node : cell.nodes) {
    out += ';';
    for (auto b : node.links) out += b ? '1' : '0';
    out += ':';
    out += std::to_string(to_index(node.op));
  }
  return out;
}

inline std::string serialize(const Individual& ind) {
  return serialize_cell(ind.normal) + '\n' + serialize_cell(ind.reduction) + '\n';
}

inline CellGenotype parse_cell(std::string_view line) {
  const auto bad = [&](const std::string& why) -> CellGenotype {
    fail(ErrorKind::malformed_file, "genotype line '" + std::string(line) + "': " + why);
  };
  CellGenotype cell;
  std::size_t pos = line.find(';');
  const std::string_view kind = line.substr(0, pos);
  if (kind == "normal")
    cell.kind = CellKind::normal;
  else if (kind == "reduction")
    cell.kind = CellKind::reduction;
  else
    return bad("unknown cell kind");
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + 1;
    pos = line.find(';', start);
    const std::string_view token =
        line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    const std::size_t colon = token.find(':');
    if (colon == std::string_view::npos || colon == 0) return bad("node token missing 'bits:op'");
    NodeGene node;
    for (char c : token.substr(0, colon)) {
      if (c != '0' && c != '1') return bad("link bits must be 0/1");
      node.links.push_back(c == '1' ? 1 : 0);
    }
    int op = 0;
    const auto digits = token.substr(colon + 1);
    if (digits.empty() || digits.size() > 2) return bad("bad operation index");
    for (char c : digits) {
      if (c < '0' || c > '9') return bad("bad operation index");
      op = op * 10 + (c - '0');
    }
    if (!is_valid_operation_index(op)) return bad("operation index out of range");
    node.op = static_cast<OperationKind>(op);
    cell.nodes.push_back(std::move(node));
  }
  return cell;
}

/// Parses the two-line text form; blank lines and `#` comments are skipped.
inline Individual deserialize(std::string_view text, std::uint64_t id = 0) {
  Individual ind;
  ind.id = id;
  bool seen_normal = false, seen_reduction = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    CellGenotype cell = parse_cell(line);
    if (cell.kind == CellKind::normal) {
      if (seen_normal) fail(ErrorKind::malformed_file, "duplicate normal cell");
      ind.normal = std::move(cell);
      seen_normal = true;
    } else {
      if (seen_reduction) fail(ErrorKind::malformed_file, "duplicate reduction cell");
      ind.reduction = std::move(cell);
      seen_reduction = true;
    }
  }
  if (!seen_normal || !seen_reduction)
    fail(ErrorKind::malformed_file, "genotype text needs one normal and one reduction line");
  return ind;
}

}  // namespace metanas
