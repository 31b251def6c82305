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

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/genotype.hpp"

namespace metanas {

struct MacroConfig {
  int num_cells = 20;
  int channels = 40;
  int input_height = 32;
  int input_width = 32;
  int input_channels = 3;
  int num_classes = 10;
  /// Unset means the default placement at floor(n/3) and floor(2n/3).
  std::optional<std::vector<int>> reduction_positions;

  static MacroConfig desk() {
    MacroConfig m;
    m.num_cells = 6;
    m.channels = 8;
    m.input_height = 16;
    m.input_width = 16;
    m.input_channels = 1;
    m.num_classes = 4;
    return m;
  }

  std::vector<int> resolved_reductions() const {
    if (reduction_positions) {
      std::set<int> s(reduction_positions->begin(), reduction_positions->end());
      return {s.begin(), s.end()};
    }
    std::set<int> s{num_cells / 3, (2 * num_cells) / 3};
    return {s.begin(), s.end()};
  }

  bool is_reduction(int cell) const {
    const auto r = resolved_reductions();
    return std::find(r.begin(), r.end(), cell) != r.end();
  }

  void check() const {
    if (num_cells < 1) fail(ErrorKind::invalid_config, "num_cells must be >= 1");
    if (channels < 1) fail(ErrorKind::invalid_config, "channels must be >= 1");
    if (input_height < 1 || input_width < 1 || input_channels < 1)
      fail(ErrorKind::invalid_config, "input shape must be positive");
    if (num_classes < 2) fail(ErrorKind::invalid_config, "num_classes must be >= 2");
    if (reduction_positions)
      for (int p : *reduction_positions)
        if (p < 0 || p >= num_cells)
          fail(ErrorKind::invalid_config, "reduction position " + std::to_string(p) + " out of range");
  }
};

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

constexpr int strided_extent(int extent, int stride) noexcept {
  return (extent + stride - 1) / stride;
}

enum class GraphNodeRole : std::uint8_t { input, stem, cell_input, op, cell_output, projection, head };

constexpr std::string_view to_string(GraphNodeRole role) noexcept {
  switch (role) {
    case GraphNodeRole::input: return "input";
    case GraphNodeRole::stem: return "stem";
    case GraphNodeRole::cell_input: return "cell_input";
    case GraphNodeRole::op: return "op";
    case GraphNodeRole::cell_output: return "cell_output";
    case GraphNodeRole::projection: return "projection";
    case GraphNodeRole::head: return "head";
  }
  return "?";
}

struct GraphEdge {
  std::size_t source = 0;
  int stride = 1;
  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

/// One vertex of the decoded network.
///
/// Op nodes apply their operation (one weight set per node) to every linked
/// source and sum the results. In a reduction cell the edges leaving the
/// cell's input slots run at stride 2 while node-to-node edges run at stride
/// 1, since the sources are already at the reduced resolution. A cell input
/// slot is a 1x1 alignment convolution only when the bound tensor's channels
/// or resolution differ from what the cell expects; otherwise it aliases it.
struct GraphNode {
  GraphNodeRole role = GraphNodeRole::input;
  int cell = -1;
  int position = -1;
  OperationKind op = OperationKind::Identity;
  int stride = 1;
  bool projected = false;
  std::vector<GraphEdge> inputs;
  Shape in_shape;
  Shape out_shape;
};

struct ArchitectureGraph {
  MacroConfig macro;
  std::vector<GraphNode> nodes;

  std::size_t output_index() const noexcept { return nodes.size() - 1; }
};

/// Learnable parameters of one operation acting on `c` channels. Convolutions
/// carry a bias; squeeze-and-excitation uses two bias-free dense layers with
/// reduction ratio 16.
inline std::uint64_t operation_parameter_count(OperationKind op, std::uint64_t c) {
  const auto conv = [c](std::uint64_t kh, std::uint64_t kw) { return kh * kw * c * c + c; };
  switch (op) {
    case OperationKind::Conv1x1: return conv(1, 1);
    case OperationKind::Conv3x3: return conv(3, 3);
    case OperationKind::Conv1x3_3x1: return conv(1, 3) + conv(3, 1);
    case OperationKind::Conv1x7_7x1: return conv(1, 7) + conv(7, 1);
    case OperationKind::SELayer: return 2 * c * ((c + 15) / 16);
    default: return 0;
  }
}

inline std::uint64_t node_parameter_count(const GraphNode& node, const MacroConfig& macro) {
  const auto c_out = static_cast<std::uint64_t>(node.out_shape.channels);
  const auto c_in = static_cast<std::uint64_t>(node.in_shape.channels);
  switch (node.role) {
    case GraphNodeRole::stem: return 9 * c_in * c_out + c_out;
    case GraphNodeRole::cell_input: return node.projected ? c_in * c_out + c_out : 0;
    case GraphNodeRole::op: return operation_parameter_count(node.op, c_out);
    case GraphNodeRole::projection: return c_in * c_out + c_out;
    case GraphNodeRole::head: return c_in * static_cast<std::uint64_t>(macro.num_classes) + c_out;
    default: return 0;
  }
}

namespace detail {

/// Nodes of the cell with no intra-cell consumer, in position order.
inline std::vector<std::size_t> leaf_positions(const CellGenotype& cell) {
  std::vector<bool> consumed(cell.nodes.size(), false);
  for (std::size_t j = 0; j < cell.nodes.size(); ++j)
    for (std::size_t t = 0; t < j; ++t)
      if (cell.nodes[j].links[t + 2]) consumed[t] = true;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < cell.nodes.size(); ++j)
    if (!consumed[j]) out.push_back(j);
  return out;
}

}  // namespace detail

inline ArchitectureGraph decode(const Individual& ind, const MacroConfig& macro) {
  macro.check();
  if (auto report = validate_structure(ind); !report.ok())
    fail(ErrorKind::decode_failure, report.summary());

  ArchitectureGraph g;
  g.macro = macro;
  auto& nodes = g.nodes;

  GraphNode input;
  input.role = GraphNodeRole::input;
  input.out_shape = {macro.input_channels, macro.input_height, macro.input_width};
  nodes.push_back(input);

  GraphNode stem;
  stem.role = GraphNodeRole::stem;
  stem.inputs = {{0, 1}};
  stem.in_shape = input.out_shape;
  stem.out_shape = {macro.channels, macro.input_height, macro.input_width};
  nodes.push_back(stem);

  std::size_t prev_prev = 1, prev = 1;
  int channels = macro.channels;

  for (int c = 0; c < macro.num_cells; ++c) {
    const bool reduction = macro.is_reduction(c);
    const CellGenotype& cell = reduction ? ind.reduction : ind.normal;
    const int stride = reduction ? 2 : 1;
    if (reduction) channels *= 2;

    const Shape in_res = nodes[prev].out_shape;  // resolution the ops consume
    const Shape working{channels, in_res.height, in_res.width};
    const Shape node_shape{channels, strided_extent(in_res.height, stride),
                           strided_extent(in_res.width, stride)};

    std::array<std::size_t, 2> slots{};
    const std::array<std::size_t, 2> bound{prev_prev, prev};
    for (int s = 0; s < 2; ++s) {
      const Shape src = nodes[bound[static_cast<std::size_t>(s)]].out_shape;
      GraphNode slot;
      slot.role = GraphNodeRole::cell_input;
      slot.cell = c;
      slot.position = s;
      slot.in_shape = src;
      slot.out_shape = working;
      slot.projected = !(src == working);
      slot.stride = src.height > working.height ? 2 : 1;
      slot.inputs = {{bound[static_cast<std::size_t>(s)], slot.stride}};
      slots[static_cast<std::size_t>(s)] = nodes.size();
      nodes.push_back(slot);
    }

    std::vector<std::size_t> op_index(cell.nodes.size());
    for (std::size_t j = 0; j < cell.nodes.size(); ++j) {
      const auto& gene = cell.nodes[j];
      GraphNode op;
      op.role = GraphNodeRole::op;
      op.cell = c;
      op.position = static_cast<int>(j);
      op.op = gene.op;
      op.stride = stride;
      op.in_shape = working;
      op.out_shape = node_shape;
      for (int s = 0; s < 2; ++s)
        if (gene.links[static_cast<std::size_t>(s)])
          op.inputs.push_back({slots[static_cast<std::size_t>(s)], stride});
      for (std::size_t t = 0; t < j; ++t)
        if (gene.links[t + 2]) op.inputs.push_back({op_index[t], 1});
      op_index[j] = nodes.size();
      nodes.push_back(op);
    }

    const auto leaves = detail::leaf_positions(cell);
    GraphNode concat;
    concat.role = GraphNodeRole::cell_output;
    concat.cell = c;
    for (auto leaf : leaves) concat.inputs.push_back({op_index[leaf], 1});
    concat.in_shape = node_shape;
    concat.out_shape = {channels * static_cast<int>(leaves.size()), node_shape.height, node_shape.width};
    const std::size_t concat_index = nodes.size();
    nodes.push_back(concat);

    GraphNode proj;
    proj.role = GraphNodeRole::projection;
    proj.cell = c;
    proj.inputs = {{concat_index, 1}};
    proj.in_shape = concat.out_shape;
    proj.out_shape = node_shape;
    nodes.push_back(proj);

    prev_prev = prev;
    prev = nodes.size() - 1;
  }

  GraphNode head;
  head.role = GraphNodeRole::head;
  head.inputs = {{prev, 1}};
  head.in_shape = nodes[prev].out_shape;
  head.out_shape = {macro.num_classes, 1, 1};
  nodes.push_back(head);
  return g;
}

inline std::uint64_t count_parameters(const ArchitectureGraph& graph) {
  std::uint64_t total = 0;
  for (const auto& node : graph.nodes) total += node_parameter_count(node, graph.macro);
  return total;
}

inline std::uint64_t count_parameters(const Individual& ind, const MacroConfig& macro) {
  return count_parameters(decode(ind, macro));
}

/// Graphviz digraph; op nodes are labelled with their operation name.
inline std::string to_dot(const ArchitectureGraph& graph) {
  std::ostringstream out;
  out << "digraph architecture {\n";
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& n = graph.nodes[i];
    out << "  n" << i << " [label=\"";
    if (n.role == GraphNodeRole::op)
      out << to_string(n.op);
    else
      out << to_string(n.role);
    if (n.cell >= 0) out << " c" << n.cell;
    out << ' ' << n.out_shape.channels << 'x' << n.out_shape.height << 'x' << n.out_shape.width;
    out << "\"];\n";
  }
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    for (const auto& e : graph.nodes[i].inputs) {
      out << "  n" << e.source << " -> n" << i;
      if (e.stride != 1) out << " [label=\"s" << e.stride << "\"]";
      out << ";\n";
    }
  out << "}\n";
  return out.str();
}

}  // namespace metanas
