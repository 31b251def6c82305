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
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/graph.hpp"
#include "metanas/random.hpp"

namespace metanas {

/// Dense CHW activation of one sample.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}
  explicit Tensor(Shape s, double fill = 0.0) : Tensor(s.channels, s.height, s.width, fill) {}

  Shape shape() const noexcept { return {c, h, w}; }
  double& at(int ch, int y, int x) noexcept { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const noexcept { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double* plane(int ch) noexcept { return v.data() + static_cast<std::size_t>(ch) * h * w; }
  const double* plane(int ch) const noexcept { return v.data() + static_cast<std::size_t>(ch) * h * w; }
};

namespace kernels {

/// TF-style "same" padding: output extent ceil(in/stride), padding split
/// with the smaller half before.
inline int same_pad_before(int in, int k, int stride) {
  const int out = strided_extent(in, stride);
  return std::max((out - 1) * stride + k - in, 0) / 2;
}

struct ConvSpec {
  int cin = 0, cout = 0, kh = 1, kw = 1, sh = 1, sw = 1;

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(cin) * cout * kh * kw;
  }
  std::size_t parameter_count() const noexcept { return weight_count() + static_cast<std::size_t>(cout); }
};

/// Output positions [lo, hi) whose tap at kernel offset `k` lands inside
/// an input of extent `in`.
struct TapRange {
  int lo = 0, hi = 0;
};

inline TapRange tap_range(int in, int out, int k, int stride, int pad) {
  // Need 0 <= o*stride + k - pad < in.
  const int first = pad - k;
  int lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  int hi = (in - 1 + pad - k) < 0 ? 0 : (in - 1 + pad - k) / stride + 1;
  lo = std::min(lo, out);
  hi = std::min(hi, out);
  return {lo, std::max(lo, hi)};
}

/// Weights [cout][cin][kh][kw] followed by bias [cout] at `p`.
inline Tensor conv_forward(const Tensor& x, const double* p, const ConvSpec& s) {
  const int oh = strided_extent(x.h, s.sh), ow = strided_extent(x.w, s.sw);
  const int pt = same_pad_before(x.h, s.kh, s.sh), pl = same_pad_before(x.w, s.kw, s.sw);
  const double* bias = p + s.weight_count();
  Tensor y(s.cout, oh, ow);
  for (int co = 0; co < s.cout; ++co) {
    double* yp = y.plane(co);
    std::fill(yp, yp + oh * ow, bias[co]);
    for (int ci = 0; ci < s.cin; ++ci) {
      const double* xp = x.plane(ci);
      for (int ky = 0; ky < s.kh; ++ky) {
        const TapRange ry = tap_range(x.h, oh, ky, s.sh, pt);
        for (int kx = 0; kx < s.kw; ++kx) {
          const TapRange rx = tap_range(x.w, ow, kx, s.sw, pl);
          const double wv = p[((static_cast<std::size_t>(co) * s.cin + ci) * s.kh + ky) * s.kw + kx];
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            double* yrow = yp + oy * ow;
            const double* xrow = xp + (oy * s.sh + ky - pt) * x.w + kx - pl;
            if (s.sw == 1) {
              for (int ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += wv * xrow[ox];
            } else {
              for (int ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += wv * xrow[ox * s.sw];
            }
          }
        }
      }
    }
  }
  return y;
}

/// Accumulates into `gx` (if non-null) and into the parameter gradient `gp`.
inline void conv_backward(const Tensor& x, const double* p, const ConvSpec& s, const Tensor& gy, Tensor* gx,
                          double* gp) {
  const int oh = gy.h, ow = gy.w;
  const int pt = same_pad_before(x.h, s.kh, s.sh), pl = same_pad_before(x.w, s.kw, s.sw);
  double* gbias = gp + s.weight_count();
  for (int co = 0; co < s.cout; ++co) {
    const double* gyp = gy.plane(co);
    for (int k = 0; k < oh * ow; ++k) gbias[co] += gyp[k];
    for (int ci = 0; ci < s.cin; ++ci) {
      const double* xp = x.plane(ci);
      double* gxp = gx ? gx->plane(ci) : nullptr;
      for (int ky = 0; ky < s.kh; ++ky) {
        const TapRange ry = tap_range(x.h, oh, ky, s.sh, pt);
        for (int kx = 0; kx < s.kw; ++kx) {
          const TapRange rx = tap_range(x.w, ow, kx, s.sw, pl);
          const std::size_t wi = ((static_cast<std::size_t>(co) * s.cin + ci) * s.kh + ky) * s.kw + kx;
          const double wv = p[wi];
          double gw = 0.0;
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const double* grow = gyp + oy * ow;
            const std::ptrdiff_t base = (oy * s.sh + ky - pt) * x.w + kx - pl;
            const double* xrow = xp + base;
            for (int ox = rx.lo; ox < rx.hi; ++ox) gw += grow[ox] * xrow[ox * s.sw];
            if (gxp) {
              double* gxrow = gxp + base;
              for (int ox = rx.lo; ox < rx.hi; ++ox) gxrow[ox * s.sw] += grow[ox] * wv;
            }
          }
          gp[wi] += gw;
        }
      }
    }
  }
}

/// Order-sensitive hash of discrete branch decisions (ReLU masks, max-pool
/// winners), used to detect when a perturbation crosses a kink.
struct BranchTrace {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  void add(std::uint64_t v) noexcept { hash = (hash ^ v) * 0x100000001b3ULL; }
};

inline Tensor relu(const Tensor& x, BranchTrace* trace = nullptr) {
  Tensor y = x;
  for (auto& e : y.v) {
    if (trace) trace->add(e > 0.0);
    e = std::max(e, 0.0);
  }
  return y;
}

/// Masks `g` in place by x > 0.
inline void relu_backward(const Tensor& x, Tensor& g) {
  for (std::size_t i = 0; i < g.v.size(); ++i)
    if (!(x.v[i] > 0.0)) g.v[i] = 0.0;
}

inline Tensor subsample(const Tensor& x, int stride) {
  if (stride == 1) return x;
  Tensor y(x.c, strided_extent(x.h, stride), strided_extent(x.w, stride));
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) y.at(c, oy, ox) = x.at(c, oy * stride, ox * stride);
  return y;
}

inline void subsample_backward(const Tensor& gy, int stride, Tensor& gx) {
  for (int c = 0; c < gy.c; ++c)
    for (int oy = 0; oy < gy.h; ++oy)
      for (int ox = 0; ox < gy.w; ++ox) gx.at(c, oy * stride, ox * stride) += gy.at(c, oy, ox);
}

/// Max or average pooling with "same" padding; padded positions are ignored
/// (averages divide by the number of in-bounds taps).
inline Tensor pool_forward(const Tensor& x, int k, int stride, bool is_max, BranchTrace* trace = nullptr) {
  Tensor y(x.c, strided_extent(x.h, stride), strided_extent(x.w, stride));
  const int pt = same_pad_before(x.h, k, stride), pl = same_pad_before(x.w, k, stride);
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) {
        double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
        int n = 0, winner = 0;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pt;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pl;
            if (ix < 0 || ix >= x.w) continue;
            const double v = x.at(c, iy, ix);
            if (is_max && v > acc) winner = n;
            acc = is_max ? std::max(acc, v) : acc + v;
            ++n;
          }
        }
        if (is_max && trace) trace->add(static_cast<std::uint64_t>(winner));
        y.at(c, oy, ox) = is_max ? acc : acc / n;
      }
  return y;
}

/// Max pooling routes the gradient to the first maximal tap.
inline void pool_backward(const Tensor& x, int k, int stride, bool is_max, const Tensor& gy, Tensor& gx) {
  const int pt = same_pad_before(x.h, k, stride), pl = same_pad_before(x.w, k, stride);
  for (int c = 0; c < x.c; ++c)
    for (int oy = 0; oy < gy.h; ++oy)
      for (int ox = 0; ox < gy.w; ++ox) {
        const int y0 = std::max(oy * stride - pt, 0), y1 = std::min(oy * stride - pt + k, x.h);
        const int x0 = std::max(ox * stride - pl, 0), x1 = std::min(ox * stride - pl + k, x.w);
        const double g = gy.at(c, oy, ox);
        if (is_max) {
          int by = y0, bx = x0;
          double best = -std::numeric_limits<double>::infinity();
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix)
              if (x.at(c, iy, ix) > best) {
                best = x.at(c, iy, ix);
                by = iy;
                bx = ix;
              }
          gx.at(c, by, bx) += g;
        } else {
          const double share = g / ((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) gx.at(c, iy, ix) += share;
        }
      }
}

inline int se_hidden(int c) { return (c + 15) / 16; }

struct SeCache {
  std::vector<double> pooled, hidden_pre, gate;
};

/// Squeeze-and-excitation without biases: W1 [r][C] then W2 [C][r] at `p`.
inline Tensor se_forward(const Tensor& x, const double* p, SeCache* cache = nullptr,
                         BranchTrace* trace = nullptr) {
  const int c = x.c, r = se_hidden(c);
  const double area = static_cast<double>(x.h) * x.w;
  std::vector<double> pooled(static_cast<std::size_t>(c)), pre(static_cast<std::size_t>(r), 0.0),
      gate(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* xp = x.plane(ch);
    for (int k = 0; k < x.h * x.w; ++k) s += xp[k];
    pooled[static_cast<std::size_t>(ch)] = s / area;
  }
  const double* w1 = p;
  const double* w2 = p + static_cast<std::size_t>(r) * c;
  for (int j = 0; j < r; ++j)
    for (int ch = 0; ch < c; ++ch) pre[static_cast<std::size_t>(j)] += w1[j * c + ch] * pooled[static_cast<std::size_t>(ch)];
  if (trace)
    for (double v : pre) trace->add(v > 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double z = 0.0;
    for (int j = 0; j < r; ++j) z += w2[ch * r + j] * std::max(pre[static_cast<std::size_t>(j)], 0.0);
    gate[static_cast<std::size_t>(ch)] = 1.0 / (1.0 + std::exp(-z));
  }
  Tensor y = x;
  for (int ch = 0; ch < c; ++ch) {
    double* yp = y.plane(ch);
    for (int k = 0; k < x.h * x.w; ++k) yp[k] *= gate[static_cast<std::size_t>(ch)];
  }
  if (cache) *cache = {std::move(pooled), std::move(pre), std::move(gate)};
  return y;
}

inline void se_backward(const Tensor& x, const double* p, const Tensor& gy, Tensor& gx, double* gp) {
  SeCache cache;
  (void)se_forward(x, p, &cache);
  const int c = x.c, r = se_hidden(c);
  const double area = static_cast<double>(x.h) * x.w;
  const double* w1 = p;
  const double* w2 = p + static_cast<std::size_t>(r) * c;
  double* gw1 = gp;
  double* gw2 = gp + static_cast<std::size_t>(r) * c;
  std::vector<double> g_pooled(static_cast<std::size_t>(c), 0.0), g_hidden(static_cast<std::size_t>(r), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const double gate = cache.gate[static_cast<std::size_t>(ch)];
    const double* xp = x.plane(ch);
    const double* gyp = gy.plane(ch);
    double* gxp = gx.plane(ch);
    double g_gate = 0.0;
    for (int k = 0; k < x.h * x.w; ++k) {
      gxp[k] += gyp[k] * gate;
      g_gate += gyp[k] * xp[k];
    }
    const double g_z = g_gate * gate * (1.0 - gate);
    for (int j = 0; j < r; ++j) {
      const double hj = std::max(cache.hidden_pre[static_cast<std::size_t>(j)], 0.0);
      gw2[ch * r + j] += g_z * hj;
      g_hidden[static_cast<std::size_t>(j)] += g_z * w2[ch * r + j];
    }
  }
  for (int j = 0; j < r; ++j) {
    if (!(cache.hidden_pre[static_cast<std::size_t>(j)] > 0.0)) continue;
    for (int ch = 0; ch < c; ++ch) {
      gw1[j * c + ch] += g_hidden[static_cast<std::size_t>(j)] * cache.pooled[static_cast<std::size_t>(ch)];
      g_pooled[static_cast<std::size_t>(ch)] += g_hidden[static_cast<std::size_t>(j)] * w1[j * c + ch];
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    double* gxp = gx.plane(ch);
    const double share = g_pooled[static_cast<std::size_t>(ch)] / area;
    for (int k = 0; k < x.h * x.w; ++k) gxp[k] += share;
  }
}

}  // namespace kernels

/// Numeric realization of a decoded graph: flat parameter layout, weight
/// initialization, per-sample forward pass and reverse-mode gradients.
///
/// An op node with k linked sources outputs the sum of its operation applied
/// to each source, scaled by 1/k. Without normalization layers the unscaled
/// sum grows geometrically along a cell's node chain.
class Network {
 public:
  explicit Network(ArchitectureGraph graph) : graph_(std::move(graph)) {
    offsets_.resize(graph_.nodes.size(), 0);
    std::size_t total = 0;
    for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
      offsets_[i] = total;
      total += static_cast<std::size_t>(node_parameter_count(graph_.nodes[i], graph_.macro));
    }
    num_params_ = total;
  }

  const ArchitectureGraph& graph() const noexcept { return graph_; }
  std::size_t num_parameters() const noexcept { return num_params_; }
  Shape input_shape() const noexcept { return graph_.nodes.front().out_shape; }
  int num_classes() const noexcept { return graph_.macro.num_classes; }

  /// Fan-in scaled normal weights (gain 2 for convolutions behind a ReLU,
  /// gain 1 for linear projections and dense layers), zero biases.
  std::vector<double> initial_weights(Rng& rng) const {
    std::vector<double> w(num_params_, 0.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto fill = [&](std::size_t at, std::size_t count, double fan_in, double gain) {
      const double sd = std::sqrt(gain / fan_in);
      for (std::size_t k = 0; k < count; ++k) w[at + k] = sd * g(rng);
    };
    for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
      const auto& n = graph_.nodes[i];
      std::size_t at = offsets_[i];
      const auto conv = [&](const kernels::ConvSpec& s, double gain = 2.0) {
        fill(at, s.weight_count(), static_cast<double>(s.cin) * s.kh * s.kw, gain);
        at += s.parameter_count();
      };
      switch (n.role) {
        case GraphNodeRole::stem:
        case GraphNodeRole::projection:
          conv(node_conv(n, 0), 1.0);
          break;
        case GraphNodeRole::cell_input:
          if (n.projected) conv(node_conv(n, 0), 1.0);
          break;
        case GraphNodeRole::op:
          if (is_convolution(n.op)) {
            conv(node_conv(n, 0, 1));
            if (factorized_kernel(n.op) > 0) conv(node_conv(n, 1, 1));
          } else if (n.op == OperationKind::SELayer) {
            const int c = n.out_shape.channels, r = kernels::se_hidden(c);
            fill(at, static_cast<std::size_t>(r) * c, c, 1.0);
            fill(at + static_cast<std::size_t>(r) * c, static_cast<std::size_t>(r) * c, r, 1.0);
          }
          break;
        case GraphNodeRole::head:
          fill(at, static_cast<std::size_t>(n.in_shape.channels) * num_classes(), n.in_shape.channels, 1.0);
          break;
        default:
          break;
      }
    }
    return w;
  }

  /// Logits for one sample.
  std::vector<double> logits(std::span<const double> weights, const double* image) const {
    std::vector<Tensor> acts;
    forward(weights, image, acts);
    return head_logits(weights, acts);
  }

  /// Activations of every graph node for one sample (the head entry is empty).
  std::vector<Tensor> activations(std::span<const double> weights, const double* image) const {
    std::vector<Tensor> acts;
    forward(weights, image, acts);
    return acts;
  }

  /// Signature of the branches taken over a batch (see kernels::BranchTrace).
  std::uint64_t branch_signature(std::span<const double> weights, std::span<const double* const> images) const {
    kernels::BranchTrace trace;
    std::vector<Tensor> acts;
    for (const double* image : images) forward(weights, image, acts, &trace);
    return trace.hash;
  }

  /// Mean softmax cross-entropy over the batch; writes the mean gradient.
  double loss_and_gradient(std::span<const double> weights, std::span<const double* const> images,
                           std::span<const int> labels, std::vector<double>& grad) const {
    if (weights.size() != num_params_) fail(ErrorKind::shape_mismatch, "weight vector has wrong length");
    if (images.size() != labels.size() || images.empty())
      fail(ErrorKind::shape_mismatch, "batch images and labels differ in length");
    grad.assign(num_params_, 0.0);
    double total = 0.0;
    std::vector<Tensor> acts;
    for (std::size_t b = 0; b < images.size(); ++b) {
      forward(weights, images[b], acts);
      const auto z = head_logits(weights, acts);
      const auto prob = softmax(z);
      const int y = labels[b];
      if (y < 0 || y >= num_classes()) fail(ErrorKind::shape_mismatch, "label out of range");
      total += -std::log(std::max(prob[static_cast<std::size_t>(y)], std::numeric_limits<double>::min()));
      std::vector<double> gz = prob;
      gz[static_cast<std::size_t>(y)] -= 1.0;
      backward(weights, acts, gz, grad);
    }
    const double inv = 1.0 / static_cast<double>(images.size());
    for (auto& g : grad) g *= inv;
    return total * inv;
  }

  static std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += (p[k] = std::exp(z[k] - m));
    for (auto& v : p) v /= s;
    return p;
  }

 private:
  static int factorized_kernel(OperationKind op) {
    if (op == OperationKind::Conv1x3_3x1) return 3;
    if (op == OperationKind::Conv1x7_7x1) return 7;
    return 0;
  }

  /// Convolution `part` (0 or 1) of node `n`; `stride` is the op stride for
  /// op nodes (edge-dependent), otherwise taken from the node.
  kernels::ConvSpec node_conv(const GraphNode& n, int part, int stride = -1) const {
    kernels::ConvSpec s;
    s.cin = n.in_shape.channels;
    s.cout = n.out_shape.channels;
    switch (n.role) {
      case GraphNodeRole::stem:
        s.kh = s.kw = 3;
        break;
      case GraphNodeRole::cell_input:
        s.sh = s.sw = n.stride;
        break;
      case GraphNodeRole::op: {
        const int st = stride < 0 ? n.stride : stride;
        const int k = factorized_kernel(n.op);
        if (k > 0) {
          if (part == 0) {
            s.kh = 1, s.kw = k, s.sh = 1, s.sw = st;
          } else {
            s.kh = k, s.kw = 1, s.sh = st, s.sw = 1;
          }
        } else {
          s.kh = s.kw = n.op == OperationKind::Conv3x3 ? 3 : 1;
          s.sh = s.sw = st;
        }
        break;
      }
      default:
        break;
    }
    return s;
  }

  Tensor apply_op(const GraphNode& n, const double* p, const Tensor& x, int stride,
                  kernels::BranchTrace* trace = nullptr) const {
    using namespace kernels;
    switch (n.op) {
      case OperationKind::Identity: return subsample(x, stride);
      case OperationKind::Conv1x1:
      case OperationKind::Conv3x3: return conv_forward(relu(x, trace), p, node_conv(n, 0, stride));
      case OperationKind::Conv1x3_3x1:
      case OperationKind::Conv1x7_7x1: {
        const auto a = node_conv(n, 0, stride);
        const Tensor mid = conv_forward(relu(x, trace), p, a);
        return conv_forward(mid, p + a.parameter_count(), node_conv(n, 1, stride));
      }
      case OperationKind::MaxPool2: return pool_forward(x, 2, stride, true, trace);
      case OperationKind::MaxPool3: return pool_forward(x, 3, stride, true, trace);
      case OperationKind::MaxPool5: return pool_forward(x, 5, stride, true, trace);
      case OperationKind::AvgPool2: return pool_forward(x, 2, stride, false);
      case OperationKind::AvgPool3: return pool_forward(x, 3, stride, false);
      case OperationKind::AvgPool5: return pool_forward(x, 5, stride, false);
      case OperationKind::SELayer: return se_forward(subsample(x, stride), p, nullptr, trace);
    }
    return x;
  }

  void apply_op_backward(const GraphNode& n, const double* p, const Tensor& x, int stride, const Tensor& gy,
                         Tensor& gx, double* gp) const {
    using namespace kernels;
    const auto pool = [&](int k, bool is_max) { pool_backward(x, k, stride, is_max, gy, gx); };
    switch (n.op) {
      case OperationKind::Identity:
        subsample_backward(gy, stride, gx);
        return;
      case OperationKind::Conv1x1:
      case OperationKind::Conv3x3: {
        Tensor g(x.shape());
        conv_backward(relu(x), p, node_conv(n, 0, stride), gy, &g, gp);
        relu_backward(x, g);
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
        return;
      }
      case OperationKind::Conv1x3_3x1:
      case OperationKind::Conv1x7_7x1: {
        const auto a = node_conv(n, 0, stride);
        const auto b = node_conv(n, 1, stride);
        const Tensor rx = relu(x);
        const Tensor mid = conv_forward(rx, p, a);
        Tensor gmid(mid.shape());
        conv_backward(mid, p + a.parameter_count(), b, gy, &gmid, gp + a.parameter_count());
        Tensor g(x.shape());
        conv_backward(rx, p, a, gmid, &g, gp);
        relu_backward(x, g);
        for (std::size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
        return;
      }
      case OperationKind::MaxPool2: return pool(2, true);
      case OperationKind::MaxPool3: return pool(3, true);
      case OperationKind::MaxPool5: return pool(5, true);
      case OperationKind::AvgPool2: return pool(2, false);
      case OperationKind::AvgPool3: return pool(3, false);
      case OperationKind::AvgPool5: return pool(5, false);
      case OperationKind::SELayer: {
        const Tensor xs = subsample(x, stride);
        Tensor gs(xs.shape());
        se_backward(xs, p, gy, gs, gp);
        subsample_backward(gs, stride, gx);
        return;
      }
    }
  }

  void forward(std::span<const double> weights, const double* image, std::vector<Tensor>& acts,
               kernels::BranchTrace* trace = nullptr) const {
    using namespace kernels;
    acts.assign(graph_.nodes.size(), Tensor{});
    for (std::size_t i = 0; i + 1 < graph_.nodes.size(); ++i) {
      const auto& n = graph_.nodes[i];
      const double* p = weights.data() + offsets_[i];
      switch (n.role) {
        case GraphNodeRole::input:
          acts[i] = Tensor(n.out_shape);
          std::copy(image, image + n.out_shape.size(), acts[i].v.begin());
          break;
        case GraphNodeRole::stem:
        case GraphNodeRole::projection:
          acts[i] = conv_forward(acts[n.inputs[0].source], p, node_conv(n, 0));
          break;
        case GraphNodeRole::cell_input:
          acts[i] = n.projected ? conv_forward(acts[n.inputs[0].source], p, node_conv(n, 0))
                                : acts[n.inputs[0].source];
          break;
        case GraphNodeRole::op: {
          Tensor sum(n.out_shape);
          const double scale = 1.0 / static_cast<double>(n.inputs.size());
          for (const auto& e : n.inputs) {
            const Tensor y = apply_op(n, p, acts[e.source], e.stride, trace);
            for (std::size_t k = 0; k < sum.v.size(); ++k) sum.v[k] += scale * y.v[k];
          }
          acts[i] = std::move(sum);
          break;
        }
        case GraphNodeRole::cell_output: {
          Tensor cat(n.out_shape);
          std::size_t at = 0;
          for (const auto& e : n.inputs) {
            const auto& src = acts[e.source].v;
            std::copy(src.begin(), src.end(), cat.v.begin() + static_cast<std::ptrdiff_t>(at));
            at += src.size();
          }
          acts[i] = std::move(cat);
          break;
        }
        case GraphNodeRole::head:
          break;
      }
    }
  }

  std::vector<double> head_logits(std::span<const double> weights, const std::vector<Tensor>& acts) const {
    const auto& head = graph_.nodes.back();
    const Tensor& x = acts[head.inputs[0].source];
    const double* p = weights.data() + offsets_.back();
    const int k = num_classes();
    std::vector<double> pooled(static_cast<std::size_t>(x.c), 0.0);
    for (int c = 0; c < x.c; ++c) {
      const double* xp = x.plane(c);
      for (int j = 0; j < x.h * x.w; ++j) pooled[static_cast<std::size_t>(c)] += xp[j];
      pooled[static_cast<std::size_t>(c)] /= static_cast<double>(x.h) * x.w;
    }
    std::vector<double> z(static_cast<std::size_t>(k));
    for (int o = 0; o < k; ++o) {
      double s = p[static_cast<std::size_t>(k) * x.c + o];
      for (int c = 0; c < x.c; ++c) s += p[o * x.c + c] * pooled[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(o)] = s;
    }
    return z;
  }

  void backward(std::span<const double> weights, const std::vector<Tensor>& acts, const std::vector<double>& gz,
                std::vector<double>& grad) const {
    using namespace kernels;
    const std::size_t n_nodes = graph_.nodes.size();
    std::vector<Tensor> g(n_nodes);
    const auto grad_of = [&](std::size_t i) -> Tensor& {
      if (g[i].v.empty()) g[i] = Tensor(acts[i].shape());
      return g[i];
    };

    {  // head: dense on global average pool
      const auto& head = graph_.nodes.back();
      const std::size_t src = head.inputs[0].source;
      const Tensor& x = acts[src];
      const double* p = weights.data() + offsets_.back();
      double* gp = grad.data() + offsets_.back();
      const int k = num_classes();
      Tensor& gx = grad_of(src);
      const double area = static_cast<double>(x.h) * x.w;
      for (int c = 0; c < x.c; ++c) {
        double pooled = 0.0;
        const double* xp = x.plane(c);
        for (int j = 0; j < x.h * x.w; ++j) pooled += xp[j];
        pooled /= area;
        double gpool = 0.0;
        for (int o = 0; o < k; ++o) {
          gp[o * x.c + c] += gz[static_cast<std::size_t>(o)] * pooled;
          gpool += gz[static_cast<std::size_t>(o)] * p[o * x.c + c];
        }
        double* gxp = gx.plane(c);
        for (int j = 0; j < x.h * x.w; ++j) gxp[j] += gpool / area;
      }
      for (int o = 0; o < k; ++o) gp[static_cast<std::size_t>(k) * x.c + o] += gz[static_cast<std::size_t>(o)];
    }

    for (std::size_t i = n_nodes - 1; i-- > 1;) {
      if (g[i].v.empty()) continue;  // no downstream consumer
      const auto& n = graph_.nodes[i];
      const double* p = weights.data() + offsets_[i];
      double* gp = grad.data() + offsets_[i];
      switch (n.role) {
        case GraphNodeRole::stem:
          conv_backward(acts[n.inputs[0].source], p, node_conv(n, 0), g[i], nullptr, gp);
          break;
        case GraphNodeRole::projection: {
          const std::size_t src = n.inputs[0].source;
          conv_backward(acts[src], p, node_conv(n, 0), g[i], &grad_of(src), gp);
          break;
        }
        case GraphNodeRole::cell_input: {
          const std::size_t src = n.inputs[0].source;
          if (n.projected) {
            conv_backward(acts[src], p, node_conv(n, 0), g[i], &grad_of(src), gp);
          } else {
            Tensor& gs = grad_of(src);
            for (std::size_t k = 0; k < gs.v.size(); ++k) gs.v[k] += g[i].v[k];
          }
          break;
        }
        case GraphNodeRole::op: {
          for (auto& v : g[i].v) v /= static_cast<double>(n.inputs.size());
          for (const auto& e : n.inputs) apply_op_backward(n, p, acts[e.source], e.stride, g[i], grad_of(e.source), gp);
          break;
        }
        case GraphNodeRole::cell_output: {
          std::size_t at = 0;
          for (const auto& e : n.inputs) {
            Tensor& gs = grad_of(e.source);
            for (std::size_t k = 0; k < gs.v.size(); ++k) gs.v[k] += g[i].v[at + k];
            at += gs.v.size();
          }
          break;
        }
        default:
          break;
      }
      g[i] = Tensor{};  // release
    }
  }

  ArchitectureGraph graph_;
  std::vector<std::size_t> offsets_;
  std::size_t num_params_ = 0;
};

}  // namespace metanas
