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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/evaluator/dataset.hpp"
#include "metanas/evaluator/network.hpp"
#include "metanas/metalr.hpp"
#include "json.hpp"

namespace metanas {

struct Metrics {
  double top1_acc = 0.0;
  std::vector<double> loss_curve;  // mean training loss per epoch
  std::uint64_t params = 0;
  int epochs_trained = 0;
  std::int64_t wall_time_ms = 0;
  bool failed = false;
};

/// One evaluation as a JSON object {id, epochs, top1_acc, params, loss_curve}.
inline nlohmann::ordered_json metrics_to_json(std::uint64_t id, const Metrics& m) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["epochs"] = m.epochs_trained;
  j["top1_acc"] = m.top1_acc;
  j["params"] = m.params;
  j["loss_curve"] = m.loss_curve;
  return j;
}

struct TrainerConfig {
  int batch_size = 32;
  double weight_decay = kDefaultWeightDecay;

  void check() const {
    if (batch_size < 1) fail(ErrorKind::invalid_config, "batch_size must be >= 1");
    if (weight_decay < 0.0) fail(ErrorKind::invalid_config, "weight_decay must be >= 0");
  }
};

inline double accuracy(const Network& net, std::span<const double> weights, const Dataset& data,
                       const DataSplit& split) {
  if (split.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto z = net.logits(weights, data.image(split, i));
    const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    correct += best == split.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Mini-batch SGD on the training split (fresh shuffle per epoch), top-1
/// accuracy on the validation split after the last epoch. A non-finite loss
/// stops training and yields a flagged zero-accuracy result.
inline Metrics train_network(const Individual& ind, const MacroConfig& macro, const Dataset& data, int epochs,
                             LrSource& lr, std::uint64_t seed, const TrainerConfig& cfg = {}) {
  cfg.check();
  if (epochs < 0) fail(ErrorKind::invalid_arguments, "epochs must be >= 0");
  const auto start = std::chrono::steady_clock::now();
  Network net(decode(ind, macro));
  if (!(net.input_shape() == data.sample_shape))
    fail(ErrorKind::shape_mismatch, "dataset sample shape does not match the macro input shape");
  if (data.num_classes != macro.num_classes)
    fail(ErrorKind::shape_mismatch, "dataset class count does not match the macro");

  Metrics m;
  m.params = net.num_parameters();
  Rng init_rng = make_stream(seed, "weights");
  std::vector<double> w = net.initial_weights(init_rng);
  std::vector<double> grad;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const double*> images;
  std::vector<int> labels;

  for (int e = 0; e < epochs; ++e) {
    Rng shuffle = make_stream(seed, "shuffle", {static_cast<std::uint64_t>(e)});
    std::shuffle(order.begin(), order.end(), shuffle);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      images.clear();
      labels.clear();
      for (std::size_t k = at; k < end; ++k) {
        images.push_back(data.image(data.train, order[k]));
        labels.push_back(data.train.labels[order[k]]);
      }
      const double loss = net.loss_and_gradient(w, images, labels, grad);
      if (!std::isfinite(loss)) {
        m.failed = true;
        m.top1_acc = 0.0;
        m.epochs_trained = e;
        return m;
      }
      sgd_step(w, grad, lr.next_alpha(loss), cfg.weight_decay);
      sum += loss;
      ++batches;
    }
    m.loss_curve.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
    m.epochs_trained = e + 1;
  }
  bool finite = true;
  for (double v : w) finite = finite && std::isfinite(v);
  if (!finite) {
    m.failed = true;
    return m;
  }
  m.top1_acc = accuracy(net, w, data, data.val);
  m.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return m;
}

/// Meta-training task: a fixed network (sampled from `ind`) trained on
/// mini-batches of the training split; scored on a validation subset.
class NetworkPretrainTask final : public PretrainTask {
 public:
  NetworkPretrainTask(const Individual& ind, const MacroConfig& macro, std::shared_ptr<const Dataset> data,
                      std::uint64_t seed, int batch_size = 32, std::size_t val_samples = 64)
      : net_(decode(ind, macro)), data_(std::move(data)), seed_(seed), batch_(batch_size) {
    Rng rng = make_stream(seed, "pretrain-weights");
    start_ = net_.initial_weights(rng);
    const std::size_t n = std::min(val_samples, data_->val.size());
    for (std::size_t i = 0; i < n; ++i) {
      val_images_.push_back(data_->image(data_->val, i));
      val_labels_.push_back(data_->val.labels[i]);
    }
  }

  std::vector<double> initial_weights() const override { return start_; }

  double loss_and_gradient(std::span<const double> mu, std::uint64_t step, std::vector<double>& grad) const override {
    Rng rng = make_stream(seed_, "pretrain-batch", {step});
    std::vector<const double*> images;
    std::vector<int> labels;
    for (int k = 0; k < batch_; ++k) {
      const std::size_t i = uniform_index(rng, data_->train.size());
      images.push_back(data_->image(data_->train, i));
      labels.push_back(data_->train.labels[i]);
    }
    return net_.loss_and_gradient(mu, images, labels, grad);
  }

  double validation_loss(std::span<const double> mu) const override {
    std::vector<double> g;
    if (val_images_.empty()) return 0.0;
    return net_.loss_and_gradient(mu, val_images_, val_labels_, g);
  }

 private:
  Network net_;
  std::shared_ptr<const Dataset> data_;
  std::uint64_t seed_;
  int batch_;
  std::vector<double> start_;
  std::vector<const double*> val_images_;
  std::vector<int> val_labels_;
};

}  // namespace metanas
