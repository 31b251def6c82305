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
#include <memory>
#include <string>

#include "metanas/evaluator/dataset.hpp"
#include "metanas/evaluator/network.hpp"
#include "metanas/evaluator/oracle.hpp"
#include "metanas/evaluator/trainer.hpp"
#include "metanas/metalr.hpp"

namespace metanas {

struct EvaluatorCapabilities {
  std::string name;
  /// False when the step-size source has no effect on the result; the engine
  /// then skips controller pretraining.
  bool uses_learning_rate = true;
};

/// Binds genotypes to measured performance. Implementations must be safe to
/// call concurrently on distinct individuals.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvaluatorCapabilities capabilities() const = 0;
  virtual Metrics evaluate(const Individual& ind, int epochs, LrSource& lr, std::uint64_t seed) const = 0;
  virtual std::uint64_t parameter_count(const Individual& ind) const = 0;
  /// Task for controller pretraining, or null when not applicable.
  virtual std::unique_ptr<PretrainTask> pretrain_task(const Individual&, std::uint64_t) const { return nullptr; }
};

class OracleEvaluator final : public Evaluator {
 public:
  explicit OracleEvaluator(MacroConfig macro = {}) : macro_(std::move(macro)) { macro_.check(); }

  EvaluatorCapabilities capabilities() const override { return {"oracle", false}; }
  Metrics evaluate(const Individual& ind, int epochs, LrSource&, std::uint64_t) const override {
    return oracle_evaluate(ind, epochs, macro_);
  }
  std::uint64_t parameter_count(const Individual& ind) const override { return count_parameters(ind, macro_); }

 private:
  MacroConfig macro_;
};

class TinyTrainerEvaluator final : public Evaluator {
 public:
  TinyTrainerEvaluator(MacroConfig macro, std::shared_ptr<const Dataset> data, TrainerConfig cfg = {})
      : macro_(std::move(macro)), data_(std::move(data)), cfg_(cfg) {
    macro_.check();
    cfg_.check();
    if (!data_) fail(ErrorKind::invalid_config, "trainer needs a dataset");
    if (!(Shape{macro_.input_channels, macro_.input_height, macro_.input_width} == data_->sample_shape))
      fail(ErrorKind::invalid_config, "dataset sample shape does not match the macro input shape");
    if (data_->num_classes != macro_.num_classes)
      fail(ErrorKind::invalid_config, "dataset class count does not match the macro");
  }

  EvaluatorCapabilities capabilities() const override { return {"tiny", true}; }
  Metrics evaluate(const Individual& ind, int epochs, LrSource& lr, std::uint64_t seed) const override {
    return train_network(ind, macro_, *data_, epochs, lr, seed, cfg_);
  }
  std::uint64_t parameter_count(const Individual& ind) const override { return count_parameters(ind, macro_); }
  std::unique_ptr<PretrainTask> pretrain_task(const Individual& ind, std::uint64_t seed) const override {
    return std::make_unique<NetworkPretrainTask>(ind, macro_, data_, seed, cfg_.batch_size);
  }

  const MacroConfig& macro() const noexcept { return macro_; }
  const Dataset& dataset() const noexcept { return *data_; }

 private:
  MacroConfig macro_;
  std::shared_ptr<const Dataset> data_;
  TrainerConfig cfg_;
};

}  // namespace metanas
