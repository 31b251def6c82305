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
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "metanas/error.hpp"
#include "metanas/io.hpp"
#include "metanas/random.hpp"

namespace metanas {

inline double hswish(double x) noexcept { return x * std::clamp(x + 3.0, 0.0, 6.0) / 6.0; }
inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr int kMetaLrVersion = 1;

/// Flat controller parameters. Layout: for each of the update, reset and
/// candidate gates: W (H x 2, row-major), U (H x H, row-major), b (H); then
/// w_out (H), b_out, and the two input scales.
struct MetaLrParams {
  int h_dim = 20;
  double alpha_max = 0.1;
  std::vector<double> phi;

  static constexpr int kInputs = 2;

  static std::size_t length_for(int h) noexcept {
    const auto hs = static_cast<std::size_t>(h);
    return 3 * (hs * kInputs + hs * hs + hs) + hs + 1 + kInputs;
  }

  std::size_t gate_size() const noexcept {
    const auto hs = static_cast<std::size_t>(h_dim);
    return hs * kInputs + hs * hs + hs;
  }
  std::size_t out_offset() const noexcept { return 3 * gate_size(); }
  std::size_t bias_offset() const noexcept { return out_offset() + static_cast<std::size_t>(h_dim); }
  std::size_t scale_offset() const noexcept { return bias_offset() + 1; }

  void check() const {
    if (h_dim < 1) fail(ErrorKind::invalid_config, "h_dim must be >= 1");
    if (!(alpha_max > 0.0)) fail(ErrorKind::invalid_config, "alpha_max must be positive");
    if (phi.size() != length_for(h_dim))
      fail(ErrorKind::length_mismatch, "phi has " + std::to_string(phi.size()) + " entries, expected " +
                                           std::to_string(length_for(h_dim)));
    for (double v : phi)
      if (!std::isfinite(v)) fail(ErrorKind::invalid_config, "phi contains a non-finite entry");
  }
};

/// Small uniform gate and output weights, zero gate biases, unit input
/// scales, and an output bias that makes the first step size ~initial_alpha.
inline MetaLrParams init_metalr_params(Rng& rng, int h_dim = 20, double alpha_max = 0.1,
                                       double initial_alpha = 1e-3) {
  MetaLrParams p;
  p.h_dim = h_dim;
  p.alpha_max = alpha_max;
  if (!(initial_alpha > 0.0 && initial_alpha < alpha_max))
    fail(ErrorKind::invalid_config, "initial alpha must lie in (0, alpha_max)");
  p.phi.assign(MetaLrParams::length_for(h_dim), 0.0);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  const auto hs = static_cast<std::size_t>(h_dim);
  for (std::size_t g = 0; g < 3; ++g) {
    const std::size_t base = g * p.gate_size();
    for (std::size_t k = 0; k < hs * MetaLrParams::kInputs + hs * hs; ++k) p.phi[base + k] = u(rng);
  }
  for (std::size_t k = 0; k < hs; ++k) p.phi[p.out_offset() + k] = u(rng);
  const double q = initial_alpha / alpha_max;
  p.phi[p.bias_offset()] = std::log(q / (1.0 - q));
  p.phi[p.scale_offset()] = 1.0;
  p.phi[p.scale_offset() + 1] = 1.0;
  return p;
}

struct MetaLrState {
  std::vector<double> h;
  double last_alpha = 0.0;
  double prev_loss = 0.0;
  bool has_prev = false;

  static MetaLrState fresh(const MetaLrParams& p) {
    MetaLrState s;
    s.h.assign(static_cast<std::size_t>(p.h_dim), 0.0);
    return s;
  }
};

/// One controller step: consumes the current training loss, returns the step
/// size for the next parameter update and the advanced state.
inline std::pair<double, MetaLrState> step_controller(const MetaLrParams& p, const MetaLrState& state,
                                                      double loss) {
  if (!std::isfinite(loss) || loss < 0.0)
    fail(ErrorKind::non_finite_loss, "controller received loss " + format_double(loss));
  const auto hs = static_cast<std::size_t>(p.h_dim);
  if (state.h.size() != hs) fail(ErrorKind::length_mismatch, "controller state has wrong size");
  const double* phi = p.phi.data();
  const double s1 = phi[p.scale_offset()], s2 = phi[p.scale_offset() + 1];
  const double delta = state.has_prev ? loss - state.prev_loss : 0.0;
  const double u[2] = {hswish(s1 * std::log1p(loss)), hswish(s2 * delta)};

  // pre[g][i] = W_g u + b_g, plus U_g h for the update/reset gates.
  const auto affine = [&](std::size_t g, std::size_t i, const std::vector<double>& h) {
    const double* base = phi + g * p.gate_size();
    const double* w = base + i * MetaLrParams::kInputs;
    const double* uu = base + hs * MetaLrParams::kInputs + i * hs;
    const double* b = base + hs * MetaLrParams::kInputs + hs * hs;
    double acc = w[0] * u[0] + w[1] * u[1] + b[i];
    double rec = 0.0;
    for (std::size_t k = 0; k < hs; ++k) rec += uu[k] * h[k];
    return std::pair{acc, rec};
  };

  MetaLrState next = state;
  std::vector<double> z(hs), r(hs);
  for (std::size_t i = 0; i < hs; ++i) {
    const auto [az, rz] = affine(0, i, state.h);
    const auto [ar, rr] = affine(1, i, state.h);
    z[i] = sigmoid(az + rz);
    r[i] = sigmoid(ar + rr);
  }
  for (std::size_t i = 0; i < hs; ++i) {
    const auto [an, rn] = affine(2, i, state.h);
    const double n = std::tanh(an + r[i] * rn);
    next.h[i] = (1.0 - z[i]) * n + z[i] * state.h[i];
  }
  double logit = phi[p.bias_offset()];
  for (std::size_t i = 0; i < hs; ++i) logit += phi[p.out_offset() + i] * next.h[i];
  double alpha = p.alpha_max * sigmoid(logit);
  // Keep the open interval even when the sigmoid saturates in floating point.
  alpha = std::clamp(alpha, std::nextafter(0.0, 1.0), std::nextafter(p.alpha_max, 0.0));
  next.last_alpha = alpha;
  next.prev_loss = loss;
  next.has_prev = true;
  return {alpha, std::move(next)};
}

// ---------------------------------------------------------------------------
// SGD

inline constexpr double kDefaultWeightDecay = 1e-4;

/// mu <- mu - alpha*g, then decoupled decay mu <- mu*(1 - alpha*wd).
inline void sgd_step(std::span<double> mu, std::span<const double> grad, double alpha,
                     double weight_decay = kDefaultWeightDecay) {
  if (mu.size() != grad.size())
    fail(ErrorKind::shape_mismatch, "parameter and gradient sizes differ");
  if (!(alpha >= 0.0)) fail(ErrorKind::invalid_arguments, "alpha must be non-negative");
  const double decay = 1.0 - alpha * weight_decay;
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = (mu[i] - alpha * grad[i]) * decay;
}

// ---------------------------------------------------------------------------
// Schedules

struct LrSchedule {
  std::vector<std::uint64_t> steps;
  std::vector<double> alphas;
  double alpha_max = 0.1;

  std::size_t size() const noexcept { return steps.size(); }

  void check() const {
    if (steps.empty()) fail(ErrorKind::empty_schedule, "schedule is empty");
    if (steps.size() != alphas.size()) fail(ErrorKind::length_mismatch, "schedule columns differ in length");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (i > 0 && steps[i] <= steps[i - 1])
        fail(ErrorKind::malformed_file, "schedule steps must increase strictly");
      if (!(alphas[i] > 0.0 && alphas[i] < alpha_max))
        fail(ErrorKind::malformed_file, "schedule alpha outside (0, alpha_max)");
    }
  }
};

/// Piecewise-constant lookup: the alpha recorded at the last step <= `step`,
/// the first alpha before the range, the last alpha beyond it.
inline double replay_schedule(const LrSchedule& s, std::uint64_t step) {
  if (s.steps.empty()) fail(ErrorKind::empty_schedule, "cannot replay an empty schedule");
  const auto it = std::upper_bound(s.steps.begin(), s.steps.end(), step);
  if (it == s.steps.begin()) return s.alphas.front();
  return s.alphas[static_cast<std::size_t>(it - s.steps.begin()) - 1];
}

inline std::string schedule_to_csv(const LrSchedule& s) {
  std::string out = "step,alpha\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += std::to_string(s.steps[i]) + ',' + format_double(s.alphas[i]) + '\n';
  return out;
}

inline LrSchedule schedule_from_csv(std::string_view text, double alpha_max = 0.1) {
  LrSchedule s;
  s.alpha_max = alpha_max;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != "step,alpha") fail(ErrorKind::malformed_file, "schedule header must be 'step,alpha'");
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorKind::malformed_file, "bad schedule row '" + line + "'");
    std::uint64_t step = 0;
    const std::string_view st(line.data(), comma);
    auto [ptr, ec] = std::from_chars(st.data(), st.data() + st.size(), step);
    if (ec != std::errc{} || ptr != st.data() + st.size())
      fail(ErrorKind::malformed_file, "bad schedule step '" + std::string(st) + "'");
    s.steps.push_back(step);
    s.alphas.push_back(parse_double(std::string_view(line).substr(comma + 1)));
  }
  s.check();
  return s;
}

inline std::string params_to_json(const MetaLrParams& p) {
  nlohmann::ordered_json j;
  j["header"] = {{"h_dim", p.h_dim}, {"alpha_max", p.alpha_max}, {"version", kMetaLrVersion}};
  j["phi"] = p.phi;
  return j.dump() + "\n";
}

inline MetaLrParams params_from_json(std::string_view text) {
  MetaLrParams p;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& h = j.at("header");
    if (h.at("version").get<int>() != kMetaLrVersion)
      fail(ErrorKind::version_mismatch, "controller params version differs");
    p.h_dim = h.at("h_dim").get<int>();
    p.alpha_max = h.at("alpha_max").get<double>();
    p.phi = j.at("phi").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed_file, std::string("controller params: ") + e.what());
  }
  p.check();
  return p;
}

// ---------------------------------------------------------------------------
// Step-size sources used by trainers

/// Supplies the step size for each optimizer step given that step's loss.
class LrSource {
 public:
  virtual ~LrSource() = default;
  virtual double next_alpha(double loss) = 0;
  virtual std::unique_ptr<LrSource> fresh_copy() const = 0;
};

class FixedLr final : public LrSource {
 public:
  explicit FixedLr(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0)) fail(ErrorKind::invalid_config, "fixed alpha must be positive");
  }
  double next_alpha(double) override { return alpha_; }
  std::unique_ptr<LrSource> fresh_copy() const override { return std::make_unique<FixedLr>(alpha_); }

 private:
  double alpha_;
};

class ReplayLr final : public LrSource {
 public:
  explicit ReplayLr(std::shared_ptr<const LrSchedule> schedule) : schedule_(std::move(schedule)) {
    if (!schedule_ || schedule_->steps.empty()) fail(ErrorKind::empty_schedule, "replay needs a schedule");
  }
  double next_alpha(double) override { return replay_schedule(*schedule_, step_++); }
  std::unique_ptr<LrSource> fresh_copy() const override { return std::make_unique<ReplayLr>(schedule_); }

 private:
  std::shared_ptr<const LrSchedule> schedule_;
  std::uint64_t step_ = 0;
};

class LiveLr final : public LrSource {
 public:
  explicit LiveLr(std::shared_ptr<const MetaLrParams> params)
      : params_(std::move(params)), state_(MetaLrState::fresh(*params_)) {}
  double next_alpha(double loss) override {
    auto [alpha, next] = step_controller(*params_, state_, loss);
    state_ = std::move(next);
    return alpha;
  }
  std::unique_ptr<LrSource> fresh_copy() const override { return std::make_unique<LiveLr>(params_); }

 private:
  std::shared_ptr<const MetaLrParams> params_;
  MetaLrState state_;
};

// ---------------------------------------------------------------------------
// Pretraining

/// A trainee the controller can be meta-trained on.
class PretrainTask {
 public:
  virtual ~PretrainTask() = default;
  virtual std::vector<double> initial_weights() const = 0;
  /// Mini-batch loss at `step`; writes the mean gradient into `grad`.
  virtual double loss_and_gradient(std::span<const double> mu, std::uint64_t step,
                                   std::vector<double>& grad) const = 0;
  virtual double validation_loss(std::span<const double> mu) const = 0;
};

/// f(mu) = 1/2 sum_i lambda_i mu_i^2 with log-spaced curvatures; exact
/// gradients, validation loss equals training loss.
class QuadraticBowl final : public PretrainTask {
 public:
  QuadraticBowl(std::size_t dim = 16, double lambda_min = 0.5, double lambda_max = 20.0,
                std::uint64_t seed = 0)
      : curvature_(dim), start_(dim) {
    if (dim < 1 || !(lambda_min > 0.0) || lambda_max < lambda_min)
      fail(ErrorKind::invalid_config, "quadratic bowl needs dim >= 1 and 0 < lambda_min <= lambda_max");
    for (std::size_t i = 0; i < dim; ++i) {
      const double t = dim == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(dim - 1);
      curvature_[i] = lambda_min * std::pow(lambda_max / lambda_min, t);
    }
    Rng rng = make_stream(seed, "bowl");
    std::normal_distribution<double> g;
    for (auto& v : start_) v = g(rng);
  }

  std::vector<double> initial_weights() const override { return start_; }

  double loss_and_gradient(std::span<const double> mu, std::uint64_t, std::vector<double>& grad) const override {
    grad.resize(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) grad[i] = curvature_[i] * mu[i];
    return validation_loss(mu);
  }

  double validation_loss(std::span<const double> mu) const override {
    double f = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) f += 0.5 * curvature_[i] * mu[i] * mu[i];
    return f;
  }

  const std::vector<double>& curvature() const noexcept { return curvature_; }

 private:
  std::vector<double> curvature_;
  std::vector<double> start_;
};

struct RolloutResult {
  double final_loss = 0.0;  // validation loss after the last step
  LrSchedule schedule;
  bool diverged = false;
};

/// T inner SGD steps with step sizes drawn from `lr`.
inline RolloutResult rollout(const PretrainTask& task, LrSource& lr, std::uint64_t steps,
                             double weight_decay = kDefaultWeightDecay, double alpha_max = 0.1) {
  RolloutResult r;
  r.schedule.alpha_max = alpha_max;
  std::vector<double> mu = task.initial_weights(), grad;
  for (std::uint64_t t = 0; t < steps; ++t) {
    const double loss = task.loss_and_gradient(mu, t, grad);
    if (!std::isfinite(loss)) {
      r.diverged = true;
      r.final_loss = std::numeric_limits<double>::infinity();
      return r;
    }
    const double alpha = lr.next_alpha(loss);
    r.schedule.steps.push_back(t);
    r.schedule.alphas.push_back(alpha);
    sgd_step(mu, grad, alpha, weight_decay);
  }
  r.final_loss = task.validation_loss(mu);
  if (!std::isfinite(r.final_loss)) {
    r.diverged = true;
    r.final_loss = std::numeric_limits<double>::infinity();
  }
  return r;
}

struct EsConfig {
  int population = 16;  // antithetic pairs contribute two members each
  double sigma = 0.05;
  int meta_steps = 30;
  std::uint64_t inner_steps = 100;
  double learning_rate = 0.2;  // Adam step on phi
  double weight_decay = kDefaultWeightDecay;

  void check() const {
    if (population < 2 || population % 2 != 0)
      fail(ErrorKind::invalid_config, "ES population must be even and >= 2");
    if (sigma < 0.0) fail(ErrorKind::invalid_config, "ES sigma must be >= 0");
    if (meta_steps < 0) fail(ErrorKind::invalid_config, "meta_steps must be >= 0");
    if (inner_steps < 1) fail(ErrorKind::invalid_config, "inner_steps must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::invalid_config, "ES learning rate must be positive");
  }
};

struct PretrainResult {
  MetaLrParams params;
  LrSchedule schedule;
  double initial_score = 0.0;
  double final_score = 0.0;
  std::vector<double> score_history;  // incumbent score after each meta-step
};

/// Antithetic evolution strategy over phi with centered-rank shaping and an
/// Adam update; the best parameters seen so far are kept as the incumbent.
/// Scores are log final validation losses (lower is better).
inline PretrainResult pretrain_controller(const PretrainTask& task, const MetaLrParams& init,
                                          const EsConfig& cfg, std::uint64_t seed,
                                          const std::function<void(int, double)>& progress = {}) {
  cfg.check();
  init.check();
  const auto score_of = [&](const MetaLrParams& p) {
    LiveLr lr(std::make_shared<const MetaLrParams>(p));
    const auto r = rollout(task, lr, cfg.inner_steps, cfg.weight_decay, p.alpha_max);
    return r.diverged ? std::numeric_limits<double>::infinity()
                      : std::log(std::max(r.final_loss, std::numeric_limits<double>::min()));
  };

  PretrainResult out;
  MetaLrParams mean = init, best = init;
  double best_score = score_of(init);
  out.initial_score = best_score;
  const std::size_t n = init.phi.size();
  std::vector<double> m1(n, 0.0), m2(n, 0.0);
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  for (int step = 0; step < cfg.meta_steps && cfg.sigma > 0.0; ++step) {
    Rng rng = make_stream(seed, "es", {static_cast<std::uint64_t>(step)});
    std::normal_distribution<double> g;
    const int pairs = cfg.population / 2;
    std::vector<std::vector<double>> noise(static_cast<std::size_t>(pairs), std::vector<double>(n));
    std::vector<double> scores;
    for (auto& eps_k : noise) {
      for (auto& v : eps_k) v = g(rng);
      for (double sign : {1.0, -1.0}) {
        MetaLrParams p = mean;
        for (std::size_t i = 0; i < n; ++i) p.phi[i] += sign * cfg.sigma * eps_k[i];
        scores.push_back(score_of(p));
      }
    }
    // Centered ranks in [-0.5, 0.5]; the worst score gets +0.5.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> shaped(scores.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      shaped[order[r]] = static_cast<double>(r) / static_cast<double>(order.size() - 1) - 0.5;

    std::vector<double> grad(n, 0.0);
    for (std::size_t k = 0; k < noise.size(); ++k) {
      const double w = shaped[2 * k] - shaped[2 * k + 1];
      for (std::size_t i = 0; i < n; ++i) grad[i] += w * noise[k][i];
    }
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = grad[i] / (static_cast<double>(cfg.population) * cfg.sigma);
      m1[i] = beta1 * m1[i] + (1 - beta1) * gi;
      m2[i] = beta2 * m2[i] + (1 - beta2) * gi * gi;
      const double mhat = m1[i] / (1 - std::pow(beta1, t));
      const double vhat = m2[i] / (1 - std::pow(beta2, t));
      mean.phi[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);
    }
    const double s = score_of(mean);
    if (s < best_score) {
      best_score = s;
      best = mean;
    }
    out.score_history.push_back(best_score);
    if (progress) progress(step, best_score);
  }

  out.params = best;
  out.final_score = best_score;
  LiveLr lr(std::make_shared<const MetaLrParams>(best));
  out.schedule = rollout(task, lr, cfg.inner_steps, cfg.weight_decay, best.alpha_max).schedule;
  return out;
}

}  // namespace metanas
