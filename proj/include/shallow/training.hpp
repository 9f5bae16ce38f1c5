// Copyright 2026 The shallow-cascade Authors
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

#include <chrono>
#include <cmath>
#include <functional>
#include <iosfwd>
#include <ostream>
#include <string>
#include <vector>

#include "shallow/cascade.hpp"
#include "shallow/common.hpp"
#include "shallow/data.hpp"
#include "shallow/model.hpp"

namespace shallow {

enum class OptimizerKind { plain_gd, adaptive_moment };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::plain_gd ? "plain_gd" : "adaptive_moment";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "plain_gd") return OptimizerKind::plain_gd;
  if (s == "adaptive_moment") return OptimizerKind::adaptive_moment;
  throw ConfigError("unknown optimizer '" + s + "' (expected plain_gd or adaptive_moment)");
}

/// Full-batch optimizer settings.
struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adaptive_moment;
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_hat = 1e-8;
  std::size_t epochs = 2000;
  std::uint64_t seed = 7;
  std::size_t log_every = 0;  // 0 = silent
  double positive_weight = 1.0;
  // Gate-sharpness continuation for reverse_init's upstream stages: over the
  // first `anneal_fraction` of the epochs alpha rises geometrically from
  // `anneal_from` to the cascade's alpha. 0 disables.
  double anneal_fraction = 0.5;
  double anneal_from = 1.0;
  // The same continuation for joint fine-tuning.
  double joint_anneal_fraction = 0.0;
  double joint_anneal_from = 10.0;
  std::ostream* log = nullptr;

  void validate() const {
    if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("moment decays must lie in [0, 1)");
    }
    if (!(epsilon_hat > 0.0)) throw ConfigError("epsilon_hat must be positive");
    if (!(positive_weight > 0.0)) throw ConfigError("positive_weight must be positive");
    if (!(anneal_fraction >= 0.0 && anneal_fraction <= 1.0)) {
      throw ConfigError("anneal_fraction must lie in [0, 1]");
    }
    if (!(anneal_from > 0.0)) throw ConfigError("anneal_from must be positive");
    if (!(joint_anneal_fraction >= 0.0 && joint_anneal_fraction <= 1.0)) {
      throw ConfigError("joint_anneal_fraction must lie in [0, 1]");
    }
    if (!(joint_anneal_from > 0.0)) throw ConfigError("joint_anneal_from must be positive");
  }

  /// Gate sharpness used at `epoch` (1-based) when the target is `alpha`;
  /// epoch 0 means the target itself.
  double alpha_at(double alpha, std::size_t epoch) const {
    return ramp(alpha, anneal_from, anneal_fraction, epoch);
  }

  /// Gate sharpness used at `epoch` of joint fine-tuning.
  double joint_alpha_at(double alpha, std::size_t epoch) const {
    return ramp(alpha, joint_anneal_from, joint_anneal_fraction, epoch);
  }

 private:
  double ramp(double alpha, double from, double fraction, std::size_t epoch) const {
    const double span = fraction * static_cast<double>(epochs);
    if (epoch == 0 || span <= 0.0 || from >= alpha) return alpha;
    const double t = static_cast<double>(epoch - 1) / span;
    if (t >= 1.0) return alpha;
    return from * std::pow(alpha / from, t);
  }
};

struct TrainReport {
  std::vector<double> trace;  // objective at the start of each epoch
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
  bool reverted = false;  // final > initial, parameters restored

  void write_trace_csv(std::ostream& out) const {
    out << "epoch,objective\n";
    for (std::size_t e = 0; e < trace.size(); ++e) out << e + 1 << ',' << detail::format_double(trace[e]) << '\n';
  }
};

namespace detail {

/// Objective over a fixed set of trainable stages; fills one gradient per
/// trainable stage and returns the value.
/// `epoch` is 1-based during optimization and 0 for evaluations of the
/// target objective (before the first and after the last update).
using ValueAndGradient = std::function<double(std::vector<ParamGradient>&, std::size_t epoch)>;

inline TrainReport optimize(std::vector<StageModel*> params, const ValueAndGradient& fn, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t S = params.size();
  std::vector<std::vector<double>> theta(S), m(S), v(S), g(S), initial(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto n = params[s]->parameter_count();
    theta[s].resize(n);
    params[s]->get_params(theta[s]);
    initial[s] = theta[s];
    m[s].assign(n, 0.0);
    v[s].assign(n, 0.0);
    g[s].resize(n);
  }

  TrainReport report;
  report.trace.reserve(cfg.epochs);
  std::vector<ParamGradient> grads;
  double b1t = 1.0, b2t = 1.0;
  report.initial_objective = fn(grads, 0);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double f = fn(grads, epoch);
    if (!std::isfinite(f)) {
      for (std::size_t s = 0; s < S; ++s) params[s]->set_params(initial[s]);
      throw TrainingError("non-finite objective at epoch " + std::to_string(epoch), epoch);
    }
    report.trace.push_back(f);
    if (cfg.log && cfg.log_every && epoch % cfg.log_every == 0) {
      *cfg.log << "epoch " << epoch << " objective " << f << '\n';
    }
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t s = 0; s < S; ++s) {
      flatten(grads[s], g[s]);
      auto& th = theta[s];
      if (cfg.optimizer == OptimizerKind::plain_gd) {
        for (std::size_t i = 0; i < th.size(); ++i) th[i] -= cfg.step_size * g[s][i];
      } else {
        for (std::size_t i = 0; i < th.size(); ++i) {
          m[s][i] = cfg.beta1 * m[s][i] + (1.0 - cfg.beta1) * g[s][i];
          v[s][i] = cfg.beta2 * v[s][i] + (1.0 - cfg.beta2) * g[s][i] * g[s][i];
          const double mhat = m[s][i] / (1.0 - b1t);
          const double vhat = v[s][i] / (1.0 - b2t);
          th[i] -= cfg.step_size * mhat / (std::sqrt(vhat) + cfg.epsilon_hat);
        }
      }
      params[s]->set_params(th);
    }
  }
  report.final_objective = fn(grads, 0);
  if (!std::isfinite(report.final_objective)) {
    for (std::size_t s = 0; s < S; ++s) params[s]->set_params(initial[s]);
    throw TrainingError("non-finite objective after epoch " + std::to_string(cfg.epochs), cfg.epochs);
  }
  const auto& t = report.trace;
  if (t.size() >= 10) {
    const double ref = t[t.size() - 10];
    report.converged = std::abs(report.final_objective - ref) <= 1e-8 * std::max(std::abs(ref), 1e-300);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace detail

/// Minimizes plain cross entropy of a single stage.
inline TrainReport train_standalone(StageModel& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("training data is empty");
  model.spec.view.validate(data.dim());
  const Eigen::MatrixXd block = data.gather(model.spec.view);
  const std::vector<double> kappa{0.0};
  const ObjectiveOptions opt{cfg.positive_weight};
  detail::BatchWorkspace ws;
  auto fn = [&](std::vector<ParamGradient>& grads, std::size_t) {
    grads.assign(1, model.zero_gradient());
    const detail::StageTerm term{&model, &block, nullptr, &grads[0]};
    return detail::batch_objective({&term, 1}, data.labels(), kappa, 0.0, kDefaultAlpha,
                                   CombinationRule::self_gated, opt, ws);
  };
  return detail::optimize({&model}, fn, cfg);
}

/// Reverse-order initialization: the last stage is fit alone, then each
/// earlier stage l is fit against the objective of the sub-cascade l..L with
/// its downstream stages frozen (their outputs are cached) and the cost
/// schedule restricted to kappa_l..kappa_L.
///
/// The last stage's fit does not depend on the schedule; callers that
/// already have it (same spec, init and data) may pass it as `trained_last`.
inline std::vector<TrainReport> reverse_init(CascadeModel& cascade, const Dataset& data,
                                             const CostSchedule& schedule, const TrainConfig& cfg,
                                             const StageModel* trained_last = nullptr) {
  cascade.validate(data.dim());
  schedule.validate(cascade.depth());
  const std::size_t L = cascade.depth();
  std::vector<TrainReport> reports(L);
  if (trained_last) {
    if (trained_last->spec != cascade.stages[L - 1].spec) throw ConfigError("trained_last has a different spec");
    cascade.stages[L - 1] = *trained_last;
  } else {
    reports[L - 1] = train_standalone(cascade.stages[L - 1], data, cfg);
  }

  const ObjectiveOptions opt{cfg.positive_weight};
  std::vector<Vector> frozen(L);
  {
    const Eigen::MatrixXd last = data.gather(cascade.stages[L - 1].spec.view);
    frozen[L - 1] = forward_batch(cascade.stages[L - 1], last).probabilities();
  }
  detail::BatchWorkspace ws;
  for (std::size_t l = L - 1; l-- > 0;) {
    StageModel& stage = cascade.stages[l];
    const Eigen::MatrixXd block = data.gather(stage.spec.view);
    const std::span<const double> kappa(schedule.kappa.data() + l, L - l);
    std::vector<detail::StageTerm> terms(L - l);
    for (std::size_t k = l + 1; k < L; ++k) terms[k - l].fixed = &frozen[k];
    auto fn = [&](std::vector<ParamGradient>& grads, std::size_t epoch) {
      grads.assign(1, stage.zero_gradient());
      terms[0] = {&stage, &block, nullptr, &grads[0]};
      return detail::batch_objective(terms, data.labels(), kappa, schedule.lambda, cfg.alpha_at(cascade.alpha, epoch),
                                     cascade.rule, opt, ws);
    };
    reports[l] = detail::optimize({&stage}, fn, cfg);
    frozen[l] = forward_batch(stage, block).probabilities();
  }
  return reports;
}

/// Joint optimization of every stage on the full objective. If the final
/// objective exceeds the initial one the initial parameters are restored and
/// `reverted` is set.
inline TrainReport joint_finetune(CascadeModel& cascade, const Dataset& data, const CostSchedule& schedule,
                                  const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("training data is empty");
  cascade.validate(data.dim());
  schedule.validate(cascade.depth());
  const std::size_t L = cascade.depth();
  std::vector<Eigen::MatrixXd> blocks;
  for (const auto& s : cascade.stages) blocks.push_back(data.gather(s.spec.view));
  const ObjectiveOptions opt{cfg.positive_weight};
  detail::BatchWorkspace ws;
  std::vector<detail::StageTerm> terms(L);
  auto fn = [&](std::vector<ParamGradient>& grads, std::size_t epoch) {
    grads.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      grads[l] = cascade.stages[l].zero_gradient();
      terms[l] = {&cascade.stages[l], &blocks[l], nullptr, &grads[l]};
    }
    return detail::batch_objective(terms, data.labels(), schedule.kappa, schedule.lambda,
                                   cfg.joint_alpha_at(cascade.alpha, epoch), cascade.rule, opt, ws);
  };
  const CascadeModel before = cascade;
  std::vector<StageModel*> params;
  for (auto& s : cascade.stages) params.push_back(&s);
  TrainReport report = detail::optimize(params, fn, cfg);
  if (report.final_objective > report.initial_objective) {
    cascade = before;
    report.reverted = true;
    report.final_objective = report.initial_objective;
  }
  return report;
}

/// Central finite differences of objective() against the analytic gradient,
/// over every parameter of every stage. Returns max |a - f| / max(1, |a|).
/// `tamper` lets callers perturb the analytic gradient (negative controls).
inline double gradient_check(const CascadeModel& cascade, const Dataset& data, const CostSchedule& schedule,
                             double epsilon = 1e-6, const ObjectiveOptions& opt = {},
                             const std::function<void(CascadeGradient&)>& tamper = {}) {
  if (data.size() > 32) throw ConfigError("gradient_check is limited to 32 instances");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  CascadeGradient analytic;
  objective_and_gradient(cascade, data, schedule, analytic, opt);
  if (tamper) tamper(analytic);
  CascadeModel probe = cascade;
  double worst = 0.0;
  for (std::size_t l = 0; l < probe.depth(); ++l) {
    std::vector<double> a(probe.stages[l].parameter_count());
    flatten(analytic[l], a);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double& theta = probe.stages[l].param(i);
      const double saved = theta;
      theta = saved + epsilon;
      const double up = objective(probe, data, schedule, opt);
      theta = saved - epsilon;
      const double down = objective(probe, data, schedule, opt);
      theta = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      worst = std::max(worst, std::abs(a[i] - fd) / std::max(1.0, std::abs(a[i])));
    }
  }
  return worst;
}

}  // namespace shallow
