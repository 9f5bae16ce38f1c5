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

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/data.hpp"
#include "shallow/model.hpp"

namespace shallow {

/// How stage probabilities combine into the cascade output during training.
///   self_gated: mixture weighted by sharp gates of the stage outputs.
///   product:    noisy-AND (soft cascade baseline).
enum class CombinationRule { self_gated, product };

inline std::string to_string(CombinationRule r) {
  return r == CombinationRule::self_gated ? "self_gated" : "product";
}

inline CombinationRule combination_rule_from_string(const std::string& s) {
  if (s == "self_gated") return CombinationRule::self_gated;
  if (s == "product") return CombinationRule::product;
  throw ParseError("unknown combination rule '" + s + "'");
}

inline constexpr double kDefaultAlpha = 100.0;
inline constexpr double kProbabilityClamp = 1e-12;

struct CascadeModel {
  std::vector<StageModel> stages;
  double alpha = kDefaultAlpha;
  CombinationRule rule = CombinationRule::self_gated;

  std::size_t depth() const { return stages.size(); }

  void validate(std::size_t dim) const {
    if (stages.empty()) throw ConfigError("cascade needs at least one stage");
    if (!(alpha > 0.0)) throw ConfigError("gate sharpness alpha must be positive");
    for (const auto& s : stages) {
      s.spec.validate();
      s.spec.view.validate(dim);
    }
  }

  bool operator==(const CascadeModel&) const = default;
};

/// Per-stage execution costs and the loss/cost tradeoff weight.
struct CostSchedule {
  std::vector<double> kappa;
  double lambda = 0.0;

  void validate(std::size_t depth) const {
    if (kappa.size() != depth) {
      throw ConfigError("cost schedule has " + std::to_string(kappa.size()) + " entries for a " +
                        std::to_string(depth) + "-stage cascade");
    }
    for (double k : kappa) {
      if (!(k >= 0.0)) throw ConfigError("stage costs must be nonnegative");
    }
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  }

  double total() const {
    double s = 0.0;
    for (double k : kappa) s += k;
    return s;
  }
};

using CascadeGradient = std::vector<ParamGradient>;

struct ObjectiveOptions {
  double positive_weight = 1.0;
};

// ---------------------------------------------------------------------------
// Scalar combination rules

inline double gate(double p, double alpha) { return sigmoid(alpha * (p - 0.5)); }

/// 1 - gate(p, alpha), without cancellation when the gate is nearly open.
inline double gate_complement(double p, double alpha) { return sigmoid(alpha * (0.5 - p)); }

inline double gate_derivative(double p, double alpha) {
  return alpha * gate(p, alpha) * gate_complement(p, alpha);
}

/// theta_l = (1 - g(p_l)) prod_{k<l} g(p_k) for l < L; theta_L = prod_{k<L} g(p_k).
inline std::vector<double> mixture_weights(std::span<const double> p, double alpha) {
  std::vector<double> theta(p.size());
  double open = 1.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    if (l + 1 == p.size()) {
      theta[l] = open;
    } else {
      theta[l] = gate_complement(p[l], alpha) * open;
      open *= gate(p[l], alpha);
    }
  }
  return theta;
}

inline double cascade_prob(std::span<const double> p, double alpha) {
  const auto theta = mixture_weights(p, alpha);
  double s = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) s += theta[l] * p[l];
  return s;
}

inline double product_prob(std::span<const double> p) {
  double s = 1.0;
  for (double v : p) s *= v;
  return s;
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

/// Cross entropy of one instance; p_star is clamped away from 0 and 1.
inline double nll_instance(int y, double p_star) {
  const double p = clamp_probability(p_star);
  return y ? -std::log(p) : -std::log1p(-p);
}

/// kappa_1 + sum_{l>=2} kappa_l prod_{k<l} g(p_k).
inline double cost_penalty(std::span<const double> p, std::span<const double> kappa, double alpha) {
  double r = kappa.empty() ? 0.0 : kappa[0];
  double open = 1.0;
  for (std::size_t l = 1; l < p.size(); ++l) {
    open *= gate(p[l - 1], alpha);
    r += kappa[l] * open;
  }
  return r;
}

/// Expected stage cost with raw probabilities in place of gates.
inline double soft_cost_penalty(std::span<const double> p, std::span<const double> kappa) {
  double r = kappa.empty() ? 0.0 : kappa[0];
  double open = 1.0;
  for (std::size_t l = 1; l < p.size(); ++l) {
    open *= p[l - 1];
    r += kappa[l] * open;
  }
  return r;
}

inline double combined_prob(std::span<const double> p, double alpha, CombinationRule rule) {
  return rule == CombinationRule::self_gated ? cascade_prob(p, alpha) : product_prob(p);
}

inline double combined_cost(std::span<const double> p, std::span<const double> kappa, double alpha,
                            CombinationRule rule) {
  return rule == CombinationRule::self_gated ? cost_penalty(p, kappa, alpha) : soft_cost_penalty(p, kappa);
}

// ---------------------------------------------------------------------------
// Per-instance objective with its derivative in the stage probabilities.
//
// Both rules are evaluated as nested recursions from the last stage back:
//   self_gated: S_L = p_L, S_l = (1-g_l) p_l + g_l S_{l+1}, P = S_1
//   product:    S_L = p_L, S_l = p_l S_{l+1}
//   cost:       C_L = kappa_L, C_l = kappa_l + h_l C_{l+1}, r = C_1
// with h = g (self_gated) or h = p (product). Writing G_l = prod_{k<l} h_k,
// dP/dp_l and dr/dp_l are G_l times a local factor, so no division by a
// possibly vanishing gate is ever needed.
//
// The log clamp is treated as identity when differentiating; it only binds
// when a probability is within 1e-12 of 0 or 1.

namespace detail {

inline double instance_objective(std::span<const double> p, int y, std::span<const double> kappa,
                                 double lambda, double alpha, CombinationRule rule, double pos_weight,
                                 std::span<double> dp) {
  const std::size_t L = p.size();
  thread_local std::vector<double> h, hc, dh, S, C;
  h.resize(L);
  hc.resize(L);
  dh.resize(L);
  S.resize(L + 1);
  C.resize(L + 1);
  const bool gated = rule == CombinationRule::self_gated;
  for (std::size_t l = 0; l < L; ++l) {
    if (gated) {
      h[l] = gate(p[l], alpha);
      hc[l] = gate_complement(p[l], alpha);
      dh[l] = alpha * h[l] * hc[l];
    } else {
      h[l] = p[l];
      hc[l] = 1.0 - p[l];
      dh[l] = 1.0;
    }
  }
  S[L - 1] = p[L - 1];
  C[L - 1] = kappa[L - 1];
  for (std::size_t l = L - 1; l-- > 0;) {
    S[l] = gated ? hc[l] * p[l] + h[l] * S[l + 1] : p[l] * S[l + 1];
    C[l] = kappa[l] + h[l] * C[l + 1];
  }
  const double P = S[0];
  const double Pc = clamp_probability(P);
  const double w = y ? pos_weight : 1.0;
  const double loss = w * (y ? -std::log(Pc) : -std::log1p(-Pc));
  const double dloss = w * (y ? -1.0 / Pc : 1.0 / (1.0 - Pc));

  double open = 1.0;
  for (std::size_t l = 0; l < L; ++l) {
    double dP, dr;
    if (l + 1 == L) {
      dP = open;
      dr = 0.0;
    } else if (gated) {
      dP = open * (hc[l] + dh[l] * (S[l + 1] - p[l]));
      dr = open * dh[l] * C[l + 1];
    } else {
      dP = open * S[l + 1];
      dr = open * C[l + 1];
    }
    dp[l] = dloss * dP + lambda * dr;
    open *= h[l];
  }
  return loss + lambda * C[0];
}

/// One stage's contribution to a batched objective: either a live model over
/// its view block, or a fixed probability column (a frozen downstream stage).
struct StageTerm {
  const StageModel* model = nullptr;
  const Eigen::MatrixXd* block = nullptr;
  const Vector* fixed = nullptr;
  ParamGradient* grad = nullptr;  // accumulate into when non-null
};

struct BatchWorkspace {
  std::vector<BatchTrace> traces;
  RowMatrix probs, dp;
};

inline double batch_objective(std::span<const StageTerm> terms, const std::vector<int>& y,
                              std::span<const double> kappa, double lambda, double alpha,
                              CombinationRule rule, const ObjectiveOptions& opt, BatchWorkspace& ws) {
  const std::size_t L = terms.size();
  const auto N = static_cast<Eigen::Index>(y.size());
  ws.traces.resize(L);
  ws.probs.resize(N, static_cast<Eigen::Index>(L));
  ws.dp.resize(N, static_cast<Eigen::Index>(L));
  for (std::size_t l = 0; l < L; ++l) {
    if (terms[l].fixed) {
      ws.probs.col(static_cast<Eigen::Index>(l)) = *terms[l].fixed;
    } else {
      forward_batch(*terms[l].model, *terms[l].block, ws.traces[l]);
      ws.probs.col(static_cast<Eigen::Index>(l)) = ws.traces[l].probabilities();
    }
  }
  double total = 0.0;
  for (Eigen::Index n = 0; n < N; ++n) {
    total += instance_objective({ws.probs.row(n).data(), L}, y[static_cast<std::size_t>(n)], kappa, lambda,
                                alpha, rule, opt.positive_weight, {ws.dp.row(n).data(), L});
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (terms[l].grad && terms[l].model) {
      accumulate_backward_batch(*terms[l].model, ws.traces[l], ws.dp.col(static_cast<Eigen::Index>(l)),
                                *terms[l].grad);
    }
  }
  return total;
}

inline double batch_objective(std::span<const StageTerm> terms, const std::vector<int>& y,
                              std::span<const double> kappa, double lambda, double alpha,
                              CombinationRule rule, const ObjectiveOptions& opt) {
  BatchWorkspace ws;
  return batch_objective(terms, y, kappa, lambda, alpha, rule, opt, ws);
}

}  // namespace detail

/// Stage probabilities of one instance, in cascade order.
inline std::vector<double> stage_probabilities(const CascadeModel& c, std::span<const double> x) {
  std::vector<double> p;
  p.reserve(c.depth());
  for (const auto& s : c.stages) p.push_back(forward(s, x));
  return p;
}

/// Minimized training objective: sum_n [ nll(y_n, P(x_n)) + lambda r(x_n) ],
/// using the cascade's own combination rule. Evaluated instance by instance
/// through the scalar rules above (independent of the gradient path).
inline double objective(const CascadeModel& c, const Dataset& data, const CostSchedule& schedule,
                        const ObjectiveOptions& opt = {}) {
  c.validate(data.dim());
  schedule.validate(c.depth());
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto p = stage_probabilities(c, data.row(n));
    const int y = data.label(n);
    const double w = y ? opt.positive_weight : 1.0;
    total += w * nll_instance(y, combined_prob(p, c.alpha, c.rule)) +
             schedule.lambda * combined_cost(p, schedule.kappa, c.alpha, c.rule);
  }
  return total;
}

/// Objective value and its exact gradient w.r.t. every stage parameter.
/// Stages with `trainable[l] == false` are evaluated but get a zero gradient.
inline double objective_and_gradient(const CascadeModel& c, const Dataset& data, const CostSchedule& schedule,
                                     CascadeGradient& grad, const ObjectiveOptions& opt = {},
                                     const std::vector<bool>& trainable = {}) {
  c.validate(data.dim());
  schedule.validate(c.depth());
  grad.clear();
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(c.depth());
  for (const auto& s : c.stages) {
    blocks.push_back(data.gather(s.spec.view));
    grad.push_back(s.zero_gradient());
  }
  std::vector<detail::StageTerm> terms(c.depth());
  for (std::size_t l = 0; l < c.depth(); ++l) {
    terms[l].model = &c.stages[l];
    terms[l].block = &blocks[l];
    if (trainable.empty() || trainable[l]) terms[l].grad = &grad[l];
  }
  return detail::batch_objective(terms, data.labels(), schedule.kappa, schedule.lambda, c.alpha, c.rule, opt);
}

inline CascadeGradient objective_gradient(const CascadeModel& c, const Dataset& data,
                                          const CostSchedule& schedule, const ObjectiveOptions& opt = {}) {
  CascadeGradient g;
  objective_and_gradient(c, data, schedule, g, opt);
  return g;
}

/// Soft-cascade baseline: noisy-AND cross entropy plus the raw-probability
/// expected stage cost, whatever rule the cascade was built with.
inline double soft_cascade_objective(CascadeModel c, const Dataset& data, const CostSchedule& schedule,
                                     const ObjectiveOptions& opt = {}) {
  c.rule = CombinationRule::product;
  return objective(c, data, schedule, opt);
}

inline CascadeGradient soft_cascade_gradient(CascadeModel c, const Dataset& data, const CostSchedule& schedule,
                                             const ObjectiveOptions& opt = {}) {
  c.rule = CombinationRule::product;
  return objective_gradient(c, data, schedule, opt);
}

}  // namespace shallow
