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
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "shallow/cascade.hpp"
#include "shallow/data.hpp"
#include "shallow/model.hpp"

namespace shallow {

inline constexpr double kDefaultThreshold = 0.5;

struct HardResult {
  int label = 0;
  std::size_t stages_executed = 0;
  std::vector<double> per_stage_probs;
};

/// Early-exit execution: stop and output 0 at the first stage with
/// p <= threshold (ties reject); output 1 only if every stage accepts.
inline HardResult hard_classify(const CascadeModel& c, std::span<const double> x,
                                double threshold = kDefaultThreshold) {
  HardResult r;
  r.per_stage_probs.reserve(c.depth());
  for (const auto& stage : c.stages) {
    const double p = forward(stage, x);
    r.per_stage_probs.push_back(p);
    ++r.stages_executed;
    if (p <= threshold) return r;
  }
  r.label = 1;
  return r;
}

// Same decision without recording probabilities; returns stages executed,
// negated when the result is a rejection.
inline long hard_decision(const CascadeModel& c, std::span<const double> x, double threshold) {
  long k = 0;
  for (const auto& stage : c.stages) {
    ++k;
    if (forward(stage, x) <= threshold) return -k;
  }
  return k;
}

/// Arithmetic cost of one stage evaluation: an affine map d -> m costs
/// m (2d + 1) and each logistic unit costs 5.
inline std::size_t stage_flops(const StageSpec& spec) {
  if (spec.view.empty()) throw ConfigError("stage_flops: stage has an empty feature view");
  spec.validate();
  const auto w = spec.widths();
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) total += w[i + 1] * (2 * w[i] + 1) + 5 * w[i + 1];
  return total;
}

/// kappa_l = flops(stage l) / flops(stage 1).
inline CostSchedule default_schedule(const CascadeModel& c, double lambda) {
  if (c.stages.empty()) throw ConfigError("cascade needs at least one stage");
  CostSchedule s;
  const auto base = static_cast<double>(stage_flops(c.stages.front().spec));
  for (const auto& st : c.stages) s.kappa.push_back(static_cast<double>(stage_flops(st.spec)) / base);
  s.lambda = lambda;
  return s;
}

struct EvalReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double tpr = 0.0;  // 0 when the data has no positives
  double fpr = 0.0;  // 0 when the data has no negatives
  double mean_cost = 0.0;    // kappa units
  double mean_stages = 0.0;
  double mean_flops = 0.0;   // absolute arithmetic cost of executed stages
  std::optional<double> mean_time_ns;

  std::size_t total() const { return tp + fp + tn + fn; }

  static constexpr const char* csv_header = "arch,lambda,accuracy,tpr,fpr,mean_cost,mean_stages,mean_time_ns";

  void write_csv_row(std::ostream& out, const std::string& arch, double lambda) const {
    out << arch << ',' << detail::format_double(lambda) << ',' << detail::format_double(accuracy) << ','
        << detail::format_double(tpr) << ',' << detail::format_double(fpr) << ','
        << detail::format_double(mean_cost) << ',' << detail::format_double(mean_stages) << ',';
    if (mean_time_ns) out << detail::format_double(*mean_time_ns);
    out << '\n';
  }
};

inline EvalReport evaluate(const CascadeModel& c, const Dataset& data, const CostSchedule& schedule,
                           double threshold = kDefaultThreshold) {
  if (data.empty()) throw ConfigError("evaluation data is empty");
  c.validate(data.dim());
  schedule.validate(c.depth());
  std::vector<double> cum_cost(c.depth() + 1, 0.0), cum_flops(c.depth() + 1, 0.0);
  for (std::size_t l = 0; l < c.depth(); ++l) {
    cum_cost[l + 1] = cum_cost[l] + schedule.kappa[l];
    cum_flops[l + 1] = cum_flops[l] + static_cast<double>(stage_flops(c.stages[l].spec));
  }
  EvalReport r;
  double cost = 0.0, stages = 0.0, flops = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto h = hard_classify(c, data.row(i), threshold);
    const int y = data.label(i);
    if (h.label == 1) (y == 1 ? r.tp : r.fp)++;
    else (y == 1 ? r.fn : r.tn)++;
    cost += cum_cost[h.stages_executed];
    flops += cum_flops[h.stages_executed];
    stages += static_cast<double>(h.stages_executed);
  }
  const auto n = static_cast<double>(data.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / n;
  r.tpr = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.fpr = r.fp + r.tn ? static_cast<double>(r.fp) / static_cast<double>(r.fp + r.tn) : 0.0;
  r.mean_cost = cost / n;
  r.mean_stages = stages / n;
  r.mean_flops = flops / n;
  return r;
}

/// Mean wall-clock seconds per single-instance hard classification,
/// cycling through `data`, after 100 untimed warm-up calls.
inline double bench(const CascadeModel& c, const Dataset& data, std::size_t evaluations = 10000,
                    double threshold = kDefaultThreshold) {
  if (evaluations == 0) throw ConfigError("bench needs at least one evaluation");
  if (data.empty()) throw ConfigError("bench data is empty");
  c.validate(data.dim());
  volatile long sink = 0;
  for (std::size_t i = 0; i < 100; ++i) sink = sink + hard_decision(c, data.row(i % data.size()), threshold);
  long acc = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < evaluations; ++i) acc += hard_decision(c, data.row(i % data.size()), threshold);
  const auto stop = std::chrono::steady_clock::now();
  sink = sink + acc;
  return std::chrono::duration<double>(stop - start).count() / static_cast<double>(evaluations);
}

}  // namespace shallow
