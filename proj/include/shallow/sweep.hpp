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
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "shallow/architectures.hpp"
#include "shallow/cascade.hpp"
#include "shallow/runtime.hpp"
#include "shallow/training.hpp"

namespace shallow {

enum class KappaMode { flop_default, explicit_values };

/// 0 followed by 12 log-spaced values from 1e-5 to 1e1.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> g{0.0};
  for (int i = 0; i < 12; ++i) g.push_back(std::pow(10.0, -5.0 + 6.0 * i / 11.0));
  return g;
}

struct SweepConfig {
  std::vector<double> lambda_grid = default_lambda_grid();
  std::vector<std::string> architectures{"casc3"};
  std::vector<std::uint64_t> seeds{7};
  TrainConfig train_cfg;
  KappaMode kappa_mode = KappaMode::flop_default;
  std::vector<double> kappa;  // used when kappa_mode == explicit_values
  double alpha = kDefaultAlpha;
  std::size_t bench_evaluations = 0;  // 0 = no timing
  std::size_t workers = 1;

  void validate() const {
    if (lambda_grid.empty() || architectures.empty() || seeds.empty()) {
      throw ConfigError("sweep grids must be nonempty");
    }
    std::set<double> distinct(lambda_grid.begin(), lambda_grid.end());
    if (distinct.size() != lambda_grid.size()) throw ConfigError("lambda grid values must be distinct");
    for (double l : lambda_grid) {
      if (!(l >= 0.0)) throw ConfigError("lambda values must be nonnegative");
    }
    if (kappa_mode == KappaMode::explicit_values && kappa.empty()) {
      throw ConfigError("explicit kappa mode needs kappa values");
    }
    if (workers < 1) throw ConfigError("workers must be at least 1");
    train_cfg.validate();
  }
};

struct TradeoffPoint {
  std::string architecture;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double mean_cost = 0.0;
  double mean_stages = 0.0;
  double mean_flops = 0.0;
  std::optional<double> mean_time_ns;

  static constexpr const char* csv_header =
      "arch,lambda,seed,accuracy,tpr,fpr,mean_cost,mean_stages,mean_time_ns";

  void write_csv_row(std::ostream& out) const {
    out << architecture << ',' << detail::format_double(lambda) << ',' << seed << ','
        << detail::format_double(accuracy) << ',' << detail::format_double(tpr) << ','
        << detail::format_double(fpr) << ',' << detail::format_double(mean_cost) << ','
        << detail::format_double(mean_stages) << ',';
    if (mean_time_ns) out << detail::format_double(*mean_time_ns);
    out << '\n';
  }
};

struct SweepFailure {
  std::string architecture;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::string message;
};

struct SweepResult {
  std::vector<TradeoffPoint> points;
  std::vector<SweepFailure> failures;
};

struct TrainedPoint {
  CascadeModel cascade;
  CostSchedule schedule;
  TradeoffPoint point;
};

inline CostSchedule sweep_schedule(const SweepConfig& cfg, const CascadeModel& c, double lambda) {
  if (cfg.kappa_mode == KappaMode::explicit_values) return {cfg.kappa, lambda};
  return default_schedule(c, lambda);
}

/// The schedule-independent part of a grid point: the standalone fit of the
/// last stage, shared by every lambda for one (architecture, seed).
inline StageModel train_last_stage(const std::string& arch, std::uint64_t seed, const SweepConfig& cfg,
                                   const Dataset& train, const FeatureViews& views) {
  CascadeModel c = build_architecture(arch, views, seed, cfg.alpha);
  TrainConfig tc = cfg.train_cfg;
  tc.seed = seed;
  train_standalone(c.stages.back(), train, tc);
  return c.stages.back();
}

/// One grid point: init -> reverse_init -> joint_finetune -> evaluate.
inline TrainedPoint train_point(const std::string& arch, double lambda, std::uint64_t seed,
                                const SweepConfig& cfg, const Dataset& train, const Dataset& test,
                                const FeatureViews& views, const StageModel* trained_last = nullptr) {
  TrainedPoint out;
  out.cascade = build_architecture(arch, views, seed, cfg.alpha);
  out.schedule = sweep_schedule(cfg, out.cascade, lambda);
  TrainConfig tc = cfg.train_cfg;
  tc.seed = seed;
  reverse_init(out.cascade, train, out.schedule, tc, trained_last);
  joint_finetune(out.cascade, train, out.schedule, tc);
  const EvalReport r = evaluate(out.cascade, test, out.schedule);
  out.point = {arch, lambda, seed, r.accuracy, r.tpr, r.fpr, r.mean_cost, r.mean_stages, r.mean_flops, {}};
  if (cfg.bench_evaluations > 0) out.point.mean_time_ns = 1e9 * bench(out.cascade, test, cfg.bench_evaluations);
  return out;
}

namespace detail {

// Runs fn(i) for i in [0, n) on `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const std::size_t nthreads = std::min(workers, n);
  if (nthreads <= 1) {
    work();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Every (architecture, lambda, seed) combination as an independent run.
/// Results come back in grid order regardless of worker count; failed runs
/// are recorded and skipped.
inline SweepResult run_sweep(const SweepConfig& cfg, const Dataset& train, const Dataset& test,
                             const FeatureViews& views) {
  cfg.validate();
  struct Job {
    std::string arch;
    double lambda;
    std::uint64_t seed;
    std::size_t base;
  };
  std::vector<std::pair<std::string, std::uint64_t>> bases;
  std::vector<Job> jobs;
  for (const auto& a : cfg.architectures) {
    architecture_specs(a, views);  // reject unknown names before any training
    for (auto s : cfg.seeds) bases.emplace_back(a, s);
  }
  for (std::size_t b = 0; b < bases.size(); ++b) {
    for (double l : cfg.lambda_grid) jobs.push_back({bases[b].first, l, bases[b].second, b});
  }

  std::vector<std::optional<StageModel>> last(bases.size());
  std::vector<std::string> base_errors(bases.size());
  detail::parallel_for(bases.size(), cfg.workers, [&](std::size_t b) {
    try {
      last[b] = train_last_stage(bases[b].first, bases[b].second, cfg, train, views);
    } catch (const std::exception& e) {
      base_errors[b] = e.what();
    }
  });

  std::vector<std::optional<TradeoffPoint>> done(jobs.size());
  std::vector<std::string> errors(jobs.size());
  detail::parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
    const auto& j = jobs[i];
    if (!last[j.base]) {
      errors[i] = base_errors[j.base];
      return;
    }
    try {
      done[i] = train_point(j.arch, j.lambda, j.seed, cfg, train, test, views, &*last[j.base]).point;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  SweepResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done[i]) out.points.push_back(*done[i]);
    else out.failures.push_back({jobs[i].arch, jobs[i].lambda, jobs[i].seed, errors[i]});
  }
  return out;
}

/// True when `a` is at least as accurate and as cheap as `b`, and strictly
/// better in one of the two.
inline bool dominates(const TradeoffPoint& a, const TradeoffPoint& b) {
  return a.accuracy >= b.accuracy && a.mean_cost <= b.mean_cost &&
         (a.accuracy > b.accuracy || a.mean_cost < b.mean_cost);
}

/// Non-dominated points (maximize accuracy, minimize mean_cost), ordered by
/// mean_cost ascending. Exact duplicates are all kept.
inline std::vector<TradeoffPoint> pareto_front(const std::vector<TradeoffPoint>& points) {
  if (points.empty()) throw ConfigError("pareto_front needs at least one point");
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].mean_cost != points[b].mean_cost) return points[a].mean_cost < points[b].mean_cost;
    return points[a].accuracy > points[b].accuracy;
  });
  std::vector<TradeoffPoint> front;
  for (auto i : order) {
    const auto& p = points[i];
    if (front.empty() || p.accuracy > front.back().accuracy ||
        (p.accuracy == front.back().accuracy && p.mean_cost == front.back().mean_cost)) {
      front.push_back(p);
    }
  }
  return front;
}

/// Highest accuracy; ties go to lower mean_cost, then lower lambda.
inline TradeoffPoint select_best(const std::vector<TradeoffPoint>& points) {
  if (points.empty()) throw ConfigError("select_best needs at least one point");
  return *std::min_element(points.begin(), points.end(), [](const TradeoffPoint& a, const TradeoffPoint& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.mean_cost != b.mean_cost) return a.mean_cost < b.mean_cost;
    return a.lambda < b.lambda;
  });
}

/// select_best for each architecture present, keyed by name.
inline std::map<std::string, TradeoffPoint> best_per_architecture(const std::vector<TradeoffPoint>& points) {
  std::map<std::string, std::vector<TradeoffPoint>> by;
  for (const auto& p : points) by[p.architecture].push_back(p);
  std::map<std::string, TradeoffPoint> out;
  for (const auto& [name, pts] : by) out.emplace(name, select_best(pts));
  return out;
}

}  // namespace shallow
