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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shallow/sweep.hpp"

namespace shallow::testing {

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Linear stage on column 0 whose output is exactly sigmoid(bias) for any x
/// with x[0] = 0.
inline StageModel constant_stage(double p, std::size_t dim = 1) {
  StageModel m = init_params(StageSpec::linear(FeatureView::range(0, dim)), 0);
  m.layers[0].bias[0] = logit(p);
  return m;
}

/// Stage whose probability is sigmoid(w * x[col]).
inline StageModel slope_stage(std::size_t col, double w, std::size_t dim) {
  StageModel m = init_params(StageSpec::linear(FeatureView::range(0, dim)), 0);
  m.layers[0].weight(0, static_cast<Eigen::Index>(col)) = w;
  return m;
}

inline CascadeModel cascade_of(std::vector<StageModel> stages, double alpha = kDefaultAlpha,
                               CombinationRule rule = CombinationRule::self_gated) {
  CascadeModel c;
  c.stages = std::move(stages);
  c.alpha = alpha;
  c.rule = rule;
  return c;
}

/// Gaussian features, labels alternating 1 on every third row.
inline Dataset random_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 3 == 0);
  return Dataset(std::move(x), std::move(y));
}

/// Adds N(0, scale^2) noise to every parameter so linear stages leave zero.
inline void perturb(CascadeModel& c, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& s : c.stages) {
    for (std::size_t k = 0; k < s.parameter_count(); ++k) s.param(k) += scale * rng.normal();
  }
}

struct SynthSplit {
  Dataset train;
  Dataset test;
  FeatureViews views;
};

/// Synthetic defaults at `seed`, split and z-scored the way the CLI does it.
inline SynthSplit synth_split(std::uint64_t seed) {
  SynthConfig sc;
  sc.seed = seed;
  const Dataset data = synth_generate(sc);
  const auto [count, pos] = default_split_counts(data);
  const Split sp = stratified_split(data, count, pos, derive_seed(seed, "split"));
  const FeaturePlan plan = FeaturePlan::fit(sp.train);
  return {plan.apply(sp.train), plan.apply(sp.test), {plan.cheap_view(), plan.full_view()}};
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("shallow-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace shallow::testing
