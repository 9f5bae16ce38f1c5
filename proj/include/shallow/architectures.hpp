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

#include <string>
#include <vector>

#include "shallow/cascade.hpp"
#include "shallow/common.hpp"
#include "shallow/data.hpp"
#include "shallow/model.hpp"

namespace shallow {

/// The cheap (first-stage) and full feature views of a prepared dataset.
struct FeatureViews {
  FeatureView cheap;
  FeatureView full;
};

// Named architectures:
//   single-1lnn      one stage, 1 hidden layer (K=10), full view
//   casc2            LR on cheap view -> 1LNN K=10
//   casc3            LR on cheap view -> 1LNN K=3 -> 2LNN K1=10, K2=20
//   *-allfeat        same, with the first stage on the full view
//   soft-*           same stages, trained with the product rule
inline std::vector<std::string> architecture_names() {
  std::vector<std::string> out{"single-1lnn"};
  for (const char* prefix : {"", "soft-"}) {
    for (const char* base : {"casc2", "casc3", "casc2-allfeat", "casc3-allfeat"}) {
      out.push_back(std::string(prefix) + base);
    }
  }
  return out;
}

inline std::vector<StageSpec> architecture_specs(std::string name, const FeatureViews& views,
                                                 CombinationRule* rule = nullptr) {
  const std::string original = name;
  CombinationRule r = CombinationRule::self_gated;
  if (name.rfind("soft-", 0) == 0) {
    r = CombinationRule::product;
    name = name.substr(5);
  }
  if (rule) *rule = r;
  bool allfeat = false;
  if (name.size() > 8 && name.substr(name.size() - 8) == "-allfeat") {
    allfeat = true;
    name = name.substr(0, name.size() - 8);
  }
  const FeatureView& first = allfeat ? views.full : views.cheap;
  if (name == "single-1lnn" && !allfeat && r == CombinationRule::self_gated) {
    return {StageSpec::one_hidden(10, views.full)};
  }
  if (name == "casc2") {
    return {StageSpec::linear(first), StageSpec::one_hidden(10, views.full)};
  }
  if (name == "casc3") {
    return {StageSpec::linear(first), StageSpec::one_hidden(3, views.full),
            StageSpec::two_hidden(10, 20, views.full)};
  }
  throw ConfigError("unknown architecture '" + original + "'");
}

/// Freshly initialized cascade; stage l draws from sub-stream "init/l".
inline CascadeModel build_architecture(const std::string& name, const FeatureViews& views, std::uint64_t seed,
                                       double alpha = kDefaultAlpha) {
  CascadeModel c;
  c.alpha = alpha;
  const auto specs = architecture_specs(name, views, &c.rule);
  for (std::size_t l = 0; l < specs.size(); ++l) {
    c.stages.push_back(init_params(specs[l], derive_seed(seed, "init/" + std::to_string(l))));
  }
  return c;
}

}  // namespace shallow
