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

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace shallow {
namespace {

using P = std::vector<double>;

// Reference gate in extended precision.
double gate_ref(double p, double alpha) {
  return static_cast<double>(1.0L / (1.0L + std::exp(-static_cast<long double>(alpha) * (p - 0.5L))));
}

TEST(Gate, ReferenceValues) {
  EXPECT_EQ(gate(0.5, 100), 0.5);
  EXPECT_NEAR(gate(0.49, 100), gate_ref(0.49, 100), 1e-15);
  EXPECT_NEAR(gate(0.49, 100), 0.2689414, 1e-7);
  EXPECT_NEAR(gate(0.6, 100), gate_ref(0.6, 100), 1e-15);
  EXPECT_NEAR(gate(0.6, 100), 0.9999546, 1e-7);
  EXPECT_NEAR(gate(0.3, 100), 2.06e-9, 1e-11);
}

TEST(Gate, Antisymmetric) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(-0.5, 0.5);
    const double a = rng.uniform(0.1, 200);
    EXPECT_NEAR(gate(0.5 + d, a) + gate(0.5 - d, a), 1.0, 1e-15);
  }
}

TEST(Gate, DerivativeMatchesFiniteDifference) {
  for (double p : {0.2, 0.45, 0.5, 0.52, 0.8}) {
    for (double a : {1.0, 10.0, 100.0}) {
      const double fd = (gate(p + 1e-7, a) - gate(p - 1e-7, a)) / 2e-7;
      EXPECT_NEAR(gate_derivative(p, a), fd, 1e-6 * std::max(1.0, fd));
    }
  }
}

TEST(MixtureWeights, SingleStage) { EXPECT_EQ(mixture_weights(P{0.3}, 100), P{1.0}); }

TEST(MixtureWeights, ThreeStageExample) {
  const auto t = mixture_weights(P{0.9, 0.8, 0.3}, 100);
  // theta_1 = 1 - g(0.9) = 1 / (1 + e^40), theta_2 = g(0.9) (1 - g(0.8)).
  EXPECT_NEAR(t[0], 1.0 / (1.0 + std::exp(40.0)), 1e-30);
  EXPECT_LT(t[0], 4.5e-5);
  EXPECT_NEAR(t[1], gate_ref(0.9, 100) * (1.0 / (1.0 + std::exp(30.0))), 1e-25);
  EXPECT_GT(t[2], 0.9999);
}

TEST(MixtureWeights, SumToOne) {
  Rng rng(2);
  for (std::size_t L = 1; L <= 5; ++L) {
    for (double a : {1.0, 10.0, 100.0}) {
      for (int i = 0; i < 200; ++i) {
        P p(L);
        for (auto& v : p) v = rng.uniform();
        const auto t = mixture_weights(p, a);
        double s = 0;
        for (double v : t) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(CascadeProb, Examples) {
  EXPECT_EQ(cascade_prob(P{0.37}, 100), 0.37);
  EXPECT_NEAR(cascade_prob(P{0.3, 0.9, 0.9}, 100), 0.3, 1e-7);
  EXPECT_NEAR(cascade_prob(P{0.9, 0.8, 0.3}, 100), 0.3, 1e-3);
}

TEST(CascadeProb, ExplicitThreeStageExpansion) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double p1 = rng.uniform(), p2 = rng.uniform(), p3 = rng.uniform();
    const double a = i % 2 ? 100.0 : rng.uniform(0.5, 50);
    const double g1 = gate(p1, a), g2 = gate(p2, a);
    const double expanded = (1 - g1) * p1 + g1 * (1 - g2) * p2 + g1 * g2 * p3;
    EXPECT_NEAR(cascade_prob(P{p1, p2, p3}, a), expanded, 1e-15);
  }
}

TEST(CascadeProb, ConvexCombination) {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    P p(1 + i % 4);
    for (auto& v : p) v = rng.uniform();
    const double c = cascade_prob(p, rng.uniform(0.5, 100));
    EXPECT_GE(c, *std::min_element(p.begin(), p.end()) - 1e-15);
    EXPECT_LE(c, *std::max_element(p.begin(), p.end()) + 1e-15);
  }
}

TEST(CascadeProb, SharpnessLimit) {
  Rng rng(5);
  for (int i = 0; i < 20000; ++i) {
    const std::size_t L = 1 + static_cast<std::size_t>(i % 4);
    P p(L);
    for (auto& v : p) v = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.4) : rng.uniform(0.6, 1.0);
    double sel = p.back();
    for (double v : p) {
      if (v < 0.5) {
        sel = v;
        break;
      }
    }
    EXPECT_LE(std::abs(cascade_prob(p, 100) - sel), static_cast<double>(L - 1) * std::exp(-10.0) + 1e-15);
  }
}

TEST(ProductProb, Examples) {
  EXPECT_EQ(product_prob(P{1, 1, 1}), 1.0);
  EXPECT_EQ(product_prob(P{0.5, 0.5}), 0.25);
  EXPECT_EQ(product_prob(P{0.3, 0.0, 0.9}), 0.0);
}

TEST(Nll, Examples) {
  EXPECT_NEAR(nll_instance(1, 1.0 - 1e-15), 0.0, 1e-11);
  EXPECT_NEAR(nll_instance(1, 0.5), 0.6931472, 1e-7);
  EXPECT_NEAR(nll_instance(0, 0.25), 0.2876821, 1e-7);
  EXPECT_NEAR(nll_instance(0, 0.25), -std::log(0.75), 1e-15);
  EXPECT_TRUE(std::isfinite(nll_instance(1, 0.0)));
  EXPECT_NEAR(nll_instance(1, 0.0), -std::log(kProbabilityClamp), 1e-9);
}

TEST(CostPenalty, Examples) {
  const P kappa{1, 2, 4};
  EXPECT_NEAR(cost_penalty(P{0.3, 0.5, 0.5}, kappa, 100), 1.0, 1e-8);
  EXPECT_NEAR(cost_penalty(P{0.9, 0.9, 0.1}, kappa, 100), 7.0, 1e-3);
  EXPECT_EQ(cost_penalty(P{0.42}, P{3.5}, 100), 3.5);
  EXPECT_EQ(soft_cost_penalty(P{0.42}, P{3.5}), 3.5);
  EXPECT_NEAR(soft_cost_penalty(P{0.5, 0.5, 0.1}, kappa), 1 + 2 * 0.5 + 4 * 0.25, 1e-15);
}

TEST(CostPenalty, BoundedAndMonotone) {
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t L = 1 + static_cast<std::size_t>(i % 4);
    P p(L), kappa(L);
    double total = 0;
    for (std::size_t l = 0; l < L; ++l) {
      p[l] = rng.uniform();
      kappa[l] = rng.uniform(0.1, 10);
      total += kappa[l];
    }
    const double a = rng.uniform(0.5, 100);
    const double r = cost_penalty(p, kappa, a);
    EXPECT_GE(r, kappa[0]);
    EXPECT_LE(r, total + 1e-12);
    for (std::size_t k = 0; k + 1 < L; ++k) {
      P q = p;
      q[k] = std::min(1.0, q[k] + 0.05);
      EXPECT_GE(cost_penalty(q, kappa, a), r - 1e-12);
    }
  }
}

// Independent recomputation: per-instance loops over the raw weights with
// the closed-form product expressions instead of the library's recursions.
double reference_objective(const CascadeModel& c, const Dataset& d, const CostSchedule& s) {
  double total = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    P p;
    for (const auto& st : c.stages) {
      std::vector<double> a;
      for (auto idx : st.spec.view.indices) a.push_back(d.row(n)[idx]);
      for (const auto& layer : st.layers) {
        std::vector<double> next;
        for (Eigen::Index o = 0; o < layer.weight.rows(); ++o) {
          double z = layer.bias[o];
          for (Eigen::Index i = 0; i < layer.weight.cols(); ++i) z += layer.weight(o, i) * a[static_cast<std::size_t>(i)];
          next.push_back(1.0 / (1.0 + std::exp(-z)));
        }
        a = next;
      }
      p.push_back(a[0]);
    }
    const std::size_t L = p.size();
    auto h = [&](double v) { return c.rule == CombinationRule::product ? v : 1.0 / (1.0 + std::exp(-c.alpha * (v - 0.5))); };
    double pstar = 0.0;
    if (c.rule == CombinationRule::product) {
      pstar = 1.0;
      for (double v : p) pstar *= v;
    } else {
      for (std::size_t l = 0; l < L; ++l) {
        double w = l + 1 < L ? 1.0 - h(p[l]) : 1.0;
        for (std::size_t k = 0; k < l; ++k) w *= h(p[k]);
        pstar += w * p[l];
      }
    }
    double r = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      double w = s.kappa[l];
      for (std::size_t k = 0; k < l; ++k) w *= h(p[k]);
      r += w;
    }
    pstar = std::min(std::max(pstar, 1e-12), 1.0 - 1e-12);
    const int y = d.label(n);
    total += -(y ? std::log(pstar) : std::log(1.0 - pstar)) + s.lambda * r;
  }
  return total;
}

CascadeModel random_cascade(const std::string& arch, std::uint64_t seed, double alpha, std::size_t dim) {
  const FeatureViews views{FeatureView::range(0, 3), FeatureView::range(0, dim)};
  CascadeModel c = build_architecture(arch, views, seed, alpha);
  testing::perturb(c, seed + 1000);
  return c;
}

TEST(Objective, MatchesIndependentRecomputation) {
  int cases = 0;
  for (const char* arch : {"single-1lnn", "casc2", "casc3", "soft-casc2", "soft-casc3"}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const CascadeModel c = random_cascade(arch, seed, seed % 2 ? 100.0 : 3.0, 6);
      const Dataset d = testing::random_dataset(15, 6, seed);
      const CostSchedule s = default_schedule(c, 0.05 * static_cast<double>(seed));
      const double ref = reference_objective(c, d, s);
      EXPECT_NEAR(objective(c, d, s), ref, 1e-10 * std::max(1.0, std::abs(ref))) << arch << " " << seed;
      CascadeGradient g;
      EXPECT_NEAR(objective_and_gradient(c, d, s, g), ref, 1e-10 * std::max(1.0, std::abs(ref)));
      ++cases;
    }
  }
  EXPECT_EQ(cases, 20);
}

TEST(Objective, LambdaIsAdditive) {
  const CascadeModel c = random_cascade("casc3", 3, 100, 6);
  const Dataset d = testing::random_dataset(20, 6, 3);
  CostSchedule s0 = default_schedule(c, 0.0), s1 = default_schedule(c, 0.3);
  double penalty = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    penalty += cost_penalty(stage_probabilities(c, d.row(n)), s0.kappa, c.alpha);
  }
  EXPECT_NEAR(objective(c, d, s1) - objective(c, d, s0), 0.3 * penalty, 1e-9);
}

TEST(Objective, SingleStageIsCrossEntropy) {
  const CascadeModel c = random_cascade("single-1lnn", 1, 100, 6);
  const Dataset d = testing::random_dataset(10, 6, 1);
  double ce = 0.0;
  ParamGradient manual = c.stages[0].zero_gradient();
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto t = forward_trace(c.stages[0], d.row(n));
    const double p = t.probability();
    const int y = d.label(n);
    ce += -(y ? std::log(p) : std::log(1 - p));
    manual += backward(c.stages[0], t, y ? -1.0 / p : 1.0 / (1.0 - p));
  }
  const CostSchedule s{{1.0}, 0.0};
  EXPECT_NEAR(objective(c, d, s), ce, 1e-10);
  const auto g = objective_gradient(c, d, s);
  for (std::size_t l = 0; l < manual.layers.size(); ++l) {
    EXPECT_LT((g[0].layers[l].weight - manual.layers[l].weight).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_NEAR(soft_cascade_objective(c, d, s), objective(c, d, s), 1e-12);
}

TEST(Objective, PositiveWeightScalesPositiveTerms) {
  const CascadeModel c = random_cascade("casc2", 4, 100, 6);
  const Dataset d = testing::random_dataset(12, 6, 4);
  const CostSchedule s = default_schedule(c, 0.0);
  double pos = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    if (d.label(n)) pos += nll_instance(1, cascade_prob(stage_probabilities(c, d.row(n)), c.alpha));
  }
  EXPECT_NEAR(objective(c, d, s, {3.0}) - objective(c, d, s), 2.0 * pos, 1e-9);
}

TEST(Objective, SoftCascadeNoisyAndReduction) {
  const CascadeModel c = random_cascade("casc3", 6, 100, 6);
  const Dataset d = testing::random_dataset(10, 6, 6);
  const CostSchedule s = default_schedule(c, 0.0);
  double ce = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n) {
    ce += nll_instance(d.label(n), product_prob(stage_probabilities(c, d.row(n))));
  }
  EXPECT_NEAR(soft_cascade_objective(c, d, s), ce, 1e-10);
}

TEST(Objective, RejectsMismatchedInputs) {
  const CascadeModel c = random_cascade("casc3", 1, 100, 6);
  EXPECT_THROW(objective(c, testing::random_dataset(5, 4, 1), default_schedule(c, 0)), ConfigError);
  EXPECT_THROW(objective(c, testing::random_dataset(5, 6, 1), CostSchedule{{1, 2}, 0}), ConfigError);
  EXPECT_THROW(objective(c, testing::random_dataset(5, 6, 1), CostSchedule{{1, 2, 3}, -1}), ConfigError);
}

// Oracle: central differences of the scalar objective().
double fd_error(const CascadeModel& c, const Dataset& d, const CostSchedule& s, const CascadeGradient& g,
                const std::vector<bool>& which = {}) {
  const double eps = 1e-6;
  CascadeModel probe = c;
  double worst = 0.0;
  for (std::size_t l = 0; l < c.depth(); ++l) {
    std::vector<double> a(c.stages[l].parameter_count());
    flatten(g[l], a);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!which.empty() && !which[l]) {
        EXPECT_EQ(a[k], 0.0);
        continue;
      }
      double& th = probe.stages[l].param(k);
      const double saved = th;
      th = saved + eps;
      const double up = objective(probe, d, s);
      th = saved - eps;
      const double down = objective(probe, d, s);
      th = saved;
      worst = std::max(worst, std::abs(a[k] - (up - down) / (2 * eps)) / std::max(1.0, std::abs(a[k])));
    }
  }
  return worst;
}

TEST(Gradient, MatchesFiniteDifferences) {
  int configs = 0;
  for (const char* arch : {"single-1lnn", "casc2", "casc3", "soft-casc2", "soft-casc3", "casc2-allfeat"}) {
    for (double alpha : {1.0, 100.0}) {
      for (double lambda : {0.0, 0.1}) {
        const std::uint64_t seed = static_cast<std::uint64_t>(configs);
        const CascadeModel c = random_cascade(arch, seed, alpha, 6);
        const Dataset d = testing::random_dataset(8, 6, seed);
        const CostSchedule s = default_schedule(c, lambda);
        EXPECT_LT(fd_error(c, d, s, objective_gradient(c, d, s)), 1e-5)
            << arch << " alpha " << alpha << " lambda " << lambda;
        ++configs;
      }
    }
  }
  EXPECT_EQ(configs, 24);
}

TEST(Gradient, IdenticalStagesOfOppositeSign) {
  const FeatureViews views{FeatureView::range(0, 6), FeatureView::range(0, 6)};
  CascadeModel c = build_architecture("casc2-allfeat", views, 3, 100);
  testing::perturb(c, 11);
  c.stages[1] = init_params(StageSpec::linear(views.full), 0);
  c.stages[1].layers[0].weight = -c.stages[0].layers[0].weight;
  c.stages[1].layers[0].bias = -c.stages[0].layers[0].bias;
  const Dataset d = testing::random_dataset(8, 6, 3);
  const CostSchedule s{{1.0, 1.0}, 0.1};
  EXPECT_LT(fd_error(c, d, s, objective_gradient(c, d, s)), 1e-5);
}

TEST(Gradient, FrozenStagesGetZeroAndStageOneStillMatches) {
  const CascadeModel c = random_cascade("casc3", 21, 100, 6);
  const Dataset d = testing::random_dataset(10, 6, 21);
  const CostSchedule s = default_schedule(c, 0.1);
  CascadeGradient g;
  const std::vector<bool> trainable{true, false, false};
  objective_and_gradient(c, d, s, g, {}, trainable);
  EXPECT_LT(fd_error(c, d, s, g, trainable), 1e-5);
}

TEST(Gradient, SoftCascadeGradientMatches) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CascadeModel c = random_cascade("casc2", seed, 100, 6);
    const Dataset d = testing::random_dataset(8, 6, seed);
    const CostSchedule s = default_schedule(c, 0.1);
    const auto g = soft_cascade_gradient(c, d, s);
    c.rule = CombinationRule::product;
    EXPECT_LT(fd_error(c, d, s, g), 1e-5);
  }
}

}  // namespace
}  // namespace shallow
