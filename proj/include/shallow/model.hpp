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

#include <span>
#include <string>
#include <vector>

#include "shallow/common.hpp"
#include "shallow/data.hpp"

namespace shallow {

enum class StageKind { linear, one_hidden, two_hidden };

inline std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::linear: return "linear";
    case StageKind::one_hidden: return "one_hidden";
    case StageKind::two_hidden: return "two_hidden";
  }
  return "?";
}

inline StageKind stage_kind_from_string(const std::string& s) {
  if (s == "linear") return StageKind::linear;
  if (s == "one_hidden") return StageKind::one_hidden;
  if (s == "two_hidden") return StageKind::two_hidden;
  throw ParseError("unknown stage kind '" + s + "'");
}

/// Architecture of one stage classifier.
struct StageSpec {
  StageKind kind = StageKind::linear;
  std::vector<std::size_t> hidden;  // empty, {K}, or {K1, K2}
  FeatureView view;

  static StageSpec linear(FeatureView v) { return {StageKind::linear, {}, std::move(v)}; }
  static StageSpec one_hidden(std::size_t k, FeatureView v) {
    return {StageKind::one_hidden, {k}, std::move(v)};
  }
  static StageSpec two_hidden(std::size_t k1, std::size_t k2, FeatureView v) {
    return {StageKind::two_hidden, {k1, k2}, std::move(v)};
  }

  void validate() const {
    const std::size_t want = kind == StageKind::linear ? 0 : kind == StageKind::one_hidden ? 1 : 2;
    if (hidden.size() != want) {
      throw ConfigError(to_string(kind) + " stage needs " + std::to_string(want) + " hidden sizes");
    }
    for (auto k : hidden) {
      if (k == 0) throw ConfigError("hidden layer sizes must be positive");
    }
    if (view.empty()) throw ConfigError("stage feature view must be nonempty");
  }

  /// Layer widths from input to the single output unit.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{view.size()};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }

  bool operator==(const StageSpec&) const = default;
};

/// Affine map followed by a logistic non-linearity.
struct Layer {
  RowMatrix weight;  // out x in
  Vector bias;       // out

  bool operator==(const Layer& o) const { return weight == o.weight && bias == o.bias; }
};

/// Same shape as a StageModel's parameters.
struct ParamGradient {
  std::vector<Layer> layers;

  ParamGradient& operator+=(const ParamGradient& o) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
    }
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
      if (l.weight.size() > 0) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
      m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
  }
};

/// One probabilistic stage classifier p(y=1|x), logistic units throughout.
struct StageModel {
  StageSpec spec;
  std::vector<Layer> layers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  ParamGradient zero_gradient() const {
    ParamGradient g;
    for (const auto& l : layers) {
      g.layers.push_back({RowMatrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return g;
  }

  // Flat parameter order: layer by layer, row-major weights then bias.
  void get_params(std::span<double> out) const {
    std::size_t k = 0;
    for (const auto& l : layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) out[k++] = l.weight.data()[i];
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) out[k++] = l.bias[i];
    }
  }

  void set_params(std::span<const double> in) {
    std::size_t k = 0;
    for (auto& l : layers) {
      for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = in[k++];
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = in[k++];
    }
  }

  double& param(std::size_t flat) {
    for (auto& l : layers) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (flat < nw) return l.weight.data()[flat];
      flat -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (flat < nb) return l.bias[static_cast<Eigen::Index>(flat)];
      flat -= nb;
    }
    throw ConfigError("parameter index out of range");
  }

  bool operator==(const StageModel&) const = default;
};

inline void flatten(const ParamGradient& g, std::span<double> out) {
  std::size_t k = 0;
  for (const auto& l : g.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) out[k++] = l.weight.data()[i];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out[k++] = l.bias[i];
  }
}

/// Linear stages start at zero. Stages with hidden layers draw every weight
/// from U[-a, a], a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline StageModel init_params(const StageSpec& spec, std::uint64_t seed) {
  spec.validate();
  StageModel m{spec, {}};
  Rng rng(seed);
  const auto w = spec.widths();
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    const auto in = static_cast<Eigen::Index>(w[i]);
    const auto out = static_cast<Eigen::Index>(w[i + 1]);
    Layer l{RowMatrix::Zero(out, in), Vector::Zero(out)};
    if (spec.kind != StageKind::linear) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = rng.uniform(-a, a);
    }
    m.layers.push_back(std::move(l));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Single-instance evaluation

/// Activations of every layer for one input; input to backward().
struct ForwardTrace {
  std::vector<Vector> activations;  // [0] = viewed input, back() = {p}

  double probability() const { return activations.back()[0]; }
};

namespace detail {

inline void check_input(const StageModel& m, std::span<const double> x) {
  for (auto idx : m.spec.view.indices) {
    if (idx >= x.size()) throw ConfigError("input shorter than stage feature view");
    if (!std::isfinite(x[idx])) throw ConfigError("non-finite input feature");
  }
}

}  // namespace detail

inline ForwardTrace forward_trace(const StageModel& m, std::span<const double> x) {
  detail::check_input(m, x);
  ForwardTrace t;
  Vector a(static_cast<Eigen::Index>(m.spec.view.size()));
  for (std::size_t j = 0; j < m.spec.view.size(); ++j) a[static_cast<Eigen::Index>(j)] = x[m.spec.view.indices[j]];
  t.activations.push_back(a);
  for (const auto& l : m.layers) {
    Eigen::ArrayXd z = (l.weight * t.activations.back() + l.bias).array();
    sigmoid_inplace(z);
    t.activations.emplace_back(z.matrix());
  }
  return t;
}

/// p(y=1|x) for a full-width feature vector; the stage selects its own view.
/// Allocation-free after the first call on a thread.
inline double forward(const StageModel& m, std::span<const double> x) {
  detail::check_input(m, x);
  thread_local std::vector<double> cur, next;
  const auto& idx = m.spec.view.indices;
  cur.resize(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) cur[j] = x[idx[j]];
  for (const auto& l : m.layers) {
    const auto out = static_cast<std::size_t>(l.weight.rows());
    const auto in = static_cast<std::size_t>(l.weight.cols());
    next.resize(out);
    const double* w = l.weight.data();
    for (std::size_t o = 0; o < out; ++o) {
      double z = l.bias[static_cast<Eigen::Index>(o)];
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) z += wr[i] * cur[i];
      next[o] = sigmoid(z);
    }
    std::swap(cur, next);
  }
  return cur[0];
}

/// Gradient of upstream * p with respect to every parameter.
inline ParamGradient backward(const StageModel& m, const ForwardTrace& t, double upstream) {
  ParamGradient g = m.zero_gradient();
  const double p = t.probability();
  Vector delta = Vector::Constant(1, upstream * p * (1.0 - p));
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const Vector& in = t.activations[li];
    g.layers[li].weight = delta * in.transpose();
    g.layers[li].bias = delta;
    if (li > 0) {
      Vector back = m.layers[li].weight.transpose() * delta;
      delta = back.array() * in.array() * (1.0 - in.array());
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batched evaluation over a pre-gathered view block (rows = instances).
// Buffers are reused across calls so repeated epochs do not reallocate.

struct BatchTrace {
  const Eigen::MatrixXd* input = nullptr;  // must outlive the trace
  std::vector<Eigen::MatrixXd> outputs;    // one per layer, back() is N x 1
  Eigen::MatrixXd delta, back;             // backward scratch

  Eigen::Ref<const Vector> probabilities() const { return outputs.back().col(0); }
  const Eigen::MatrixXd& layer_input(std::size_t li) const { return li == 0 ? *input : outputs[li - 1]; }
};

inline void forward_batch(const StageModel& m, const Eigen::MatrixXd& x_view, BatchTrace& t) {
  t.input = &x_view;
  t.outputs.resize(m.layers.size());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    auto& z = t.outputs[li];
    z.resize(x_view.rows(), l.weight.rows());
    z.noalias() = t.layer_input(li) * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    // 1 / (1 + e^-z) saturates correctly: exp overflow gives +inf and the
    // quotient rounds to 0.
    z.array() = 1.0 / (1.0 + (-z.array()).exp());
  }
}

inline BatchTrace forward_batch(const StageModel& m, const Eigen::MatrixXd& x_view) {
  BatchTrace t;
  forward_batch(m, x_view, t);
  return t;
}

/// Adds sum_n upstream[n] * dp_n/dtheta into `grad`.
template <typename Upstream>
void accumulate_backward_batch(const StageModel& m, BatchTrace& t, const Upstream& upstream,
                               ParamGradient& grad) {
  const auto p = t.outputs.back().col(0).array();
  t.delta = (upstream.array() * p * (1.0 - p)).matrix();
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& in = t.layer_input(li);
    grad.layers[li].weight.noalias() += t.delta.transpose() * in;
    grad.layers[li].bias.noalias() += t.delta.colwise().sum().transpose();
    if (li > 0) {
      t.back.resize(t.delta.rows(), m.layers[li].weight.cols());
      t.back.noalias() = t.delta * m.layers[li].weight;
      t.delta = t.back.array() * in.array() * (1.0 - in.array());
    }
  }
}

}  // namespace shallow
