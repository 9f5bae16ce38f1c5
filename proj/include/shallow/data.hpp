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
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shallow/common.hpp"

namespace shallow {

struct LabeledInstance {
  std::vector<double> features;
  int label = 0;
};

/// Per-feature location and scale.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Ordered column indices into a dataset's feature space.
struct FeatureView {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  static FeatureView range(std::size_t first, std::size_t count) {
    FeatureView v;
    v.indices.resize(count);
    std::iota(v.indices.begin(), v.indices.end(), first);
    return v;
  }

  /// Throws ConfigError unless indices are unique and each is < dim.
  void validate(std::size_t dim) const {
    std::vector<std::size_t> sorted = indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("feature view has duplicate indices");
    }
    if (!sorted.empty() && sorted.back() >= dim) {
      throw ConfigError("feature view index " + std::to_string(sorted.back()) +
                        " out of range for dimension " + std::to_string(dim));
    }
  }

  bool operator==(const FeatureView&) const = default;
};

/// Labeled feature matrix. Immutable after construction.
class Dataset {
 public:
  Dataset() = default;

  Dataset(RowMatrix features, std::vector<int> labels,
          std::vector<std::string> feature_names = {},
          std::optional<NormStats> norm_stats = std::nullopt)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        names_(std::move(feature_names)),
        norm_(std::move(norm_stats)) {
    if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
      throw ConfigError("dataset has " + std::to_string(features_.rows()) +
                        " feature rows but " + std::to_string(labels_.size()) + " labels");
    }
    if (names_.empty()) {
      for (Eigen::Index j = 0; j < features_.cols(); ++j) {
        names_.push_back("f" + std::to_string(j + 1));
      }
    }
    if (static_cast<Eigen::Index>(names_.size()) != features_.cols()) {
      throw ConfigError("feature name count does not match dimension");
    }
    for (int y : labels_) {
      if (y != 0 && y != 1) throw ConfigError("labels must be 0 or 1");
    }
    if (!features_.allFinite()) throw ConfigError("dataset contains non-finite features");
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }

  const RowMatrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  const std::optional<NormStats>& norm_stats() const { return norm_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * dim(), dim()};
  }
  int label(std::size_t i) const { return labels_[i]; }

  LabeledInstance instance(std::size_t i) const {
    auto r = row(i);
    return {{r.begin(), r.end()}, labels_[i]};
  }

  std::size_t positives() const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), 1));
  }

  /// Instances at the given positions, in that order.
  Dataset subset(std::span<const std::size_t> idx) const {
    RowMatrix f(static_cast<Eigen::Index>(idx.size()), features_.cols());
    std::vector<int> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      f.row(static_cast<Eigen::Index>(k)) = features_.row(static_cast<Eigen::Index>(idx[k]));
      y[k] = labels_[idx[k]];
    }
    return Dataset(std::move(f), std::move(y), names_, norm_);
  }

  /// Columns of `view`, as a column-major block for batched evaluation.
  Eigen::MatrixXd gather(const FeatureView& view) const {
    Eigen::MatrixXd out(features_.rows(), static_cast<Eigen::Index>(view.size()));
    for (std::size_t j = 0; j < view.size(); ++j) {
      out.col(static_cast<Eigen::Index>(j)) = features_.col(static_cast<Eigen::Index>(view.indices[j]));
    }
    return out;
  }

 private:
  RowMatrix features_;
  std::vector<int> labels_;
  std::vector<std::string> names_;
  std::optional<NormStats> norm_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a dataset from CSV text: header `name1,...,named,label`, one
/// instance per row. Errors cite the 1-based data row and column name.
inline Dataset parse_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || detail::trim(header.back()) != "label") {
    throw ParseError(source + ": header must list feature names followed by 'label'");
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j + 1 < header.size(); ++j) names.emplace_back(detail::trim(header[j]));
  const std::size_t dim = names.size();

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != dim + 1) {
      throw ParseError(source + ": row " + std::to_string(row) + ": expected " +
                       std::to_string(dim + 1) + " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      const auto v = detail::parse_double(cells[j]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(source + ": row " + std::to_string(row) + ", column '" + names[j] +
                         "': not a finite number: '" + std::string(detail::trim(cells[j])) + "'");
      }
      values.push_back(*v);
    }
    const auto y = detail::trim(cells[dim]);
    if (y != "0" && y != "1") {
      throw ParseError(source + ": row " + std::to_string(row) +
                       ", column 'label': label must be 0 or 1, found '" + std::string(y) + "'");
    }
    labels.push_back(y == "1" ? 1 : 0);
  }
  RowMatrix f = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                      static_cast<Eigen::Index>(dim));
  return Dataset(std::move(f), std::move(labels), std::move(names));
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open data file '" + path + "'");
  return parse_csv(in, path);
}

inline void write_csv(std::ostream& out, const Dataset& data) {
  for (const auto& name : data.feature_names()) out << name << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) out << detail::format_double(v) << ',';
    out << data.label(i) << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_csv(out, data);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Normalization and feature engineering

/// Population mean/stddev per column; constant columns get stddev 1.
inline NormStats fit_zscore(const Dataset& data) {
  if (data.empty()) throw ConfigError("cannot fit normalization on an empty dataset");
  const auto& f = data.features();
  NormStats s;
  const double n = static_cast<double>(data.size());
  for (Eigen::Index j = 0; j < f.cols(); ++j) {
    const double mean = f.col(j).sum() / n;
    const double var = (f.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    s.mean.push_back(mean);
    s.stddev.push_back(sd > 0.0 ? sd : 1.0);
  }
  return s;
}

inline Dataset apply_zscore(const Dataset& data, const NormStats& s) {
  if (s.mean.size() != data.dim()) throw ConfigError("normalization stats do not match dimension");
  RowMatrix f = data.features();
  for (Eigen::Index j = 0; j < f.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    f.col(j) = (f.col(j).array() - s.mean[k]) / s.stddev[k];
  }
  return Dataset(std::move(f), data.labels(), data.feature_names(), s);
}

struct Normalized {
  Dataset train;
  std::vector<Dataset> others;
  NormStats stats;
};

/// Fits z-score statistics on `train` only and applies them to every dataset.
inline Normalized zscore_fit_apply(const Dataset& train, std::span<const Dataset> others = {}) {
  Normalized out;
  out.stats = fit_zscore(train);
  out.train = apply_zscore(train, out.stats);
  for (const auto& d : others) out.others.push_back(apply_zscore(d, out.stats));
  return out;
}

/// Quadratic basis [x, y, x^2, y^2, xy] of a (roll, pitch) pair.
inline std::array<double, 5> basis_expand(double roll, double pitch) {
  return {roll, pitch, roll * roll, pitch * pitch, roll * pitch};
}

/// Feature preparation shared by training and inference. Z-scores the raw
/// columns; optionally appends the quadratic expansion of a (roll, pitch)
/// column pair, z-scored again with its own statistics. The cheap view is
/// either the expansion or the first `cheap_width` raw columns.
struct FeaturePlan {
  NormStats raw;
  std::optional<std::pair<std::size_t, std::size_t>> roll_pitch;
  NormStats expanded;
  std::size_t raw_dim = 0;
  std::size_t cheap_width = 5;

  static FeaturePlan fit(const Dataset& train,
                         std::optional<std::pair<std::size_t, std::size_t>> roll_pitch = std::nullopt,
                         std::size_t cheap_width = 5) {
    FeaturePlan plan;
    plan.raw_dim = train.dim();
    plan.roll_pitch = roll_pitch;
    plan.cheap_width = roll_pitch ? 5 : cheap_width;
    if (roll_pitch && (roll_pitch->first >= train.dim() || roll_pitch->second >= train.dim())) {
      throw ConfigError("roll/pitch column index out of range");
    }
    if (!roll_pitch && cheap_width > train.dim()) {
      throw ConfigError("cheap view width " + std::to_string(cheap_width) +
                        " exceeds data dimension " + std::to_string(train.dim()));
    }
    plan.raw = fit_zscore(train);
    if (roll_pitch) plan.expanded = fit_zscore(plan.expand_only(apply_zscore(train, plan.raw)));
    return plan;
  }

  std::size_t dim() const { return raw_dim + (roll_pitch ? 5 : 0); }

  FeatureView cheap_view() const {
    return roll_pitch ? FeatureView::range(raw_dim, 5) : FeatureView::range(0, cheap_width);
  }
  FeatureView full_view() const { return FeatureView::range(0, raw_dim); }

  Dataset apply(const Dataset& data) const {
    if (data.dim() != raw_dim) {
      throw ConfigError("data has " + std::to_string(data.dim()) + " features, expected " +
                        std::to_string(raw_dim));
    }
    Dataset z = apply_zscore(data, raw);
    if (!roll_pitch) return z;
    Dataset e = apply_zscore(expand_only(z), expanded);
    RowMatrix f(static_cast<Eigen::Index>(z.size()), static_cast<Eigen::Index>(dim()));
    f << z.features(), e.features();
    auto names = z.feature_names();
    for (const auto& n : e.feature_names()) names.push_back(n);
    return Dataset(std::move(f), z.labels(), std::move(names), raw);
  }

 private:
  Dataset expand_only(const Dataset& z) const {
    RowMatrix f(static_cast<Eigen::Index>(z.size()), 5);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto r = z.row(i);
      const auto b = basis_expand(r[roll_pitch->first], r[roll_pitch->second]);
      for (int k = 0; k < 5; ++k) f(static_cast<Eigen::Index>(i), k) = b[static_cast<std::size_t>(k)];
    }
    const auto& nm = z.feature_names();
    const auto& x = nm[roll_pitch->first];
    const auto& y = nm[roll_pitch->second];
    return Dataset(std::move(f), z.labels(), {x, y, x + "^2", y + "^2", x + "*" + y});
  }
};

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  Dataset train;
  Dataset test;
};

/// Seeded per-class permutation; the first `train_pos_count` positives and
/// first `train_count - train_pos_count` negatives go to train. Both halves
/// keep the input's row order.
inline Split stratified_split(const Dataset& data, std::size_t train_count,
                              std::size_t train_pos_count, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < data.size(); ++i) (data.label(i) ? pos : neg).push_back(i);
  if (train_pos_count > train_count || train_pos_count > pos.size() ||
      train_count - train_pos_count > neg.size()) {
    throw ConfigError("infeasible split: requested " + std::to_string(train_count) + " train cases (" +
                      std::to_string(train_pos_count) + " positive) but data has " +
                      std::to_string(pos.size()) + " positives and " + std::to_string(neg.size()) +
                      " negatives");
  }
  Rng rng(seed);
  rng.shuffle(pos.begin(), pos.end());
  rng.shuffle(neg.begin(), neg.end());
  const std::size_t train_neg = train_count - train_pos_count;
  std::vector<std::size_t> tr(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(train_pos_count));
  tr.insert(tr.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(train_neg));
  std::vector<std::size_t> te(pos.begin() + static_cast<std::ptrdiff_t>(train_pos_count), pos.end());
  te.insert(te.end(), neg.begin() + static_cast<std::ptrdiff_t>(train_neg), neg.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {data.subset(tr), data.subset(te)};
}

/// Train counts that keep the 3400/3836 overall and 260/291 positive
/// proportions of the reference split.
inline std::pair<std::size_t, std::size_t> default_split_counts(const Dataset& data) {
  const auto n = static_cast<double>(data.size());
  const auto p = static_cast<double>(data.positives());
  return {static_cast<std::size_t>(std::llround(n * 3400.0 / 3836.0)),
          static_cast<std::size_t>(std::llround(p * 260.0 / 291.0))};
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t n_total = 3836;
  double positive_fraction = 291.0 / 3836.0;
  std::size_t dim = 37;
  std::size_t cheap_dim = 5;
  double cheap_separable_fraction = 0.9;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_total < 2) throw ConfigError("n_total must be at least 2");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
      throw ConfigError("positive_fraction must lie in (0, 1)");
    }
    if (!(cheap_separable_fraction > 0.0 && cheap_separable_fraction < 1.0)) {
      throw ConfigError("cheap_separable_fraction must lie in (0, 1)");
    }
    if (cheap_dim < 1 || cheap_dim > dim) throw ConfigError("need 1 <= cheap_dim <= dim");
    if (dim - cheap_dim < 2) throw ConfigError("need at least 2 non-cheap dimensions");
  }
};

namespace detail {

// Standard normal conditioned on |z| <= bound.
inline double truncated_normal(Rng& rng, double bound) {
  double z;
  do z = rng.normal();
  while (std::abs(z) > bound);
  return z;
}

}  // namespace detail

/// Imbalanced binary data with a cheap/expensive feature structure.
///
/// The first `cheap_dim` columns are the cheap view. Along the diagonal
/// direction u of that view, positives and "hard" negatives project into
/// [-3, 3] while "easy" negatives project into [-11, -5], so a linear model
/// on the cheap view rejects every easy negative with margin 2.
///
/// The remaining columns hold an informative block of up to 4 coordinates
/// plus pure noise. In the informative block positives are an isotropic
/// Gaussian core (sd 0.5) and all negatives lie on a shell of radius
/// [3, 5], so only a nonlinear boundary on the expensive view separates
/// hard negatives from positives.
inline Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto n = cfg.n_total;
  const auto n_pos = static_cast<std::size_t>(std::llround(cfg.positive_fraction * static_cast<double>(n)));
  const std::size_t n_neg = n - n_pos;
  const auto n_easy = std::min<std::size_t>(
      n_neg, static_cast<std::size_t>(std::ceil(cfg.cheap_separable_fraction * static_cast<double>(n_neg) - 1e-9)));
  const std::size_t c = cfg.cheap_dim;
  const std::size_t informative = std::min<std::size_t>(4, cfg.dim - c);
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));

  Rng rng(derive_seed(cfg.seed, "synth"));
  RowMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.dim));
  std::vector<int> y(n);

  for (std::size_t i = 0; i < n; ++i) {
    const bool positive = i < n_pos;
    const bool easy = !positive && i < n_pos + n_easy;
    auto row = f.row(static_cast<Eigen::Index>(i));
    y[i] = positive ? 1 : 0;

    // Cheap view: isotropic noise with the u-component replaced.
    Vector cheap(static_cast<Eigen::Index>(c));
    for (auto& v : cheap) v = rng.normal();
    const double proj = cheap.sum() * inv_sqrt_c;
    const double target = easy ? -8.0 + detail::truncated_normal(rng, 3.0) : detail::truncated_normal(rng, 3.0);
    cheap.array() += (target - proj) * inv_sqrt_c;
    for (std::size_t j = 0; j < c; ++j) row(static_cast<Eigen::Index>(j)) = cheap(static_cast<Eigen::Index>(j));

    // Expensive view: informative block then noise.
    Vector block(static_cast<Eigen::Index>(informative));
    for (auto& v : block) v = rng.normal();
    if (positive) {
      block *= 0.5;
    } else {
      block *= rng.uniform(3.0, 5.0) / block.norm();
    }
    for (std::size_t j = 0; j < informative; ++j) {
      row(static_cast<Eigen::Index>(c + j)) = block(static_cast<Eigen::Index>(j));
    }
    for (std::size_t j = c + informative; j < cfg.dim; ++j) row(static_cast<Eigen::Index>(j)) = rng.normal();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  return Dataset(std::move(f), std::move(y)).subset(order);
}

}  // namespace shallow
