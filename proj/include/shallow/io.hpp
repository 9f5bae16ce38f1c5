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

// Model documents and flat key/value config files.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "shallow/cascade.hpp"
#include "shallow/data.hpp"
#include "shallow/model.hpp"

namespace shallow {

inline constexpr const char* kModelFormat = "shallow-cascade/1";

/// A trained cascade plus what inference needs to reproduce training-time
/// features and costs.
struct ModelBundle {
  std::string architecture;
  CascadeModel cascade;
  CostSchedule schedule;
  std::optional<FeaturePlan> features;

  bool operator==(const ModelBundle& o) const {
    auto stats_eq = [](const NormStats& a, const NormStats& b) { return a.mean == b.mean && a.stddev == b.stddev; };
    bool feat = features.has_value() == o.features.has_value();
    if (feat && features) {
      feat = stats_eq(features->raw, o.features->raw) && stats_eq(features->expanded, o.features->expanded) &&
             features->roll_pitch == o.features->roll_pitch && features->raw_dim == o.features->raw_dim &&
             features->cheap_width == o.features->cheap_width;
    }
    return feat && architecture == o.architecture && cascade == o.cascade && schedule.kappa == o.schedule.kappa &&
           schedule.lambda == o.schedule.lambda;
  }
};

namespace detail {

using nlohmann::json;

inline json to_json(const NormStats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

inline NormStats norm_from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
}

inline json to_json(const StageModel& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", w}, {"bias", b}});
  }
  return {{"kind", to_string(m.spec.kind)},
          {"hidden", m.spec.hidden},
          {"view", m.spec.view.indices},
          {"layers", layers}};
}

inline StageModel stage_from_json(const json& j) {
  StageModel m;
  m.spec.kind = stage_kind_from_string(j.at("kind").get<std::string>());
  m.spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  m.spec.view.indices = j.at("view").get<std::vector<std::size_t>>();
  m.spec.validate();
  const auto widths = m.spec.widths();
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != widths.size()) throw ParseError("layer count does not match stage kind");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& lj = layers[i];
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    if (static_cast<std::size_t>(rows) != widths[i + 1] || static_cast<std::size_t>(cols) != widths[i]) {
      throw ParseError("layer " + std::to_string(i) + " has the wrong shape");
    }
    auto w = lj.at("weight").get<std::vector<double>>();
    auto b = lj.at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(rows * cols) || b.size() != static_cast<std::size_t>(rows)) {
      throw ParseError("layer " + std::to_string(i) + " has the wrong number of parameters");
    }
    Layer l{Eigen::Map<RowMatrix>(w.data(), rows, cols), Eigen::Map<Vector>(b.data(), rows)};
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace detail

/// JSON document; doubles are written in shortest round-trip form so a
/// save/load cycle is value-exact.
inline std::string to_json_text(const ModelBundle& b) {
  using detail::json;
  json stages = json::array();
  for (const auto& s : b.cascade.stages) stages.push_back(detail::to_json(s));
  json doc = {{"format", kModelFormat},
              {"architecture", b.architecture},
              {"rule", to_string(b.cascade.rule)},
              {"alpha", b.cascade.alpha},
              {"kappa", b.schedule.kappa},
              {"lambda", b.schedule.lambda},
              {"stages", stages}};
  if (b.features) {
    json f = {{"raw_dim", b.features->raw_dim},
              {"cheap_width", b.features->cheap_width},
              {"raw", detail::to_json(b.features->raw)}};
    if (b.features->roll_pitch) {
      f["roll_pitch"] = {b.features->roll_pitch->first, b.features->roll_pitch->second};
      f["expanded"] = detail::to_json(b.features->expanded);
    }
    doc["features"] = f;
  }
  return doc.dump(1) + "\n";
}

inline ModelBundle model_from_json_text(const std::string& text) {
  using detail::json;
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kModelFormat) throw ParseError("unsupported model format");
    ModelBundle b;
    b.architecture = doc.at("architecture").get<std::string>();
    b.cascade.rule = combination_rule_from_string(doc.at("rule").get<std::string>());
    b.cascade.alpha = doc.at("alpha").get<double>();
    for (const auto& s : doc.at("stages")) b.cascade.stages.push_back(detail::stage_from_json(s));
    b.schedule.kappa = doc.at("kappa").get<std::vector<double>>();
    b.schedule.lambda = doc.at("lambda").get<double>();
    b.schedule.validate(b.cascade.depth());
    if (doc.contains("features")) {
      const auto& f = doc["features"];
      FeaturePlan p;
      p.raw_dim = f.at("raw_dim").get<std::size_t>();
      p.cheap_width = f.at("cheap_width").get<std::size_t>();
      p.raw = detail::norm_from_json(f.at("raw"));
      if (f.contains("roll_pitch")) {
        const auto rp = f["roll_pitch"].get<std::vector<std::size_t>>();
        if (rp.size() != 2) throw ParseError("roll_pitch needs two column indices");
        p.roll_pitch = std::make_pair(rp[0], rp[1]);
        p.expanded = detail::norm_from_json(f.at("expanded"));
      }
      b.features = p;
    }
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  }
}

inline void save_model(const std::string& path, const ModelBundle& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file '" + path + "'");
  out << to_json_text(b);
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// Flat config files: one `key = value` per line, '#' comments, list values
// written as `[a, b, c]`.

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(std::istream& in, const std::string& source = "<config>") {
  ConfigMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(detail::trim(body.substr(0, eq)));
    std::string value(detail::trim(body.substr(eq + 1)));
    if (key.empty()) throw ParseError(source + ":" + std::to_string(lineno) + ": empty key");
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      std::string list;
      for (char ch : value.substr(1, value.size() - 2)) {
        if (ch != ' ' && ch != '\t') list.push_back(ch);
      }
      value = list;
    } else if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (!out.emplace(key, value).second) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

inline ConfigMap load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

}  // namespace shallow
