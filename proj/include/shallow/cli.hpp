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

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "shallow/io.hpp"
#include "shallow/sweep.hpp"

namespace shallow::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3 };

namespace detail {

namespace fs = std::filesystem;
using shallow::detail::format_double;

struct SplitOptions {
  std::optional<std::size_t> train_count;
  std::optional<std::size_t> train_pos;
  std::vector<std::size_t> roll_pitch;
  std::size_t cheap_width = 5;
};

struct Prepared {
  FeaturePlan plan;
  Dataset train;
  Dataset test;
  Dataset raw_test;
};

inline void add_train_options(CLI::App& app, TrainConfig& tc, std::string& optimizer) {
  app.add_option("--optimizer", optimizer, "plain_gd or adaptive_moment");
  app.add_option("--step-size", tc.step_size, "optimizer step size");
  app.add_option("--beta1", tc.beta1, "first-moment decay");
  app.add_option("--beta2", tc.beta2, "second-moment decay");
  app.add_option("--epsilon-hat", tc.epsilon_hat, "adaptive-moment denominator floor");
  app.add_option("--epochs", tc.epochs, "full-batch epochs per training phase");
  app.add_option("--positive-weight", tc.positive_weight, "loss weight on positive instances");
  app.add_option("--anneal-fraction", tc.anneal_fraction, "share of initialization epochs spent sharpening the gate");
  app.add_option("--anneal-from", tc.anneal_from, "gate sharpness at the first initialization epoch");
  app.add_option("--joint-anneal-fraction", tc.joint_anneal_fraction,
                 "share of fine-tuning epochs spent sharpening the gate");
  app.add_option("--joint-anneal-from", tc.joint_anneal_from, "gate sharpness at the first fine-tuning epoch");
  app.add_option("--log-every", tc.log_every, "print the objective every n epochs (0 = never)");
}

inline void add_split_options(CLI::App& app, SplitOptions& s) {
  app.add_option("--train-count", s.train_count, "training split size");
  app.add_option("--train-pos", s.train_pos, "positives in the training split");
  app.add_option("--roll-pitch", s.roll_pitch, "two column indices expanded into the cheap view")
      ->delimiter(',')
      ->expected(2);
  app.add_option("--cheap-width", s.cheap_width, "leading columns used as the cheap view");
}

inline Prepared prepare(const std::string& data_path, std::uint64_t seed, const SplitOptions& s) {
  const Dataset data = load_csv(data_path);
  auto [count, pos] = default_split_counts(data);
  if (s.train_count) count = *s.train_count;
  if (s.train_pos) pos = *s.train_pos;
  Split split = stratified_split(data, count, pos, derive_seed(seed, "split"));
  std::optional<std::pair<std::size_t, std::size_t>> rp;
  if (!s.roll_pitch.empty()) rp = std::make_pair(s.roll_pitch[0], s.roll_pitch[1]);
  FeaturePlan plan = FeaturePlan::fit(split.train, rp, s.cheap_width);
  Dataset train = plan.apply(split.train);
  Dataset test = plan.apply(split.test);
  return {std::move(plan), std::move(train), std::move(test), std::move(split.test)};
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  return out;
}

inline std::string key_to_flag(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return "--" + key;
}

// Flags that appear literally in argv, with any "=value" suffix removed.
inline std::set<std::string> explicit_flags(const std::vector<std::string>& args) {
  std::set<std::string> out;
  for (const auto& a : args) {
    if (a.size() > 2 && a.rfind("--", 0) == 0) out.insert(a.substr(0, a.find('=')));
  }
  return out;
}

// Returns the value following --config, or nullopt.
inline std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

}  // namespace detail

/// Runs one command. argv[0] is the program name, argv[1] the command.
/// Config-file values are applied first; flags given on the command line win.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  CLI::App app{"Training, evaluation and sweeps for shallow detection cascades", "shcascade"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every command");

  std::string config_path;
  std::string data_path;
  std::string out_dir = ".";
  std::uint64_t seed = 7;
  std::string arch = "casc3";
  double lambda = 0.0;
  double alpha = kDefaultAlpha;
  std::vector<double> kappa;
  TrainConfig tc;
  std::string optimizer = to_string(tc.optimizer);
  detail::SplitOptions split;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key = value file; flags override it");
  };

  // synth
  SynthConfig sc;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset CSV");
  add_config(synth);
  synth->add_option("--out", out_dir, "output directory (writes data.csv)");
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--n-total", sc.n_total, "number of rows");
  synth->add_option("--positive-fraction", sc.positive_fraction, "share of positive rows");
  synth->add_option("--dim", sc.dim, "feature count");
  synth->add_option("--cheap-dim", sc.cheap_dim, "leading cheap-view columns");
  synth->add_option("--cheap-separable-fraction", sc.cheap_separable_fraction,
                    "share of negatives the cheap view separates");

  // train
  auto* train = app.add_subcommand("train", "train one architecture at one lambda");
  add_config(train);
  train->add_option("--data", data_path, "input CSV")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed, "seed for split and initialization");
  train->add_option("--arch", arch, "architecture name");
  train->add_option("--lambda", lambda, "cost weight");
  train->add_option("--alpha", alpha, "gate sharpness");
  train->add_option("--kappa", kappa, "per-stage costs (default: FLOPs relative to stage 1)")->delimiter(',');
  detail::add_train_options(*train, tc, optimizer);
  detail::add_split_options(*train, split);

  // eval
  std::string model_path;
  std::optional<std::size_t> bench_n;
  double threshold = kDefaultThreshold;
  auto* eval = app.add_subcommand("eval", "evaluate a saved model with hard early exit");
  add_config(eval);
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", data_path, "CSV with raw features")->required();
  eval->add_option("--bench", bench_n, "also time n single-instance classifications");
  eval->add_option("--threshold", threshold, "stage acceptance threshold");

  // sweep
  std::vector<std::string> archs;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;
  std::size_t workers = 1;
  bool pareto = false;
  auto* sweep = app.add_subcommand("sweep", "train every (architecture, lambda, seed) combination");
  add_config(sweep);
  sweep->add_option("--data", data_path, "input CSV")->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "seed for the split (and the default seed list)");
  sweep->add_option("--seeds", seeds, "initialization seeds")->delimiter(',');
  sweep->add_option("--arch", archs, "architecture names")->delimiter(',');
  sweep->add_option("--lambda", lambdas, "lambda grid")->delimiter(',');
  sweep->add_option("--alpha", alpha, "gate sharpness");
  sweep->add_option("--kappa", kappa, "per-stage costs shared by every architecture")->delimiter(',');
  sweep->add_option("--workers", workers, "parallel training jobs");
  sweep->add_option("--bench", bench_n, "time n classifications per point");
  sweep->add_flag("--pareto", pareto, "also write pareto.csv");
  detail::add_train_options(*sweep, tc, optimizer);
  detail::add_split_options(*sweep, split);

  // gradcheck
  std::size_t instances = 16;
  double epsilon = 1e-6;
  double tolerance = 1e-5;
  bool corrupt = false;
  std::string gc_arch = "casc2";
  double gc_lambda = 0.1;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_config(gradcheck);
  gradcheck->add_option("--arch", gc_arch, "architecture name");
  gradcheck->add_option("--seed", seed, "seed for data and parameters");
  gradcheck->add_option("--alpha", alpha, "gate sharpness");
  gradcheck->add_option("--lambda", gc_lambda, "cost weight");
  gradcheck->add_option("--instances", instances, "random instances (at most 32)");
  gradcheck->add_option("--epsilon", epsilon, "finite-difference step");
  gradcheck->add_option("--tolerance", tolerance, "largest accepted relative error");
  gradcheck->add_flag("--corrupt-gradient", corrupt, "perturb the analytic gradient (negative control)")
      ->group("");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  try {
    if (auto cfg = detail::find_config(args); cfg && !args.empty()) {
      const ConfigMap values = load_config(*cfg);
      CLI::App* sub = app.get_subcommand_no_throw(args.front());
      if (!sub) throw ConfigError("unknown command '" + args.front() + "'");
      const auto given = detail::explicit_flags(args);
      std::vector<std::string> injected;
      for (const auto& [key, value] : values) {
        const std::string flag = detail::key_to_flag(key);
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        if (!opt || flag == "--config") {
          throw ConfigError(*cfg + ": unknown key '" + key + "' for command '" + args.front() + "'");
        }
        if (given.count(flag)) continue;
        if (opt->get_expected_min() == 0) {
          if (value == "true") injected.push_back(flag);
          else if (value != "false") throw ConfigError(*cfg + ": '" + key + "' must be true or false");
          continue;
        }
        injected.push_back(flag);
        injected.push_back(value);
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    tc.optimizer = optimizer_from_string(optimizer);
    if (synth->parsed()) {
      const Dataset d = synth_generate(sc);
      detail::ensure_dir(out_dir);
      const fs::path path = fs::path(out_dir) / "data.csv";
      auto f = detail::open_out(path);
      write_csv(f, d);
      f.close();
      if (!f) throw IoError("failed writing '" + path.string() + "'");
      out << "wrote " << d.size() << " rows (" << d.positives() << " positive, " << d.size() - d.positives()
          << " negative) to " << path.string() << '\n';
      return kOk;
    }

    if (train->parsed()) {
      tc.validate();
      tc.seed = seed;
      tc.log = tc.log_every ? &out : nullptr;
      auto prep = detail::prepare(data_path, seed, split);
      const FeatureViews views{prep.plan.cheap_view(), prep.plan.full_view()};
      ModelBundle bundle;
      bundle.architecture = arch;
      bundle.cascade = build_architecture(arch, views, seed, alpha);
      bundle.schedule = kappa.empty() ? default_schedule(bundle.cascade, lambda) : CostSchedule{kappa, lambda};
      bundle.schedule.validate(bundle.cascade.depth());
      bundle.features = prep.plan;
      reverse_init(bundle.cascade, prep.train, bundle.schedule, tc);
      const TrainReport rep = joint_finetune(bundle.cascade, prep.train, bundle.schedule, tc);
      const EvalReport ev = evaluate(bundle.cascade, prep.test, bundle.schedule);

      detail::ensure_dir(out_dir);
      save_model((fs::path(out_dir) / "model.json").string(), bundle);
      {
        auto f = detail::open_out(fs::path(out_dir) / "train_trace.csv");
        rep.write_trace_csv(f);
      }
      {
        auto f = detail::open_out(fs::path(out_dir) / "test.csv");
        write_csv(f, prep.raw_test);
      }
      out << "architecture " << arch << " (" << bundle.cascade.depth() << " stages), lambda "
          << detail::format_double(lambda) << '\n';
      out << "objective " << detail::format_double(rep.initial_objective) << " -> " << detail::format_double(rep.final_objective)
          << (rep.reverted ? " (fine-tuning reverted)" : "") << '\n';
      out << "test accuracy " << detail::format_double(ev.accuracy) << ", mean cost " << detail::format_double(ev.mean_cost)
          << ", mean stages " << detail::format_double(ev.mean_stages) << '\n';
      out << "wrote model.json, train_trace.csv and test.csv to " << out_dir << '\n';
      return kOk;
    }

    if (eval->parsed()) {
      const ModelBundle bundle = load_model(model_path);
      Dataset data = load_csv(data_path);
      if (bundle.features) data = bundle.features->apply(data);
      EvalReport ev = evaluate(bundle.cascade, data, bundle.schedule, threshold);
      if (bench_n) ev.mean_time_ns = 1e9 * bench(bundle.cascade, data, *bench_n, threshold);
      out << EvalReport::csv_header << '\n';
      ev.write_csv_row(out, bundle.architecture, bundle.schedule.lambda);
      return kOk;
    }

    if (sweep->parsed()) {
      SweepConfig cfg;
      if (!archs.empty()) cfg.architectures = archs;
      cfg.seeds = seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
      if (!lambdas.empty()) cfg.lambda_grid = lambdas;
      cfg.train_cfg = tc;
      if (!kappa.empty()) {
        cfg.kappa_mode = KappaMode::explicit_values;
        cfg.kappa = kappa;
      }
      cfg.alpha = alpha;
      if (bench_n) {
        if (*bench_n == 0) throw ConfigError("--bench needs at least one evaluation");
        cfg.bench_evaluations = *bench_n;
      }
      cfg.workers = workers;
      cfg.validate();
      auto prep = detail::prepare(data_path, seed, split);
      const FeatureViews views{prep.plan.cheap_view(), prep.plan.full_view()};
      const SweepResult res = run_sweep(cfg, prep.train, prep.test, views);

      detail::ensure_dir(out_dir);
      {
        auto f = detail::open_out(fs::path(out_dir) / "sweep.csv");
        f << TradeoffPoint::csv_header << '\n';
        for (const auto& p : res.points) p.write_csv_row(f);
      }
      if (pareto) {
        auto f = detail::open_out(fs::path(out_dir) / "pareto.csv");
        f << TradeoffPoint::csv_header << '\n';
        if (!res.points.empty()) {
          for (const auto& p : pareto_front(res.points)) p.write_csv_row(f);
        }
      }
      out << res.points.size() << " points trained, " << res.failures.size() << " failed\n";
      for (const auto& f : res.failures) {
        out << "failed: " << f.architecture << " lambda " << detail::format_double(f.lambda) << " seed " << f.seed << ": "
            << f.message << '\n';
      }
      if (!res.points.empty()) {
        out << "best per architecture:\n";
        for (const auto& [name, p] : best_per_architecture(res.points)) {
          out << "  " << name << ": lambda " << detail::format_double(p.lambda) << " seed " << p.seed << " accuracy "
              << detail::format_double(p.accuracy) << " mean_cost " << detail::format_double(p.mean_cost) << '\n';
        }
      }
      return res.failures.empty() ? kOk : kFailed;
    }

    if (gradcheck->parsed()) {
      if (instances == 0 || instances > 32) throw ConfigError("--instances must be in [1, 32]");
      if (!(tolerance > 0.0)) throw ConfigError("--tolerance must be positive");
      const std::size_t dim = 37;
      Rng rng(derive_seed(seed, "gradcheck/data"));
      RowMatrix x(static_cast<Eigen::Index>(instances), static_cast<Eigen::Index>(dim));
      std::vector<int> y(instances);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
      for (std::size_t i = 0; i < instances; ++i) y[i] = static_cast<int>(i % 3 == 0);
      const Dataset data(std::move(x), std::move(y));
      const FeatureViews views{FeatureView::range(0, 5), FeatureView::range(0, dim)};
      CascadeModel c = build_architecture(gc_arch, views, seed, alpha);
      Rng prng(derive_seed(seed, "gradcheck/params"));
      for (auto& st : c.stages) {
        for (std::size_t k = 0; k < st.parameter_count(); ++k) st.param(k) += 0.5 * prng.normal();
      }
      const CostSchedule sched = default_schedule(c, gc_lambda);
      std::function<void(CascadeGradient&)> tamper;
      if (corrupt) tamper = [](CascadeGradient& g) { g.front().layers.front().bias[0] += 1e-2; };
      const double worst = gradient_check(c, data, sched, epsilon, {}, tamper);
      const bool ok = worst < tolerance;
      out << "max relative error " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
          << (ok ? " (ok)" : " (FAILED)") << '\n';
      return ok ? kOk : kFailed;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace shallow::cli
