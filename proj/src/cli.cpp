#include "doublematch/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "doublematch/error.hpp"
#include "doublematch/experiments.hpp"
#include "doublematch/metrics.hpp"
#include "doublematch/trainer.hpp"

namespace fs = std::filesystem;

namespace dm {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitTraining = 1;
constexpr int kExitUsage = 2;
constexpr const char* kDataRootEnv = "DOUBLEMATCH_DATA_ROOT";

struct ConfigArgs {
  std::string preset;
  std::string config;
  std::vector<std::string> sets;
  std::string data_root;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--preset", a.preset, "named preset (see `doublematch presets`)");
  cmd->add_option("--config", a.config, "key = value config file, applied over the preset");
  cmd->add_option("--set", a.sets, "key=value override, applied last (repeatable)");
  cmd->add_option("--data-root", a.data_root, fmt::format("dataset directory (default: ${})", kDataRootEnv));
}

// Precedence: --set over --config over --preset over built-in defaults.
TrainConfig resolve_config(const ConfigArgs& a) {
  TrainConfig cfg = a.preset.empty() ? TrainConfig{} : preset(a.preset);
  if (!a.config.empty()) cfg = load_config(a.config, cfg);
  for (const auto& s : a.sets) apply_override(cfg, s);
  validate(cfg);
  return cfg;
}

bool overrides_key(const ConfigArgs& a, std::string_view key) {
  for (const auto& s : a.sets) {
    auto eq = s.find('=');
    auto k = std::string_view(s).substr(0, eq);
    while (!k.empty() && k.back() == ' ') k.remove_suffix(1);
    if (k == key) return true;
  }
  return false;
}

fs::path resolve_data_root(const ConfigArgs& a, const TrainConfig& cfg) {
  if (!a.data_root.empty()) return a.data_root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  if (dataset_needs_root(cfg.dataset))
    throw ConfigError(fmt::format("dataset '{}' needs --data-root (or ${})", cfg.dataset, kDataRootEnv));
  return {};
}

Dataset load_for(const ConfigArgs& a, const TrainConfig& cfg) {
  const auto root = resolve_data_root(a, cfg);
  if (dataset_needs_root(cfg.dataset) && !fs::is_directory(root))
    throw ConfigError(fmt::format("--data-root '{}' is not a directory", root.string()));
  return load_dataset_for(cfg, root);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

void report_manifest(const fs::path& dir) {
  const auto missing = check_manifest(dir);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw TrainingError(fmt::format("run directory '{}' is incomplete, missing:{}", dir.string(), list));
  }
}

int cmd_train(const ConfigArgs& a, const std::string& out, bool resume, bool quiet) {
  const TrainConfig cfg = resolve_config(a);
  const Dataset ds = load_for(a, cfg);
  const auto split = make_split(ds, cfg.num_labels, static_cast<std::uint64_t>(cfg.fold));
  RunOptions opts;
  opts.out_dir = out;
  opts.resume = resume;
  if (!quiet)
    opts.on_row = [](const MetricRow& r) {
      if (r.eval_error)
        fmt::print("step {:>8}  l_l {:.4f}  l_p {:.4f}  l_s {:.4f}  mask {:.3f}  lr {:.5f}  error {:.2f}%\n", r.step,
                   r.l_l, r.l_p, r.l_s, r.mask_rate, r.lr, 100.0 * *r.eval_error);
    };
  const auto res = run(cfg, ds, split, opts);
  report_manifest(out);
  fmt::print("final error {:.2f}%  min {:.2f}%  median(last {}) {:.2f}%\n", 100.0 * res.final_error,
             100.0 * res.stats.min_error, std::min(20, res.stats.num_evals), 100.0 * res.stats.median_last);
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& checkpoint, const std::string& data_root) {
  const fs::path dir(run_dir);
  const TrainConfig cfg = load_config(dir / kConfigFile);
  ConfigArgs a;
  a.data_root = data_root;
  const Dataset ds = load_for(a, cfg);
  const fs::path ckpt = checkpoint.empty() ? dir / kCheckpointDir / kFinalCheckpoint : fs::path(checkpoint);
  const auto spec = arch_from_config(cfg, ds.train.height, ds.train.channels);
  const TrainState state = from_archive(load_archive(ckpt), cfg, spec);
  const double err = evaluate(state, ds.test, cfg.eval_batch_size);
  fmt::print("{}: step {}, EMA test error {:.2f}%\n", ckpt.string(), state.step, 100.0 * err);
  return kExitOk;
}

int cmd_ablate_loss(const ConfigArgs& a, const std::string& out, int parallel) {
  const TrainConfig base = resolve_config(a);
  const Dataset ds = load_for(a, base);
  const auto plans = loss_ablation_runs(base);
  fs::create_directories(out);
  const auto done = execute_runs(plans, ds, out, parallel, true);
  std::string table = "| loss | lambda | w_s | final error | min error | median last 20 |\n|---|---|---|---|---|---|\n";
  for (const auto& r : done) {
    report_manifest(r.result.out_dir);
    table += fmt::format("| {} | {} | {} | {:.2f} | {:.2f} | {:.2f} |\n", to_string(r.plan.cfg.ssl_loss_kind),
                         r.plan.cfg.ssl_loss_kind == SslLossKind::softmax_ce
                             ? fmt::format("{}", r.plan.cfg.softmax_temperature)
                             : std::string("-"),
                         r.plan.cfg.w_s, 100.0 * r.result.final_error, 100.0 * r.result.stats.min_error,
                         100.0 * r.result.stats.median_last);
  }
  write_file(fs::path(out) / "ablation_loss.md", table);
  fmt::print("{}", table);
  return kExitOk;
}

int cmd_ablate_pseudo(const ConfigArgs& a, const std::string& out, std::vector<int> labels, int parallel) {
  const TrainConfig base = resolve_config(a);
  if (labels.empty()) labels.push_back(base.num_labels);
  const Dataset ds = load_for(a, base);
  const auto plans = pseudo_ablation_runs(base, labels, !overrides_key(a, "w_s"));
  fs::create_directories(out);
  const auto done = execute_runs(plans, ds, out, parallel, true);
  std::string table = "| labels | w_s | error with l_p | error without l_p | accuracy reduction |\n|---|---|---|---|---|\n";
  std::vector<double> reductions;
  for (std::size_t i = 0; i + 1 < done.size(); i += 2) {
    const auto& with = done[i];
    const auto& without = done[i + 1];
    report_manifest(with.result.out_dir);
    report_manifest(without.result.out_dir);
    const double reduction = 100.0 * (without.result.final_error - with.result.final_error);
    reductions.push_back(reduction);
    table += fmt::format("| {} | {} | {:.2f} | {:.2f} | {:.2f} |\n", with.plan.cfg.num_labels, with.plan.cfg.w_s,
                         100.0 * with.result.final_error, 100.0 * without.result.final_error, reduction);
  }
  write_file(fs::path(out) / "ablation_pseudo.md", table);
  fmt::print("{}", table);
  if (reductions.size() > 1) {
    // Labels were run in the order given; compare smallest and largest count.
    const auto lo = std::min_element(labels.begin(), labels.end()) - labels.begin();
    const auto hi = std::max_element(labels.begin(), labels.end()) - labels.begin();
    if (reductions[static_cast<std::size_t>(lo)] < reductions[static_cast<std::size_t>(hi)])
      fmt::print(stderr, "warning: reduction at {} labels ({:.2f}) is below the one at {} labels ({:.2f})\n",
                 labels[static_cast<std::size_t>(lo)], reductions[static_cast<std::size_t>(lo)],
                 labels[static_cast<std::size_t>(hi)], reductions[static_cast<std::size_t>(hi)]);
  }
  return kExitOk;
}

fs::path metrics_path(const fs::path& p) { return fs::is_directory(p) ? p / kMetricsFile : p; }

int cmd_summarize(const std::vector<std::string>& runs, int window, const std::string& json_out) {
  std::vector<std::vector<double>> errors;
  for (const auto& r : runs) {
    errors.push_back(eval_errors(read_metric_log(metrics_path(r))));
    if (errors.back().empty()) throw DataError(fmt::format("{}: no evaluation data", r));
  }
  const Summary s = summarize(errors, window);
  for (std::size_t i = 0; i < runs.size(); ++i)
    fmt::print("{}: min {:.2f}%  median(last {}) {:.2f}%{}\n", runs[i], 100.0 * s.runs[i].min_error,
               std::min(window, s.runs[i].num_evals), 100.0 * s.runs[i].median_last,
               s.runs[i].fallback ? "  (fewer evaluations than the window)" : "");
  fmt::print("min error:             {}\n", format_mean_std(s.min_error));
  fmt::print("median last-{} error: {}\n", window, format_mean_std(s.median_last));
  if (!json_out.empty()) {
    nlohmann::json j;
    j["runs"] = runs;
    j["window"] = window;
    j["min_error"] = {{"mean", s.min_error.mean}, {"std", s.min_error.std}, {"text", format_mean_std(s.min_error)}};
    j["median_last_error"] = {
        {"mean", s.median_last.mean}, {"std", s.median_last.std}, {"text", format_mean_std(s.median_last)}};
    j["fallback"] = s.any_fallback;
    write_file(json_out, j.dump(2) + "\n");
  }
  return kExitOk;
}

// Series are LABEL=RUN[,RUN...]; runs of one label are averaged step-wise.
int cmd_plot(const std::vector<std::string>& series_args, const std::string& out) {
  std::map<std::string, CurvePanel> panels;
  for (const auto& arg : series_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(fmt::format("--series '{}' is not LABEL=RUN[,RUN]", arg));
    const std::string label = arg.substr(0, eq);
    std::vector<CurveSeries> curves;
    std::string panel_name;
    std::stringstream list(arg.substr(eq + 1));
    for (std::string run; std::getline(list, run, ',');) {
      const fs::path p(run);
      curves.push_back(curve_from_rows(run, read_metric_log(metrics_path(p))));
      const fs::path cfg_path = (fs::is_directory(p) ? p : p.parent_path()) / kConfigFile;
      const std::string name = fs::exists(cfg_path) ? load_config(cfg_path).dataset : std::string("runs");
      if (!panel_name.empty() && name != panel_name)
        throw ConfigError(fmt::format("series '{}' mixes datasets {} and {}", label, panel_name, name));
      panel_name = name;
    }
    if (curves.empty()) throw ConfigError(fmt::format("series '{}' has no runs", label));
    CurveSeries mean{label, curves.front().steps, std::vector<double>(curves.front().steps.size(), 0.0)};
    for (const auto& c : curves) {
      if (c.steps != mean.steps) throw DataError(fmt::format("series '{}': runs were evaluated at different steps", label));
      for (std::size_t i = 0; i < c.accuracy.size(); ++i) mean.accuracy[i] += c.accuracy[i] / static_cast<double>(curves.size());
    }
    auto& panel = panels[panel_name];
    panel.title = panel_name;
    panel.series.push_back(std::move(mean));
  }
  std::vector<CurvePanel> list;
  for (auto& [name, panel] : panels) list.push_back(std::move(panel));
  plot_accuracy_curves(list, out);
  fmt::print("wrote {}\n", out);
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"DoubleMatch semi-supervised training"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::string train_out;
  bool resume = false, quiet = false;
  auto* train = app.add_subcommand("train", "train one run");
  add_config_options(train, train_args);
  train->add_option("--out", train_out, "run directory")->required();
  train->add_flag("--resume", resume, "continue from the newest checkpoint in --out");
  train->add_flag("--quiet", quiet, "print only the final result");

  std::string eval_run, eval_ckpt, eval_root;
  auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoint on the test set");
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file (default: the run's final checkpoint)");
  eval->add_option("--data-root", eval_root, fmt::format("dataset directory (default: ${})", kDataRootEnv));

  ConfigArgs loss_args;
  std::string loss_out;
  int loss_parallel = 1;
  auto* ablate_loss = app.add_subcommand("ablate-loss", "compare self-supervised loss functions");
  add_config_options(ablate_loss, loss_args);
  ablate_loss->add_option("--out", loss_out, "experiment directory")->required();
  ablate_loss->add_option("--parallel", loss_parallel, "runs executed concurrently")->check(CLI::PositiveNumber);

  ConfigArgs pseudo_args;
  std::string pseudo_out;
  std::vector<int> pseudo_labels;
  int pseudo_parallel = 1;
  auto* ablate_pseudo = app.add_subcommand("ablate-pseudo", "paired runs with and without the pseudo-label loss");
  add_config_options(ablate_pseudo, pseudo_args);
  ablate_pseudo->add_option("--out", pseudo_out, "experiment directory")->required();
  ablate_pseudo->add_option("--labels", pseudo_labels, "label counts (default: the config's num_labels)")
      ->delimiter(',');
  ablate_pseudo->add_option("--parallel", pseudo_parallel, "runs executed concurrently")->check(CLI::PositiveNumber);

  std::vector<std::string> sum_runs;
  int window = 20;
  std::string sum_json;
  auto* summ = app.add_subcommand("summarize", "min and last-N median error across runs");
  summ->add_option("runs", sum_runs, "run directories or metric CSV files")->required();
  summ->add_option("--window", window, "evaluations in the median window")->check(CLI::PositiveNumber);
  summ->add_option("--json", sum_json, "also write the summary as JSON");

  std::vector<std::string> plot_series;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "accuracy-vs-step curves");
  plot->add_option("--series", plot_series, "LABEL=RUN[,RUN...] (repeatable)")->required();
  plot->add_option("--out", plot_out, "PNG path")->required();

  auto* presets = app.add_subcommand("presets", "list presets, or print one with --show");
  std::string show;
  presets->add_option("--show", show, "preset to print as a config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args, train_out, resume, quiet);
    if (*eval) return cmd_eval(eval_run, eval_ckpt, eval_root);
    if (*ablate_loss) return cmd_ablate_loss(loss_args, loss_out, loss_parallel);
    if (*ablate_pseudo) return cmd_ablate_pseudo(pseudo_args, pseudo_out, pseudo_labels, pseudo_parallel);
    if (*summ) return cmd_summarize(sum_runs, window, sum_json);
    if (*plot) return cmd_plot(plot_series, plot_out);
    if (*presets) {
      if (show.empty())
        for (const auto& n : preset_names()) fmt::print("{}\n", n);
      else
        fmt::print("{}", to_text(preset(show)));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitTraining;
  }
  return kExitUsage;
}

}  // namespace dm
