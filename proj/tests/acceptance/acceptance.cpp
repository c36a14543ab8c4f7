// One PASS/FAIL line per acceptance criterion. `acceptance 3 5` runs a subset.

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "doublematch/cli.hpp"
#include "doublematch/config.hpp"
#include "doublematch/ema.hpp"
#include "doublematch/losses.hpp"
#include "doublematch/metrics.hpp"
#include "doublematch/optim.hpp"
#include "doublematch/trainer.hpp"
#include "reference.hpp"

using namespace dm;
using namespace dm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_root() {
  static const fs::path root = scratch_dir("acceptance");
  return root;
}

ArchSpec spec_for(const TrainConfig& cfg) { return arch_from_config(cfg); }

// Central-difference step near cbrt(machine epsilon) for float64 objectives.
constexpr double kStepF64 = 5e-6;

// 1 -----------------------------------------------------------------------

Outcome fixmatch_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_total = 0.0, worst_update = 0.0;
  int masked_steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TrainConfig cfg = tiny_config();
    cfg.w_s = 0.0;
    cfg.tau = std::uniform_real_distribution<double>(0.0, 0.7)(rng);
    cfg.seed = static_cast<std::int64_t>(rng() % 100000);
    cfg.w_d = std::uniform_real_distribution<double>(0.0, 0.01)(rng);
    TrainState state = init_train_state(cfg, spec_for(cfg));
    // Move away from the initial point so BN statistics and velocity are non-trivial.
    const int warmup = static_cast<int>(rng() % 3);
    for (int k = 0; k < warmup; ++k) train_step(state, random_inputs(cfg, rng, k), cfg);
    const auto in = random_inputs(cfg, rng, warmup);
    const auto ref = reference_fixmatch(*state.model.net, state.model.state.params, state.model.state.buffers, in, cfg);

    // Reference Nesterov update from the current velocity.
    const double lr = lr_at({cfg.eta0, cfg.gamma, cfg.total_steps}, state.step);
    const auto m = static_cast<float>(cfg.sgd_momentum);
    std::vector<float> ref_params = state.model.state.params;
    for (std::size_t i = 0; i < ref_params.size(); ++i) {
      const float v = m * state.opt.velocity[i] + ref.grads[i];
      ref_params[i] -= static_cast<float>(lr) * (ref.grads[i] + m * v);
    }
    const auto report = train_step(state, in, cfg);
    worst_total = std::max(worst_total, relative_error(report.total, ref.total));
    worst_update = std::max(worst_update, relative_error(state.model.state.params, ref_params));
    masked_steps += report.mask_rate > 0.0;
  }
  const double t = seconds_since(t0);
  return {worst_total < 1e-6 && worst_update < 1e-6 && masked_steps > 0 && t < 60,
          fmt::format("100 states, max rel err total {:.2e}, update {:.2e}, {} with pseudo-labels, {:.1f}s", worst_total,
                      worst_update, masked_steps, t)};
}

// 2 -----------------------------------------------------------------------

Outcome stop_gradient_audit() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  bool exact = true;
  double worst_fd = 0.0;
  for (auto kind : {SslLossKind::cosine, SslLossKind::mse, SslLossKind::softmax_ce}) {
    TrainConfig cfg = tiny_config();
    cfg.ssl_loss_kind = kind;
    cfg.tau = 0.3;
    cfg.w_s = 2.0;
    const auto model = convert_model<double>(build_model<float>(spec_for(cfg), 17));
    const auto in = inputs_cast<double>(random_inputs(cfg, rng));
    auto b = model.state.buffers;
    const auto live = loss_and_grad<double>(*model.net, model.state.params, b, in, cfg);

    // Teacher values replaced by equal constants: identical gradient.
    b = model.state.buffers;
    const auto frozen = loss_and_grad<double>(*model.net, model.state.params, b, in, cfg, &live.teacher);
    exact = exact && frozen.grads == live.grads;

    // Different images through the weak branch, same teacher constants: the
    // weak pass itself contributes exactly nothing.
    auto other = in;
    for (auto& x : other.unlabeled_weak.data) x = 1.0 - x;
    b = model.state.buffers;
    const auto swapped = loss_and_grad<double>(*model.net, model.state.params, b, other, cfg, &live.teacher);
    exact = exact && swapped.grads == live.grads;

    // And the gradient is that of the objective with z and w held constant.
    std::mt19937_64 pick(5 + static_cast<int>(kind));
    for (const auto& c : finite_difference_check<double>(
             model.state.params, live.grads,
             [&](const std::vector<double>& p) {
               auto bb = model.state.buffers;
               return loss_and_grad<double>(*model.net, p, bb, in, cfg, &live.teacher).report.total;
             },
             10, pick, kStepF64))
      worst_fd = std::max(worst_fd, c.rel_error);
  }
  const double t = seconds_since(t0);
  return {exact && worst_fd < 1e-6,
          fmt::format("detached paths exact: {}, max rel err vs detached objective {:.2e} (float64), {:.1f}s",
                      exact ? "yes" : "no", worst_fd, t)};
}

// 3 -----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::string per_kind;
  for (auto kind : {SslLossKind::cosine, SslLossKind::mse, SslLossKind::softmax_ce}) {
    TrainConfig cfg = tiny_config();
    cfg.ssl_loss_kind = kind;
    cfg.tau = 0.3;
    cfg.w_s = 1.0;
    cfg.softmax_temperature = kind == SslLossKind::softmax_ce ? 0.5 : 1.0;
    const auto model = build_model<float>(spec_for(cfg), 23);
    const auto in = random_inputs(cfg, rng);
    auto b = model.state.buffers;
    const auto lg = loss_and_grad<float>(*model.net, model.state.params, b, in, cfg);
    // Central differences of the same objective evaluated in float64 at the
    // same parameter values, teacher held fixed.
    const auto md = convert_model<double>(model);
    const auto ind = inputs_cast<double>(in);
    auto bd = md.state.buffers;
    const auto teacher = loss_and_grad<double>(*md.net, md.state.params, bd, ind, cfg).teacher;
    std::vector<double> analytic(lg.grads.begin(), lg.grads.end());
    std::mt19937_64 pick(31 + static_cast<int>(kind));
    double kind_worst = 0.0;
    for (const auto& c : finite_difference_check<double>(
             md.state.params, analytic,
             [&](const std::vector<double>& p) {
               auto bb = md.state.buffers;
               return loss_and_grad<double>(*md.net, p, bb, ind, cfg, &teacher).report.total;
             },
             10, pick, 1e-6))
      kind_worst = std::max(kind_worst, c.rel_error);
    worst = std::max(worst, kind_worst);
    per_kind += fmt::format(" {} {:.1e}", to_string(kind), kind_worst);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-3 && t < 60, fmt::format("float32 max rel err:{}, {:.1f}s", per_kind, t)};
}

// 4 -----------------------------------------------------------------------

Outcome analytic_losses() {
  std::mt19937_64 rng(404);
  const auto v = random_mat<double>(5, 8, rng);
  const auto id = LinearMap<double>::identity(8);
  const double self = cosine_ssl_loss(v, id, stopgrad(v)).value;
  Mat<double> a = Mat<double>::Zero(3, 8), b = Mat<double>::Zero(3, 8);
  for (int i = 0; i < 3; ++i) {
    a(i, i) = 1.0 + i;
    b(i, i + 4) = 2.0 - 0.5 * i;
  }
  const double orth = cosine_ssl_loss(a, id, stopgrad(b)).value;
  const int c = 10;
  std::vector<int> labels{0, 3, 9, 4};
  const double ce = supervised_loss(one_hot<double>(labels, c), Mat<double>(Mat<double>::Zero(4, c))).value;
  const double mse = mse_ssl_loss(v, id, stopgrad(v)).value;
  const Mat<double> zero = Mat<double>::Zero(4, 8);
  const double soft = softmax_ssl_loss(zero, id, stopgrad(zero), 1.0).value;
  const double e = std::max({std::abs(self + 1.0), std::abs(orth), std::abs(ce - std::log(c)), std::abs(mse),
                             std::abs(soft - std::log(8.0))});
  return {e < 1e-6, fmt::format("cosine self {:.9f}, orthogonal {:.1e}, CE uniform {:.9f} (ln 10), MSE {:.1e}, "
                                "softmax zero {:.9f} (ln 8)",
                                self, orth, ce, mse, soft)};
}

// 5 -----------------------------------------------------------------------

Outcome schedule() {
  double worst = 0.0;
  const std::int64_t k_total = 352000;
  for (double gamma : {5.0 / 8.0, 7.0 / 8.0})
    for (std::int64_t k : {std::int64_t{0}, k_total / 2, k_total}) {
      const double direct = 0.3 * std::cos(gamma * std::numbers::pi * static_cast<double>(k) / (2.0 * k_total));
      worst = std::max(worst, std::abs(lr_at({0.3, gamma, k_total}, k) - direct));
    }
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> g(1e-3, 1.0 - 1e-3);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const LrSchedule s{0.3, g(rng), 1 + static_cast<std::int64_t>(rng() % 1'000'000)};
    const auto k = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(s.total_steps));
    violations += !(lr_at(s, k + 1) < lr_at(s, k));
  }
  return {worst < 1e-12 && violations == 0,
          fmt::format("max |lr - direct| {:.1e} over 6 points, {} monotonicity violations in 1000 samples", worst,
                      violations)};
}

// 6 -----------------------------------------------------------------------

Outcome ema_closed_form() {
  EmaState<double> e{{1.0}, 0.999};
  const std::vector<double> theta{0.0};
  double worst = 0.0;
  for (int n = 1; n <= 10000; ++n) {
    ema_update<double>(e, theta);
    worst = std::max(worst, std::abs(e.shadow[0] - std::pow(0.999, n)));
  }
  return {worst < 1e-12, fmt::format("max |shadow - 0.999^n| over 10000 steps {:.1e}", worst)};
}

// 7, 9, 10 share the full desk runs --------------------------------------

struct DeskRuns {
  std::map<std::string, std::vector<RunResult>> by_mode;  // dm, supervised, fixmatch
  std::vector<fs::path> logs;
  double seconds = 0.0;
};

TrainConfig desk_mode(const std::string& mode, int seed) {
  TrainConfig cfg = preset("desk-synthetic");
  cfg.seed = seed;
  if (mode == "supervised") {
    cfg.w_s = 0.0;
    cfg.tau = 1.01;
  } else if (mode == "fixmatch") {
    cfg.w_s = 0.0;
  }
  return cfg;
}

const Dataset& desk_dataset() {
  static const Dataset ds = load_dataset_for(preset("desk-synthetic"), {});
  return ds;
}

DeskRuns& desk_runs() {
  static DeskRuns runs = [] {
    DeskRuns r;
    const auto t0 = Clock::now();
    const auto& ds = desk_dataset();
    const auto base = preset("desk-synthetic");
    const auto split = make_split(ds, base.num_labels, static_cast<std::uint64_t>(base.fold));
    for (int seed = 0; seed < 3; ++seed)
      for (const std::string mode : {"dm", "supervised", "fixmatch"}) {
        const auto dir = work_root() / "desk" / fmt::format("{}-seed{}", mode, seed);
        const auto t = Clock::now();
        auto res = run(desk_mode(mode, seed), ds, split, {dir});
        fmt::print("  {} seed {}: final error {:.2f}% ({:.0f}s)\n", mode, seed, 100.0 * res.final_error,
                   seconds_since(t));
        std::fflush(stdout);
        r.logs.push_back(dir / kMetricsFile);
        r.by_mode[mode].push_back(std::move(res));
      }
    r.seconds = seconds_since(t0);
    return r;
  }();
  return runs;
}

double mean_accuracy(const std::vector<RunResult>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += 1.0 - r.final_error;
  return 100.0 * s / static_cast<double>(runs.size());
}

Outcome desk_learning_effect() {
  auto& r = desk_runs();
  const double dm = mean_accuracy(r.by_mode["dm"]);
  const double sup = mean_accuracy(r.by_mode["supervised"]);
  const double fm = mean_accuracy(r.by_mode["fixmatch"]);
  const bool soft = dm >= fm;
  return {dm - sup >= 5.0 && r.seconds <= 20 * 60,
          fmt::format("mean accuracy over 3 seeds: DoubleMatch {:.2f}%, supervised-only {:.2f}% (gap {:+.2f}), "
                      "FixMatch {:.2f}% (soft check {}), {:.0f}s",
                      dm, sup, dm - sup, fm, soft ? "met" : "NOT met", r.seconds)};
}

// 8 -----------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "doublematch");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

Outcome ablation_integrity() {
  const auto dir = work_root() / "ablation";
  std::vector<std::string> small;
  for (const char* s : {"total_steps=20", "eval_interval=10", "synthetic_train_size=300", "synthetic_test_size=60"}) {
    small.emplace_back("--set");
    small.emplace_back(s);
  }
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), small.begin(), small.end());
    return args;
  };
  bool ok = run_cli(with({"ablate-loss", "--preset", "desk-synthetic", "--out", (dir / "loss").string()})) == 0;
  ok = run_cli(with({"ablate-pseudo", "--preset", "desk-synthetic", "--labels", "15,30", "--out",
                     (dir / "pseudo").string()})) == 0 &&
       ok;
  const std::set<std::string> allowed{"ssl_loss_kind", "softmax_temperature", "w_s"};
  std::set<std::string> seen_kinds;
  int loss_runs = 0;
  const auto loss_base = load_config(dir / "loss" / "cosine" / kConfigFile);
  for (const char* n : {"cosine", "mse", "softmax-t1", "softmax-t0.1"}) {
    const auto p = dir / "loss" / n;
    if (!check_manifest(p).empty()) continue;
    ++loss_runs;
    const auto cfg = load_config(p / kConfigFile);
    seen_kinds.insert(fmt::format("{}/{}/{}", to_string(cfg.ssl_loss_kind), cfg.softmax_temperature, cfg.w_s));
    for (const auto& k : config_diff(loss_base, cfg)) ok = ok && allowed.count(k);
  }
  int pairs = 0;
  for (const char* n : {"labels-15", "labels-30"}) {
    const auto a = dir / "pseudo" / n / "with-pl";
    const auto b = dir / "pseudo" / n / "without-pl";
    if (!check_manifest(a).empty() || !check_manifest(b).empty()) continue;
    pairs += config_diff(load_config(a / kConfigFile), load_config(b / kConfigFile)) ==
             std::vector<std::string>{"enable_pseudo_label_loss"};
  }
  return {ok && loss_runs == 4 && seen_kinds.size() == 4 && pairs == 2,
          fmt::format("{} loss runs with {} distinct (kind, lambda, w_s), {} of 2 pseudo-label pairs differ only in "
                      "enable_pseudo_label_loss",
                      loss_runs, seen_kinds.size(), pairs)};
}

// 9 -----------------------------------------------------------------------

Outcome determinism() {
  auto& r = desk_runs();
  const auto& ds = desk_dataset();
  const auto cfg = desk_mode("dm", 0);
  const auto dir = work_root() / "desk" / "dm-seed0-repeat";
  run(cfg, ds, make_split(ds, cfg.num_labels, static_cast<std::uint64_t>(cfg.fold)), {dir});
  const auto a = slurp(r.logs.front());
  const auto b = slurp(dir / kMetricsFile);
  r.logs.push_back(dir / kMetricsFile);
  return {!a.empty() && a == b, fmt::format("two {}-step seed-0 runs: metric CSVs {} ({} bytes)", cfg.total_steps,
                                            a == b ? "bit-identical" : "DIFFER", a.size())};
}

// 10 ----------------------------------------------------------------------

Outcome reporting() {
  auto& r = desk_runs();
  int ordered = 0;
  for (const auto& log : r.logs) {
    const auto s = run_stats(eval_errors(read_metric_log(log)));
    ordered += s.min_error <= s.median_last;
  }
  std::vector<std::vector<double>> folds;
  for (const auto& res : r.by_mode["dm"]) folds.push_back(res.eval_errors);
  const auto summary = summarize(folds);
  const std::string min_text = format_mean_std(summary.min_error);
  const std::string med_text = format_mean_std(summary.median_last);
  const std::regex style(R"(\d{1,3}\.\d{2}±\d{1,3}\.\d{2})");
  const bool styled = std::regex_match(min_text, style) && std::regex_match(med_text, style) &&
                      format_mean_std({0.2169, 0.0026}) == "21.69±0.26";
  return {ordered == static_cast<int>(r.logs.size()) && styled,
          fmt::format("min <= last-20 median in {}/{} logs; DoubleMatch min {}, last-20 {}", ordered, r.logs.size(),
                      min_text, med_text)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, fixmatch_equivalence}, {2, stop_gradient_audit}, {3, gradient_correctness}, {4, analytic_losses},
      {5, schedule},             {6, ema_closed_form},     {7, desk_learning_effect}, {8, ablation_integrity},
      {9, determinism},          {10, reporting},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failed += !o.pass;
    fmt::print("criterion {:>2}: {}  {}\n", id, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
