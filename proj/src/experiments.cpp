#include "doublematch/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "doublematch/error.hpp"

namespace dm {

std::vector<PlannedRun> loss_ablation_runs(const TrainConfig& base) {
  auto make = [&](std::string name, SslLossKind kind, double lambda, double w_s) {
    TrainConfig c = base;
    c.ssl_loss_kind = kind;
    c.softmax_temperature = lambda;
    c.w_s = w_s;
    return PlannedRun{std::move(name), c};
  };
  const double lambda = base.softmax_temperature;
  return {make("cosine", SslLossKind::cosine, lambda, base.ablation_w_s_cosine),
          make("mse", SslLossKind::mse, lambda, base.ablation_w_s_mse),
          make("softmax-t1", SslLossKind::softmax_ce, 1.0, base.ablation_w_s_softmax_t1),
          make("softmax-t0.1", SslLossKind::softmax_ce, 0.1, base.ablation_w_s_softmax_t01)};
}

std::vector<PlannedRun> pseudo_ablation_runs(const TrainConfig& base, const std::vector<int>& label_counts,
                                             bool per_count_w_s) {
  if (label_counts.empty()) throw ConfigError("ablate-pseudo needs at least one label count");
  std::vector<PlannedRun> runs;
  for (int n : label_counts) {
    TrainConfig c = base;
    c.num_labels = n;
    if (per_count_w_s) {
      const auto names = preset_names();
      const auto name = fmt::format("{}-{}", base.dataset, n);
      if (std::find(names.begin(), names.end(), name) != names.end()) c.w_s = preset(name).w_s;
    }
    for (bool pl : {true, false}) {
      TrainConfig r = c;
      r.enable_pseudo_label_loss = pl;
      validate(r);
      runs.push_back({fmt::format("labels-{}/{}", n, pl ? "with-pl" : "without-pl"), r});
    }
  }
  return runs;
}

std::vector<CompletedRun> execute_runs(const std::vector<PlannedRun>& plans, const Dataset& dataset,
                                       const std::filesystem::path& root, int parallel, bool verbose) {
  std::vector<CompletedRun> done(plans.size());
  std::vector<std::exception_ptr> errors(plans.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        const auto& plan = plans[i];
        const auto split = make_split(dataset, plan.cfg.num_labels, static_cast<std::uint64_t>(plan.cfg.fold));
        RunOptions opts;
        opts.out_dir = root / plan.name;
        done[i] = {plan, run(plan.cfg, dataset, split, opts)};
        if (verbose) {
          std::lock_guard lock(io);
          fmt::print("{}: final error {:.2f}%\n", plan.name, 100.0 * done[i].result.final_error);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(parallel, static_cast<int>(plans.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return done;
}

}  // namespace dm
