#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "doublematch/config.hpp"
#include "doublematch/data.hpp"
#include "doublematch/trainer.hpp"

namespace dm {

struct PlannedRun {
  std::string name;  // subdirectory under the experiment root
  TrainConfig cfg;
};

// Self-supervised loss comparison: cosine, MSE and softmax cross-entropy at
// two temperatures, each with its own w_s. Nothing else differs.
std::vector<PlannedRun> loss_ablation_runs(const TrainConfig& base);

// Paired runs with and without the pseudo-label loss for every label count.
// With per_count_w_s, counts that have a preset for base.dataset take that
// preset's w_s.
std::vector<PlannedRun> pseudo_ablation_runs(const TrainConfig& base, const std::vector<int>& label_counts,
                                             bool per_count_w_s);

struct CompletedRun {
  PlannedRun plan;
  RunResult result;
};

// Runs each plan in root/<name>, `parallel` at a time. Results keep plan order.
std::vector<CompletedRun> execute_runs(const std::vector<PlannedRun>& plans, const Dataset& dataset,
                                       const std::filesystem::path& root, int parallel,
                                       bool verbose);

}  // namespace dm
