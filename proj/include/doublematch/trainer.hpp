#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doublematch/augment.hpp"
#include "doublematch/checkpoint.hpp"
#include "doublematch/config.hpp"
#include "doublematch/data.hpp"
#include "doublematch/ema.hpp"
#include "doublematch/losses.hpp"
#include "doublematch/metrics.hpp"
#include "doublematch/model.hpp"
#include "doublematch/optim.hpp"

namespace dm {

struct TrainState {
  ModelBundle<float> model;
  OptimizerState<float> opt;
  EmaState<float> ema;
  std::int64_t step = 0;  // gradient updates completed
};

TrainState init_train_state(const TrainConfig& cfg, const ArchSpec& spec);

// The three views of one step: labeled-weak, unlabeled-weak, unlabeled-strong.
template <typename T>
struct StepInputs {
  Tensor<T> labeled_weak;
  Tensor<T> unlabeled_weak;
  Tensor<T> unlabeled_strong;
  std::vector<int> labels;
};

template <typename To, typename From>
StepInputs<To> inputs_cast(const StepInputs<From>& in) {
  return {tensor_cast<To>(in.labeled_weak), tensor_cast<To>(in.unlabeled_weak), tensor_cast<To>(in.unlabeled_strong),
          in.labels};
}

// Augmentation randomness for image i of a view is drawn from a generator
// keyed by (seed, step, view, i), so a step's inputs do not depend on any
// earlier step.
StepInputs<float> augment_batch(const SslBatch& batch, const AugPolicy& policy, std::uint64_t seed);

// Teacher-side values of the unlabeled-weak pass: features z and logits w.
template <typename T>
struct TeacherValues {
  Mat<T> features;
  Mat<T> logits;
};

template <typename T>
struct LossAndGrad {
  LossReport report;
  std::vector<T> grads;
  TeacherValues<T> teacher;
};

// Losses and the gradient of the total with respect to every trainable
// parameter. BN running statistics in `buffers` are updated by the three
// forward passes in order. When `teacher` is given, its values replace the
// ones computed by the unlabeled-weak pass (which still runs, so the buffer
// updates are unchanged).
template <typename T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const T> params, std::span<T> buffers,
                             const StepInputs<T>& in, const TrainConfig& cfg,
                             const TeacherValues<T>* teacher = nullptr);

// One gradient update at lr_at(step) followed by an EMA update. Throws
// TrainingError (with a diagnostic) when the loss or gradient is not finite,
// leaving parameters untouched.
LossReport train_step(TrainState& state, const StepInputs<float>& in, const TrainConfig& cfg);

// Top-1 error of the EMA shadow parameters (with the live BN statistics)
// in evaluation mode.
double evaluate(const TrainState& state, const ImageSet& test, int batch_size = 256);

// Evaluation-mode predictions of an arbitrary parameter vector.
std::vector<int> predict(const Network<float>& net, std::span<const float> params, std::span<const float> buffers,
                         const ImageSet& images, int batch_size = 256);

Archive to_archive(const TrainState& state, const TrainConfig& cfg);
TrainState from_archive(const Archive& archive, const TrainConfig& cfg, const ArchSpec& spec);

struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = false;              // continue from the newest checkpoint in out_dir
  std::int64_t stop_after = -1;     // stop (with a checkpoint) once this many steps are done
  std::function<void(const MetricRow&)> on_row;  // progress callback
};

struct RunResult {
  std::filesystem::path out_dir;
  std::vector<double> eval_errors;
  double final_error = 0.0;
  RunStats stats;
  bool completed = false;
};

// Files written under out_dir.
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kPolicyFile = "policy.txt";
inline constexpr const char* kSplitFile = "split.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kCheckpointDir = "checkpoints";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

RunResult run(const TrainConfig& cfg, const Dataset& dataset, const LabeledSplit& split, const RunOptions& opts);

// Names of required run artifacts missing from `dir` (empty when complete).
std::vector<std::string> check_manifest(const std::filesystem::path& dir);

}  // namespace dm
