#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dm {

enum class SslLossKind { cosine, mse, softmax_ce };

std::string_view to_string(SslLossKind kind);
SslLossKind parse_ssl_loss_kind(std::string_view text);

// Every hyperparameter of a run. Defaults are the full-scale settings
// (B=64, mu=7, tau=0.95, eta0=0.3, SGD momentum 0.9, EMA 0.999, K=352000).
struct TrainConfig {
  int batch_size_labeled = 64;
  int mu = 7;
  double tau = 0.95;
  double w_s = 1.0;
  double w_d = 0.0005;
  double eta0 = 0.3;
  double gamma = 7.0 / 8.0;
  std::int64_t total_steps = 352000;
  double sgd_momentum = 0.9;
  double ema_momentum = 0.999;
  int num_classes = 10;
  int feature_dim = 128;
  SslLossKind ssl_loss_kind = SslLossKind::cosine;
  double softmax_temperature = 1.0;
  bool enable_pseudo_label_loss = true;
  std::int64_t seed = 0;

  // Experiment plumbing.
  std::string arch = "wrn-28-2";
  std::string dataset = "cifar10";
  int num_labels = 250;
  int fold = 0;
  std::int64_t eval_interval = 0;  // 0 selects total_steps / 64
  std::int64_t log_interval = 10;
  std::int64_t checkpoint_interval = 0;  // 0 writes only the final checkpoint
  int eval_batch_size = 256;
  double cutout_fraction = 0.5;
  int ops_per_image = 2;
  double bn_momentum = 0.001;
  bool projection_bias = true;
  bool unlabeled_includes_labeled = true;
  bool synthetic_distractor = false;
  int synthetic_train_size = 6000;
  int synthetic_test_size = 1500;
  bool log_wall_time = false;

  // Per-loss self-supervised weights used by the loss-function ablation.
  double ablation_w_s_cosine = 10.0;
  double ablation_w_s_mse = 0.25;
  double ablation_w_s_softmax_t1 = 1.0;
  double ablation_w_s_softmax_t01 = 0.5;

  std::int64_t resolved_eval_interval() const;
  int unlabeled_batch_size() const { return mu * batch_size_labeled; }

  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError naming the offending key and its bound.
void validate(const TrainConfig& cfg);

// Parses `key = value` lines onto `base`; `#` starts a comment. The result
// is validated.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// Applies one `key=value` override without validating; callers validate
// once all layers are applied.
void apply_override(TrainConfig& cfg, std::string_view assignment);
void set_value(TrainConfig& cfg, std::string_view key, std::string_view value);
std::string get_value(const TrainConfig& cfg, std::string_view key);
std::vector<std::string> config_keys();

std::string to_text(const TrainConfig& cfg);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

// FNV-1a over the canonical text form.
std::uint64_t config_hash(const TrainConfig& cfg);

// Keys whose values differ between two configs, in canonical order.
std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b);

TrainConfig preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace dm
