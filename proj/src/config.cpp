#include "doublematch/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "doublematch/error.hpp"
#include "doublematch/rng.hpp"

namespace dm {
namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view text) {
  // Accept simple fractions such as 7/8 for the decay rate.
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    const double num = parse_double(key, trim(text.substr(0, slash)));
    const double den = parse_double(key, trim(text.substr(slash + 1)));
    if (den == 0.0) throw ConfigError(fmt::format("{}: division by zero in '{}'", key, text));
    return num / den;
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(fmt::format("{}: expected a real number, got '{}'", key, text));
  return v;
}

std::int64_t parse_int(std::string_view key, std::string_view text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, text));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(fmt::format("{}: expected true/false, got '{}'", key, text));
}

struct Field {
  std::string name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

template <typename M>
Field real_field(std::string name, M TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return fmt::format("{}", c.*member); },
          [member, name](TrainConfig& c, std::string_view v) { c.*member = parse_double(name, v); }};
}

template <typename M>
Field int_field(std::string name, M TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return fmt::format("{}", c.*member); },
          [member, name](TrainConfig& c, std::string_view v) {
            c.*member = static_cast<M>(parse_int(name, v));
          }};
}

Field bool_field(std::string name, bool TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, name](TrainConfig& c, std::string_view v) { c.*member = parse_bool(name, v); }};
}

Field string_field(std::string name, std::string TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return c.*member; },
          [member](TrainConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_field("batch_size_labeled", &TrainConfig::batch_size_labeled));
    f.push_back(int_field("mu", &TrainConfig::mu));
    f.push_back(real_field("tau", &TrainConfig::tau));
    f.push_back(real_field("w_s", &TrainConfig::w_s));
    f.push_back(real_field("w_d", &TrainConfig::w_d));
    f.push_back(real_field("eta0", &TrainConfig::eta0));
    f.push_back(real_field("gamma", &TrainConfig::gamma));
    f.push_back(int_field("total_steps", &TrainConfig::total_steps));
    f.push_back(real_field("sgd_momentum", &TrainConfig::sgd_momentum));
    f.push_back(real_field("ema_momentum", &TrainConfig::ema_momentum));
    f.push_back(int_field("num_classes", &TrainConfig::num_classes));
    f.push_back(int_field("feature_dim", &TrainConfig::feature_dim));
    f.push_back({"ssl_loss_kind",
                 [](const TrainConfig& c) { return std::string(to_string(c.ssl_loss_kind)); },
                 [](TrainConfig& c, std::string_view v) { c.ssl_loss_kind = parse_ssl_loss_kind(v); }});
    f.push_back(real_field("softmax_temperature", &TrainConfig::softmax_temperature));
    f.push_back(bool_field("enable_pseudo_label_loss", &TrainConfig::enable_pseudo_label_loss));
    f.push_back(int_field("seed", &TrainConfig::seed));
    f.push_back(string_field("arch", &TrainConfig::arch));
    f.push_back(string_field("dataset", &TrainConfig::dataset));
    f.push_back(int_field("num_labels", &TrainConfig::num_labels));
    f.push_back(int_field("fold", &TrainConfig::fold));
    f.push_back(int_field("eval_interval", &TrainConfig::eval_interval));
    f.push_back(int_field("log_interval", &TrainConfig::log_interval));
    f.push_back(int_field("checkpoint_interval", &TrainConfig::checkpoint_interval));
    f.push_back(int_field("eval_batch_size", &TrainConfig::eval_batch_size));
    f.push_back(real_field("cutout_fraction", &TrainConfig::cutout_fraction));
    f.push_back(int_field("ops_per_image", &TrainConfig::ops_per_image));
    f.push_back(real_field("bn_momentum", &TrainConfig::bn_momentum));
    f.push_back(bool_field("projection_bias", &TrainConfig::projection_bias));
    f.push_back(bool_field("unlabeled_includes_labeled", &TrainConfig::unlabeled_includes_labeled));
    f.push_back(bool_field("synthetic_distractor", &TrainConfig::synthetic_distractor));
    f.push_back(int_field("synthetic_train_size", &TrainConfig::synthetic_train_size));
    f.push_back(int_field("synthetic_test_size", &TrainConfig::synthetic_test_size));
    f.push_back(bool_field("log_wall_time", &TrainConfig::log_wall_time));
    f.push_back(real_field("ablation_w_s_cosine", &TrainConfig::ablation_w_s_cosine));
    f.push_back(real_field("ablation_w_s_mse", &TrainConfig::ablation_w_s_mse));
    f.push_back(real_field("ablation_w_s_softmax_t1", &TrainConfig::ablation_w_s_softmax_t1));
    f.push_back(real_field("ablation_w_s_softmax_t01", &TrainConfig::ablation_w_s_softmax_t01));
    return f;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

void require(bool ok, std::string_view message) {
  if (!ok) throw ConfigError(std::string(message));
}

int arch_feature_dim(std::string_view arch) {
  if (arch == "wrn-28-2") return 128;
  if (arch == "wrn-28-8") return 512;
  if (arch == "wrn-37-2") return 256;
  return 0;
}

}  // namespace

std::string_view to_string(SslLossKind kind) {
  switch (kind) {
    case SslLossKind::cosine: return "cosine";
    case SslLossKind::mse: return "mse";
    case SslLossKind::softmax_ce: return "softmax_ce";
  }
  return "?";
}

SslLossKind parse_ssl_loss_kind(std::string_view text) {
  if (text == "cosine") return SslLossKind::cosine;
  if (text == "mse") return SslLossKind::mse;
  if (text == "softmax_ce") return SslLossKind::softmax_ce;
  throw ConfigError(fmt::format("ssl_loss_kind must be one of cosine, mse, softmax_ce; got '{}'", text));
}

std::int64_t TrainConfig::resolved_eval_interval() const {
  if (eval_interval > 0) return eval_interval;
  return std::max<std::int64_t>(1, total_steps / 64);
}

void validate(const TrainConfig& c) {
  require(c.batch_size_labeled >= 1, "batch_size_labeled must be >= 1");
  require(c.mu >= 1, "mu must be >= 1");
  // tau > 1 is accepted: no confidence can exceed it, so every sample is masked.
  require(c.tau >= 0.0, "tau must be >= 0");
  require(c.w_s >= 0.0, "w_s must be >= 0");
  require(c.w_d >= 0.0, "w_d must be >= 0");
  require(c.eta0 > 0.0, "eta0 must be > 0");
  require(c.gamma > 0.0 && c.gamma < 1.0, "gamma must lie in (0,1)");
  require(c.total_steps >= 1, "total_steps must be >= 1");
  require(c.sgd_momentum >= 0.0 && c.sgd_momentum < 1.0, "sgd_momentum must lie in [0,1)");
  require(c.ema_momentum >= 0.0 && c.ema_momentum < 1.0, "ema_momentum must lie in [0,1)");
  require(c.num_classes >= 1, "num_classes must be >= 1");
  require(c.feature_dim >= 1, "feature_dim must be >= 1");
  require(c.softmax_temperature > 0.0, "softmax_temperature must be > 0");
  require(c.num_labels >= 1, "num_labels must be >= 1");
  require(c.fold >= 0, "fold must be >= 0");
  require(c.eval_interval >= 0, "eval_interval must be >= 0");
  require(c.log_interval >= 1, "log_interval must be >= 1");
  require(c.checkpoint_interval >= 0, "checkpoint_interval must be >= 0");
  require(c.eval_batch_size >= 1, "eval_batch_size must be >= 1");
  require(c.cutout_fraction >= 0.0 && c.cutout_fraction < 1.0, "cutout_fraction must lie in [0,1)");
  require(c.ops_per_image >= 0, "ops_per_image must be >= 0");
  require(c.bn_momentum > 0.0 && c.bn_momentum <= 1.0, "bn_momentum must lie in (0,1]");
  require(c.synthetic_train_size >= 1, "synthetic_train_size must be >= 1");
  require(c.synthetic_test_size >= 1, "synthetic_test_size must be >= 1");
  require(c.ablation_w_s_cosine >= 0 && c.ablation_w_s_mse >= 0 && c.ablation_w_s_softmax_t1 >= 0 &&
              c.ablation_w_s_softmax_t01 >= 0,
          "ablation_w_s_* must be >= 0");
  if (c.arch != "desk-cnn") {
    const int d = arch_feature_dim(c.arch);
    require(d != 0, fmt::format("arch must be one of wrn-28-2, wrn-28-8, wrn-37-2, desk-cnn; got '{}'", c.arch));
    require(c.feature_dim == d, fmt::format("feature_dim must equal {} for arch {}", d, c.arch));
  }
}

void set_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  field(trim(key)).set(cfg, trim(value));
}

std::string get_value(const TrainConfig& cfg, std::string_view key) { return field(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.name);
  return keys;
}

void apply_override(TrainConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  set_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(fmt::format("line {}: expected 'key = value', got '{}'", line_no, line));
    const auto key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second)
      throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
    try {
      set_value(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  validate(base);
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.name, f.get(cfg));
  return out;
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError(fmt::format("cannot write config file '{}'", path.string()));
  out << to_text(cfg);
}

std::uint64_t config_hash(const TrainConfig& cfg) { return hash_name(to_text(cfg)); }

std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b) {
  std::vector<std::string> keys;
  for (const auto& f : fields())
    if (f.get(a) != f.get(b)) keys.push_back(f.name);
  return keys;
}

namespace {

struct PresetRow {
  const char* name;
  const char* dataset;
  int num_labels;
  double w_s;
};

// Self-supervised weights per split, as tuned for the full-scale runs.
constexpr PresetRow kPresets[] = {
    {"cifar10-40", "cifar10", 40, 0.5},       {"cifar10-250", "cifar10", 250, 1.0},
    {"cifar10-4000", "cifar10", 4000, 5.0},   {"cifar100-400", "cifar100", 400, 2.0},
    {"cifar100-1000", "cifar100", 1000, 2.0 + 3.0 * 600.0 / 2100.0},
    {"cifar100-2500", "cifar100", 2500, 5.0}, {"cifar100-10000", "cifar100", 10000, 10.0},
    {"svhn-40", "svhn", 40, 0.001},           {"svhn-250", "svhn", 250, 0.05},
    {"svhn-1000", "svhn", 1000, 0.05},        {"stl10-1000", "stl10", 1000, 1.0},
};

}  // namespace

TrainConfig preset(std::string_view name) {
  TrainConfig c;
  if (name == "desk-synthetic") {
    // Scaled-down run for CPU-only smoke tests and the acceptance suite.
    c.dataset = "synthetic";
    c.arch = "desk-cnn";
    c.num_classes = 3;
    c.feature_dim = 64;
    c.num_labels = 30;
    c.total_steps = 4000;
    c.batch_size_labeled = 16;
    c.mu = 4;
    c.eta0 = 0.08;
    c.gamma = 7.0 / 8.0;
    c.w_d = 0.0005;
    c.w_s = 1.0;
    c.bn_momentum = 0.01;
    c.log_interval = 10;
    return c;
  }
  for (const auto& row : kPresets) {
    if (name != row.name) continue;
    c.dataset = row.dataset;
    c.num_labels = row.num_labels;
    c.w_s = row.w_s;
    if (c.dataset == "cifar100") {
      c.gamma = 5.0 / 8.0;
      c.w_d = 0.001;
      c.num_classes = 100;
      c.arch = "wrn-28-8";
      c.feature_dim = 512;
    } else if (c.dataset == "stl10") {
      c.gamma = 7.0 / 8.0;
      c.w_d = 0.0005;
      c.num_classes = 10;
      c.arch = "wrn-37-2";
      c.feature_dim = 256;
    } else {
      c.gamma = 7.0 / 8.0;
      c.w_d = 0.0005;
      c.num_classes = 10;
      c.arch = "wrn-28-2";
      c.feature_dim = 128;
    }
    return c;
  }
  throw ConfigError(fmt::format("unknown preset '{}' (known: {})", name, fmt::join(preset_names(), ", ")));
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& row : kPresets) names.emplace_back(row.name);
  names.emplace_back("desk-synthetic");
  return names;
}

}  // namespace dm
