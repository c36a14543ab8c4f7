#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doublematch/cli.hpp"
#include "doublematch/config.hpp"
#include "doublematch/metrics.hpp"
#include "doublematch/trainer.hpp"
#include "test_util.hpp"

using namespace dm;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "doublematch");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

// Exit status and combined output of the real binary.
std::pair<int, std::string> run_binary(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt";
  const std::string cmd =
      fmt::format("env -u DOUBLEMATCH_DATA_ROOT {} {} > {} 2>&1", DM_CLI_PATH, args, out.string());
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

// Desk preset shrunk to a few seconds per run.
std::vector<std::string> small_run(std::vector<std::string> args) {
  for (const char* s : {"total_steps=6", "eval_interval=3", "synthetic_train_size=120", "synthetic_test_size=30",
                        "num_labels=9", "batch_size_labeled=4", "mu=2", "feature_dim=16"}) {
    args.emplace_back("--set");
    args.emplace_back(s);
  }
  args.emplace_back("--preset");
  args.emplace_back("desk-synthetic");
  return args;
}

}  // namespace

TEST_CASE("train writes a complete run directory with the overrides recorded") {
  const auto dir = testing::scratch_dir("cli-train");
  CHECK(run_cli(small_run({"train", "--quiet", "--out", (dir / "a").string(), "--set", "w_s=0.75"})) == 0);
  CHECK(check_manifest(dir / "a").empty());
  const auto cfg = load_config(dir / "a" / kConfigFile);
  CHECK(cfg.w_s == 0.75);
  CHECK(cfg.total_steps == 6);
  CHECK(cfg.dataset == "synthetic");
  CHECK(eval_errors(read_metric_log(dir / "a" / kMetricsFile)).size() == 2);
  CHECK(run_cli({"eval", "--run", (dir / "a").string()}) == 0);
  CHECK(run_cli({"summarize", (dir / "a").string(), "--json", (dir / "s.json").string()}) == 0);
  CHECK(fs::exists(dir / "s.json"));
  CHECK(run_cli({"plot", "--series", "DoubleMatch=" + (dir / "a").string(), "--out", (dir / "p.png").string()}) == 0);
  CHECK(fs::file_size(dir / "p.png") > 100);
}

TEST_CASE("set beats config beats preset") {
  const auto dir = testing::scratch_dir("cli-precedence");
  std::ofstream(dir / "c.txt") << "w_s = 4\neta0 = 0.02\n";
  CHECK(run_cli(small_run({"train", "--quiet", "--out", (dir / "r").string(), "--config", (dir / "c.txt").string(),
                           "--set", "eta0=0.01"})) == 0);
  const auto cfg = load_config(dir / "r" / kConfigFile);
  CHECK(cfg.w_s == 4.0);
  CHECK(cfg.eta0 == 0.01);
  CHECK(cfg.mu == 2);
  CHECK(cfg.num_classes == 3);
}

TEST_CASE("FixMatch mode from a benchmark preset") {
  const auto dir = testing::scratch_dir("cli-fixmatch");
  // Needs data, so only the resolved configuration is checked through the
  // missing-root error path.
  const auto [code, text] = run_binary("train --preset cifar100-10000 --set w_s=0 --out " + (dir / "r").string(), dir);
  CHECK(code == 2);
  CHECK(text.find("--data-root") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  const auto dir = testing::scratch_dir("cli-usage");
  CHECK(run_binary("", dir).first == 2);
  CHECK(run_binary("train", dir).first == 2);
  CHECK(run_binary("train --preset nope --out " + (dir / "x").string(), dir).first == 2);
  const auto [code, text] =
      run_binary("train --preset desk-synthetic --set gamma=1.5 --out " + (dir / "y").string(), dir);
  CHECK(code == 2);
  CHECK(text.find("gamma must lie in (0,1)") != std::string::npos);
  CHECK(run_binary("train --preset cifar10-40 --data-root " + (dir / "none").string() + " --out " +
                       (dir / "z").string(),
                   dir)
            .first == 2);
  CHECK(run_binary("summarize " + (dir / "missing.csv").string(), dir).first == 1);
}

TEST_CASE("presets are listed and printable") {
  const auto dir = testing::scratch_dir("cli-presets");
  const auto [code, text] = run_binary("presets", dir);
  CHECK(code == 0);
  for (const auto& n : preset_names()) CHECK(text.find(n) != std::string::npos);
  const auto [code2, shown] = run_binary("presets --show svhn-1000", dir);
  CHECK(code2 == 0);
  CHECK(parse_config(shown) == preset("svhn-1000"));
}

TEST_CASE("loss ablation runs differ only in the loss settings") {
  const auto dir = testing::scratch_dir("cli-ablate-loss");
  CHECK(run_cli(small_run({"ablate-loss", "--out", dir.string()})) == 0);
  const std::vector<std::string> names{"cosine", "mse", "softmax-t1", "softmax-t0.1"};
  const auto base = load_config(dir / names[0] / kConfigFile);
  for (const auto& n : names) {
    CAPTURE(n);
    CHECK(check_manifest(dir / n).empty());
    for (const auto& key : config_diff(base, load_config(dir / n / kConfigFile)))
      CHECK((key == "ssl_loss_kind" || key == "softmax_temperature" || key == "w_s"));
  }
  const auto t01 = load_config(dir / "softmax-t0.1" / kConfigFile);
  CHECK(t01.ssl_loss_kind == SslLossKind::softmax_ce);
  CHECK(t01.softmax_temperature == 0.1);
  CHECK(t01.w_s == 0.5);
  CHECK(load_config(dir / "mse" / kConfigFile).w_s == 0.25);
  std::ifstream table(dir / "ablation_loss.md");
  int lines = 0;
  for (std::string l; std::getline(table, l);) ++lines;
  CHECK(lines == 2 + 4);
}

TEST_CASE("pseudo-label ablation pairs differ only in the switch") {
  const auto dir = testing::scratch_dir("cli-ablate-pseudo");
  CHECK(run_cli(small_run({"ablate-pseudo", "--labels", "9,30", "--out", dir.string()})) == 0);
  for (const char* n : {"labels-9", "labels-30"}) {
    CAPTURE(n);
    const auto with = load_config(dir / n / "with-pl" / kConfigFile);
    const auto without = load_config(dir / n / "without-pl" / kConfigFile);
    CHECK(config_diff(with, without) == std::vector<std::string>{"enable_pseudo_label_loss"});
    CHECK(with.enable_pseudo_label_loss);
    CHECK(check_manifest(dir / n / "without-pl").empty());
  }
  CHECK(load_config(dir / "labels-30" / "with-pl" / kConfigFile).num_labels == 30);
  CHECK(fs::exists(dir / "ablation_pseudo.md"));
}
