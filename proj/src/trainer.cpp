#include "doublematch/trainer.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "doublematch/error.hpp"
#include "doublematch/rng.hpp"

namespace fs = std::filesystem;

namespace dm {

TrainState init_train_state(const TrainConfig& cfg, const ArchSpec& spec) {
  TrainState s;
  s.model = build_model<float>(spec, derive_seed(static_cast<std::uint64_t>(cfg.seed), "init"));
  s.opt = make_optimizer<float>(s.model.state.params.size(), cfg.sgd_momentum);
  s.ema = ema_init<float>(s.model.state.params, cfg.ema_momentum);
  return s;
}

StepInputs<float> augment_batch(const SslBatch& batch, const AugPolicy& policy, std::uint64_t seed) {
  const auto k = static_cast<std::uint64_t>(batch.step);
  std::vector<Image> lw, uw, us;
  lw.reserve(batch.labeled.size());
  uw.reserve(batch.unlabeled.size());
  us.reserve(batch.unlabeled.size());
  for (std::size_t i = 0; i < batch.labeled.size(); ++i) {
    Rng rng = make_rng(seed, "aug", {k, 0, i});
    lw.push_back(weak_augment(batch.labeled[i], rng));
  }
  for (std::size_t i = 0; i < batch.unlabeled.size(); ++i) {
    Rng weak_rng = make_rng(seed, "aug", {k, 1, i});
    uw.push_back(weak_augment(batch.unlabeled[i], weak_rng));
    Rng strong_rng = make_rng(seed, "aug", {k, 2, i});
    us.push_back(strong_augment(batch.unlabeled[i], policy, strong_rng));
  }
  return {to_tensor(lw), to_tensor(uw), to_tensor(us), batch.labels};
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const T> params, std::span<T> buffers,
                             const StepInputs<T>& in, const TrainConfig& cfg, const TeacherValues<T>* teacher) {
  LossAndGrad<T> out;
  out.grads.assign(params.size(), T(0));
  std::span<T> grads(out.grads);
  const auto g = net.prediction_head(params);
  const auto h = net.projection_head(params);

  // Labeled data, weak view: cross-entropy against the labels.
  Tape labeled_tape;
  const Mat<T> f_l = net.forward_features(params, buffers, in.labeled_weak, true, &labeled_tape);
  const Mat<T> p = g.apply(f_l);
  const auto sup = supervised_loss<T>(one_hot<T>(in.labels, net.num_classes()), p);
  {
    const auto lg = linear_backward(g, f_l, sup.grad);
    net.accumulate_prediction_grad(grads, lg);
    net.backward_features(params, grads, labeled_tape, lg.dx);
  }

  // Unlabeled data, weak view: the teacher. No tape, so nothing can flow back.
  {
    Mat<T> z = net.forward_features(params, buffers, in.unlabeled_weak, true, nullptr);
    Mat<T> w = g.apply(z);
    out.teacher = teacher ? *teacher : TeacherValues<T>{std::move(z), std::move(w)};
  }

  // Unlabeled data, strong view: the student.
  Tape strong_tape;
  const Mat<T> v = net.forward_features(params, buffers, in.unlabeled_strong, true, &strong_tape);
  const Mat<T> q = g.apply(v);
  Mat<T> dv = Mat<T>::Zero(v.rows(), v.cols());
  bool strong_has_grad = false;

  double l_p = 0.0, mask_rate = 0.0;
  if (cfg.enable_pseudo_label_loss) {
    const auto pl = pseudo_label_loss<T>(stopgrad(out.teacher.logits), q, cfg.tau);
    l_p = static_cast<double>(pl.value);
    mask_rate = pl.mask_rate;
    if (pl.num_masked_in > 0) {
      const auto lg = linear_backward(g, v, pl.grad_strong);
      net.accumulate_prediction_grad(grads, lg);
      dv += lg.dx;
      strong_has_grad = true;
    }
  }

  const auto ssl = ssl_loss<T>(cfg.ssl_loss_kind, v, h, stopgrad(out.teacher.features), cfg.softmax_temperature);
  if (cfg.w_s != 0.0) {
    const T ws = static_cast<T>(cfg.w_s);
    LinearGrads<T> hg;
    hg.dweight = ws * ssl.head.dweight;
    if (ssl.head.dbias.size() > 0) hg.dbias = ws * ssl.head.dbias;
    net.accumulate_projection_grad(grads, hg);
    dv += ws * ssl.grad_features;
    strong_has_grad = true;
  }
  if (strong_has_grad) net.backward_features(params, grads, strong_tape, dv);

  add_weight_decay_grad<T>(params, grads, cfg.w_d);

  auto& r = out.report;
  r.l_l = static_cast<double>(sup.value);
  r.l_p = l_p;
  r.l_s = static_cast<double>(ssl.value);
  r.l_wd = weight_decay_term<T>(params, cfg.w_d);
  r.mask_rate = mask_rate;
  r.degenerate = ssl.degenerate;
  r.total = total_loss(r.l_l, r.l_p, r.l_s, cfg.w_s, r.l_wd);
  return out;
}

template LossAndGrad<float> loss_and_grad(const Network<float>&, std::span<const float>, std::span<float>,
                                          const StepInputs<float>&, const TrainConfig&,
                                          const TeacherValues<float>*);
template LossAndGrad<double> loss_and_grad(const Network<double>&, std::span<const double>, std::span<double>,
                                           const StepInputs<double>&, const TrainConfig&,
                                           const TeacherValues<double>*);

namespace {

double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

std::string diagnostic(std::int64_t step, const LossReport& r, const Network<float>& net,
                       std::span<const float> grads) {
  std::string out = fmt::format("non-finite training state at step {}: l_l={} l_p={} l_s={} l_wd={} total={}", step,
                                r.l_l, r.l_p, r.l_s, r.l_wd, r.total);
  for (auto group : {ParamGroup::backbone, ParamGroup::prediction_head, ParamGroup::projection_head}) {
    double s = 0.0;
    for (const auto& e : net.param_layout().entries())
      if (e.group == group) {
        const double n = l2_norm(grads.subspan(e.slot.offset, e.slot.size));
        s += n * n;
      }
    out += fmt::format(" |grad {}|={}", to_string(group), std::sqrt(s));
  }
  return out;
}

}  // namespace

LossReport train_step(TrainState& state, const StepInputs<float>& in, const TrainConfig& cfg) {
  const Network<float>& net = *state.model.net;
  auto& ps = state.model.state;
  // Work on a copy of the statistics so a failed step leaves the state intact.
  std::vector<float> buffers = ps.buffers;
  LossAndGrad<float> lg;
  try {
    lg = loss_and_grad<float>(net, ps.params, buffers, in, cfg);
  } catch (const TrainingError& e) {
    throw TrainingError(fmt::format("non-finite training state at step {}: {}", state.step, e.what()));
  }
  bool finite = std::isfinite(lg.report.total);
  for (float g : lg.grads) finite = finite && std::isfinite(g);
  if (!finite) throw TrainingError(diagnostic(state.step, lg.report, net, lg.grads));
  const double lr = lr_at({cfg.eta0, cfg.gamma, cfg.total_steps}, state.step);
  sgd_step<float>(ps.params, lg.grads, state.opt, lr);
  ps.buffers = std::move(buffers);
  ema_update<float>(state.ema, ps.params);
  ++state.step;
  return lg.report;
}

std::vector<int> predict(const Network<float>& net, std::span<const float> params, std::span<const float> buffers,
                         const ImageSet& images, int batch_size) {
  std::vector<int> out;
  out.reserve(images.size());
  std::vector<float> buf(buffers.begin(), buffers.end());  // eval mode never writes, but the API takes a span
  const auto g = net.prediction_head(params);
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Image> chunk;
    chunk.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) chunk.push_back(images.image(i));
    const Mat<float> logits = g.apply(net.forward_features(params, buf, to_tensor(chunk), false, nullptr));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(r, c) > logits(r, best)) best = c;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double evaluate(const TrainState& state, const ImageSet& test, int batch_size) {
  if (test.size() == 0) throw DataError("evaluate: empty test set");
  const auto pred = predict(*state.model.net, state.ema.shadow, state.model.state.buffers, test, batch_size);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != test.labels[i];
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

// ------------------------------------------------------------ checkpoint

Archive to_archive(const TrainState& state, const TrainConfig& cfg) {
  Archive a;
  const auto& net = *state.model.net;
  a.meta["arch"] = net.spec().name;
  a.meta["config_hash"] = fmt::format("{:016x}", config_hash(cfg));
  a.meta["step"] = std::to_string(state.step);
  a.meta["optimizer_step"] = std::to_string(state.opt.step);
  auto slice = [](const std::vector<float>& v, ParamSlot s) {
    return std::vector<float>(v.begin() + static_cast<std::ptrdiff_t>(s.offset),
                              v.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size));
  };
  for (const auto& e : net.param_layout().entries()) {
    a.arrays["param/" + e.name] = slice(state.model.state.params, e.slot);
    a.arrays["ema/" + e.name] = slice(state.ema.shadow, e.slot);
    a.arrays["velocity/" + e.name] = slice(state.opt.velocity, e.slot);
  }
  for (const auto& e : net.buffer_layout().entries()) a.arrays["buffer/" + e.name] = slice(state.model.state.buffers, e.slot);
  return a;
}

TrainState from_archive(const Archive& a, const TrainConfig& cfg, const ArchSpec& spec) {
  if (a.get_meta("arch") != spec.name)
    throw DataError(fmt::format("checkpoint is for {}, not {}", a.get_meta("arch"), spec.name));
  if (a.get_meta("config_hash") != fmt::format("{:016x}", config_hash(cfg)))
    throw DataError("checkpoint was written under a different configuration");
  TrainState s = init_train_state(cfg, spec);
  const auto& net = *s.model.net;
  auto fill = [&](std::vector<float>& dst, const ParamEntry& e, const std::string& key) {
    const auto& src = a.get_array(key);
    if (src.size() != e.slot.size)
      throw DataError(fmt::format("checkpoint array '{}' has {} values, expected {}", key, src.size(), e.slot.size));
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(e.slot.offset));
  };
  for (const auto& e : net.param_layout().entries()) {
    fill(s.model.state.params, e, "param/" + e.name);
    fill(s.ema.shadow, e, "ema/" + e.name);
    fill(s.opt.velocity, e, "velocity/" + e.name);
  }
  for (const auto& e : net.buffer_layout().entries()) fill(s.model.state.buffers, e, "buffer/" + e.name);
  s.step = std::stoll(a.get_meta("step"));
  s.opt.step = std::stoll(a.get_meta("optimizer_step"));
  return s;
}

// ------------------------------------------------------------------- run

namespace {

fs::path step_checkpoint(const fs::path& dir, std::int64_t step) {
  return dir / kCheckpointDir / fmt::format("step-{:09d}.ckpt", step);
}

std::optional<fs::path> newest_checkpoint(const fs::path& dir) {
  std::optional<fs::path> best;
  const fs::path cdir = dir / kCheckpointDir;
  if (!fs::exists(cdir)) return best;
  for (const auto& entry : fs::directory_iterator(cdir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("step-") && name.ends_with(".ckpt") && (!best || entry.path() > *best)) best = entry.path();
  }
  return best;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

void write_summary(const fs::path& dir, const TrainConfig& cfg, const RunResult& r) {
  nlohmann::json j;
  j["config_hash"] = fmt::format("{:016x}", config_hash(cfg));
  j["steps"] = cfg.total_steps;
  j["num_evals"] = r.stats.num_evals;
  j["final_error"] = r.final_error;
  j["min_error"] = r.stats.min_error;
  j["median_last20_error"] = r.stats.median_last;
  j["median_fallback"] = r.stats.fallback;
  write_text(dir / kSummaryFile, j.dump(2) + "\n");
}

}  // namespace

RunResult run(const TrainConfig& cfg, const Dataset& dataset, const LabeledSplit& split, const RunOptions& opts) {
  validate(cfg);
  const fs::path& dir = opts.out_dir;
  fs::create_directories(dir / kCheckpointDir);

  const ArchSpec spec = arch_from_config(cfg, dataset.train.height, dataset.train.channels);
  const auto policy = AugPolicy::standard(dataset.channel_mean, cfg.ops_per_image, cfg.cutout_fraction);
  const auto seed = static_cast<std::uint64_t>(cfg.seed);

  TrainState state;
  std::optional<MetricLog> log;
  const auto resume_from = opts.resume ? newest_checkpoint(dir) : std::nullopt;
  if (resume_from) {
    state = from_archive(load_archive(*resume_from), cfg, spec);
    log.emplace(MetricLog::resume(dir / kMetricsFile, state.step - 1));
  } else {
    // Snapshot of everything that defines the run, written before step 0.
    save_config(cfg, dir / kConfigFile);
    write_text(dir / kPolicyFile, policy.to_text());
    save_split(split, dir / kSplitFile);
    state = init_train_state(cfg, spec);
    log.emplace(dir / kMetricsFile);
  }

  BatchStream stream(split.labeled_indices, unlabeled_pool(dataset, split, cfg.unlabeled_includes_labeled),
                     cfg.batch_size_labeled, cfg.mu, derive_seed(seed, "data"));
  const std::int64_t eval_interval = cfg.resolved_eval_interval();
  const std::int64_t stop = opts.stop_after >= 0 ? std::min(opts.stop_after, cfg.total_steps) : cfg.total_steps;
  const auto t0 = std::chrono::steady_clock::now();

  while (state.step < stop) {
    const std::int64_t k = state.step;
    const auto batch = assemble_batch(dataset, stream.at(k));
    const auto inputs = augment_batch(batch, policy, derive_seed(seed, "augment"));
    const double lr = lr_at({cfg.eta0, cfg.gamma, cfg.total_steps}, k);
    LossReport report;
    try {
      report = train_step(state, inputs, cfg);
    } catch (const TrainingError&) {
      save_archive(to_archive(state, cfg), dir / kCheckpointDir / "halted.ckpt");
      throw;
    }
    const bool do_eval = (k + 1) % eval_interval == 0;
    if (do_eval || k == 0 || (k + 1) % cfg.log_interval == 0) {
      MetricRow row{k, report.l_l, report.l_p, report.l_s, report.mask_rate, lr, 0.0, std::nullopt, false};
      if (cfg.log_wall_time)
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (do_eval) {
        row.eval_error = evaluate(state, dataset.test, cfg.eval_batch_size);
        row.ema = true;
      }
      log->append(row);
      if (opts.on_row) opts.on_row(row);
    }
    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 && state.step < cfg.total_steps)
      save_archive(to_archive(state, cfg), step_checkpoint(dir, state.step));
  }

  RunResult result;
  result.out_dir = dir;
  result.eval_errors = eval_errors(log->rows());
  if (state.step < cfg.total_steps) {
    save_archive(to_archive(state, cfg), step_checkpoint(dir, state.step));
    return result;
  }
  result.completed = true;
  save_archive(to_archive(state, cfg), dir / kCheckpointDir / kFinalCheckpoint);
  result.final_error = evaluate(state, dataset.test, cfg.eval_batch_size);
  if (!result.eval_errors.empty()) {
    result.stats = run_stats(result.eval_errors);
    write_summary(dir, cfg, result);
  }
  return result;
}

std::vector<std::string> check_manifest(const fs::path& dir) {
  std::vector<std::string> missing;
  for (const fs::path& rel : {fs::path(kConfigFile), fs::path(kPolicyFile), fs::path(kSplitFile),
                             fs::path(kMetricsFile), fs::path(kCheckpointDir) / kFinalCheckpoint})
    if (!fs::exists(dir / rel)) missing.push_back(rel.string());
  return missing;
}

}  // namespace dm
