#pragma once

// Independent reference computations shared by the trainer unit tests and
// the acceptance binary.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "doublematch/config.hpp"
#include "doublematch/trainer.hpp"
#include "test_util.hpp"

namespace dm::testing {

// Small desk configuration that keeps one step in the millisecond range.
inline TrainConfig tiny_config() {
  TrainConfig cfg = preset("desk-synthetic");
  cfg.batch_size_labeled = 4;
  cfg.mu = 2;
  cfg.feature_dim = 16;
  cfg.total_steps = 100;
  return cfg;
}

// Random images and labels pushed through the real augmentation pipeline.
inline StepInputs<float> random_inputs(const TrainConfig& cfg, std::mt19937_64& rng, std::int64_t step = 0) {
  SslBatch b;
  b.step = step;
  std::uniform_int_distribution<int> label(0, cfg.num_classes - 1);
  for (int i = 0; i < cfg.batch_size_labeled; ++i) {
    b.labeled.push_back(random_image(32, 32, 3, rng));
    b.labels.push_back(label(rng));
  }
  for (int i = 0; i < cfg.unlabeled_batch_size(); ++i) b.unlabeled.push_back(random_image(32, 32, 3, rng));
  const auto policy = AugPolicy::standard({0.5f, 0.5f, 0.5f}, cfg.ops_per_image, cfg.cutout_fraction);
  return augment_batch(b, policy, rng());
}

// Probability-space cross-entropy, no log-sum-exp.
template <typename T>
double naive_ce(const Mat<T>& logits, int row, int target) {
  double denom = 0.0;
  for (Eigen::Index k = 0; k < logits.cols(); ++k) denom += std::exp(static_cast<double>(logits(row, k)));
  return -std::log(std::exp(static_cast<double>(logits(row, target))) / denom);
}

struct ReferenceStep {
  double total = 0.0;
  std::vector<float> grads;
  std::vector<float> buffers;
};

// FixMatch objective l_l + l_p + w_d/2 |theta|^2 (all groups, the projection
// head included) and its gradient, written without any self-supervised
// branch. Values come from explicit softmax in double; gradients from the
// per-row closed form (softmax - onehot) pushed back through g and the
// backbone.
inline ReferenceStep reference_fixmatch(const Network<float>& net, const std::vector<float>& params,
                                        std::vector<float> buffers, const StepInputs<float>& in,
                                        const TrainConfig& cfg) {
  ReferenceStep out;
  out.grads.assign(params.size(), 0.0f);
  const auto g = net.prediction_head(params);
  auto softmax_minus = [](const Mat<float>& logits, int row, int target) {
    Eigen::RowVectorXf p = logits.row(row);
    p = (p.array() - p.maxCoeff()).exp();
    p /= p.sum();
    p(target) -= 1.0f;
    return p;
  };

  Tape lt;
  const Mat<float> fl = net.forward_features(params, buffers, in.labeled_weak, true, &lt);
  const Mat<float> pl = g.apply(fl);
  const auto b = static_cast<int>(pl.rows());
  Mat<float> dl(pl.rows(), pl.cols());
  for (int i = 0; i < b; ++i) {
    out.total += naive_ce(pl, i, in.labels[static_cast<std::size_t>(i)]) / b;
    dl.row(i) = softmax_minus(pl, i, in.labels[static_cast<std::size_t>(i)]) / static_cast<float>(b);
  }
  auto lg = linear_backward(g, fl, dl);
  net.accumulate_prediction_grad(out.grads, lg);
  net.backward_features(params, out.grads, lt, lg.dx);

  const Mat<float> w = g.apply(net.forward_features(params, buffers, in.unlabeled_weak, true, nullptr));
  Tape st;
  const Mat<float> v = net.forward_features(params, buffers, in.unlabeled_strong, true, &st);
  const Mat<float> q = g.apply(v);
  const auto m = static_cast<int>(q.rows());
  Mat<float> dq = Mat<float>::Zero(q.rows(), q.cols());
  bool any = false;
  for (int i = 0; i < m; ++i) {
    Eigen::RowVectorXd prob = w.row(i).cast<double>();
    prob = (prob.array() - prob.maxCoeff()).exp();
    prob /= prob.sum();
    int arg = 0;
    for (int k = 1; k < prob.size(); ++k)
      if (prob(k) > prob(arg)) arg = k;
    if (!(prob(arg) > cfg.tau)) continue;
    any = true;
    out.total += naive_ce(q, i, arg) / m;
    dq.row(i) = softmax_minus(q, i, arg) / static_cast<float>(m);
  }
  if (any) {
    auto sg = linear_backward(g, v, dq);
    net.accumulate_prediction_grad(out.grads, sg);
    net.backward_features(params, out.grads, st, sg.dx);
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    sq += static_cast<double>(params[i]) * params[i];
    out.grads[i] += static_cast<float>(cfg.w_d) * params[i];
  }
  out.total += 0.5 * cfg.w_d * sq;
  out.buffers = std::move(buffers);
  return out;
}

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline double relative_error(const std::vector<float>& a, const std::vector<float>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += std::max(static_cast<double>(a[i]) * a[i], static_cast<double>(b[i]) * b[i]);
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

struct GradCheck {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// Central differences of `objective` at `params` for `count` random indices.
// Indices whose derivative is tiny on both sides are compared absolutely.
template <typename T>
std::vector<GradCheck> finite_difference_check(std::vector<T> params, const std::vector<T>& analytic,
                                               const std::function<double(const std::vector<T>&)>& objective,
                                               int count, std::mt19937_64& rng, double step) {
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  std::vector<GradCheck> out;
  for (int c = 0; c < count; ++c) {
    GradCheck r;
    r.index = pick(rng);
    const T keep = params[r.index];
    params[r.index] = keep + static_cast<T>(step);
    const double up = objective(params);
    params[r.index] = keep - static_cast<T>(step);
    const double down = objective(params);
    params[r.index] = keep;
    const double actual_step = (static_cast<double>(keep + static_cast<T>(step)) -
                                static_cast<double>(keep - static_cast<T>(step)));
    r.numeric = (up - down) / actual_step;
    r.analytic = static_cast<double>(analytic[r.index]);
    const double scale = std::max({std::abs(r.numeric), std::abs(r.analytic), 1e-4});
    r.rel_error = std::abs(r.numeric - r.analytic) / scale;
    out.push_back(r);
  }
  return out;
}

}  // namespace dm::testing
