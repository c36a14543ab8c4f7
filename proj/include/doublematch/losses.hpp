#pragma once

#include <span>
#include <vector>

#include "doublematch/config.hpp"
#include "doublematch/model.hpp"
#include "doublematch/tensor.hpp"

namespace dm {

// A teacher-side value. It is only readable; losses never produce a
// gradient for it, so nothing upstream of it can receive one.
template <typename T>
class StopGrad {
 public:
  explicit StopGrad(Mat<T> value) : value_(std::move(value)) {}
  const Mat<T>& value() const { return value_; }

 private:
  Mat<T> value_;
};

template <typename T>
StopGrad<T> stopgrad(Mat<T> value) {
  return StopGrad<T>(std::move(value));
}

// Per-step scalars. total == l_l + l_p + w_s * l_s + l_wd.
struct LossReport {
  double l_l = 0.0;
  double l_p = 0.0;
  double l_s = 0.0;
  double l_wd = 0.0;
  double total = 0.0;
  double mask_rate = 0.0;
  int degenerate = 0;  // feature rows whose norm was clamped in the cosine loss
};

template <typename T>
struct LogitLoss {
  T value{};
  Mat<T> grad;  // d value / d logits
};

template <typename T>
struct PseudoLabelLoss {
  T value{};
  double mask_rate = 0.0;
  int num_masked_in = 0;  // rows with max(w_i) > tau
  std::vector<int> pseudo_labels;
  std::vector<bool> mask;
  Mat<T> grad_strong;
};

// Loss on student features v through projection head h against teacher
// features z. Gradients are returned for v and for h's parameters only.
template <typename T>
struct FeatureLoss {
  T value{};
  Mat<T> grad_features;
  LinearGrads<T> head;  // dweight/dbias of h; head.dx is unused
  int degenerate = 0;
};

template <typename T>
Mat<T> one_hot(std::span<const int> labels, int num_classes);

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits);
template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& logits);

// Mean cross-entropy of one-hot labels against softmax(logits).
template <typename T>
LogitLoss<T> supervised_loss(const Mat<T>& labels, const Mat<T>& logits);

// Confidence-masked cross-entropy with hard pseudo-labels taken from the
// teacher (weak) logits. Mask uses strict max(w_i) > tau; argmax ties go to
// the lowest class index.
template <typename T>
PseudoLabelLoss<T> pseudo_label_loss(const StopGrad<T>& weak_logits, const Mat<T>& strong_logits, double tau);

inline constexpr double kCosineNormFloor = 1e-12;

// -(1/m) sum cos(h(v_i), z_i)
template <typename T>
FeatureLoss<T> cosine_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z);

// (1/(m d)) sum |h(v_i) - z_i|^2
template <typename T>
FeatureLoss<T> mse_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z);

// (1/m) sum H(softmax(h(v_i)), softmax(z_i / lambda)), H(x, y) = -sum x log y.
// The student distribution is the weighting argument, so the gradient flows
// through it and not through the log term.
template <typename T>
FeatureLoss<T> softmax_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z, double lambda);

template <typename T>
FeatureLoss<T> ssl_loss(SslLossKind kind, const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z,
                        double lambda);

// w_d / 2 * |theta|^2 over every trainable parameter.
template <typename T>
double weight_decay_term(std::span<const T> params, double w_d);
template <typename T>
void add_weight_decay_grad(std::span<const T> params, std::span<T> grads, double w_d);

inline double total_loss(double l_l, double l_p, double l_s, double w_s, double l_wd) {
  return l_l + l_p + w_s * l_s + l_wd;
}

}  // namespace dm
