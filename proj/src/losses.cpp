#include "doublematch/losses.hpp"

#include <fmt/format.h>

#include <cmath>

#include "doublematch/error.hpp"

namespace dm {

template <typename T>
Mat<T> one_hot(std::span<const int> labels, int num_classes) {
  Mat<T> y = Mat<T>::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ShapeError(fmt::format("label {} outside [0,{})", labels[i], num_classes));
    y(static_cast<Eigen::Index>(i), labels[i]) = T(1);
  }
  return y;
}

template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    const T lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  return log_softmax_rows(logits).array().exp().matrix();
}

namespace {

template <typename T>
void require_finite(const Mat<T>& m, const char* what) {
  if (!m.allFinite()) throw TrainingError(fmt::format("{} contains non-finite values", what));
}

template <typename T>
void require_same_shape(const Mat<T>& a, const Mat<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(fmt::format("{}: shape {}x{} vs {}x{}", what, a.rows(), a.cols(), b.rows(), b.cols()));
}

int argmax_lowest(const auto& row) {
  int best = 0;
  for (int k = 1; k < row.size(); ++k)
    if (row(k) > row(best)) best = k;
  return best;
}

template <typename T>
FeatureLoss<T> finish_feature_loss(const Mat<T>& v, const LinearMap<T>& h, const Mat<T>& grad_projected,
                                   T value, int degenerate) {
  FeatureLoss<T> out;
  out.value = value;
  out.degenerate = degenerate;
  out.head = linear_backward(h, v, grad_projected);
  out.grad_features = std::move(out.head.dx);
  out.head.dx = Mat<T>();
  return out;
}

}  // namespace

template <typename T>
LogitLoss<T> supervised_loss(const Mat<T>& labels, const Mat<T>& logits) {
  require_same_shape(labels, logits, "supervised_loss");
  require_finite(logits, "logits");
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index k = 0; k < labels.cols(); ++k) {
      const T v = labels(i, k);
      if (v == T(1)) ++ones;
      else if (v != T(0)) ones = -1000;
    }
    if (ones != 1) throw ShapeError(fmt::format("label row {} is not one-hot", i));
  }
  const auto n = static_cast<T>(logits.rows());
  const Mat<T> logp = log_softmax_rows(logits);
  LogitLoss<T> out;
  out.value = -(labels.array() * logp.array()).sum() / n;
  out.grad = (logp.array().exp() - labels.array()).matrix() / n;
  return out;
}

template <typename T>
PseudoLabelLoss<T> pseudo_label_loss(const StopGrad<T>& weak_logits, const Mat<T>& strong_logits, double tau) {
  const Mat<T>& weak = weak_logits.value();
  require_same_shape(weak, strong_logits, "pseudo_label_loss");
  if (!(tau >= 0.0)) throw ConfigError(fmt::format("tau must be >= 0, got {}", tau));
  require_finite(strong_logits, "strong logits");
  const Eigen::Index m = weak.rows();
  const Mat<T> w = softmax_rows(weak);
  const Mat<T> logq = log_softmax_rows(strong_logits);

  PseudoLabelLoss<T> out;
  out.grad_strong = Mat<T>::Zero(m, strong_logits.cols());
  out.pseudo_labels.resize(static_cast<std::size_t>(m));
  out.mask.resize(static_cast<std::size_t>(m));
  T sum = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int label = argmax_lowest(w.row(i));
    const bool keep = static_cast<double>(w(i, label)) > tau;
    out.pseudo_labels[static_cast<std::size_t>(i)] = label;
    out.mask[static_cast<std::size_t>(i)] = keep;
    if (!keep) continue;
    ++out.num_masked_in;
    sum -= logq(i, label);
    out.grad_strong.row(i) = logq.row(i).array().exp();
    out.grad_strong(i, label) -= T(1);
  }
  if (m > 0) {
    out.value = sum / static_cast<T>(m);
    out.grad_strong /= static_cast<T>(m);
    out.mask_rate = static_cast<double>(out.num_masked_in) / static_cast<double>(m);
  }
  return out;
}

template <typename T>
FeatureLoss<T> cosine_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z) {
  const Mat<T> a = h.apply(v);
  const Mat<T>& b = z.value();
  require_same_shape(a, b, "cosine_ssl_loss");
  const Eigen::Index m = a.rows();
  const T eps = static_cast<T>(kCosineNormFloor);
  Mat<T> grad(m, a.cols());
  T sum = 0;
  int degenerate = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const T raw_na = a.row(i).norm();
    const T raw_nb = b.row(i).norm();
    const bool clamp_a = raw_na < eps;
    if (clamp_a || raw_nb < eps) ++degenerate;
    const T na = std::max(raw_na, eps);
    const T nb = std::max(raw_nb, eps);
    const T cos = a.row(i).dot(b.row(i)) / (na * nb);
    sum += cos;
    // d cos / d a; a clamped norm is a constant.
    grad.row(i) = b.row(i) / (na * nb);
    if (!clamp_a) grad.row(i) -= cos * a.row(i) / (na * na);
  }
  const T scale = m > 0 ? T(-1) / static_cast<T>(m) : T(0);
  grad *= scale;
  return finish_feature_loss(v, h, grad, scale * sum, degenerate);
}

template <typename T>
FeatureLoss<T> mse_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z) {
  const Mat<T> a = h.apply(v);
  require_same_shape(a, z.value(), "mse_ssl_loss");
  const Mat<T> diff = a - z.value();
  const T denom = static_cast<T>(a.rows() * a.cols());
  const T value = denom > 0 ? diff.squaredNorm() / denom : T(0);
  const Mat<T> grad = denom > 0 ? Mat<T>(diff * (T(2) / denom)) : Mat<T>(diff * T(0));
  return finish_feature_loss(v, h, grad, value, 0);
}

template <typename T>
FeatureLoss<T> softmax_ssl_loss(const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError(fmt::format("softmax temperature must be > 0, got {}", lambda));
  const Mat<T> a = h.apply(v);
  require_same_shape(a, z.value(), "softmax_ssl_loss");
  const Eigen::Index m = a.rows();
  const Mat<T> s = softmax_rows(a);
  const Mat<T> logt = log_softmax_rows(Mat<T>(z.value() / static_cast<T>(lambda)));
  Mat<T> grad(m, a.cols());
  T sum = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const T row_loss = -(s.row(i).array() * logt.row(i).array()).sum();
    sum += row_loss;
    // d/da_j [-sum_k s_k c_k] = -s_j (c_j - sum_k s_k c_k) = -s_j (c_j + row_loss)
    grad.row(i) = -(s.row(i).array() * (logt.row(i).array() + row_loss));
  }
  const T inv = m > 0 ? T(1) / static_cast<T>(m) : T(0);
  grad *= inv;
  return finish_feature_loss(v, h, grad, sum * inv, 0);
}

template <typename T>
FeatureLoss<T> ssl_loss(SslLossKind kind, const Mat<T>& v, const LinearMap<T>& h, const StopGrad<T>& z,
                        double lambda) {
  switch (kind) {
    case SslLossKind::cosine: return cosine_ssl_loss(v, h, z);
    case SslLossKind::mse: return mse_ssl_loss(v, h, z);
    case SslLossKind::softmax_ce: return softmax_ssl_loss(v, h, z, lambda);
  }
  throw ConfigError("unknown ssl loss kind");
}

template <typename T>
double weight_decay_term(std::span<const T> params, double w_d) {
  double sq = 0.0;
  for (T p : params) sq += static_cast<double>(p) * static_cast<double>(p);
  return 0.5 * w_d * sq;
}

template <typename T>
void add_weight_decay_grad(std::span<const T> params, std::span<T> grads, double w_d) {
  if (params.size() != grads.size()) throw ShapeError("weight decay: params/grads size mismatch");
  const T wd = static_cast<T>(w_d);
  for (std::size_t i = 0; i < params.size(); ++i) grads[i] += wd * params[i];
}

#define DM_INSTANTIATE_LOSSES(T)                                                                              \
  template Mat<T> one_hot<T>(std::span<const int>, int);                                                     \
  template Mat<T> softmax_rows(const Mat<T>&);                                                                \
  template Mat<T> log_softmax_rows(const Mat<T>&);                                                            \
  template LogitLoss<T> supervised_loss(const Mat<T>&, const Mat<T>&);                                        \
  template PseudoLabelLoss<T> pseudo_label_loss(const StopGrad<T>&, const Mat<T>&, double);                   \
  template FeatureLoss<T> cosine_ssl_loss(const Mat<T>&, const LinearMap<T>&, const StopGrad<T>&);            \
  template FeatureLoss<T> mse_ssl_loss(const Mat<T>&, const LinearMap<T>&, const StopGrad<T>&);               \
  template FeatureLoss<T> softmax_ssl_loss(const Mat<T>&, const LinearMap<T>&, const StopGrad<T>&, double);   \
  template FeatureLoss<T> ssl_loss(SslLossKind, const Mat<T>&, const LinearMap<T>&, const StopGrad<T>&,       \
                                   double);                                                                   \
  template double weight_decay_term(std::span<const T>, double);                                              \
  template void add_weight_decay_grad(std::span<const T>, std::span<T>, double);

DM_INSTANTIATE_LOSSES(float)
DM_INSTANTIATE_LOSSES(double)

}  // namespace dm
