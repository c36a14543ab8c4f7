#include "doublematch/model.hpp"

#include <fmt/format.h>

#include <cmath>

#include "doublematch/config.hpp"
#include "doublematch/error.hpp"
#include "doublematch/rng.hpp"

namespace dm {

int arch_feature_dim(const std::string& arch, int requested) {
  if (arch == "wrn-28-2") return 128;
  if (arch == "wrn-28-8") return 512;
  if (arch == "wrn-37-2") return 256;
  if (arch == "desk-cnn") return requested > 0 ? requested : 64;
  throw ConfigError(fmt::format("unknown architecture '{}'", arch));
}

ArchSpec arch_from_config(const TrainConfig& cfg, int image_size, int in_channels) {
  ArchSpec spec;
  spec.name = cfg.arch;
  spec.num_classes = cfg.num_classes;
  spec.feature_dim = arch_feature_dim(cfg.arch, cfg.feature_dim);
  spec.in_channels = in_channels;
  spec.image_size = image_size;
  spec.projection_bias = cfg.projection_bias;
  spec.bn_momentum = cfg.bn_momentum;
  return spec;
}

template <typename T>
Mat<T> LinearMap<T>::apply(const Mat<T>& x) const {
  if (x.cols() != weight.cols())
    throw ShapeError(fmt::format("linear map expects width {}, got {}", weight.cols(), x.cols()));
  Mat<T> y = x * weight.transpose();
  if (bias.size() > 0) y.rowwise() += bias.transpose();
  return y;
}

template <typename T>
LinearMap<T> LinearMap<T>::identity(int dim, bool with_bias) {
  LinearMap<T> m;
  m.weight = Mat<T>::Identity(dim, dim);
  if (with_bias) m.bias = Vec<T>::Zero(dim);
  return m;
}

template <typename T>
LinearGrads<T> linear_backward(const LinearMap<T>& map, const Mat<T>& x, const Mat<T>& dy) {
  LinearGrads<T> g;
  g.dx = dy * map.weight;
  g.dweight = dy.transpose() * x;
  if (map.bias.size() > 0) g.dbias = dy.colwise().sum().transpose();
  return g;
}

namespace {

template <typename T>
void add_conv_bn_act(Sequential<T>& seq, LayerRegistry& reg, const std::string& name, int cin, int cout, int stride,
                     double bn_momentum) {
  seq.add(std::make_unique<Conv2d<T>>(reg, name + ".conv", cin, cout, 3, stride, 1));
  seq.add(std::make_unique<BatchNorm2d<T>>(reg, name + ".bn", cout, bn_momentum));
  seq.add(std::make_unique<LeakyRelu<T>>(reg));
}

template <typename T>
void build_wrn(Sequential<T>& seq, LayerRegistry& reg, const ArchSpec& spec, int widen,
               const std::vector<int>& group_strides) {
  constexpr int kBlocksPerGroup = 4;
  seq.add(std::make_unique<Conv2d<T>>(reg, "stem.conv", spec.in_channels, 16, 3, 1, 1));
  int cin = 16;
  int width = 16 * widen;
  for (std::size_t g = 0; g < group_strides.size(); ++g, width *= 2) {
    for (int b = 0; b < kBlocksPerGroup; ++b) {
      const int stride = b == 0 ? group_strides[g] : 1;
      seq.add(std::make_unique<ResidualBlock<T>>(reg, fmt::format("group{}.block{}", g, b), cin, width, stride,
                                                 spec.bn_momentum));
      cin = width;
    }
  }
  seq.add(std::make_unique<BatchNorm2d<T>>(reg, "final.bn", cin, spec.bn_momentum));
  seq.add(std::make_unique<LeakyRelu<T>>(reg));
  seq.add(std::make_unique<GlobalAvgPool<T>>(reg));
}

}  // namespace

template <typename T>
Network<T>::Network(ArchSpec spec) : spec_(std::move(spec)) {
  spec_.feature_dim = arch_feature_dim(spec_.name, spec_.feature_dim);
  if (spec_.num_classes < 1) throw ShapeError("num_classes must be >= 1");
  if (spec_.name == "desk-cnn") {
    // Four strided conv-BN-act stages then global average pooling.
    const double m = spec_.bn_momentum;
    add_conv_bn_act(backbone_, reg_, "conv1", spec_.in_channels, 8, 2, m);
    add_conv_bn_act(backbone_, reg_, "conv2", 8, 16, 2, m);
    add_conv_bn_act(backbone_, reg_, "conv3", 16, 32, 2, m);
    add_conv_bn_act(backbone_, reg_, "conv4", 32, spec_.feature_dim, 2, m);
    backbone_.add(std::make_unique<GlobalAvgPool<T>>(reg_));
  } else if (spec_.name == "wrn-28-2") {
    build_wrn(backbone_, reg_, spec_, 2, {1, 2, 2});
  } else if (spec_.name == "wrn-28-8") {
    build_wrn(backbone_, reg_, spec_, 8, {1, 2, 2});
  } else if (spec_.name == "wrn-37-2") {
    build_wrn(backbone_, reg_, spec_, 2, {1, 2, 2, 2});
  }
  const int d = spec_.feature_dim;
  const int c = spec_.num_classes;
  g_weight_ = reg_.params.add("head_g.weight", ParamGroup::prediction_head, {c, d});
  g_bias_ = reg_.params.add("head_g.bias", ParamGroup::prediction_head, {c});
  h_weight_ = reg_.params.add("head_h.weight", ParamGroup::projection_head, {d, d});
  if (spec_.projection_bias) h_bias_ = reg_.params.add("head_h.bias", ParamGroup::projection_head, {d});
  reg_.params.check_partition();
  reg_.buffers.check_partition();
}

template <typename T>
ModelState<T> Network<T>::init_state(std::uint64_t seed) const {
  ModelState<T> s;
  s.params.assign(reg_.params.total(), T(0));
  s.buffers.assign(reg_.buffers.total(), T(0));
  Rng rng = make_rng(seed, "init");
  backbone_.init(s.params, s.buffers, rng);
  // Fan-in scaled uniform weights, zero biases, for both heads.
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.feature_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < g_weight_.size; ++i) s.params[g_weight_.offset + i] = static_cast<T>(dist(rng));
  for (std::size_t i = 0; i < h_weight_.size; ++i) s.params[h_weight_.offset + i] = static_cast<T>(dist(rng));
  return s;
}

template <typename T>
void Network<T>::check_input(const Tensor<T>& x) const {
  if (x.c != spec_.in_channels || x.h != spec_.image_size || x.w != spec_.image_size)
    throw ShapeError(fmt::format("{} expects {}x{}x{} images, got {}x{}x{}", spec_.name, spec_.in_channels,
                                 spec_.image_size, spec_.image_size, x.c, x.h, x.w));
}

template <typename T>
Mat<T> Network<T>::forward_features(std::span<const T> params, std::span<T> buffers, const Tensor<T>& x,
                                    bool training, Tape* tape) const {
  check_input(x);
  if (tape) tape->reserve(reg_.next_id);
  ForwardContext<T> ctx{params, buffers, training, tape};
  Tensor<T> pooled = backbone_.forward(x, ctx);
  Mat<T> f(pooled.n, pooled.c);
  std::copy(pooled.data.begin(), pooled.data.end(), f.data());
  return f;
}

template <typename T>
void Network<T>::backward_features(std::span<const T> params, std::span<T> grads, const Tape& tape,
                                   const Mat<T>& dfeatures) const {
  Tensor<T> dy(static_cast<int>(dfeatures.rows()), static_cast<int>(dfeatures.cols()), 1, 1);
  std::copy(dfeatures.data(), dfeatures.data() + dfeatures.size(), dy.data.begin());
  BackwardContext<T> ctx{params, grads, tape};
  backbone_.backward(dy, ctx, false);
}

template <typename T>
LinearMap<T> Network<T>::prediction_head(std::span<const T> params) const {
  LinearMap<T> m;
  m.weight = Eigen::Map<const Mat<T>>(params.data() + g_weight_.offset, spec_.num_classes, spec_.feature_dim);
  m.bias = Eigen::Map<const Vec<T>>(params.data() + g_bias_.offset, spec_.num_classes);
  return m;
}

template <typename T>
LinearMap<T> Network<T>::projection_head(std::span<const T> params) const {
  LinearMap<T> m;
  m.weight = Eigen::Map<const Mat<T>>(params.data() + h_weight_.offset, spec_.feature_dim, spec_.feature_dim);
  if (spec_.projection_bias) m.bias = Eigen::Map<const Vec<T>>(params.data() + h_bias_.offset, spec_.feature_dim);
  return m;
}

namespace {

template <typename T>
void write_linear(std::span<T> dst, ParamSlot w, ParamSlot b, bool has_bias, const Mat<T>& weight,
                  const Vec<T>& bias, bool accumulate) {
  if (static_cast<std::size_t>(weight.size()) != w.size) throw ShapeError("linear weight size mismatch");
  for (std::size_t i = 0; i < w.size; ++i)
    dst[w.offset + i] = (accumulate ? dst[w.offset + i] : T(0)) + weight.data()[i];
  if (!has_bias) return;
  if (bias.size() == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < b.size; ++i) dst[b.offset + i] = T(0);
    return;
  }
  if (static_cast<std::size_t>(bias.size()) != b.size) throw ShapeError("linear bias size mismatch");
  for (std::size_t i = 0; i < b.size; ++i) dst[b.offset + i] = (accumulate ? dst[b.offset + i] : T(0)) + bias[i];
}

}  // namespace

template <typename T>
void Network<T>::set_prediction_head(std::span<T> params, const LinearMap<T>& map) const {
  write_linear(params, g_weight_, g_bias_, true, map.weight, map.bias, false);
}

template <typename T>
void Network<T>::set_projection_head(std::span<T> params, const LinearMap<T>& map) const {
  write_linear(params, h_weight_, h_bias_, spec_.projection_bias, map.weight, map.bias, false);
}

template <typename T>
void Network<T>::accumulate_prediction_grad(std::span<T> grads, const LinearGrads<T>& g) const {
  write_linear(grads, g_weight_, g_bias_, true, g.dweight, g.dbias, true);
}

template <typename T>
void Network<T>::accumulate_projection_grad(std::span<T> grads, const LinearGrads<T>& g) const {
  write_linear(grads, h_weight_, h_bias_, spec_.projection_bias, g.dweight, g.dbias, true);
}

template <typename T>
Mat<T> ModelBundle<T>::forward_features(const Tensor<T>& batch, bool train_mode) {
  return net->forward_features(state.params, state.buffers, batch, train_mode, nullptr);
}

template <typename T>
Mat<T> ModelBundle<T>::forward_logits(const Mat<T>& features) const {
  return net->prediction_head(state.params).apply(features);
}

template <typename T>
Mat<T> ModelBundle<T>::project(const Mat<T>& features) const {
  return net->projection_head(state.params).apply(features);
}

template <typename T>
ModelBundle<T> build_model(const ArchSpec& spec, std::uint64_t seed) {
  ModelBundle<T> m;
  m.net = std::make_shared<const Network<T>>(spec);
  m.state = m.net->init_state(seed);
  return m;
}

template struct LinearMap<float>;
template struct LinearMap<double>;
template LinearGrads<float> linear_backward(const LinearMap<float>&, const Mat<float>&, const Mat<float>&);
template LinearGrads<double> linear_backward(const LinearMap<double>&, const Mat<double>&, const Mat<double>&);
template class Network<float>;
template class Network<double>;
template struct ModelBundle<float>;
template struct ModelBundle<double>;
template ModelBundle<float> build_model(const ArchSpec&, std::uint64_t);
template ModelBundle<double> build_model(const ArchSpec&, std::uint64_t);

}  // namespace dm
