#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "doublematch/layers.hpp"
#include "doublematch/params.hpp"
#include "doublematch/tensor.hpp"

namespace dm {

struct TrainConfig;

struct ArchSpec {
  std::string name = "desk-cnn";  // wrn-28-2 | wrn-28-8 | wrn-37-2 | desk-cnn
  int num_classes = 10;
  int feature_dim = 64;  // fixed by the WRN presets, free for desk-cnn
  int in_channels = 3;
  int image_size = 32;
  bool projection_bias = true;
  double bn_momentum = 0.001;
};

// Feature width the architecture produces; `requested` is honoured only for desk-cnn.
int arch_feature_dim(const std::string& arch, int requested);
ArchSpec arch_from_config(const TrainConfig& cfg, int image_size = 32, int in_channels = 3);

// Affine map y = x W^T + b applied row-wise. An empty bias means none.
template <typename T>
struct LinearMap {
  Mat<T> weight;  // out x in
  Vec<T> bias;

  Mat<T> apply(const Mat<T>& x) const;
  static LinearMap identity(int dim, bool with_bias = true);
};

template <typename T>
struct LinearGrads {
  Mat<T> dx;
  Mat<T> dweight;
  Vec<T> dbias;
};

template <typename T>
LinearGrads<T> linear_backward(const LinearMap<T>& map, const Mat<T>& x, const Mat<T>& dy);

// Everything that changes during training: trainable parameters and the
// normalization running statistics (which are not parameters).
template <typename T>
struct ModelState {
  std::vector<T> params;
  std::vector<T> buffers;
};

// Backbone f, prediction head g and projection head h over one flat
// parameter vector partitioned as (theta_f, theta_g, theta_h).
template <typename T>
class Network {
 public:
  explicit Network(ArchSpec spec);

  const ArchSpec& spec() const { return spec_; }
  int feature_dim() const { return spec_.feature_dim; }
  int num_classes() const { return spec_.num_classes; }
  const ParamLayout& param_layout() const { return reg_.params; }
  const ParamLayout& buffer_layout() const { return reg_.buffers; }
  int num_layers() const { return reg_.next_id; }

  ModelState<T> init_state(std::uint64_t seed) const;

  // Penultimate activations, n x d. In training mode batch statistics are
  // used and the running statistics in `buffers` are updated.
  Mat<T> forward_features(std::span<const T> params, std::span<T> buffers, const Tensor<T>& x, bool training,
                          Tape* tape) const;
  void backward_features(std::span<const T> params, std::span<T> grads, const Tape& tape,
                         const Mat<T>& dfeatures) const;

  LinearMap<T> prediction_head(std::span<const T> params) const;
  LinearMap<T> projection_head(std::span<const T> params) const;
  void set_prediction_head(std::span<T> params, const LinearMap<T>& map) const;
  void set_projection_head(std::span<T> params, const LinearMap<T>& map) const;
  void accumulate_prediction_grad(std::span<T> grads, const LinearGrads<T>& g) const;
  void accumulate_projection_grad(std::span<T> grads, const LinearGrads<T>& g) const;

 private:
  void check_input(const Tensor<T>& x) const;

  ArchSpec spec_;
  LayerRegistry reg_;
  Sequential<T> backbone_;
  ParamSlot g_weight_, g_bias_, h_weight_, h_bias_;
};

template <typename T>
struct ModelBundle {
  std::shared_ptr<const Network<T>> net;
  ModelState<T> state;

  int feature_dim() const { return net->feature_dim(); }
  int num_classes() const { return net->num_classes(); }
  Mat<T> forward_features(const Tensor<T>& batch, bool train_mode);
  Mat<T> forward_logits(const Mat<T>& features) const;
  Mat<T> project(const Mat<T>& features) const;
};

template <typename T>
ModelBundle<T> build_model(const ArchSpec& spec, std::uint64_t seed);

// Same architecture at another precision, parameters converted.
template <typename To, typename From>
ModelBundle<To> convert_model(const ModelBundle<From>& m) {
  ModelBundle<To> out;
  out.net = std::make_shared<const Network<To>>(m.net->spec());
  out.state.params = vector_cast<To>(m.state.params);
  out.state.buffers = vector_cast<To>(m.state.buffers);
  return out;
}

}  // namespace dm
