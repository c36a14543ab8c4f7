#pragma once

#include <memory>
#include <span>
#include <vector>

#include "doublematch/params.hpp"
#include "doublematch/rng.hpp"
#include "doublematch/tensor.hpp"

namespace dm {

struct LayerCache {
  virtual ~LayerCache() = default;
};

// Per-pass storage for intermediates needed by backward. One tape per
// forward pass, so several passes through the same network can be
// differentiated independently.
class Tape {
 public:
  void reserve(int layers) { slots_.resize(static_cast<std::size_t>(layers)); }
  template <typename C>
  C& emplace(int id) {
    if (static_cast<std::size_t>(id) >= slots_.size()) slots_.resize(static_cast<std::size_t>(id) + 1);
    slots_[static_cast<std::size_t>(id)] = std::make_unique<C>();
    return static_cast<C&>(*slots_[static_cast<std::size_t>(id)]);
  }
  template <typename C>
  const C& get(int id) const {
    return static_cast<const C&>(*slots_.at(static_cast<std::size_t>(id)));
  }

 private:
  std::vector<std::unique_ptr<LayerCache>> slots_;
};

template <typename T>
struct ForwardContext {
  std::span<const T> params;
  std::span<T> buffers;
  bool training = false;  // batch statistics + running-stat updates
  Tape* tape = nullptr;   // null when no backward pass will follow
};

template <typename T>
struct BackwardContext {
  std::span<const T> params;
  std::span<T> grads;  // accumulated into
  const Tape& tape;
};

// Registers parameters, buffers and layer ids while a network is assembled.
struct LayerRegistry {
  ParamLayout params;
  ParamLayout buffers;
  int next_id = 0;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const = 0;
  virtual void init(std::span<T> params, std::span<T> buffers, Rng& rng) const = 0;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(LayerRegistry& reg, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride, int padding);
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T> params, std::span<T> buffers, Rng& rng) const override;

 private:
  int id_;
  int cin_, cout_, k_, stride_, pad_;
  ParamSlot weight_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(LayerRegistry& reg, const std::string& name, int channels, double momentum, double eps = 1e-3);
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T> params, std::span<T> buffers, Rng& rng) const override;

 private:
  int id_;
  int channels_;
  double momentum_, eps_;
  ParamSlot gamma_, beta_;
  ParamSlot running_mean_, running_var_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(LayerRegistry& reg, double slope = 0.1);
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T>, std::span<T>, Rng&) const override {}

 private:
  int id_;
  T slope_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  explicit GlobalAvgPool(LayerRegistry& reg);
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T>, std::span<T>, Rng&) const override {}

 private:
  int id_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T> params, std::span<T> buffers, Rng& rng) const override;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Pre-activation wide-residual block: BN-act-conv3x3-BN-act-conv3x3 with an
// identity shortcut, or a 1x1 projection of the activated input when the
// shape changes.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(LayerRegistry& reg, const std::string& name, int in_channels, int out_channels, int stride,
                double bn_momentum);
  Tensor<T> forward(const Tensor<T>& x, ForwardContext<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const override;
  void init(std::span<T> params, std::span<T> buffers, Rng& rng) const override;

 private:
  BatchNorm2d<T> bn1_;
  LeakyRelu<T> act1_;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn2_;
  LeakyRelu<T> act2_;
  Conv2d<T> conv2_;
  std::unique_ptr<Conv2d<T>> shortcut_;
};

}  // namespace dm
