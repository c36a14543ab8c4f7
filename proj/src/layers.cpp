#include "doublematch/layers.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>

#include "doublematch/error.hpp"

namespace dm {
namespace {

template <typename T>
struct ConvCache : LayerCache {
  Mat<T> cols;
  int n = 0, h = 0, w = 0;
};

template <typename T>
struct BnCache : LayerCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  bool training = false;
};

template <typename T>
struct ActCache : LayerCache {
  Tensor<T> y;
};

struct PoolCache : LayerCache {
  int h = 0, w = 0;
};

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(LayerRegistry& reg, const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, int padding)
    : id_(reg.next_id++), cin_(in_channels), cout_(out_channels), k_(kernel), stride_(stride), pad_(padding) {
  weight_ = reg.params.add(name + ".weight", ParamGroup::backbone, {cout_, cin_, k_, k_});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  if (x.c != cin_) throw ShapeError(fmt::format("conv expects {} input channels, got {}", cin_, x.c));
  const int ho = (x.h + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (x.w + 2 * pad_ - k_) / stride_ + 1;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = plane * x.n;
  const int kk = cin_ * k_ * k_;

  Mat<T> cols(kk, static_cast<Eigen::Index>(np));
  T* cd = cols.data();
  for (int ci = 0; ci < cin_; ++ci)
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        T* row = cd + (static_cast<std::size_t>((ci * k_ + ky) * k_ + kx)) * np;
        for (int i = 0; i < x.n; ++i) {
          const T* src = x.ptr(i, ci);
          T* dst = row + i * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* drow = dst + static_cast<std::size_t>(oy) * wo;
            if (iy < 0 || iy >= x.h) {
              std::fill(drow, drow + wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * x.w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              drow[ox] = (ix >= 0 && ix < x.w) ? srow[ix] : T(0);
            }
          }
        }
      }

  Eigen::Map<const Mat<T>> weight(ctx.params.data() + weight_.offset, cout_, kk);
  Mat<T> y = weight * cols;
  Tensor<T> out(x.n, cout_, ho, wo);
  for (int i = 0; i < x.n; ++i)
    for (int co = 0; co < cout_; ++co)
      std::memcpy(out.ptr(i, co), y.data() + co * np + i * plane, plane * sizeof(T));

  if (ctx.tape) {
    auto& cache = ctx.tape->template emplace<ConvCache<T>>(id_);
    cache.cols = std::move(cols);
    cache.n = x.n;
    cache.h = x.h;
    cache.w = x.w;
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  const auto& cache = ctx.tape.template get<ConvCache<T>>(id_);
  const int ho = dy.h, wo = dy.w;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t np = plane * dy.n;
  const int kk = cin_ * k_ * k_;

  Mat<T> dmat(cout_, static_cast<Eigen::Index>(np));
  for (int i = 0; i < dy.n; ++i)
    for (int co = 0; co < cout_; ++co)
      std::memcpy(dmat.data() + co * np + i * plane, dy.ptr(i, co), plane * sizeof(T));

  Eigen::Map<Mat<T>> dweight(ctx.grads.data() + weight_.offset, cout_, kk);
  dweight.noalias() += dmat * cache.cols.transpose();
  if (!need_input_grad) return {};

  Eigen::Map<const Mat<T>> weight(ctx.params.data() + weight_.offset, cout_, kk);
  Mat<T> dcols = weight.transpose() * dmat;
  Tensor<T> dx(cache.n, cin_, cache.h, cache.w);
  const T* cd = dcols.data();
  for (int ci = 0; ci < cin_; ++ci)
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        const T* row = cd + (static_cast<std::size_t>((ci * k_ + ky) * k_ + kx)) * np;
        for (int i = 0; i < cache.n; ++i) {
          T* dst = dx.ptr(i, ci);
          const T* src = row + i * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= cache.h) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < cache.w) dst[static_cast<std::size_t>(iy) * cache.w + ix] += src[oy * wo + ox];
            }
          }
        }
      }
  return dx;
}

template <typename T>
void Conv2d<T>::init(std::span<T> params, std::span<T>, Rng& rng) const {
  // He-normal with fan-out scaling.
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (k_ * k_ * cout_)));
  for (std::size_t i = 0; i < weight_.size; ++i) params[weight_.offset + i] = static_cast<T>(dist(rng));
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(LayerRegistry& reg, const std::string& name, int channels, double momentum,
                            double eps)
    : id_(reg.next_id++), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = reg.params.add(name + ".gamma", ParamGroup::backbone, {channels});
  beta_ = reg.params.add(name + ".beta", ParamGroup::backbone, {channels});
  running_mean_ = reg.buffers.add(name + ".running_mean", ParamGroup::backbone, {channels});
  running_var_ = reg.buffers.add(name + ".running_var", ParamGroup::backbone, {channels});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  if (x.c != channels_) throw ShapeError(fmt::format("batchnorm expects {} channels, got {}", channels_, x.c));
  const std::size_t plane = x.plane();
  const double m = static_cast<double>(plane) * x.n;
  Tensor<T> y(x.n, x.c, x.h, x.w);
  Tensor<T> xhat(x.n, x.c, x.h, x.w);
  std::vector<T> inv_std(static_cast<std::size_t>(channels_));
  const T* gamma = ctx.params.data() + gamma_.offset;
  const T* beta = ctx.params.data() + beta_.offset;
  T* rmean = ctx.buffers.data() + running_mean_.offset;
  T* rvar = ctx.buffers.data() + running_var_.offset;

  for (int ch = 0; ch < channels_; ++ch) {
    double mean = 0.0, var = 0.0;
    if (ctx.training) {
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.ptr(i, ch);
        for (std::size_t j = 0; j < plane; ++j) mean += p[j];
      }
      mean /= m;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.ptr(i, ch);
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mean;
          var += d * d;
        }
      }
      var /= m;
      const double unbiased = m > 1 ? var * m / (m - 1) : var;
      rmean[ch] = static_cast<T>((1.0 - momentum_) * rmean[ch] + momentum_ * mean);
      rvar[ch] = static_cast<T>((1.0 - momentum_) * rvar[ch] + momentum_ * unbiased);
    } else {
      mean = rmean[ch];
      var = rvar[ch];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
    const T mu = static_cast<T>(mean);
    inv_std[static_cast<std::size_t>(ch)] = istd;
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.ptr(i, ch);
      T* xh = xhat.ptr(i, ch);
      T* q = y.ptr(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - mu) * istd;
        q[j] = gamma[ch] * xh[j] + beta[ch];
      }
    }
  }
  if (ctx.tape) {
    auto& cache = ctx.tape->template emplace<BnCache<T>>(id_);
    cache.xhat = std::move(xhat);
    cache.inv_std = std::move(inv_std);
    cache.training = ctx.training;
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  const auto& cache = ctx.tape.template get<BnCache<T>>(id_);
  const std::size_t plane = dy.plane();
  const T m = static_cast<T>(plane * dy.n);
  const T* gamma = ctx.params.data() + gamma_.offset;
  T* dgamma = ctx.grads.data() + gamma_.offset;
  T* dbeta = ctx.grads.data() + beta_.offset;
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(dy.n, dy.c, dy.h, dy.w);
  for (int ch = 0; ch < channels_; ++ch) {
    T dg = 0, db = 0;
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.ptr(i, ch);
      const T* xh = cache.xhat.ptr(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        dg += g[j] * xh[j];
        db += g[j];
      }
    }
    dgamma[ch] += dg;
    dbeta[ch] += db;
    if (!need_input_grad) continue;
    const T scale = gamma[ch] * cache.inv_std[static_cast<std::size_t>(ch)];
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.ptr(i, ch);
      const T* xh = cache.xhat.ptr(i, ch);
      T* d = dx.ptr(i, ch);
      if (cache.training) {
        for (std::size_t j = 0; j < plane; ++j) d[j] = scale * (g[j] - db / m - xh[j] * dg / m);
      } else {
        for (std::size_t j = 0; j < plane; ++j) d[j] = scale * g[j];
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::init(std::span<T> params, std::span<T> buffers, Rng&) const {
  for (std::size_t i = 0; i < gamma_.size; ++i) params[gamma_.offset + i] = T(1);
  for (std::size_t i = 0; i < beta_.size; ++i) params[beta_.offset + i] = T(0);
  for (std::size_t i = 0; i < running_mean_.size; ++i) buffers[running_mean_.offset + i] = T(0);
  for (std::size_t i = 0; i < running_var_.size; ++i) buffers[running_var_.offset + i] = T(1);
}

// ------------------------------------------------------------- LeakyRelu

template <typename T>
LeakyRelu<T>::LeakyRelu(LayerRegistry& reg, double slope) : id_(reg.next_id++), slope_(static_cast<T>(slope)) {}

template <typename T>
Tensor<T> LeakyRelu<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  Tensor<T> y = x;
  for (auto& v : y.data)
    if (v < T(0)) v *= slope_;
  if (ctx.tape) ctx.tape->template emplace<ActCache<T>>(id_).y = y;
  return y;
}

template <typename T>
Tensor<T> LeakyRelu<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const auto& cache = ctx.tape.template get<ActCache<T>>(id_);
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(cache.y.data[i] > T(0))) dx.data[i] *= slope_;
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

template <typename T>
GlobalAvgPool<T>::GlobalAvgPool(LayerRegistry& reg) : id_(reg.next_id++) {}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  Tensor<T> y(x.n, x.c, 1, 1);
  const std::size_t plane = x.plane();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.ptr(i, ch);
      T s = 0;
      for (std::size_t j = 0; j < plane; ++j) s += p[j];
      *y.ptr(i, ch) = s / static_cast<T>(plane);
    }
  if (ctx.tape) {
    auto& cache = ctx.tape->template emplace<PoolCache>(id_);
    cache.h = x.h;
    cache.w = x.w;
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  if (!need_input_grad) return {};
  const auto& cache = ctx.tape.template get<PoolCache>(id_);
  Tensor<T> dx(dy.n, dy.c, cache.h, cache.w);
  const std::size_t plane = dx.plane();
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const T g = *dy.ptr(i, ch) / static_cast<T>(plane);
      T* d = dx.ptr(i, ch);
      std::fill(d, d + plane, g);
    }
  return dx;
}

// ------------------------------------------------------------ Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x, ctx);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, ctx);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  Tensor<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, ctx, i > 0 || need_input_grad);
  return g;
}

template <typename T>
void Sequential<T>::init(std::span<T> params, std::span<T> buffers, Rng& rng) const {
  for (const auto& l : layers_) l->init(params, buffers, rng);
}

// --------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(LayerRegistry& reg, const std::string& name, int in_channels, int out_channels,
                                int stride, double bn_momentum)
    : bn1_(reg, name + ".bn1", in_channels, bn_momentum),
      act1_(reg),
      conv1_(reg, name + ".conv1", in_channels, out_channels, 3, stride, 1),
      bn2_(reg, name + ".bn2", out_channels, bn_momentum),
      act2_(reg),
      conv2_(reg, name + ".conv2", out_channels, out_channels, 3, 1, 1) {
  if (in_channels != out_channels || stride != 1)
    shortcut_ = std::make_unique<Conv2d<T>>(reg, name + ".shortcut", in_channels, out_channels, 1, stride, 0);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, ForwardContext<T>& ctx) const {
  Tensor<T> a = act1_.forward(bn1_.forward(x, ctx), ctx);
  Tensor<T> out = conv2_.forward(act2_.forward(bn2_.forward(conv1_.forward(a, ctx), ctx), ctx), ctx);
  add_inplace(out, shortcut_ ? shortcut_->forward(a, ctx) : x);
  return out;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy, BackwardContext<T>& ctx, bool need_input_grad) const {
  Tensor<T> da = conv1_.backward(
      bn2_.backward(act2_.backward(conv2_.backward(dy, ctx, true), ctx, true), ctx, true), ctx, true);
  if (shortcut_) add_inplace(da, shortcut_->backward(dy, ctx, true));
  Tensor<T> dx = bn1_.backward(act1_.backward(da, ctx, true), ctx, need_input_grad || !shortcut_);
  if (!shortcut_) add_inplace(dx, dy);
  return dx;
}

template <typename T>
void ResidualBlock<T>::init(std::span<T> params, std::span<T> buffers, Rng& rng) const {
  bn1_.init(params, buffers, rng);
  conv1_.init(params, buffers, rng);
  bn2_.init(params, buffers, rng);
  conv2_.init(params, buffers, rng);
  if (shortcut_) shortcut_->init(params, buffers, rng);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class LeakyRelu<float>;
template class LeakyRelu<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Sequential<float>;
template class Sequential<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;

}  // namespace dm
