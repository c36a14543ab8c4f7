#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace dm {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Dense NCHW activation tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* ptr(int i, int ch) { return data.data() + (static_cast<std::size_t>(i) * c + ch) * plane(); }
  const T* ptr(int i, int ch) const { return data.data() + (static_cast<std::size_t>(i) * c + ch) * plane(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& x) {
  Tensor<To> out(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<To>(x.data[i]);
  return out;
}

template <typename To, typename From>
std::vector<To> vector_cast(const std::vector<From>& x) {
  return std::vector<To>(x.begin(), x.end());
}

}  // namespace dm
