#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "moldgan/core.hpp"

namespace moldgan::nnet {

/// Dense row-major array. Activations are (channels, height, width).
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  int channels() const { return shape[0]; }
  int height() const { return shape[1]; }
  int width() const { return shape[2]; }

  T& operator()(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x]; }
  T operator()(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Channel-axis concatenation of two (C, H, W) tensors.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 3 || b.shape.size() != 3 || a.height() != b.height() || a.width() != b.width())
    throw Error(ErrorCode::kSizeMismatch, "concat_channels: spatial shapes differ");
  Tensor<T> out({a.channels() + b.channels(), a.height(), a.width()});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

/// Inverse of concat_channels for gradients: first `ca` channels, then the rest.
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int ca) {
  Tensor<T> a({ca, t.height(), t.width()});
  Tensor<T> b({t.channels() - ca, t.height(), t.width()});
  std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

}  // namespace moldgan::nnet
