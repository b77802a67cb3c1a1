#pragma once

#include "moldgan/nnet/tensor.hpp"

namespace moldgan::nnet {

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Output extent of a strided convolution.
constexpr int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }
/// Output extent of a transposed convolution.
constexpr int deconv_out(int in, int k, int stride, int pad) { return (in - 1) * stride - 2 * pad + k; }

// Weight layouts: conv (C_out, C_in, k, k); transposed conv (C_in, C_out, k, k).
// An empty bias tensor means "no bias".
//
// The parallel kernels split work over channels only, and every output element
// is accumulated in the same order as the serial reference, so results are
// bit-identical for any thread count.

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad);

template <class T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);
template <class T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad);

namespace serial {
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad);
template <class T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad);
template <class T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad);
}  // namespace serial

// Elementwise activations. Backward functions take the forward output `y`
// (sufficient for all four) and the upstream gradient.
inline constexpr double kLeakySlope = 0.2;

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(kLeakySlope));
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& y, const Tensor<T>& g, T alpha = T(kLeakySlope));
template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& g);
template <class T>
Tensor<T> tanh_out(const Tensor<T>& x);
template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& g);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& g);

}  // namespace moldgan::nnet
