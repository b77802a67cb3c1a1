#include "moldgan/nnet/kernels.hpp"

#include <cmath>

namespace moldgan::nnet {

namespace {

template <class T>
void check_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, bool transposed) {
  if (x.shape.size() != 3 || w.shape.size() != 4 || w.dim(2) != w.dim(3))
    throw Error(ErrorCode::kSizeMismatch, "conv: expected (C,H,W) input and (A,B,k,k) weights");
  const int in_ch = transposed ? w.dim(0) : w.dim(1);
  const int out_ch = transposed ? w.dim(1) : w.dim(0);
  if (x.channels() != in_ch)
    throw Error(ErrorCode::kSizeMismatch, "conv: input has " + std::to_string(x.channels()) + " channels, weights " +
                                              shape_string(w.shape) + " expect " + std::to_string(in_ch));
  if (!b.data.empty() && (b.shape.size() != 1 || b.dim(0) != out_ch))
    throw Error(ErrorCode::kSizeMismatch, "conv: bias shape mismatch");
}

template <class T>
void check_grad(const Tensor<T>& gout, int ch, int h, int w) {
  if (gout.shape != std::vector<int>{ch, h, w})
    throw Error(ErrorCode::kSizeMismatch, "conv backward: upstream gradient has shape " + shape_string(gout.shape));
}

}  // namespace

// ---------------------------------------------------------------------------
// Parallel kernels

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  check_conv(x, w, b, false);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::kSizeMismatch, "conv: input too small for kernel");
  Tensor<T> out({cout, oh, ow});
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    T* o = &out(co, 0, 0);
    const T bias = b.data.empty() ? T(0) : b.data[co];
    for (int i = 0; i < oh * ow; ++i) o[i] = bias;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const T* xr = x.data.data() + (static_cast<std::size_t>(ci) * H + iy) * W;
            T* orow = o + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              orow[ox] += wv * xr[ix];
            }
          }
        }
  }
  return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad) {
  check_conv(x, w, Tensor<T>{}, false);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
  check_grad(gout, cout, oh, ow);
  ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(w.shape), Tensor<T>({cout})};

#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    T acc = 0;
    for (int i = 0; i < oh * ow; ++i) acc += gout.data[static_cast<std::size_t>(co) * oh * ow + i];
    g.bias.data[co] = acc;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T s = 0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              s += gout(co, oy, ox) * x(ci, iy, ix);
            }
          }
          g.weight.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx] = s;
        }
  }

#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin; ++ci) {
    for (int co = 0; co < cout; ++co)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              g.input(ci, iy, ix) += gout(co, oy, ox) * wv;
            }
          }
        }
  }
  return g;
}

template <class T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  check_conv(x, w, b, true);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(1), k = w.dim(2);
  const int oh = deconv_out(H, k, stride, pad), ow = deconv_out(W, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::kSizeMismatch, "deconv: empty output");
  Tensor<T> out({cout, oh, ow});
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    const T bias = b.data.empty() ? T(0) : b.data[co];
    for (int i = 0; i < oh * ow; ++i) out.data[static_cast<std::size_t>(co) * oh * ow + i] = bias;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = w.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx];
          for (int iy = 0; iy < H; ++iy) {
            const int oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= oh) continue;
            for (int ix = 0; ix < W; ++ix) {
              const int ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= ow) continue;
              out(co, oy, ox) += wv * x(ci, iy, ix);
            }
          }
        }
  }
  return out;
}

template <class T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad) {
  check_conv(x, w, Tensor<T>{}, true);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(1), k = w.dim(2);
  const int oh = deconv_out(H, k, stride, pad), ow = deconv_out(W, k, stride, pad);
  check_grad(gout, cout, oh, ow);
  ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(w.shape), Tensor<T>({cout})};

#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    T acc = 0;
    for (int i = 0; i < oh * ow; ++i) acc += gout.data[static_cast<std::size_t>(co) * oh * ow + i];
    g.bias.data[co] = acc;
  }

#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < cin; ++ci) {
    for (int co = 0; co < cout; ++co)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T wv = w.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx];
          T s = 0;
          for (int iy = 0; iy < H; ++iy) {
            const int oy = iy * stride - pad + ky;
            if (oy < 0 || oy >= oh) continue;
            for (int ix = 0; ix < W; ++ix) {
              const int ox = ix * stride - pad + kx;
              if (ox < 0 || ox >= ow) continue;
              const T gv = gout(co, oy, ox);
              g.input(ci, iy, ix) += gv * wv;
              s += x(ci, iy, ix) * gv;
            }
          }
          g.weight.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx] = s;
        }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Serial reference: one output element at a time, same accumulation order.

namespace serial {

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  check_conv(x, w, b, false);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::kSizeMismatch, "conv: input too small for kernel");
  Tensor<T> out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T acc = b.data.empty() ? T(0) : b.data[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx] * x(ci, iy, ix);
            }
        out(co, oy, ox) = acc;
      }
  return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad) {
  check_conv(x, w, Tensor<T>{}, false);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
  check_grad(gout, cout, oh, ow);
  ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(w.shape), Tensor<T>({cout})};
  for (int co = 0; co < cout; ++co) {
    T acc = 0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) acc += gout(co, oy, ox);
    g.bias.data[co] = acc;
  }
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T s = 0;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              s += gout(co, oy, ox) * x(ci, iy, ix);
            }
          g.weight.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx] = s;
        }
  for (int ci = 0; ci < cin; ++ci)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix) {
        T acc = 0;
        for (int co = 0; co < cout; ++co)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int ny = iy + pad - ky, nx = ix + pad - kx;
              if (ny < 0 || nx < 0 || ny % stride || nx % stride) continue;
              const int oy = ny / stride, ox = nx / stride;
              if (oy >= oh || ox >= ow) continue;
              acc += gout(co, oy, ox) * w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
            }
        g.input(ci, iy, ix) = acc;
      }
  return g;
}

template <class T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  check_conv(x, w, b, true);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(1), k = w.dim(2);
  const int oh = deconv_out(H, k, stride, pad), ow = deconv_out(W, k, stride, pad);
  if (oh <= 0 || ow <= 0) throw Error(ErrorCode::kSizeMismatch, "deconv: empty output");
  Tensor<T> out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T acc = b.data.empty() ? T(0) : b.data[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int ny = oy + pad - ky, nx = ox + pad - kx;
              if (ny < 0 || nx < 0 || ny % stride || nx % stride) continue;
              const int iy = ny / stride, ix = nx / stride;
              if (iy >= H || ix >= W) continue;
              acc += w.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx] * x(ci, iy, ix);
            }
        out(co, oy, ox) = acc;
      }
  return out;
}

template <class T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gout, int stride, int pad) {
  check_conv(x, w, Tensor<T>{}, true);
  const int cin = x.channels(), H = x.height(), W = x.width();
  const int cout = w.dim(1), k = w.dim(2);
  const int oh = deconv_out(H, k, stride, pad), ow = deconv_out(W, k, stride, pad);
  check_grad(gout, cout, oh, ow);
  ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(w.shape), Tensor<T>({cout})};
  for (int co = 0; co < cout; ++co) {
    T acc = 0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) acc += gout(co, oy, ox);
    g.bias.data[co] = acc;
  }
  for (int ci = 0; ci < cin; ++ci)
    for (int co = 0; co < cout; ++co)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T s = 0;
          for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
              const int oy = iy * stride - pad + ky, ox = ix * stride - pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              s += x(ci, iy, ix) * gout(co, oy, ox);
            }
          g.weight.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx] = s;
        }
  for (int ci = 0; ci < cin; ++ci)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix) {
        T acc = 0;
        for (int co = 0; co < cout; ++co)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int oy = iy * stride - pad + ky, ox = ix * stride - pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              acc += gout(co, oy, ox) * w.data[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx];
            }
        g.input(ci, iy, ix) = acc;
      }
  return g;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// Activations

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v >= T(0) ? v : alpha * v;
  return y;
}

template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& y, const Tensor<T>& g, T alpha) {
  Tensor<T> out = g;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(y.data[i] > T(0))) out.data[i] *= alpha;
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& g) {
  Tensor<T> out = g;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(y.data[i] > T(0))) out.data[i] = T(0);
  return out;
}

template <class T>
Tensor<T> tanh_out(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = std::tanh(v);
  return y;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& g) {
  Tensor<T> out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= T(1) - y.data[i] * y.data[i];
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return y;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& g) {
  Tensor<T> out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= y.data[i] * (T(1) - y.data[i]);
  return out;
}

#define MOLDGAN_INSTANTIATE(T)                                                                                  \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);           \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);       \
  template Tensor<T> deconv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);         \
  template ConvGrads<T> deconv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template Tensor<T> serial::conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
  template ConvGrads<T> serial::conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,     \
                                                int);                                                          \
  template Tensor<T> serial::deconv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template ConvGrads<T> serial::deconv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                                                  int);                                                        \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                          \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> relu(const Tensor<T>&);                                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> tanh_out(const Tensor<T>&);                                                               \
  template Tensor<T> tanh_backward(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);

MOLDGAN_INSTANTIATE(float)
MOLDGAN_INSTANTIATE(double)

#undef MOLDGAN_INSTANTIATE

}  // namespace moldgan::nnet
