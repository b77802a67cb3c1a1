#pragma once

#include <string>
#include <vector>

#include "moldgan/core.hpp"
#include "moldgan/nnet/kernels.hpp"
#include "moldgan/nnet/tensor.hpp"

namespace moldgan::nnet {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered, named parameter list of one network.
template <class T>
struct ParamSet {
  std::vector<Param<T>> params;

  std::size_t add(std::string name, std::vector<int> shape) {
    Tensor<T> v(shape);
    Tensor<T> g(std::move(shape));
    params.push_back({std::move(name), std::move(v), std::move(g)});
    return params.size() - 1;
  }
  void zero_grad() {
    for (auto& p : params) p.grad.fill(T(0));
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }
  Param<T>& operator[](std::size_t i) { return params[i]; }
  const Param<T>& operator[](std::size_t i) const { return params[i]; }
  std::size_t size() const { return params.size(); }
};

/// Uniform Glorot initialization: U(-b, b), b = sqrt(6 / (fan_in + fan_out)),
/// with fan_in = shape[1] * receptive, fan_out = shape[0] * receptive.
template <class T>
Tensor<T> xavier_init(const std::vector<int>& shape, Rng& rng);

/// Xavier weights, zero biases (parameters whose name ends in ".b").
template <class T>
void init_params(ParamSet<T>& ps, Rng& rng);

inline constexpr int kKernel = 4;
inline constexpr int kStride = 2;
inline constexpr int kPad = 1;

struct UNetConfig {
  int image_size = 128;
  int base_channels = 8;

  int depth() const;
  /// Encoder output channels of layer i (1-based), capped at 8 * base.
  int encoder_channels(int i) const;
  void validate() const;
};

struct PatchGANConfig {
  int num_down_layers = 3;
  int base_channels = 8;

  int layer_channels(int i) const;
  /// Spatial size of the logit map for an S x S input.
  int output_size(int image_size) const;
  void validate(int image_size) const;
};

/// Generator: n = log2(S) stride-2 encoder convs with LeakyReLU down to 1x1,
/// n transposed convs back up with ReLU, tanh output. Decoder layer i+1 takes
/// concat(decoder output i, encoder output n-i).
template <class T>
class UNet {
 public:
  struct Cache {
    std::vector<Tensor<T>> enc;  // enc[0] = input, enc[i] = activation of encoder layer i
    std::vector<Tensor<T>> dec_in;
    std::vector<Tensor<T>> dec_out;  // post-activation; last is the tanh output
  };

  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns the input gradient.
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out);

 private:
  UNetConfig cfg_;
  ParamSet<T> params_;
  std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
};

/// Conditional discriminator on concat(condition, image): down layers with
/// LeakyReLU, then one 4/2/1 convolution to a single-channel logit map.
template <class T>
class PatchGAN {
 public:
  struct Cache {
    std::vector<Tensor<T>> act;  // act[0] = concatenated input, act[i] = layer i output
  };

  PatchGAN(PatchGANConfig cfg, int image_size);

  const PatchGANConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& cond, const Tensor<T>& y, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients when `accumulate`; returns the gradient
  /// with respect to the concatenated (cond, y) input.
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_logits, bool accumulate = true);

 private:
  PatchGANConfig cfg_;
  int image_size_;
  ParamSet<T> params_;
  std::vector<std::size_t> w_, b_;
};

}  // namespace moldgan::nnet
