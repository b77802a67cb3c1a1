#include "moldgan/nnet/networks.hpp"

#include <bit>
#include <cmath>

namespace moldgan::nnet {

template <class T>
Tensor<T> xavier_init(const std::vector<int>& shape, Rng& rng) {
  if (shape.size() < 2) throw Error(ErrorCode::kInvalidArgument, "xavier_init: need at least 2 extents");
  std::size_t receptive = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<std::size_t>(shape[i]);
  const double fan_in = static_cast<double>(shape[1]) * receptive;
  const double fan_out = static_cast<double>(shape[0]) * receptive;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
void init_params(ParamSet<T>& ps, Rng& rng) {
  for (auto& p : ps.params) {
    if (p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
      p.value.fill(T(0));
    else
      p.value = xavier_init<T>(p.value.shape, rng);
  }
}

int UNetConfig::depth() const { return std::countr_zero(static_cast<unsigned>(image_size)); }

int UNetConfig::encoder_channels(int i) const {
  const long c = static_cast<long>(base_channels) << (i - 1);
  return static_cast<int>(std::min<long>(c, 8L * base_channels));
}

void UNetConfig::validate() const {
  if (image_size < 2 || image_size > 128 || !std::has_single_bit(static_cast<unsigned>(image_size)))
    throw Error(ErrorCode::kInvalidArgument, "UNet: image_size must be a power of two in [2, 128]");
  if (base_channels < 1) throw Error(ErrorCode::kInvalidArgument, "UNet: base_channels must be >= 1");
}

int PatchGANConfig::layer_channels(int i) const {
  const long c = static_cast<long>(base_channels) << (i - 1);
  return static_cast<int>(std::min<long>(c, 8L * base_channels));
}

int PatchGANConfig::output_size(int image_size) const {
  int s = image_size;
  for (int i = 0; i <= num_down_layers; ++i) s = conv_out(s, kKernel, kStride, kPad);
  return s;
}

void PatchGANConfig::validate(int image_size) const {
  if (num_down_layers < 1) throw Error(ErrorCode::kInvalidArgument, "PatchGAN: need at least one down layer");
  if (base_channels < 1) throw Error(ErrorCode::kInvalidArgument, "PatchGAN: base_channels must be >= 1");
  if (image_size < (2 << num_down_layers))
    throw Error(ErrorCode::kInvalidArgument, "PatchGAN: image too small for " + std::to_string(num_down_layers) +
                                                 " down layers");
}

// ---------------------------------------------------------------------------
// UNet

template <class T>
UNet<T>::UNet(UNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n = cfg_.depth();
  for (int i = 1; i <= n; ++i) {
    const int cin = i == 1 ? 1 : cfg_.encoder_channels(i - 1);
    const int cout = cfg_.encoder_channels(i);
    enc_w_.push_back(params_.add("enc" + std::to_string(i) + ".w", {cout, cin, kKernel, kKernel}));
    enc_b_.push_back(params_.add("enc" + std::to_string(i) + ".b", {cout}));
  }
  for (int i = 1; i <= n; ++i) {
    const int cin = i == 1 ? cfg_.encoder_channels(n) : 2 * cfg_.encoder_channels(n - i + 1);
    const int cout = i == n ? 1 : cfg_.encoder_channels(n - i);
    dec_w_.push_back(params_.add("dec" + std::to_string(i) + ".w", {cin, cout, kKernel, kKernel}));
    dec_b_.push_back(params_.add("dec" + std::to_string(i) + ".b", {cout}));
  }
}

template <class T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, Cache* cache) const {
  const int S = cfg_.image_size;
  if (x.shape != std::vector<int>{1, S, S})
    throw Error(ErrorCode::kSizeMismatch, "UNet: expected input (1," + std::to_string(S) + "," + std::to_string(S) +
                                              "), got " + shape_string(x.shape));
  const int n = cfg_.depth();
  Cache local;
  Cache& c = cache ? *cache : local;
  c.enc.assign(1, x);
  c.dec_in.clear();
  c.dec_out.clear();
  for (int i = 0; i < n; ++i) {
    const auto& pw = params_[enc_w_[i]].value;
    const auto& pb = params_[enc_b_[i]].value;
    c.enc.push_back(leaky_relu(conv2d_forward(c.enc.back(), pw, pb, kStride, kPad)));
  }
  Tensor<T> in = c.enc[n];
  for (int i = 1; i <= n; ++i) {
    c.dec_in.push_back(in);
    const Tensor<T> z = deconv2d_forward(in, params_[dec_w_[i - 1]].value, params_[dec_b_[i - 1]].value, kStride, kPad);
    if (i < n) {
      c.dec_out.push_back(relu(z));
      in = concat_channels(c.dec_out.back(), c.enc[n - i]);
    } else {
      c.dec_out.push_back(tanh_out(z));
    }
  }
  return c.dec_out.back();
}

template <class T>
Tensor<T> UNet<T>::backward(const Cache& c, const Tensor<T>& grad_out) {
  const int n = cfg_.depth();
  std::vector<Tensor<T>> g_enc(n + 1);
  for (int i = 0; i <= n; ++i) g_enc[i] = Tensor<T>(c.enc[i].shape);

  Tensor<T> gz = tanh_backward(c.dec_out[n - 1], grad_out);
  for (int i = n; i >= 1; --i) {
    auto g = deconv2d_backward(c.dec_in[i - 1], params_[dec_w_[i - 1]].value, gz, kStride, kPad);
    auto& pw = params_[dec_w_[i - 1]].grad;
    auto& pb = params_[dec_b_[i - 1]].grad;
    for (std::size_t k = 0; k < pw.size(); ++k) pw.data[k] += g.weight.data[k];
    for (std::size_t k = 0; k < pb.size(); ++k) pb.data[k] += g.bias.data[k];
    if (i == 1) {
      for (std::size_t k = 0; k < g.input.size(); ++k) g_enc[n].data[k] += g.input.data[k];
    } else {
      // Input of decoder layer i was concat(dec_out[i-2], enc[n-i+1]).
      auto [g_dec, g_skip] = split_channels(g.input, c.dec_out[i - 2].channels());
      auto& ge = g_enc[n - i + 1];
      for (std::size_t k = 0; k < ge.size(); ++k) ge.data[k] += g_skip.data[k];
      gz = relu_backward(c.dec_out[i - 2], g_dec);
    }
  }
  for (int i = n; i >= 1; --i) {
    const Tensor<T> gpre = leaky_relu_backward(c.enc[i], g_enc[i]);
    auto g = conv2d_backward(c.enc[i - 1], params_[enc_w_[i - 1]].value, gpre, kStride, kPad);
    auto& pw = params_[enc_w_[i - 1]].grad;
    auto& pb = params_[enc_b_[i - 1]].grad;
    for (std::size_t k = 0; k < pw.size(); ++k) pw.data[k] += g.weight.data[k];
    for (std::size_t k = 0; k < pb.size(); ++k) pb.data[k] += g.bias.data[k];
    auto& ge = g_enc[i - 1];
    for (std::size_t k = 0; k < ge.size(); ++k) ge.data[k] += g.input.data[k];
  }
  return g_enc[0];
}

// ---------------------------------------------------------------------------
// PatchGAN

template <class T>
PatchGAN<T>::PatchGAN(PatchGANConfig cfg, int image_size) : cfg_(cfg), image_size_(image_size) {
  cfg_.validate(image_size);
  int cin = 2;
  for (int i = 1; i <= cfg_.num_down_layers; ++i) {
    const int cout = cfg_.layer_channels(i);
    w_.push_back(params_.add("down" + std::to_string(i) + ".w", {cout, cin, kKernel, kKernel}));
    b_.push_back(params_.add("down" + std::to_string(i) + ".b", {cout}));
    cin = cout;
  }
  w_.push_back(params_.add("out.w", {1, cin, kKernel, kKernel}));
  b_.push_back(params_.add("out.b", {1}));
}

template <class T>
Tensor<T> PatchGAN<T>::forward(const Tensor<T>& cond, const Tensor<T>& y, Cache* cache) const {
  const std::vector<int> want{1, image_size_, image_size_};
  if (cond.shape != want || y.shape != want)
    throw Error(ErrorCode::kSizeMismatch, "PatchGAN: inputs must both be " + shape_string(want));
  Cache local;
  Cache& c = cache ? *cache : local;
  c.act.assign(1, concat_channels(cond, y));
  const int L = cfg_.num_down_layers;
  for (int i = 0; i < L; ++i)
    c.act.push_back(leaky_relu(conv2d_forward(c.act.back(), params_[w_[i]].value, params_[b_[i]].value, kStride, kPad)));
  c.act.push_back(conv2d_forward(c.act.back(), params_[w_[L]].value, params_[b_[L]].value, kStride, kPad));
  return c.act.back();
}

template <class T>
Tensor<T> PatchGAN<T>::backward(const Cache& c, const Tensor<T>& grad_logits, bool accumulate) {
  const int L = cfg_.num_down_layers;
  Tensor<T> g = grad_logits;
  for (int i = L; i >= 0; --i) {
    if (i < L) g = leaky_relu_backward(c.act[i + 1], g);
    auto cg = conv2d_backward(c.act[i], params_[w_[i]].value, g, kStride, kPad);
    if (accumulate) {
      auto& pw = params_[w_[i]].grad;
      auto& pb = params_[b_[i]].grad;
      for (std::size_t k = 0; k < pw.size(); ++k) pw.data[k] += cg.weight.data[k];
      for (std::size_t k = 0; k < pb.size(); ++k) pb.data[k] += cg.bias.data[k];
    }
    g = std::move(cg.input);
  }
  return g;
}

template Tensor<float> xavier_init(const std::vector<int>&, Rng&);
template Tensor<double> xavier_init(const std::vector<int>&, Rng&);
template void init_params(ParamSet<float>&, Rng&);
template void init_params(ParamSet<double>&, Rng&);
template class UNet<float>;
template class UNet<double>;
template class PatchGAN<float>;
template class PatchGAN<double>;

}  // namespace moldgan::nnet
