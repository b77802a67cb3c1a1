#include "moldgan/nnet/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "moldgan/preprocess.hpp"

namespace moldgan::nnet {

// ---------------------------------------------------------------------------
// Losses

namespace {

template <class T>
double softplus(T z) {
  const double d = z;
  return std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d)));
}

template <class T>
double sigmoid_d(T z) {
  const double d = z;
  return d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
}

}  // namespace

template <class T>
double bce_real(const Tensor<T>& logits, Tensor<T>* grad) {
  const double n = static_cast<double>(logits.size());
  double s = 0.0;
  if (grad) *grad = Tensor<T>(logits.shape);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    s += softplus(-logits.data[i]);
    if (grad) grad->data[i] = static_cast<T>((sigmoid_d(logits.data[i]) - 1.0) / n);
  }
  return s / n;
}

template <class T>
double bce_fake(const Tensor<T>& logits, Tensor<T>* grad) {
  const double n = static_cast<double>(logits.size());
  double s = 0.0;
  if (grad) *grad = Tensor<T>(logits.shape);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    s += softplus(logits.data[i]);
    if (grad) grad->data[i] = static_cast<T>(sigmoid_d(logits.data[i]) / n);
  }
  return s / n;
}

template <class T>
double l1_loss(const Tensor<T>& out, const Tensor<T>& target, Tensor<T>* grad) {
  if (!out.same_shape(target)) throw Error(ErrorCode::kSizeMismatch, "l1_loss: shape mismatch");
  const double n = static_cast<double>(out.size());
  double s = 0.0;
  if (grad) *grad = Tensor<T>(out.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) - target.data[i];
    s += std::abs(d);
    if (grad) grad->data[i] = static_cast<T>((d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n);
  }
  return s / n;
}

template <class T>
GanLosses gan_losses(const Tensor<T>& real_logits, const Tensor<T>& fake_logits, const Tensor<T>& gen_out,
                     const Tensor<T>& target, double lambda_l1) {
  GanLosses l;
  l.loss_d = bce_real(real_logits) + bce_fake(fake_logits);
  l.loss_g_adv = bce_real(fake_logits);
  l.l1 = l1_loss(gen_out, target);
  l.loss_g = l.loss_g_adv + lambda_l1 * l.l1;
  return l;
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
AdamState<T> AdamState<T>::zeros_like(const ParamSet<T>& ps) {
  AdamState<T> s;
  for (const auto& p : ps.params) {
    s.m.emplace_back(p.value.shape);
    s.v.emplace_back(p.value.shape);
  }
  return s;
}

template <class T>
void adam_step(ParamSet<T>& ps, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.size() != ps.size() || state.v.size() != ps.size())
    throw Error(ErrorCode::kSizeMismatch, "adam_step: optimizer state does not match parameters");
  for (const auto& p : ps.params)
    for (T g : p.grad.data)
      if (!std::isfinite(static_cast<double>(g)))
        throw Error(ErrorCode::kNonFinite, "adam_step: non-finite gradient in parameter '" + p.name + "'");
  const std::uint64_t t = ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / c1;
      const double vhat = vk / c2;
      p.value.data[k] = static_cast<T>(p.value.data[k] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation and image conversion

int jitter_size(int size, double jitter_scale) {
  return static_cast<int>(std::floor(jitter_scale * size + 0.5));
}

AugmentChoice draw_augment(Rng& rng, int size, double jitter_scale, double mirror_prob) {
  const int big = jitter_size(size, jitter_scale);
  AugmentChoice c;
  const auto span = static_cast<std::uint64_t>(big - size + 1);
  c.offset_x = static_cast<int>(rng.next_below(span));
  c.offset_y = static_cast<int>(rng.next_below(span));
  c.mirror = rng.next_f64() < mirror_prob;
  return c;
}

namespace {

GrayImage jitter_one(const GrayImage& img, const AugmentChoice& c, int big) {
  const GrayImage up = big == img.width && big == img.height ? img : preprocess::resample_bicubic(img, big, big);
  GrayImage out = preprocess::crop(up, c.offset_x, c.offset_y, img.width, img.height);
  if (c.mirror)
    for (int y = 0; y < out.height; ++y)
      std::reverse(out.data.begin() + static_cast<std::ptrdiff_t>(y) * out.width,
                   out.data.begin() + static_cast<std::ptrdiff_t>(y + 1) * out.width);
  return out;
}

}  // namespace

std::pair<GrayImage, GrayImage> apply_augment(const GrayImage& x, const GrayImage& y, const AugmentChoice& c,
                                              double jitter_scale) {
  if (x.width != y.width || x.height != y.height || x.width != x.height)
    throw Error(ErrorCode::kSizeMismatch, "augment: images must be square and equal in size");
  const int big = jitter_size(x.width, jitter_scale);
  if (big < x.width || c.offset_x < 0 || c.offset_y < 0 || c.offset_x > big - x.width || c.offset_y > big - x.width)
    throw Error(ErrorCode::kInvalidArgument, "augment: crop offsets outside the jittered image");
  return {jitter_one(x, c, big), jitter_one(y, c, big)};
}

std::pair<GrayImage, GrayImage> augment_pair(const GrayImage& x, const GrayImage& y, Rng& rng, const TrainConfig& cfg) {
  const AugmentChoice c = draw_augment(rng, x.width, cfg.jitter_scale, cfg.mirror_prob);
  return apply_augment(x, y, c, cfg.jitter_scale);
}

template <class T>
Tensor<T> image_to_tensor_as(const GrayImage& img) {
  Tensor<T> t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.size(); ++i) t.data[i] = static_cast<T>(img.data[i] / 127.5 - 1.0);
  return t;
}

Tensor<float> image_to_tensor(const GrayImage& img) { return image_to_tensor_as<float>(img); }

GrayImage tensor_to_image(const Tensor<float>& t, double scale, double offset) {
  GrayImage img(t.width(), t.height(), 0, scale, offset);
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = round_level((static_cast<double>(t.data[i]) + 1.0) * 127.5);
  return img;
}

// ---------------------------------------------------------------------------
// Checkpoint

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (config != o.config || adam_m != o.adam_m || adam_v != o.adam_v || adam_step_g != o.adam_step_g ||
      adam_step_d != o.adam_step_d || epoch != o.epoch || params.size() != o.params.size())
    return false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name != o.params[i].name || params[i].value != o.params[i].value) return false;
  return true;
}

namespace {

constexpr char kCkptMagic[4] = {'P', '2', 'P', 'W'};
constexpr std::uint32_t kCkptVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) u32(static_cast<std::uint32_t>(d));
    for (float f : t.data) f32(f);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(ErrorCode::kFormat, "checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  Tensor<float> tensor() {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw Error(ErrorCode::kFormat, "checkpoint: bad tensor rank");
    std::vector<int> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = static_cast<int>(u32());
      if (d <= 0) throw Error(ErrorCode::kFormat, "checkpoint: bad tensor extent");
      count *= static_cast<std::size_t>(d);
    }
    need(4 * count);
    Tensor<float> t(shape);
    for (auto& f : t.data) f = f32();
    return t;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string config_text(const std::map<std::string, std::string>& cfg) {
  std::string s;
  for (const auto& [k, v] : cfg) s += k + "=" + v + "\n";
  return s;
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "checkpoint: malformed config line '" + line + "'");
    cfg[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return cfg;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  if (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())
    throw Error(ErrorCode::kInvalidArgument, "checkpoint: optimizer moments do not match parameters");
  Writer w;
  w.bytes(kCkptMagic, 4);
  w.u32(kCkptVersion);
  w.str(config_text(c.config));
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    w.str(p.name);
    w.tensor(p.value);
  }
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    w.tensor(c.adam_m[i]);
    w.tensor(c.adam_v[i]);
  }
  w.u64(c.adam_step_g);
  w.u64(c.adam_step_d);
  w.u32(c.epoch);
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw Error(ErrorCode::kFormat, "checkpoint: bad magic");
  Reader r(bytes.subspan(4));
  if (const auto v = r.u32(); v != kCkptVersion)
    throw Error(ErrorCode::kFormat, "checkpoint: unsupported version " + std::to_string(v));
  Checkpoint c;
  c.config = parse_config_text(r.str());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Param<float> p;
    p.name = r.str();
    p.value = r.tensor();
    c.params.push_back(std::move(p));
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    c.adam_m.push_back(r.tensor());
    c.adam_v.push_back(r.tensor());
    if (c.adam_m.back().shape != c.params[i].value.shape || c.adam_v.back().shape != c.params[i].value.shape)
      throw Error(ErrorCode::kFormat, "checkpoint: optimizer moment shape mismatch for " + c.params[i].name);
  }
  c.adam_step_g = r.u64();
  c.adam_step_d = r.u64();
  c.epoch = r.u32();
  if (!r.done()) throw Error(ErrorCode::kFormat, "checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string loss_curve_csv(std::span<const EpochLoss> curve) {
  std::string s = "epoch,loss_d,loss_g_adv,loss_g_l1\n";
  for (const auto& e : curve)
    s += std::to_string(e.epoch) + "," + format_double(e.loss_d) + "," + format_double(e.loss_g_adv) + "," +
         format_double(e.loss_g_l1) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double config_double(const std::map<std::string, std::string>& cfg, const std::string& key) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) throw Error(ErrorCode::kFormat, "checkpoint config missing '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, "checkpoint config: bad value for '" + key + "'");
  }
}

void check_finite(double v, const char* what, int epoch, std::size_t sample) {
  if (!std::isfinite(v))
    throw Error(ErrorCode::kNonFinite, std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) +
                                           ", sample " + std::to_string(sample));
}

}  // namespace

TrainResult train(std::span<const Pair> dataset, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (dataset.empty()) throw Error(ErrorCode::kInvalidArgument, "train: empty dataset");
  if (!(cfg.adam.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "train: lr must be positive");
  if (!(cfg.lambda_l1 >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "train: lambda_l1 must be >= 0");
  const int S = dataset[0].thermo.width;
  for (const auto& p : dataset)
    if (p.thermo.width != S || p.thermo.height != S || p.geom.width != S || p.geom.height != S)
      throw Error(ErrorCode::kSizeMismatch, "train: all images must be square and of equal size");
  if (cfg.unet.image_size != S)
    throw Error(ErrorCode::kSizeMismatch, "train: generator image_size " + std::to_string(cfg.unet.image_size) +
                                              " != data size " + std::to_string(S));

  Rng rng(cfg.seed);
  UNet<float> gen(cfg.unet);
  PatchGAN<float> disc(cfg.patch, S);
  init_params(gen.params(), rng);
  init_params(disc.params(), rng);
  auto adam_g = AdamState<float>::zeros_like(gen.params());
  auto adam_d = AdamState<float>::zeros_like(disc.params());

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult res;
  typename UNet<float>::Cache gcache;
  typename PatchGAN<float>::Cache real_cache, fake_cache;
  int epochs_done = 0;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
    EpochLoss el;
    el.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t idx : order) {
      const Pair& pr = dataset[idx];
      Tensor<float> x, y;
      if (cfg.augment) {
        auto [xa, ya] = augment_pair(pr.thermo, pr.geom, rng, cfg);
        x = image_to_tensor(xa);
        y = image_to_tensor(ya);
      } else {
        x = image_to_tensor(pr.thermo);
        y = image_to_tensor(pr.geom);
      }

      const Tensor<float> fake = gen.forward(x, &gcache);

      // Discriminator step.
      disc.params().zero_grad();
      Tensor<float> g_real, g_fake;
      const double d_real = bce_real(disc.forward(x, y, &real_cache), &g_real);
      const double d_fake = bce_fake(disc.forward(x, fake, &fake_cache), &g_fake);
      disc.backward(real_cache, g_real);
      disc.backward(fake_cache, g_fake);
      const double loss_d = d_real + d_fake;
      check_finite(loss_d, "discriminator loss", epoch, idx);
      adam_step(disc.params(), adam_d, cfg.adam);

      // Generator step against the updated discriminator.
      gen.params().zero_grad();
      Tensor<float> g_adv, g_l1;
      const double adv = bce_real(disc.forward(x, fake, &fake_cache), &g_adv);
      const double l1 = l1_loss(fake, y, &g_l1);
      check_finite(adv + cfg.lambda_l1 * l1, "generator loss", epoch, idx);
      Tensor<float> g_in = disc.backward(fake_cache, g_adv, false);
      Tensor<float> g_out = split_channels(g_in, 1).second;
      for (std::size_t k = 0; k < g_out.size(); ++k) g_out.data[k] += static_cast<float>(cfg.lambda_l1) * g_l1.data[k];
      gen.backward(gcache, g_out);
      adam_step(gen.params(), adam_g, cfg.adam);

      el.loss_d += loss_d;
      el.loss_g_adv += adv;
      el.loss_g_l1 += l1;
      ++seen;
      ++res.iterations;
      if (cfg.max_iterations && res.iterations >= cfg.max_iterations) {
        stop = true;
        break;
      }
    }
    el.loss_d /= static_cast<double>(seen);
    el.loss_g_adv /= static_cast<double>(seen);
    el.loss_g_l1 /= static_cast<double>(seen);
    res.curve.push_back(el);
    epochs_done = epoch;
    if (on_epoch) on_epoch(el);
  }

  Checkpoint& c = res.checkpoint;
  c.config = {
      {"image_size", std::to_string(cfg.unet.image_size)},
      {"base_channels", std::to_string(cfg.unet.base_channels)},
      {"d_layers", std::to_string(cfg.patch.num_down_layers)},
      {"d_base_channels", std::to_string(cfg.patch.base_channels)},
      {"epochs", std::to_string(cfg.epochs)},
      {"lr", format_double(cfg.adam.lr)},
      {"beta1", format_double(cfg.adam.beta1)},
      {"beta2", format_double(cfg.adam.beta2)},
      {"eps", format_double(cfg.adam.eps)},
      {"lambda_l1", format_double(cfg.lambda_l1)},
      {"seed", std::to_string(cfg.seed)},
      {"jitter_scale", format_double(cfg.jitter_scale)},
      {"mirror_prob", format_double(cfg.mirror_prob)},
      {"augment", cfg.augment ? "1" : "0"},
      {"target_scale", format_double(dataset[0].geom.scale)},
      {"target_offset", format_double(dataset[0].geom.offset)},
  };
  for (std::size_t i = 0; i < gen.params().size(); ++i) {
    c.params.push_back({"G." + gen.params()[i].name, gen.params()[i].value, {}});
    c.adam_m.push_back(adam_g.m[i]);
    c.adam_v.push_back(adam_g.v[i]);
  }
  for (std::size_t i = 0; i < disc.params().size(); ++i) {
    c.params.push_back({"D." + disc.params()[i].name, disc.params()[i].value, {}});
    c.adam_m.push_back(adam_d.m[i]);
    c.adam_v.push_back(adam_d.v[i]);
  }
  c.adam_step_g = adam_g.step;
  c.adam_step_d = adam_d.step;
  c.epoch = static_cast<std::uint32_t>(epochs_done);
  return res;
}

Generator generator_from_checkpoint(const Checkpoint& c) {
  UNetConfig ucfg;
  ucfg.image_size = static_cast<int>(config_double(c.config, "image_size"));
  ucfg.base_channels = static_cast<int>(config_double(c.config, "base_channels"));
  Generator g{UNet<float>(ucfg), config_double(c.config, "target_scale"), config_double(c.config, "target_offset")};
  auto& ps = g.net.params();
  std::size_t j = 0;
  for (const auto& p : c.params) {
    if (p.name.rfind("G.", 0) != 0) continue;
    if (j >= ps.size() || ps[j].name != p.name.substr(2) || ps[j].value.shape != p.value.shape)
      throw Error(ErrorCode::kFormat, "checkpoint: generator parameter '" + p.name + "' does not match config");
    ps[j].value = p.value;
    ++j;
  }
  if (j != ps.size()) throw Error(ErrorCode::kFormat, "checkpoint: missing generator parameters");
  return g;
}

GrayImage infer(const Generator& g, const GrayImage& x) {
  const int S = g.net.config().image_size;
  if (x.width != S || x.height != S)
    throw Error(ErrorCode::kSizeMismatch, "infer: input is " + std::to_string(x.width) + "x" +
                                              std::to_string(x.height) + ", checkpoint expects " + std::to_string(S));
  return tensor_to_image(g.net.forward(image_to_tensor(x)), g.out_scale, g.out_offset);
}

GrayImage infer(const Checkpoint& c, const GrayImage& x) { return infer(generator_from_checkpoint(c), x); }

double mean_l1(const Generator& g, std::span<const Pair> dataset) {
  double s = 0.0;
  for (const auto& p : dataset) s += l1_loss(g.net.forward(image_to_tensor(p.thermo)), image_to_tensor(p.geom));
  return s / static_cast<double>(dataset.size());
}

template double bce_real(const Tensor<float>&, Tensor<float>*);
template double bce_real(const Tensor<double>&, Tensor<double>*);
template double bce_fake(const Tensor<float>&, Tensor<float>*);
template double bce_fake(const Tensor<double>&, Tensor<double>*);
template double l1_loss(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double l1_loss(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template GanLosses gan_losses(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              double);
template GanLosses gan_losses(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                              const Tensor<double>&, double);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParamSet<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParamSet<double>&, AdamState<double>&, const AdamConfig&);
template Tensor<float> image_to_tensor_as(const GrayImage&);
template Tensor<double> image_to_tensor_as(const GrayImage&);

}  // namespace moldgan::nnet
