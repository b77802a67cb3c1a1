#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "moldgan/core.hpp"
#include "moldgan/nnet/networks.hpp"

namespace moldgan::nnet {

struct GanLosses {
  double loss_d = 0.0;
  double loss_g = 0.0;   // adversarial + lambda * l1
  double loss_g_adv = 0.0;
  double l1 = 0.0;
};

/// mean(softplus(-z)): BCE-with-logits against target 1, and its gradient.
template <class T>
double bce_real(const Tensor<T>& logits, Tensor<T>* grad = nullptr);
/// mean(softplus(z)): BCE-with-logits against target 0, and its gradient.
template <class T>
double bce_fake(const Tensor<T>& logits, Tensor<T>* grad = nullptr);
/// mean |out - target| and its (sub)gradient.
template <class T>
double l1_loss(const Tensor<T>& out, const Tensor<T>& target, Tensor<T>* grad = nullptr);

template <class T>
GanLosses gan_losses(const Tensor<T>& real_logits, const Tensor<T>& fake_logits, const Tensor<T>& gen_out,
                     const Tensor<T>& target, double lambda_l1);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet<T>& ps);
};

/// One bias-corrected Adam update of every parameter at step state.step + 1.
/// Throws kNonFinite naming the parameter when a gradient is not finite.
template <class T>
void adam_step(ParamSet<T>& ps, AdamState<T>& state, const AdamConfig& cfg);

struct TrainConfig {
  int epochs = 200;
  AdamConfig adam;
  double lambda_l1 = 100.0;
  std::uint64_t seed = 0;
  double jitter_scale = 1.125;
  double mirror_prob = 0.5;
  bool augment = true;
  UNetConfig unet{128, 8};
  PatchGANConfig patch{3, 8};
  /// Stop after this many single-pair iterations (0 = run all epochs).
  std::uint64_t max_iterations = 0;
};

struct AugmentChoice {
  int offset_x = 0;
  int offset_y = 0;
  bool mirror = false;
};

int jitter_size(int size, double jitter_scale);
AugmentChoice draw_augment(Rng& rng, int size, double jitter_scale, double mirror_prob);
std::pair<GrayImage, GrayImage> apply_augment(const GrayImage& x, const GrayImage& y, const AugmentChoice& c,
                                              double jitter_scale);
/// Same random jitter crop and mirror applied to both images.
std::pair<GrayImage, GrayImage> augment_pair(const GrayImage& x, const GrayImage& y, Rng& rng, const TrainConfig& cfg);

/// Levels [0, 255] to [-1, 1] and back (half-up rounding).
Tensor<float> image_to_tensor(const GrayImage& img);
template <class T>
Tensor<T> image_to_tensor_as(const GrayImage& img);
GrayImage tensor_to_image(const Tensor<float>& t, double scale, double offset);

struct Checkpoint {
  std::map<std::string, std::string> config;  // plain-text key=value block
  std::vector<Param<float>> params;           // "G." then "D." prefixed, in network order
  std::vector<Tensor<float>> adam_m;
  std::vector<Tensor<float>> adam_v;
  std::uint64_t adam_step_g = 0;
  std::uint64_t adam_step_d = 0;
  std::uint32_t epoch = 0;

  bool operator==(const Checkpoint& o) const;
};

/// "P2PW", u32 version, u32-length config text, u32 tensor count and named
/// tensors (u32 name length, name, u32 rank, u32 extents, f32 data), Adam
/// moments in the same order, u64 step counters, u32 epoch. Little-endian.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLoss {
  int epoch = 0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double loss_g_l1 = 0.0;
};

std::string loss_curve_csv(std::span<const EpochLoss> curve);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> curve;
  std::uint64_t iterations = 0;
};

struct Pair {
  GrayImage thermo;
  GrayImage geom;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Alternating single-sample D then G updates over a seeded shuffle each epoch.
TrainResult train(std::span<const Pair> dataset, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Generator built from a checkpoint, plus output metadata.
struct Generator {
  UNet<float> net;
  double out_scale = 1.0;
  double out_offset = 0.0;
};

Generator generator_from_checkpoint(const Checkpoint& c);
GrayImage infer(const Checkpoint& c, const GrayImage& x);
GrayImage infer(const Generator& g, const GrayImage& x);

/// Mean |G(x) - y| in tensor units over un-augmented pairs.
double mean_l1(const Generator& g, std::span<const Pair> dataset);

}  // namespace moldgan::nnet
