#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "moldgan/nnet/train.hpp"
#include "moldgan/synth.hpp"

using namespace moldgan;
using namespace moldgan::nnet;

namespace {

std::vector<Pair> tiny_dataset(int n, int S, std::uint64_t seed) {
  const auto basis = dmd::build_basis(S, S, 12);
  synth::SynthConfig cfg;
  cfg.grid = S;
  cfg.k_active = 8;
  Rng rng(seed);
  std::vector<Pair> out;
  for (int i = 0; i < n; ++i) {
    auto p = synth::generate_pair(cfg, basis, rng);
    out.push_back({p.thermo, p.geom});
  }
  return out;
}

TrainConfig tiny_config(int S) {
  TrainConfig cfg;
  cfg.unet = {S, 4};
  cfg.patch = {2, 4};
  cfg.epochs = 3;
  cfg.seed = 11;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Losses, ZeroLogitsGiveLn2) {
  const Tensor<double> z({1, 2, 2}, 0.0);
  Tensor<double> g;
  EXPECT_NEAR(bce_real(z, &g), std::log(2.0), 1e-15);
  for (double v : g.data) EXPECT_NEAR(v, -0.5 / 4, 1e-15);
  EXPECT_NEAR(bce_fake(z, &g), std::log(2.0), 1e-15);
  for (double v : g.data) EXPECT_NEAR(v, 0.5 / 4, 1e-15);
  const Tensor<double> img({1, 4, 4}, 0.3);
  const auto l = gan_losses(z, z, img, img, 100.0);
  EXPECT_NEAR(l.loss_d, 2 * std::log(2.0), 1e-15);
  EXPECT_EQ(l.l1, 0.0);
  EXPECT_NEAR(l.loss_g, std::log(2.0), 1e-15);
}

TEST(Losses, StableForLargeLogits) {
  Tensor<double> z({1, 1, 2});
  z.data = {800.0, -800.0};
  const double r = bce_real(z);
  const double f = bce_fake(z);
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_NEAR(r, 400.0, 1e-9);
  EXPECT_NEAR(f, 400.0, 1e-9);
}

TEST(Losses, LambdaWeightsL1) {
  Rng rng(1);
  Tensor<double> a({1, 4, 4}), b({1, 4, 4}), logits({1, 2, 2});
  for (auto* t : {&a, &b, &logits})
    for (auto& v : t->data) v = rng.uniform(-1, 1);
  double l1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a.data[i] - b.data[i]);
  l1 /= static_cast<double>(a.size());
  const auto pure = gan_losses(logits, logits, a, b, 0.0);
  EXPECT_EQ(pure.loss_g, pure.loss_g_adv);
  EXPECT_NEAR(pure.l1, l1, 1e-15);
  const auto mixed = gan_losses(logits, logits, a, b, 100.0);
  EXPECT_NEAR(mixed.loss_g, mixed.loss_g_adv + 100.0 * l1, 1e-12);
  EXPECT_THROW(l1_loss(a, Tensor<double>({1, 2, 2})), Error);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  Tensor<double> z({1, 3, 3}), out({1, 3, 3}), target({1, 3, 3});
  for (auto* t : {&z, &out, &target})
    for (auto& v : t->data) v = rng.uniform(-2, 2);
  Tensor<double> gr, gf, gl;
  bce_real(z, &gr);
  bce_fake(z, &gf);
  l1_loss(out, target, &gl);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto up = z, dn = z;
    up.data[i] += eps;
    dn.data[i] -= eps;
    EXPECT_NEAR(gr.data[i], (bce_real(up) - bce_real(dn)) / (2 * eps), 1e-8);
    EXPECT_NEAR(gf.data[i], (bce_fake(up) - bce_fake(dn)) / (2 * eps), 1e-8);
    auto o1 = out, o2 = out;
    o1.data[i] += eps;
    o2.data[i] -= eps;
    EXPECT_NEAR(gl.data[i], (l1_loss(o1, target) - l1_loss(o2, target)) / (2 * eps), 1e-8);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet<double> ps;
  ps.add("w", {3});
  ps[0].value.data = {1.0, -2.0, 3.0};
  auto st = AdamState<double>::zeros_like(ps);
  const auto before = ps[0].value;
  adam_step(ps, st, {});
  EXPECT_EQ(ps[0].value, before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepClosedForm) {
  ParamSet<double> ps;
  ps.add("w", {1});
  ps[0].grad.data = {1.0};
  auto st = AdamState<double>::zeros_like(ps);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  adam_step(ps, st, cfg);
  // m_hat = v_hat = 1 after bias correction.
  EXPECT_NEAR(ps[0].value.data[0], -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(ps[0].value.data[0], -9.99999e-4, 1e-9);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  ParamSet<double> ps;
  ps.add("w", {1});
  ps[0].value.data = {0.5};
  auto st = AdamState<double>::zeros_like(ps);
  double prev = 0.5;
  for (int t = 0; t < 5; ++t) {
    ps[0].grad.data = {0.3};
    adam_step(ps, st, {});
    EXPECT_LT(ps[0].value.data[0], prev);
    prev = ps[0].value.data[0];
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamSet<double> ps;
  ps.add("enc1.w", {2});
  ps[0].grad.data = {0.0, NAN};
  auto st = AdamState<double>::zeros_like(ps);
  try {
    adam_step(ps, st, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("enc1.w"), std::string::npos);
  }
}

TEST(Augment, DegenerateChoiceIsIdentity) {
  Rng rng(3);
  GrayImage x(32, 32), y(32, 32);
  for (auto& v : x.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  for (auto& v : y.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  const auto [xa, ya] = apply_augment(x, y, {0, 0, false}, 1.0);
  EXPECT_EQ(xa.data, x.data);
  EXPECT_EQ(ya.data, y.data);
}

TEST(Augment, SmoothImageJitterWithinOneLevel) {
  // A linear ramp stays a ramp under bicubic upscale; the crop at offset o
  // samples the upscaled grid, whose spacing is (S-1)/(big-1) source pixels.
  const int S = 32, big = jitter_size(S, 1.125);
  EXPECT_EQ(big, 36);
  GrayImage ramp(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) ramp.at(x, y) = static_cast<std::uint8_t>(4 * x + 40);
  for (int o = 0; o <= big - S; ++o) {
    const auto [a, b] = apply_augment(ramp, ramp, {o, 0, false}, 1.125);
    EXPECT_EQ(a.data, b.data);
    for (int y = 0; y < S; ++y)
      for (int x = 2; x < S - 2; ++x) {
        const double src = (x + o) * (S - 1.0) / (big - 1.0);
        EXPECT_NEAR(a.at(x, y), 4 * src + 40, 1.0);
      }
  }
}

TEST(Augment, MirrorReversesColumnsOfBoth) {
  Rng rng(4);
  GrayImage x(16, 16), y(16, 16);
  for (auto& v : x.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  for (auto& v : y.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  const auto [xa, ya] = apply_augment(x, y, {0, 0, true}, 1.0);
  for (int r = 0; r < 16; ++r)
    for (int j = 0; j < 16; ++j) {
      EXPECT_EQ(xa.at(j, r), x.at(15 - j, r));
      EXPECT_EQ(ya.at(j, r), y.at(15 - j, r));
    }
  EXPECT_THROW(apply_augment(x, y, {5, 0, false}, 1.125), Error);
  EXPECT_THROW(apply_augment(x, GrayImage(8, 8), {0, 0, false}, 1.0), Error);
}

TEST(Augment, OffsetsUniformAndPairUsesDraw) {
  Rng rng(5);
  const int S = 32, span = jitter_size(S, 1.125) - S + 1;
  std::vector<int> cx(span, 0), cy(span, 0);
  int mirrored = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto c = draw_augment(rng, S, 1.125, 0.5);
    ASSERT_GE(c.offset_x, 0);
    ASSERT_LT(c.offset_x, span);
    ++cx[c.offset_x];
    ++cy[c.offset_y];
    mirrored += c.mirror;
  }
  // Chi-square with 4 degrees of freedom; 13.28 is the 0.01 upper quantile.
  const double expect = static_cast<double>(n) / span;
  double chi_x = 0, chi_y = 0;
  for (int k = 0; k < span; ++k) {
    chi_x += (cx[k] - expect) * (cx[k] - expect) / expect;
    chi_y += (cy[k] - expect) * (cy[k] - expect) / expect;
  }
  EXPECT_LT(chi_x, 13.28);
  EXPECT_LT(chi_y, 13.28);
  EXPECT_NEAR(mirrored, 500, 60);

  GrayImage x(S, S, 10), y(S, S, 20);
  TrainConfig cfg;
  Rng a(6), b(6);
  const auto via_pair = augment_pair(x, y, a, cfg);
  const auto c = draw_augment(b, S, cfg.jitter_scale, cfg.mirror_prob);
  EXPECT_EQ(via_pair.first.data, apply_augment(x, y, c, cfg.jitter_scale).first.data);
}

TEST(Tensors, ImageRoundTrip) {
  GrayImage img(16, 1);
  for (int i = 0; i < 16; ++i) img.data[i] = static_cast<std::uint8_t>(i * 17);
  const auto t = image_to_tensor(img);
  EXPECT_FLOAT_EQ(t.data[0], -1.0f);
  EXPECT_FLOAT_EQ(t.data[15], 1.0f);
  EXPECT_EQ(tensor_to_image(t, 1.0, 0.0).data, img.data);
}

TEST(Train, DeterministicCurvesAndCheckpoint) {
  const auto data = tiny_dataset(3, 16, 1);
  const auto cfg = tiny_config(16);
  std::vector<EpochLoss> seen;
  const auto a = train(data, cfg, [&](const EpochLoss& e) { seen.push_back(e); });
  const auto b = train(data, cfg);
  ASSERT_EQ(a.curve.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(a.iterations, 9u);
  EXPECT_EQ(loss_curve_csv(a.curve), loss_curve_csv(b.curve));
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  EXPECT_EQ(a.checkpoint.epoch, 3u);
  EXPECT_EQ(a.checkpoint.adam_step_g, 9u);
  for (const auto& e : a.curve) {
    EXPECT_TRUE(std::isfinite(e.loss_d));
    EXPECT_TRUE(std::isfinite(e.loss_g_adv));
    EXPECT_TRUE(std::isfinite(e.loss_g_l1));
  }
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(loss_curve_csv(train(data, other).curve), loss_curve_csv(a.curve));
  const auto csv = loss_curve_csv(a.curve);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss_d,loss_g_adv,loss_g_l1");
}

TEST(Train, MaxIterationsAndErrors) {
  const auto data = tiny_dataset(3, 16, 2);
  auto cfg = tiny_config(16);
  cfg.max_iterations = 4;
  const auto r = train(data, cfg);
  EXPECT_EQ(r.iterations, 4u);
  EXPECT_EQ(r.curve.size(), 2u);
  EXPECT_EQ(code_of([&] { train(std::vector<Pair>{}, cfg); }), ErrorCode::kInvalidArgument);
  auto bad_lr = cfg;
  bad_lr.adam.lr = 0;
  EXPECT_EQ(code_of([&] { train(data, bad_lr); }), ErrorCode::kInvalidArgument);
  auto wrong = cfg;
  wrong.unet.image_size = 32;
  EXPECT_EQ(code_of([&] { train(data, wrong); }), ErrorCode::kSizeMismatch);
}

TEST(Train, L1TermImprovesFitOverPureAdversarial) {
  const auto data = tiny_dataset(4, 16, 3);
  auto cfg = tiny_config(16);
  cfg.augment = false;
  cfg.epochs = 100;
  cfg.max_iterations = 300;
  auto pure = cfg;
  pure.lambda_l1 = 0.0;
  const double with_l1 = mean_l1(generator_from_checkpoint(train(data, cfg).checkpoint), data);
  const double without = mean_l1(generator_from_checkpoint(train(data, pure).checkpoint), data);
  EXPECT_LT(with_l1, without);
}

TEST(Checkpoint, RoundTripBitIdentical) {
  const auto data = tiny_dataset(2, 16, 4);
  const auto r = train(data, tiny_config(16));
  const auto bytes = encode_checkpoint(r.checkpoint);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "P2PW");
  const auto back = decode_checkpoint(bytes);
  EXPECT_TRUE(back == r.checkpoint);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.config.at("seed"), "11");
  EXPECT_EQ(back.params.front().name.substr(0, 2), "G.");
  EXPECT_EQ(back.params.back().name.substr(0, 2), "D.");

  const auto path = std::filesystem::temp_directory_path() / "moldgan_test_ckpt.p2pw";
  save_checkpoint(r.checkpoint, path);
  EXPECT_TRUE(load_checkpoint(path) == r.checkpoint);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const auto r = train(tiny_dataset(1, 16, 5), tiny_config(16));
  const auto good = encode_checkpoint(r.checkpoint);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_checkpoint(magic); }), ErrorCode::kFormat);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(code_of([&] { decode_checkpoint(version); }), ErrorCode::kFormat);
  const std::vector<std::uint8_t> truncated(good.begin(), good.end() - 7);
  EXPECT_EQ(code_of([&] { decode_checkpoint(truncated); }), ErrorCode::kFormat);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of([&] { decode_checkpoint(trailing); }), ErrorCode::kFormat);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.p2pw"), Error);
}

TEST(Infer, ZeroNetworkGivesMidLevel) {
  UNet<float> net({16, 2});
  Checkpoint c;
  c.config = {{"image_size", "16"}, {"base_channels", "2"}, {"target_scale", "0.5"}, {"target_offset", "-3"}};
  for (const auto& p : net.params().params) {
    c.params.push_back({"G." + p.name, p.value, {}});
    c.adam_m.push_back(p.value);
    c.adam_v.push_back(p.value);
  }
  Rng rng(6);
  GrayImage x(16, 16);
  for (auto& v : x.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  const auto out = infer(c, x);
  for (auto v : out.data) EXPECT_EQ(v, 128);
  EXPECT_EQ(out.scale, 0.5);
  EXPECT_EQ(out.offset, -3.0);
  EXPECT_EQ(infer(c, x).data, out.data);
  EXPECT_EQ(code_of([&] { infer(c, GrayImage(32, 32)); }), ErrorCode::kSizeMismatch);
  auto missing = c;
  missing.params.pop_back();
  EXPECT_EQ(code_of([&] { infer(missing, x); }), ErrorCode::kFormat);
}

TEST(Infer, TrainedCheckpointReproducible) {
  const auto data = tiny_dataset(2, 16, 7);
  const auto r = train(data, tiny_config(16));
  const auto g = generator_from_checkpoint(r.checkpoint);
  EXPECT_EQ(infer(g, data[0].thermo).data, infer(r.checkpoint, data[0].thermo).data);
  EXPECT_EQ(infer(g, data[0].thermo).scale, data[0].geom.scale);
}
