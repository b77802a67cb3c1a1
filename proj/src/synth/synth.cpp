#include "moldgan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "moldgan/preprocess.hpp"

namespace moldgan::synth {

void SynthConfig::validate(const dmd::ModalBasis& basis) const {
  if (basis.h != grid || basis.w != grid)
    throw Error(ErrorCode::kSizeMismatch, "synth: basis is " + std::to_string(basis.h) + "x" +
                                              std::to_string(basis.w) + ", grid is " + std::to_string(grid));
  if (k_active < 1 || k_active > basis.K)
    throw Error(ErrorCode::kInvalidArgument, "synth: k_active must be in [1, basis K]");
  if (!std::isfinite(coeff_lo) || !std::isfinite(coeff_hi) || !(coeff_lo < coeff_hi))
    throw Error(ErrorCode::kInvalidArgument, "synth: coeff_range must be finite with lo < hi");
  if (!(curvature >= 0.0 && curvature < 0.5))
    throw Error(ErrorCode::kInvalidArgument, "synth: curvature must be in [0, 0.5) to keep the map monotone");
  if (!(thermal_blur_sigma >= 0.0) || !(noise_std >= 0.0) || !(temp_span > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "synth: blur, noise and temperature span must be non-negative");
  if (settings < 2) throw Error(ErrorCode::kInvalidArgument, "synth: need at least two settings");
}

double geometry_bound(const SynthConfig& cfg, const dmd::ModalBasis& basis) {
  const double amp = std::max(std::abs(cfg.coeff_lo), std::abs(cfg.coeff_hi));
  double b = 0.0;
  for (int k = 0; k < cfg.k_active; ++k) {
    double m = 0.0;
    for (double v : basis.mode(k)) m = std::max(m, std::abs(v));
    b += amp * m;
  }
  return b;
}

dmd::ModalSpectrum draw_coefficients(const SynthConfig& cfg, const dmd::ModalBasis& basis, Rng& rng) {
  dmd::ModalSpectrum s;
  s.coeffs.assign(basis.K, 0.0);
  for (int k = 0; k < cfg.k_active; ++k) s.coeffs[k] = rng.uniform(cfg.coeff_lo, cfg.coeff_hi);
  return s;
}

FloatField gaussian_blur(const FloatField& f, double sigma) {
  if (sigma <= 0.0) return f;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  FloatField tmp(f.width, f.height), out(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * f.at(std::clamp(x + i, 0, f.width - 1), y);
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(x, std::clamp(y + i, 0, f.height - 1));
      out.at(x, y) = s;
    }
  return out;
}

SynthFields fields_from_spectrum(const SynthConfig& cfg, const dmd::ModalBasis& basis,
                                 const dmd::ModalSpectrum& spectrum, Rng& rng) {
  cfg.validate(basis);
  SynthFields out;
  out.spectrum = spectrum;
  out.geom = dmd::reconstruct(spectrum, basis);
  const double zb = geometry_bound(cfg, basis);
  FloatField t(cfg.grid, cfg.grid);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double u = zb > 0.0 ? out.geom.data[i] / zb : 0.0;
    t.data[i] = cfg.temp_base + cfg.temp_span * (u + cfg.curvature * u * u);
  }
  t = gaussian_blur(t, cfg.thermal_blur_sigma);
  if (cfg.noise_std > 0.0) {
    const auto [lo, hi] = std::minmax_element(t.data.begin(), t.data.end());
    const double level = (*hi - *lo) / 255.0;
    for (auto& v : t.data) v += cfg.noise_std * level * rng.normal();
  }
  out.thermo = std::move(t);
  return out;
}

namespace {

GrayImage quantize_own(const FloatField& f) {
  const FloatField one[] = {f};
  return preprocess::quantize(f, preprocess::dataset_stats(one));
}

std::string two_digits(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", i);
  return buf;
}

}  // namespace

SynthPair generate_pair(const SynthConfig& cfg, const dmd::ModalBasis& basis, Rng& rng) {
  cfg.validate(basis);
  const auto spec = draw_coefficients(cfg, basis, rng);
  const auto f = fields_from_spectrum(cfg, basis, spec, rng);
  return {quantize_own(f.thermo), quantize_own(f.geom), f.spectrum};
}

DatasetSummary generate_dataset(const SynthConfig& cfg, const dmd::ModalBasis& basis, int n_train, int n_val,
                                Rng& rng, const std::filesystem::path& out) {
  cfg.validate(basis);
  if (n_train < 1 || n_val < 1) throw Error(ErrorCode::kInvalidArgument, "synth: need at least one train and val pair");

  // Process settings: a mean deformation per setting, parts vary around it.
  std::vector<std::vector<double>> means(cfg.settings, std::vector<double>(cfg.k_active));
  for (auto& m : means)
    for (auto& v : m) v = rng.uniform(cfg.coeff_lo, cfg.coeff_hi);

  const int held = cfg.settings - 1;
  const int n_held = std::min(2, n_val);
  DatasetSummary sum;
  for (int i = 0; i < n_train; ++i) sum.parts.push_back({"train" + two_digits(i + 1), "train", i % held, false});
  for (int i = 0; i < n_val - n_held; ++i)
    sum.parts.push_back({"test" + two_digits(i + 1), "val", (n_train + i) % held, false});
  for (int i = 0; i < n_held; ++i) sum.parts.push_back({"heldout" + two_digits(i + 1), "val", held, true});

  const std::size_t n = sum.parts.size();
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng.next_u64();

  std::vector<SynthFields> fields(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    Rng prng(seeds[i]);
    dmd::ModalSpectrum spec;
    spec.coeffs.assign(basis.K, 0.0);
    const auto& m = means[sum.parts[i].setting];
    for (int k = 0; k < cfg.k_active; ++k) spec.coeffs[k] = 0.7 * m[k] + 0.3 * prng.uniform(cfg.coeff_lo, cfg.coeff_hi);
    fields[i] = fields_from_spectrum(cfg, basis, spec, prng);
  }

  std::vector<FloatField> geoms, thermos;
  for (const auto& f : fields) {
    geoms.push_back(f.geom);
    thermos.push_back(f.thermo);
  }
  const auto gstats = preprocess::dataset_stats(geoms);
  const auto tstats = preprocess::dataset_stats(thermos);

  for (const char* d : {"train", "val", "truth"}) std::filesystem::create_directories(out / d);
  std::string settings = "part_id,split,setting,held_out\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = sum.parts[i];
    const auto dir = out / p.split;
    const auto tp = dir / ("pair_" + p.id + "_thermo.pgm");
    const auto gp = dir / ("pair_" + p.id + "_geom.pgm");
    const auto cp = out / "truth" / ("pair_" + p.id + ".csv");
    save_pgm(preprocess::quantize(fields[i].thermo, tstats), tp);
    save_pgm(preprocess::quantize(fields[i].geom, gstats), gp);
    write_text(cp, dmd::spectrum_csv(fields[i].spectrum));
    sum.files.insert(sum.files.end(), {tp, gp, cp});
    settings += p.id + "," + p.split + "," + std::to_string(p.setting) + "," + (p.held_out ? "1" : "0") + "\n";
  }
  write_text(out / "settings.csv", settings);
  sum.files.push_back(out / "settings.csv");
  return sum;
}

}  // namespace moldgan::synth
