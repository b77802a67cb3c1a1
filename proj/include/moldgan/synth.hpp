#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moldgan/core.hpp"
#include "moldgan/dmd.hpp"

namespace moldgan::synth {

struct SynthConfig {
  int grid = 32;
  int k_active = 12;
  double coeff_lo = -300.0;
  double coeff_hi = 300.0;
  double thermal_blur_sigma = 1.0;
  double noise_std = 1.0;  // levels of the thermography quantization
  /// Geometry to temperature: t = u + curvature * u^2 with u = z / z_bound.
  /// 0 gives the identity-map variant.
  double curvature = 0.3;
  double temp_base = 60.0;
  double temp_span = 40.0;
  int settings = 12;
  std::uint64_t seed = 0;

  void validate(const dmd::ModalBasis& basis) const;
};

/// Unquantized sample.
struct SynthFields {
  FloatField geom;
  FloatField thermo;
  dmd::ModalSpectrum spectrum;  // basis length, zero past k_active
};

struct SynthPair {
  GrayImage thermo;
  GrayImage geom;
  dmd::ModalSpectrum spectrum;
};

/// Worst-case |z| over the coefficient box; fixes the thermal map for a config.
double geometry_bound(const SynthConfig& cfg, const dmd::ModalBasis& basis);

dmd::ModalSpectrum draw_coefficients(const SynthConfig& cfg, const dmd::ModalBasis& basis, Rng& rng);
SynthFields fields_from_spectrum(const SynthConfig& cfg, const dmd::ModalBasis& basis,
                                 const dmd::ModalSpectrum& spectrum, Rng& rng);

/// Each image is quantized on its own range.
SynthPair generate_pair(const SynthConfig& cfg, const dmd::ModalBasis& basis, Rng& rng);

/// Separable Gaussian blur with clamped borders; sigma <= 0 copies.
FloatField gaussian_blur(const FloatField& f, double sigma);

struct PartInfo {
  std::string id;
  std::string split;  // "train" or "val"
  int setting = 0;
  bool held_out = false;
};

struct DatasetSummary {
  std::vector<PartInfo> parts;
  std::vector<std::filesystem::path> files;  // every file written, in write order
};

/// Writes train/, val/ and truth/ plus settings.csv under `out`. Both
/// modalities are normalized on the dataset-wide range. The last setting's
/// parts appear only in val/.
DatasetSummary generate_dataset(const SynthConfig& cfg, const dmd::ModalBasis& basis, int n_train, int n_val,
                                Rng& rng, const std::filesystem::path& out);

}  // namespace moldgan::synth
