#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moldgan/core.hpp"

namespace moldgan::dmd {

/// Free-free Euler-Bernoulli beam modes on n unit-spaced points.
struct BeamModes1D {
  int n = 0;
  int count = 0;
  std::vector<std::vector<double>> vectors;  // count orthonormal n-vectors
  std::vector<double> eigvals;               // ascending; first two exactly 0
};

/// Plane-geometry modal basis: K orthonormal modes over an h x w grid,
/// stored mode after mode (column-major Q with Q of size (h*w) x K).
struct ModalBasis {
  int h = 0;
  int w = 0;
  int K = 0;
  std::vector<double> modes;
  std::vector<double> eigvals;
  std::vector<int> ix;  // beam mode index along x for each 2-D mode; empty when loaded from cache
  std::vector<int> iy;  // beam mode index along y

  std::span<const double> mode(int k) const {
    return {modes.data() + static_cast<std::size_t>(k) * h * w, static_cast<std::size_t>(h) * w};
  }
  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  /// Grid, modes and eigenvalues compare bitwise; mode provenance is ignored.
  bool operator==(const ModalBasis& o) const {
    return h == o.h && w == o.w && K == o.K && modes == o.modes && eigvals == o.eigvals;
  }
};

struct ModalSpectrum {
  std::vector<double> coeffs;
  int K() const { return static_cast<int>(coeffs.size()); }
};

struct SpectrumSimilarity {
  double cosine = 0.0;
  double r_squared = 0.0;
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Eigenvalues
/// ascending; eigenvectors returned as rows. Throws kConvergence.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigvals,
                  std::vector<std::vector<double>>& eigvecs);

/// Finite-difference stiffness D2^T D2 (n x n, row-major).
std::vector<double> beam_stiffness(int n);

BeamModes1D beam_modes_1d(int n, int count);

ModalBasis build_basis(int h, int w, int K);

ModalSpectrum project(const FloatField& surface, const ModalBasis& basis);
ModalSpectrum project(const GrayImage& surface, const ModalBasis& basis);

FloatField reconstruct(const ModalSpectrum& spec, const ModalBasis& basis);

double residual_rms(const FloatField& surface, const ModalBasis& basis);
double residual_rms(const GrayImage& surface, const ModalBasis& basis);

SpectrumSimilarity spectrum_similarity(const ModalSpectrum& a, const ModalSpectrum& b);

std::vector<double> per_mode_error(const ModalSpectrum& a, const ModalSpectrum& b);

/// Serial reference versions of the parallel kernels, kept for tests and benchmarks.
namespace serial {
ModalSpectrum project(std::span<const double> surface, const ModalBasis& basis);
FloatField reconstruct(const ModalSpectrum& spec, const ModalBasis& basis);
}  // namespace serial

/// Basis cache: "DMDB", u32 version, u32 h, w, K, f64 eigvals, f64 modes (column-major), all little-endian.
std::vector<std::uint8_t> encode_basis(const ModalBasis& basis);
ModalBasis decode_basis(std::span<const std::uint8_t> bytes);
void save_basis(const ModalBasis& basis, const std::filesystem::path& path);
ModalBasis load_basis(const std::filesystem::path& path);

/// Spectrum CSV: header "mode_index,coefficient".
std::string spectrum_csv(const ModalSpectrum& spec);
ModalSpectrum parse_spectrum_csv(const std::string& text);

}  // namespace moldgan::dmd
