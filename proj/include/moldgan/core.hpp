#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moldgan {

/// Error categories surfaced by every module. The CLI maps them to exit codes.
enum class ErrorCode {
  kIo,
  kMalformedHeader,
  kUnsupportedMaxval,
  kTruncatedPayload,
  kInvalidArgument,
  kSizeMismatch,
  kDegenerateRange,
  kUntrackable,
  kUndefinedMetric,
  kNonFinite,
  kConvergence,
  kFormat,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// 8-bit image with the physical meaning of its levels: value = offset + scale * level.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;
  double scale = 1.0;
  double offset = 0.0;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0, double scale = 1.0, double offset = 0.0);
  GrayImage(int w, int h, std::vector<std::uint8_t> levels, double scale = 1.0, double offset = 0.0);

  std::size_t size() const { return data.size(); }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double physical(std::size_t i) const { return offset + scale * data[i]; }

  bool operator==(const GrayImage&) const = default;
};

/// Real-valued grid in physical units, row-major.
struct FloatField {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FloatField() = default;
  FloatField(int w, int h, double fill = 0.0);
  FloatField(int w, int h, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Physical values of every pixel.
FloatField to_field(const GrayImage& img);

/// xoshiro256++ seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double next_f64();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n);
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_f64(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

GrayImage load_pgm(const std::filesystem::path& path);
void save_pgm(const GrayImage& img, const std::filesystem::path& path);

/// Exact serialization used by save_pgm, exposed for hashing and tests.
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

/// Half-up rounding to the nearest 8-bit level, clamped to [0, 255].
std::uint8_t round_level(double v);

/// Read a whole file into memory; throws Error{kIo}.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// FNV-1a 64-bit, used for artifact fingerprints in run manifests.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

}  // namespace moldgan
