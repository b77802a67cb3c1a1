#include "moldgan/core.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace moldgan {

GrayImage::GrayImage(int w, int h, std::uint8_t fill, double s, double o)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill), scale(s), offset(o) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "image scale must be positive");
}

GrayImage::GrayImage(int w, int h, std::vector<std::uint8_t> levels, double s, double o)
    : width(w), height(h), data(std::move(levels)), scale(s), offset(o) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  if (data.size() != static_cast<std::size_t>(w) * h)
    throw Error(ErrorCode::kSizeMismatch, "image data length != width*height");
  if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "image scale must be positive");
}

FloatField::FloatField(int w, int h, double fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "field dimensions must be positive");
}

FloatField::FloatField(int w, int h, std::vector<double> values) : width(w), height(h), data(std::move(values)) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "field dimensions must be positive");
  if (data.size() != static_cast<std::size_t>(w) * h)
    throw Error(ErrorCode::kSizeMismatch, "field data length != width*height");
  for (double v : data)
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "field contains a non-finite value");
}

FloatField to_field(const GrayImage& img) {
  FloatField f(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) f.data[i] = img.physical(i);
  return f;
}

// ---------------------------------------------------------------------------
// Rng

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_f64() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "next_below(0)");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1 = next_f64();
  while (u1 <= 0.0) u1 = next_f64();
  const double u2 = next_f64();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------
// PGM

std::string format_double(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error(ErrorCode::kFormat, "cannot format double");
  return std::string(buf, end);
}

std::uint8_t round_level(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  const double r = std::floor(v + 0.5);
  return r >= 255.0 ? 255 : static_cast<std::uint8_t>(r);
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  std::string header = "P5\n# scale=" + format_double(img.scale) + " offset=" + format_double(img.offset) + "\n" +
                       std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  // Skips whitespace and comments, harvesting metadata comments on the way.
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        std::size_t start = ++pos_;
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        parse_comment(std::string(bytes_.begin() + start, bytes_.begin() + pos_));
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int(const char* what) {
    skip_space();
    long v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000L) throw Error(ErrorCode::kMalformedHeader, std::string("PGM ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw Error(ErrorCode::kMalformedHeader, std::string("PGM header: expected ") + what);
    return v;
  }

  std::size_t pos() const { return pos_; }
  double scale = 1.0;
  double offset = 0.0;

 private:
  void parse_comment(const std::string& text) {
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      double d = 0.0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), d);
      if (ec != std::errc{} || p != val.data() + val.size()) {
        if (key == "scale" || key == "offset")
          throw Error(ErrorCode::kMalformedHeader, "PGM metadata: bad value for " + key);
        continue;
      }
      if (key == "scale") scale = d;
      if (key == "offset") offset = d;
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw Error(ErrorCode::kMalformedHeader, "PGM header: missing P5 magic");
  HeaderReader r(bytes.subspan(2));
  const long w = r.read_int("width");
  const long h = r.read_int("height");
  const long maxval = r.read_int("maxval");
  if (w <= 0 || h <= 0) throw Error(ErrorCode::kMalformedHeader, "PGM header: zero dimension");
  if (maxval != 255) throw Error(ErrorCode::kUnsupportedMaxval, "unsupported maxval " + std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the payload.
  const std::size_t header_end = 2 + r.pos();
  if (header_end >= bytes.size() || !std::isspace(bytes[header_end]))
    throw Error(ErrorCode::kTruncatedPayload, "PGM payload missing");
  const std::size_t payload = header_end + 1;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - payload < need)
    throw Error(ErrorCode::kTruncatedPayload, "PGM payload truncated: expected " + std::to_string(need) +
                                                  " bytes, got " + std::to_string(bytes.size() - payload));
  if (!(r.scale > 0.0) || !std::isfinite(r.scale) || !std::isfinite(r.offset))
    throw Error(ErrorCode::kMalformedHeader, "PGM metadata: scale must be positive and finite");
  std::vector<std::uint8_t> data(bytes.begin() + payload, bytes.begin() + payload + need);
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(data), r.scale, r.offset);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "read failure on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failure on " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

GrayImage load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_pgm(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) { write_file(path, encode_pgm(img)); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 0xF];
  return s;
}

}  // namespace moldgan
