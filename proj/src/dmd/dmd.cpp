#include "moldgan/dmd.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace moldgan::dmd {

void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigvals,
                  std::vector<std::vector<double>>& eigvecs) {
  const auto idx = [n](int r, int c) { return static_cast<std::size_t>(r) * n + c; };
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[idx(i, i)] = 1.0;

  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  if (scale == 0.0) scale = 1.0;

  constexpr int kMaxSweeps = 100;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[idx(p, q)] * a[idx(p, q)];
    if (std::sqrt(off) <= 1e-15 * scale) {
      converged = true;
      break;
    }
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[idx(p, q)];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[idx(p, p)];
        const double aqq = a[idx(q, q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        a[idx(p, p)] = app - t * apq;
        a[idx(q, q)] = aqq + t * apq;
        a[idx(p, q)] = 0.0;
        a[idx(q, p)] = 0.0;
        for (int r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a[idx(r, p)];
          const double arq = a[idx(r, q)];
          const double nrp = arp - s * (arq + tau * arp);
          const double nrq = arq + s * (arp - tau * arq);
          a[idx(r, p)] = nrp;
          a[idx(p, r)] = nrp;
          a[idx(r, q)] = nrq;
          a[idx(q, r)] = nrq;
        }
        for (int r = 0; r < n; ++r) {
          const double vrp = v[idx(r, p)];
          const double vrq = v[idx(r, q)];
          v[idx(r, p)] = vrp - s * (vrq + tau * vrp);
          v[idx(r, q)] = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  if (!converged) throw Error(ErrorCode::kConvergence, "jacobi_eigen: no convergence after 100 sweeps");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[idx(i, i)] < a[idx(j, j)]; });
  eigvals.resize(n);
  eigvecs.assign(n, std::vector<double>(n));
  for (int k = 0; k < n; ++k) {
    eigvals[k] = a[idx(order[k], order[k])];
    for (int r = 0; r < n; ++r) eigvecs[k][r] = v[idx(r, order[k])];
  }
}

std::vector<double> beam_stiffness(int n) {
  // K = D2^T D2 where row r of D2 is [.. 1 -2 1 ..] at columns r, r+1, r+2.
  std::vector<double> k(static_cast<std::size_t>(n) * n, 0.0);
  static constexpr double kStencil[3] = {1.0, -2.0, 1.0};
  for (int r = 0; r + 2 < n; ++r)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) k[static_cast<std::size_t>(r + i) * n + (r + j)] += kStencil[i] * kStencil[j];
  return k;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double nrm = std::sqrt(dot(v, v));
  for (double& x : v) x /= nrm;
}

void fix_sign(std::vector<double>& v) {
  double peak = 0.0;
  for (double x : v) peak = std::max(peak, std::abs(x));
  for (double x : v) {
    if (std::abs(x) > 1e-9 * peak) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      return;
    }
  }
}

}  // namespace

BeamModes1D beam_modes_1d(int n, int count) {
  if (n < 8) throw Error(ErrorCode::kInvalidArgument, "beam_modes_1d: n must be >= 8");
  if (count < 2 || count > n) throw Error(ErrorCode::kInvalidArgument, "beam_modes_1d: count must be in [2, n]");

  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  jacobi_eigen(beam_stiffness(n), n, vals, vecs);

  // The rigid-body null space is known in closed form; pin it so the first two
  // modes are exactly piston and rotation rather than an arbitrary rotation of them.
  std::vector<double> piston(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> ramp(n);
  for (int i = 0; i < n; ++i) ramp[i] = i - 0.5 * (n - 1);
  normalize(ramp);

  BeamModes1D out;
  out.n = n;
  out.count = count;
  out.vectors.reserve(count);
  out.eigvals.reserve(count);
  out.vectors.push_back(piston);
  out.vectors.push_back(ramp);
  out.eigvals.push_back(0.0);
  out.eigvals.push_back(0.0);
  for (int k = 2; k < count; ++k) {
    std::vector<double> v = vecs[k];
    // Remove round-off leakage into the rigid modes (and earlier elastic modes).
    for (const auto& u : out.vectors) {
      const double c = dot(v, u);
      for (int i = 0; i < n; ++i) v[i] -= c * u[i];
    }
    normalize(v);
    if (!std::isfinite(v[0])) throw Error(ErrorCode::kConvergence, "beam_modes_1d: degenerate eigenvector");
    out.vectors.push_back(std::move(v));
    out.eigvals.push_back(vals[k]);
  }
  for (auto& v : out.vectors) fix_sign(v);
  return out;
}

ModalBasis build_basis(int h, int w, int K) {
  if (h < 8 || w < 8) throw Error(ErrorCode::kInvalidArgument, "build_basis: grid dimensions must be >= 8");
  if (K < 1 || static_cast<long>(K) > static_cast<long>(h) * w)
    throw Error(ErrorCode::kInvalidArgument, "build_basis: K must be in [1, h*w]");

  const BeamModes1D bx = beam_modes_1d(w, w);
  const BeamModes1D by = (h == w) ? bx : beam_modes_1d(h, h);

  struct Pair {
    double lambda;
    int ix, iy;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(h) * w);
  for (int ix = 0; ix < w; ++ix)
    for (int iy = 0; iy < h; ++iy) pairs.push_back({bx.eigvals[ix] + by.eigvals[iy], ix, iy});
  auto less = [](const Pair& a, const Pair& b) {
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    if (a.ix != b.ix) return a.ix < b.ix;
    return a.iy < b.iy;
  };
  std::partial_sort(pairs.begin(), pairs.begin() + K, pairs.end(), less);

  ModalBasis basis;
  basis.h = h;
  basis.w = w;
  basis.K = K;
  basis.modes.resize(static_cast<std::size_t>(K) * h * w);
  basis.eigvals.resize(K);
  basis.ix.resize(K);
  basis.iy.resize(K);
  for (int k = 0; k < K; ++k) {
    const auto& p = pairs[k];
    basis.eigvals[k] = p.lambda;
    basis.ix[k] = p.ix;
    basis.iy[k] = p.iy;
    double* m = basis.modes.data() + static_cast<std::size_t>(k) * h * w;
    const auto& vx = bx.vectors[p.ix];
    const auto& vy = by.vectors[p.iy];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m[static_cast<std::size_t>(y) * w + x] = vy[y] * vx[x];
  }
  return basis;
}

namespace {

void check_grid(int width, int height, const ModalBasis& basis) {
  if (width != basis.w || height != basis.h)
    throw Error(ErrorCode::kSizeMismatch, "surface " + std::to_string(width) + "x" + std::to_string(height) +
                                              " does not match basis grid " + std::to_string(basis.w) + "x" +
                                              std::to_string(basis.h));
}

ModalSpectrum project_values(std::span<const double> s, const ModalBasis& basis) {
  ModalSpectrum out;
  out.coeffs.assign(basis.K, 0.0);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < basis.K; ++k) out.coeffs[k] = dot(basis.mode(k), s);
  return out;
}

std::vector<double> physical_values(const GrayImage& img) {
  std::vector<double> v(img.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.physical(i);
  return v;
}

}  // namespace

namespace serial {

ModalSpectrum project(std::span<const double> surface, const ModalBasis& basis) {
  ModalSpectrum out;
  out.coeffs.assign(basis.K, 0.0);
  for (int k = 0; k < basis.K; ++k) out.coeffs[k] = dot(basis.mode(k), surface);
  return out;
}

FloatField reconstruct(const ModalSpectrum& spec, const ModalBasis& basis) {
  if (spec.K() != basis.K) throw Error(ErrorCode::kSizeMismatch, "reconstruct: spectrum length != basis K");
  FloatField out(basis.w, basis.h);
  const std::size_t n = basis.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < basis.K; ++k) acc += spec.coeffs[k] * basis.modes[static_cast<std::size_t>(k) * n + i];
    out.data[i] = acc;
  }
  return out;
}

}  // namespace serial

ModalSpectrum project(const FloatField& surface, const ModalBasis& basis) {
  check_grid(surface.width, surface.height, basis);
  return project_values(surface.data, basis);
}

ModalSpectrum project(const GrayImage& surface, const ModalBasis& basis) {
  check_grid(surface.width, surface.height, basis);
  return project_values(physical_values(surface), basis);
}

FloatField reconstruct(const ModalSpectrum& spec, const ModalBasis& basis) {
  if (spec.K() != basis.K) throw Error(ErrorCode::kSizeMismatch, "reconstruct: spectrum length != basis K");
  FloatField out(basis.w, basis.h);
  const auto n = static_cast<std::ptrdiff_t>(basis.pixels());
  // Each pixel sums modes in index order, so the result does not depend on threading.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < basis.K; ++k) acc += spec.coeffs[k] * basis.modes[static_cast<std::size_t>(k) * n + i];
    out.data[i] = acc;
  }
  return out;
}

namespace {

double residual_rms_values(std::span<const double> s, const ModalBasis& basis) {
  const FloatField rec = reconstruct(project_values(s, basis), basis);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - rec.data[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(s.size()));
}

}  // namespace

double residual_rms(const FloatField& surface, const ModalBasis& basis) {
  check_grid(surface.width, surface.height, basis);
  return residual_rms_values(surface.data, basis);
}

double residual_rms(const GrayImage& surface, const ModalBasis& basis) {
  check_grid(surface.width, surface.height, basis);
  return residual_rms_values(physical_values(surface), basis);
}

SpectrumSimilarity spectrum_similarity(const ModalSpectrum& a, const ModalSpectrum& b) {
  if (a.K() != b.K()) throw Error(ErrorCode::kSizeMismatch, "spectrum_similarity: length mismatch");
  if (a.K() < 3) throw Error(ErrorCode::kInvalidArgument, "spectrum_similarity: need K >= 3");
  const std::size_t n = a.coeffs.size();
  const double na = std::sqrt(dot(a.coeffs, a.coeffs));
  const double nb = std::sqrt(dot(b.coeffs, b.coeffs));
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kUndefinedMetric, "spectrum_similarity: zero-norm spectrum");

  const double ma = std::accumulate(a.coeffs.begin(), a.coeffs.end(), 0.0) / n;
  const double mb = std::accumulate(b.coeffs.begin(), b.coeffs.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.coeffs[i] - ma;
    const double db = b.coeffs[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(ErrorCode::kUndefinedMetric, "spectrum_similarity: constant spectrum");
  const double r = sab / std::sqrt(saa * sbb);
  SpectrumSimilarity out;
  out.cosine = std::clamp(dot(a.coeffs, b.coeffs) / (na * nb), -1.0, 1.0);
  out.r_squared = std::min(1.0, r * r);
  return out;
}

std::vector<double> per_mode_error(const ModalSpectrum& a, const ModalSpectrum& b) {
  if (a.K() != b.K()) throw Error(ErrorCode::kSizeMismatch, "per_mode_error: length mismatch");
  std::vector<double> out(a.coeffs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.coeffs[i] - b.coeffs[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'D', 'M', 'D', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw Error(ErrorCode::kFormat, "basis cache truncated");
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_basis(const ModalBasis& basis) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(20 + 8 * (basis.eigvals.size() + basis.modes.size()));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(basis.h));
  put_u32(out, static_cast<std::uint32_t>(basis.w));
  put_u32(out, static_cast<std::uint32_t>(basis.K));
  for (double v : basis.eigvals) put_f64(out, v);
  for (double v : basis.modes) put_f64(out, v);
  return out;
}

ModalBasis decode_basis(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::kFormat, "basis cache: bad magic");
  Reader r(bytes.subspan(4));
  if (const auto v = r.u32(); v != kVersion)
    throw Error(ErrorCode::kFormat, "basis cache: unsupported version " + std::to_string(v));
  ModalBasis b;
  b.h = static_cast<int>(r.u32());
  b.w = static_cast<int>(r.u32());
  b.K = static_cast<int>(r.u32());
  if (b.h <= 0 || b.w <= 0 || b.K <= 0 || static_cast<long>(b.K) > static_cast<long>(b.h) * b.w)
    throw Error(ErrorCode::kFormat, "basis cache: invalid dimensions");
  const std::size_t count = static_cast<std::size_t>(b.K) * (1 + b.pixels());
  if (r.remaining() != 8 * count) throw Error(ErrorCode::kFormat, "basis cache: payload size mismatch");
  b.eigvals.resize(b.K);
  for (double& v : b.eigvals) v = r.f64();
  b.modes.resize(static_cast<std::size_t>(b.K) * b.pixels());
  for (double& v : b.modes) v = r.f64();
  return b;
}

void save_basis(const ModalBasis& basis, const std::filesystem::path& path) { write_file(path, encode_basis(basis)); }

ModalBasis load_basis(const std::filesystem::path& path) { return decode_basis(read_file(path)); }

std::string spectrum_csv(const ModalSpectrum& spec) {
  std::string out = "mode_index,coefficient\n";
  for (int k = 0; k < spec.K(); ++k) out += std::to_string(k) + "," + format_double(spec.coeffs[k]) + "\n";
  return out;
}

ModalSpectrum parse_spectrum_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "mode_index,coefficient")
    throw Error(ErrorCode::kFormat, "spectrum CSV: bad header");
  ModalSpectrum spec;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::kFormat, "spectrum CSV: malformed row '" + line + "'");
    int idx = 0;
    double v = 0.0;
    try {
      idx = std::stoi(line.substr(0, comma));
      v = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kFormat, "spectrum CSV: malformed row '" + line + "'");
    }
    if (idx != spec.K()) throw Error(ErrorCode::kFormat, "spectrum CSV: mode indices must be consecutive");
    spec.coeffs.push_back(v);
  }
  return spec;
}

}  // namespace moldgan::dmd
