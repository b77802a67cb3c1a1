#include "moldgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace moldgan::metrics {

namespace {

constexpr double kHistEps = 1e-10;
constexpr double kLogEps = 1e-12;

void require_normalized(const Histogram& h) {
  if (!h.normalized) throw Error(ErrorCode::kInvalidArgument, "histogram distance needs normalized histograms");
  const double s = std::accumulate(h.bins.begin(), h.bins.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorCode::kInvalidArgument, "histogram marked normalized does not sum to 1");
}

void require_same_size(const GrayImage& a, const GrayImage& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw Error(ErrorCode::kSizeMismatch, std::string(what) + ": image sizes differ");
}

}  // namespace

Histogram histogram(const GrayImage& img) {
  std::array<std::size_t, 256> counts{};
  for (auto v : img.data) ++counts[v];
  Histogram h;
  const double n = static_cast<double>(img.size());
  for (int i = 0; i < 256; ++i) h.bins[i] = static_cast<double>(counts[i]) / n;
  h.normalized = true;
  return h;
}

const char* metric_name(HistMetric m) {
  switch (m) {
    case HistMetric::kBhattacharyya: return "bhattacharyya";
    case HistMetric::kHellinger: return "hellinger";
    case HistMetric::kChiSquare: return "chi_square";
    case HistMetric::kCorrelation: return "correlation";
    case HistMetric::kCosine: return "cosine";
    case HistMetric::kKullbackLeibler: return "kullback_leibler";
    case HistMetric::kManhattan: return "manhattan";
    case HistMetric::kMinkowski: return "minkowski";
  }
  return "unknown";
}

double hist_distance(const Histogram& hp, const Histogram& hq, HistMetric metric, double minkowski_p) {
  require_normalized(hp);
  require_normalized(hq);
  const auto& p = hp.bins;
  const auto& q = hq.bins;
  switch (metric) {
    case HistMetric::kBhattacharyya: {
      double bc = 0.0;
      for (int i = 0; i < 256; ++i) bc += std::sqrt(p[i]) * std::sqrt(q[i]);
      return -std::log(bc + kHistEps);
    }
    case HistMetric::kHellinger: {
      // sqrt(1 - BC) written as 0.5 * sum (sqrt p - sqrt q)^2, equal for
      // normalized inputs and exact for identical ones.
      double s = 0.0;
      for (int i = 0; i < 256; ++i) {
        const double d = std::sqrt(p[i]) - std::sqrt(q[i]);
        s += d * d;
      }
      return std::sqrt(std::min(1.0, 0.5 * s));
    }
    case HistMetric::kChiSquare: {
      double s = 0.0;
      for (int i = 0; i < 256; ++i) {
        const double d = p[i] - q[i];
        s += d * d / (p[i] + q[i] + kHistEps);
      }
      return s;
    }
    case HistMetric::kCorrelation: {
      const double mp = 1.0 / 256.0, mq = 1.0 / 256.0;  // bins sum to one
      double spq = 0.0, spp = 0.0, sqq = 0.0;
      for (int i = 0; i < 256; ++i) {
        spq += (p[i] - mp) * (q[i] - mq);
        spp += (p[i] - mp) * (p[i] - mp);
        sqq += (q[i] - mq) * (q[i] - mq);
      }
      if (spp <= 0.0 || sqq <= 0.0)
        throw Error(ErrorCode::kUndefinedMetric, "correlation undefined for a constant histogram");
      return spq / std::sqrt(spp * sqq);
    }
    case HistMetric::kCosine: {
      double pq = 0.0, pp = 0.0, qq = 0.0;
      for (int i = 0; i < 256; ++i) {
        pq += p[i] * q[i];
        pp += p[i] * p[i];
        qq += q[i] * q[i];
      }
      return pq / std::sqrt(pp * qq);
    }
    case HistMetric::kKullbackLeibler: {
      double s = 0.0;
      for (int i = 0; i < 256; ++i)
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / (q[i] + kHistEps));
      return s;
    }
    case HistMetric::kManhattan: {
      double s = 0.0;
      for (int i = 0; i < 256; ++i) s += std::abs(p[i] - q[i]);
      return s;
    }
    case HistMetric::kMinkowski: {
      if (!(minkowski_p >= 1.0)) throw Error(ErrorCode::kInvalidArgument, "Minkowski order must be >= 1");
      double s = 0.0;
      for (int i = 0; i < 256; ++i) s += std::pow(std::abs(p[i] - q[i]), minkowski_p);
      return std::pow(s, 1.0 / minkowski_p);
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown histogram metric");
}

// ---------------------------------------------------------------------------
// Statistical features

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::kInvalidArgument, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

StatFeatures stat_features(const GrayImage& img) {
  if (img.size() < 4) throw Error(ErrorCode::kInvalidArgument, "stat_features: need at least 4 pixels");
  std::vector<double> v(img.data.begin(), img.data.end());
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 == 0.0) throw Error(ErrorCode::kUndefinedMetric, "skewness/kurtosis undefined for a constant image");
  std::sort(v.begin(), v.end());
  StatFeatures f;
  f.mean = mean;
  f.std = std::sqrt(m2);
  f.skewness = m3 / std::pow(m2, 1.5);
  f.kurtosis = m4 / (m2 * m2) - 3.0;
  f.median = quantile_sorted(v, 0.5);
  f.q05 = quantile_sorted(v, 0.05);
  f.q25 = quantile_sorted(v, 0.25);
  f.q75 = quantile_sorted(v, 0.75);
  f.q95 = quantile_sorted(v, 0.95);
  return f;
}

// ---------------------------------------------------------------------------
// GLCM / Haralick

Glcm glcm(const GrayImage& img, int levels, int distance, std::span<const GlcmOffset> offsets) {
  if (levels < 2 || levels > 256 || (levels & (levels - 1)) != 0)
    throw Error(ErrorCode::kInvalidArgument, "glcm: levels must be a power of two in [2, 256]");
  if (distance < 1) throw Error(ErrorCode::kInvalidArgument, "glcm: distance must be >= 1");
  if (offsets.empty()) throw Error(ErrorCode::kInvalidArgument, "glcm: no offsets");
  if (img.width < distance + 1 || img.height < distance + 1)
    throw Error(ErrorCode::kInvalidArgument, "glcm: image smaller than distance + 1");

  std::vector<int> q(img.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = img.data[i] * levels / 256;

  Glcm g;
  g.levels = levels;
  g.matrix.assign(static_cast<std::size_t>(levels) * levels, 0.0);
  std::vector<double> counts(g.matrix.size());
  for (const auto off : offsets) {
    int dx = 0, dy = 0;
    switch (off) {
      case GlcmOffset::k0: dx = distance; break;
      case GlcmOffset::k45: dx = distance; dy = -distance; break;
      case GlcmOffset::k90: dy = -distance; break;
      case GlcmOffset::k135: dx = -distance; dy = -distance; break;
    }
    g.offsets.emplace_back(dx, dy);
    std::fill(counts.begin(), counts.end(), 0.0);
    double total = 0.0;
    for (int y = 0; y < img.height; ++y) {
      const int y2 = y + dy;
      if (y2 < 0 || y2 >= img.height) continue;
      for (int x = 0; x < img.width; ++x) {
        const int x2 = x + dx;
        if (x2 < 0 || x2 >= img.width) continue;
        const int a = q[static_cast<std::size_t>(y) * img.width + x];
        const int b = q[static_cast<std::size_t>(y2) * img.width + x2];
        counts[static_cast<std::size_t>(a) * levels + b] += 1.0;
        counts[static_cast<std::size_t>(b) * levels + a] += 1.0;
        total += 2.0;
      }
    }
    for (std::size_t i = 0; i < counts.size(); ++i) g.matrix[i] += counts[i] / total;
  }
  const double k = static_cast<double>(offsets.size());
  for (double& v : g.matrix) v /= k;
  return g;
}

std::vector<std::pair<std::string, double>> Haralick::named() const {
  return {
      {"haralick_energy", energy},
      {"haralick_contrast", contrast},
      {"haralick_correlation", correlation},
      {"haralick_sum_of_squares", sum_of_squares},
      {"haralick_homogeneity", homogeneity},
      {"haralick_sum_average", sum_average},
      {"haralick_sum_variance", sum_variance},
      {"haralick_sum_entropy", sum_entropy},
      {"haralick_entropy", entropy},
      {"haralick_difference_variance", difference_variance},
      {"haralick_difference_entropy", difference_entropy},
      {"haralick_imc1", imc1},
      {"haralick_imc2", imc2},
  };
}

Haralick haralick(const Glcm& g, bool allow_degenerate) {
  const int L = g.levels;
  std::vector<double> px(L, 0.0), py(L, 0.0), psum(2 * L - 1, 0.0), pdiff(L, 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const double p = g.p(i, j);
      px[i] += p;
      py[j] += p;
      psum[i + j] += p;
      pdiff[std::abs(i - j)] += p;
    }
  double mux = 0.0, muy = 0.0;
  for (int i = 0; i < L; ++i) {
    mux += i * px[i];
    muy += i * py[i];
  }
  double varx = 0.0, vary = 0.0;
  for (int i = 0; i < L; ++i) {
    varx += (i - mux) * (i - mux) * px[i];
    vary += (i - muy) * (i - muy) * py[i];
  }

  Haralick f;
  double sum_ij = 0.0, hxy = 0.0, hxy1 = 0.0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      const double p = g.p(i, j);
      f.energy += p * p;
      f.contrast += static_cast<double>((i - j) * (i - j)) * p;
      sum_ij += static_cast<double>(i) * j * p;
      f.sum_of_squares += (i - mux) * (i - mux) * p;
      f.homogeneity += p / (1.0 + static_cast<double>((i - j) * (i - j)));
      hxy -= p * std::log(p + kLogEps);
      hxy1 -= p * std::log(px[i] * py[j] + kLogEps);
    }
  f.entropy = hxy;

  for (int k = 0; k < 2 * L - 1; ++k) f.sum_average += k * psum[k];
  for (int k = 0; k < 2 * L - 1; ++k) {
    f.sum_variance += (k - f.sum_average) * (k - f.sum_average) * psum[k];
    f.sum_entropy -= psum[k] * std::log(psum[k] + kLogEps);
  }
  double mud = 0.0;
  for (int k = 0; k < L; ++k) mud += k * pdiff[k];
  for (int k = 0; k < L; ++k) {
    f.difference_variance += (k - mud) * (k - mud) * pdiff[k];
    f.difference_entropy -= pdiff[k] * std::log(pdiff[k] + kLogEps);
  }

  double hx = 0.0, hy = 0.0, hxy2 = 0.0;
  for (int i = 0; i < L; ++i) {
    hx -= px[i] * std::log(px[i] + kLogEps);
    hy -= py[i] * std::log(py[i] + kLogEps);
    for (int j = 0; j < L; ++j) {
      const double pp = px[i] * py[j];
      hxy2 -= pp * std::log(pp + kLogEps);
    }
  }
  f.imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - hxy))));

  if (varx <= 0.0 || vary <= 0.0) {
    if (!allow_degenerate)
      throw Error(ErrorCode::kUndefinedMetric, "Haralick correlation undefined: zero marginal variance");
    f.correlation = std::numeric_limits<double>::quiet_NaN();
    f.imc1 = std::numeric_limits<double>::quiet_NaN();
  } else {
    f.correlation = (sum_ij - mux * muy) / std::sqrt(varx * vary);
    f.imc1 = (hxy - hxy1) / std::max(hx, hy);
  }
  return f;
}

// ---------------------------------------------------------------------------
// SSIM / PSNR

namespace {

constexpr int kWin = 11;

std::array<double, kWin * kWin> gaussian_window() {
  std::array<double, kWin * kWin> w{};
  double g[kWin];
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (int i = 0; i < kWin; ++i) g[i] /= s;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) w[y * kWin + x] = g[y] * g[x];
  return w;
}

constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

double ssim_at(const GrayImage& a, const GrayImage& b, const std::array<double, kWin * kWin>& w, int x0, int y0) {
  double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double wt = w[y * kWin + x];
      const double va = a.at(x0 + x, y0 + y);
      const double vb = b.at(x0 + x, y0 + y);
      ma += wt * va;
      mb += wt * vb;
      saa += wt * va * va;
      sbb += wt * vb * vb;
      sab += wt * va * vb;
    }
  const double var_a = saa - ma * ma;
  const double var_b = sbb - mb * mb;
  const double cov = sab - ma * mb;
  return ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (var_a + var_b + kC2));
}

void check_ssim_inputs(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "ssim");
  if (a.width < kWin || a.height < kWin) throw Error(ErrorCode::kInvalidArgument, "ssim: image smaller than 11x11 window");
}

}  // namespace

double ssim(const GrayImage& a, const GrayImage& b) {
  check_ssim_inputs(a, b);
  static const auto w = gaussian_window();
  const int ow = a.width - kWin + 1;
  const int oh = a.height - kWin + 1;
  std::vector<double> row_sum(oh, 0.0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y) {
    double s = 0.0;
    for (int x = 0; x < ow; ++x) s += ssim_at(a, b, w, x, y);
    row_sum[y] = s;
  }
  double total = 0.0;
  for (double s : row_sum) total += s;
  return total / (static_cast<double>(ow) * oh);
}

double ssim_serial(const GrayImage& a, const GrayImage& b) {
  check_ssim_inputs(a, b);
  static const auto w = gaussian_window();
  const int ow = a.width - kWin + 1;
  const int oh = a.height - kWin + 1;
  double total = 0.0;
  for (int y = 0; y < oh; ++y) {
    double s = 0.0;
    for (int x = 0; x < ow; ++x) s += ssim_at(a, b, w, x, y);
    total += s;
  }
  return total / (static_cast<double>(ow) * oh);
}

double psnr(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

CosineCorrelation image_cosine_and_correlation(const GrayImage& a, const GrayImage& b) {
  require_same_size(a, b, "image_cosine_and_correlation");
  const Histogram ha = histogram(a);
  const Histogram hb = histogram(b);
  return {hist_distance(ha, hb, HistMetric::kCosine), hist_distance(ha, hb, HistMetric::kCorrelation)};
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

double paired_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kSizeMismatch, "paired_test: samples differ in length");
  if (x.size() < 5) throw Error(ErrorCode::kInvalidArgument, "paired_test: need at least 5 pairs");

  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  const int n = static_cast<int>(d.size());
  if (n == 0) return 1.0;

  // Mid-ranks of |d|, doubled so they stay integral.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<int> rank2(n);
  double tie_term = 0.0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const int r2 = (i + 1) + (j + 1);  // 2 * average of ranks i+1..j+1
    for (int k = i; k <= j; ++k) rank2[order[k]] = r2;
    const double t = j - i + 1;
    tie_term += t * t * t - t;
    i = j + 1;
  }
  int t_plus2 = 0;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0.0) t_plus2 += rank2[i];

  if (n <= 25) {
    const int max_sum = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<double> ways(max_sum + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int r : rank2) {
      for (int s = reach; s >= 0; --s)
        if (ways[s] != 0.0) ways[s + r] += ways[s];
      reach += r;
    }
    const double total = std::ldexp(1.0, n);
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= max_sum; ++s) {
      if (s <= t_plus2) lower += ways[s];
      if (s >= t_plus2) upper += ways[s];
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
  }

  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double t = t_plus2 / 2.0;
  const double diff = t - mean;
  const double cc = diff > 0.0 ? -0.5 : (diff < 0.0 ? 0.5 : 0.0);
  const double z = (diff + cc) / std::sqrt(var);
  return std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
}

// ---------------------------------------------------------------------------
// Reports

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

double population_std(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

SimilarityReport aggregate_report(std::vector<std::string> columns, std::vector<ReportRow> rows) {
  if (rows.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregate_report: no rows");
  for (const auto& r : rows)
    if (r.values.size() != columns.size())
      throw Error(ErrorCode::kSizeMismatch, "aggregate_report: row '" + r.part_id + "' has wrong column count");
  SimilarityReport rep;
  rep.columns = std::move(columns);
  rep.rows = std::move(rows);
  for (std::size_t c = 0; c < rep.columns.size(); ++c) {
    std::vector<double> col;
    for (const auto& r : rep.rows)
      if (std::isfinite(r.values[c])) col.push_back(r.values[c]);
    rep.aggregate.counted.push_back(static_cast<int>(col.size()));
    rep.aggregate.std.push_back(population_std(col));
    rep.aggregate.median.push_back(median(std::move(col)));
  }
  return rep;
}

std::string SimilarityReport::median_label() const { return "MEDIAN " + std::to_string(rows.size()) + " parts"; }
std::string SimilarityReport::std_label() const { return "STD " + std::to_string(rows.size()) + " parts"; }

std::string SimilarityReport::to_csv() const {
  std::string out = "part_id";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  auto emit = [&](const std::string& label, const std::vector<double>& values) {
    out += label;
    for (double v : values) out += "," + format_double(v);
    out += "\n";
  };
  for (const auto& r : rows) emit(r.part_id, r.values);
  emit(median_label(), aggregate.median);
  emit(std_label(), aggregate.std);
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (aggregate.counted[c] != static_cast<int>(rows.size()))
      out += "# " + columns[c] + ": aggregates over " + std::to_string(aggregate.counted[c]) + " of " +
             std::to_string(rows.size()) + " parts (non-finite values excluded)\n";
  return out;
}

std::vector<std::pair<std::string, double>> feature_vector(const GrayImage& img, int glcm_levels) {
  std::vector<std::pair<std::string, double>> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    const StatFeatures s = stat_features(img);
    out = {{"mean", s.mean}, {"median", s.median}, {"std", s.std}, {"kurtosis", s.kurtosis},
           {"skewness", s.skewness}, {"quantile_05", s.q05}, {"quantile_25", s.q25}, {"quantile_75", s.q75},
           {"quantile_95", s.q95}};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUndefinedMetric) throw;
    const double m = img.data.empty() ? nan : img.data.front();
    out = {{"mean", m}, {"median", m}, {"std", 0.0}, {"kurtosis", nan}, {"skewness", nan}, {"quantile_05", m},
           {"quantile_25", m}, {"quantile_75", m}, {"quantile_95", m}};
  }
  const auto h = haralick(glcm(img, glcm_levels), true).named();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

}  // namespace moldgan::metrics
