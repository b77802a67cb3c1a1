#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moldgan/core.hpp"

namespace moldgan::metrics {

struct Histogram {
  std::array<double, 256> bins{};
  bool normalized = false;
};

Histogram histogram(const GrayImage& img);

enum class HistMetric {
  kBhattacharyya,
  kHellinger,
  kChiSquare,
  kCorrelation,
  kCosine,
  kKullbackLeibler,
  kManhattan,
  kMinkowski,
};

inline constexpr std::array<HistMetric, 8> kAllHistMetrics = {
    HistMetric::kBhattacharyya, HistMetric::kHellinger,       HistMetric::kChiSquare, HistMetric::kCorrelation,
    HistMetric::kCosine,        HistMetric::kKullbackLeibler, HistMetric::kManhattan, HistMetric::kMinkowski,
};

const char* metric_name(HistMetric m);

/// Distance or similarity between two normalized histograms. `minkowski_p`
/// is only used by kMinkowski.
double hist_distance(const Histogram& p, const Histogram& q, HistMetric metric, double minkowski_p = 3.0);

struct StatFeatures {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // excess
  double q05 = 0.0, q25 = 0.0, q75 = 0.0, q95 = 0.0;
};

StatFeatures stat_features(const GrayImage& img);

/// Linear interpolation of order statistics at fraction p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

enum class GlcmOffset { k0, k45, k90, k135 };

inline constexpr std::array<GlcmOffset, 4> kAllOffsets = {GlcmOffset::k0, GlcmOffset::k45, GlcmOffset::k90,
                                                          GlcmOffset::k135};

struct Glcm {
  int levels = 0;
  std::vector<double> matrix;  // levels x levels, row-major
  std::vector<std::pair<int, int>> offsets;

  double p(int i, int j) const { return matrix[static_cast<std::size_t>(i) * levels + j]; }
};

/// Symmetric co-occurrence matrix averaged over the requested offsets.
/// `levels` must be a power of two in [2, 256].
Glcm glcm(const GrayImage& img, int levels = 64, int distance = 1,
          std::span<const GlcmOffset> offsets = kAllOffsets);

struct Haralick {
  double energy = 0.0;               // f1 angular second moment
  double contrast = 0.0;             // f2
  double correlation = 0.0;          // f3
  double sum_of_squares = 0.0;       // f4
  double homogeneity = 0.0;          // f5 inverse difference moment
  double sum_average = 0.0;          // f6
  double sum_variance = 0.0;         // f7
  double sum_entropy = 0.0;          // f8
  double entropy = 0.0;              // f9
  double difference_variance = 0.0;  // f10
  double difference_entropy = 0.0;   // f11
  double imc1 = 0.0;                 // f12
  double imc2 = 0.0;                 // f13

  std::vector<std::pair<std::string, double>> named() const;
};

/// Throws kUndefinedMetric when a marginal has zero variance unless
/// `allow_degenerate`, in which case correlation and imc1 are NaN.
Haralick haralick(const Glcm& g, bool allow_degenerate = false);

/// Mean SSIM over the valid region: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, L = 255.
double ssim(const GrayImage& a, const GrayImage& b);

/// Same computation without parallel row blocks.
double ssim_serial(const GrayImage& a, const GrayImage& b);

/// 10 log10(255^2 / MSE); +infinity for identical images.
double psnr(const GrayImage& a, const GrayImage& b);

struct CosineCorrelation {
  double cosine = 0.0;
  double correlation = 0.0;
};

CosineCorrelation image_cosine_and_correlation(const GrayImage& a, const GrayImage& b);

/// Two-sided Wilcoxon signed-rank p-value for paired samples.
double paired_test(std::span<const double> x, std::span<const double> y);

/// Generic per-part table with MEDIAN / STD aggregate rows.
struct ReportRow {
  std::string part_id;
  std::vector<double> values;
};

struct Aggregate {
  std::vector<double> median;
  std::vector<double> std;
  std::vector<int> counted;  // finite entries per column
};

struct SimilarityReport {
  std::vector<std::string> columns;
  std::vector<ReportRow> rows;
  Aggregate aggregate;

  std::string median_label() const;
  std::string std_label() const;
  /// CSV with header `part_id,<columns...>`, rows, then aggregate rows.
  std::string to_csv() const;
};

/// Median (linear interpolation for even counts) and population std per
/// column; non-finite entries are excluded from that column's aggregates.
SimilarityReport aggregate_report(std::vector<std::string> columns, std::vector<ReportRow> rows);

/// Column layouts of the two headline tables.
inline const std::vector<std::string> kImageColumns = {"cosine", "correlation", "psnr_db", "ssim"};
inline const std::vector<std::string> kSpectrumColumns = {"cosine", "r_squared"};

/// Population median of a sample (linear interpolation for even n).
double median(std::vector<double> v);
double population_std(std::span<const double> v);

/// All scalar features used by the feature comparison CSV.
std::vector<std::pair<std::string, double>> feature_vector(const GrayImage& img, int glcm_levels = 64);

}  // namespace moldgan::metrics
