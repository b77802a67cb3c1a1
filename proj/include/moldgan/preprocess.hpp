#pragma once

#include <span>
#include <string>
#include <vector>

#include "moldgan/core.hpp"

namespace moldgan::preprocess {

/// Content displacement of a frame relative to its template, in pixels:
/// frame(x, y) ~ template(x - dx, y - dy).
struct Shift {
  double dx = 0.0;
  double dy = 0.0;
};

struct NormalizationStats {
  double global_min = 0.0;
  double global_max = 1.0;
};

struct TrackerOptions {
  int levels = 3;
  int window = 24;  // half-width of the tracked patch at full resolution
  int iters = 30;
};

/// Pure-translation Lucas-Kanade, coarse to fine. Throws kUntrackable on a
/// singular normal matrix.
Shift lk_shift(const FloatField& tmpl, const FloatField& frame, const TrackerOptions& opt = {});

/// out(x, y) = img(x + dx, y + dy), bicubic with edge clamping. Undoes a
/// displacement measured by lk_shift.
FloatField apply_shift(const FloatField& img, Shift s);

NormalizationStats dataset_stats(std::span<const FloatField> images);

/// level = round_half_up((v - min) / (max - min) * 255), clamped.
GrayImage quantize(const FloatField& img, const NormalizationStats& stats);

GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h);
FloatField crop(const FloatField& img, int x0, int y0, int w, int h);

/// Separable Catmull-Rom (a = -0.5) resampling with corner-aligned grids:
/// output pixel i samples source coordinate i * (in - 1) / (out - 1).
FloatField resample_bicubic(const FloatField& img, int out_w, int out_h);
GrayImage resample_bicubic(const GrayImage& img, int out_w, int out_h);

/// Bicubic sample at a fractional position with edge clamping.
double sample_bicubic(const FloatField& img, double x, double y);

/// Catmull-Rom weights for the four taps at offsets -1, 0, 1, 2 from floor(x).
void cubic_weights(double t, double w[4]);

struct ChainOptions {
  TrackerOptions tracker;
  int crop_x = -1;  // negative: centre the crop window
  int crop_y = -1;
  int crop_w = 71;
  int crop_h = 71;
  int out_size = 128;
  std::size_t template_index = 0;
};

struct ChainResult {
  std::vector<Shift> shifts;
  NormalizationStats stats;
  std::vector<GrayImage> images;
};

/// Stabilize against one template, normalize on the dataset range, crop,
/// upsample and quantize. Per-image work runs in parallel; results do not
/// depend on the thread count.
ChainResult run_chain(std::span<const FloatField> fields, const ChainOptions& opt);

/// Comma-separated rows of physical values, one row per image line.
FloatField parse_field_csv(const std::string& text);

}  // namespace moldgan::preprocess
