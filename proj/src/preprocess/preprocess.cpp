#include "moldgan/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace moldgan::preprocess {

void cubic_weights(double t, double w[4]) {
  // Catmull-Rom, a = -0.5.
  const double t2 = t * t;
  const double t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}

namespace {

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

double sample_bicubic(const FloatField& img, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int ix = static_cast<int>(fx);
  const int iy = static_cast<int>(fy);
  double wx[4], wy[4];
  cubic_weights(x - fx, wx);
  cubic_weights(y - fy, wy);
  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    const int yy = clampi(iy - 1 + j, 0, img.height - 1);
    double row = 0.0;
    for (int i = 0; i < 4; ++i) {
      const int xx = clampi(ix - 1 + i, 0, img.width - 1);
      row += wx[i] * img.at(xx, yy);
    }
    acc += wy[j] * row;
  }
  return acc;
}

FloatField apply_shift(const FloatField& img, Shift s) {
  FloatField out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = sample_bicubic(img, x + s.dx, y + s.dy);
  return out;
}

namespace {

FloatField half_size(const FloatField& f) {
  const int w = std::max(1, f.width / 2);
  const int h = std::max(1, f.height / 2);
  FloatField out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::min(2 * x, f.width - 1), x1 = std::min(2 * x + 1, f.width - 1);
      const int y0 = std::min(2 * y, f.height - 1), y1 = std::min(2 * y + 1, f.height - 1);
      out.at(x, y) = 0.25 * (f.at(x0, y0) + f.at(x1, y0) + f.at(x0, y1) + f.at(x1, y1));
    }
  return out;
}

// Gauss-Newton refinement of `d` at one pyramid level using template gradients.
void refine_level(const FloatField& tmpl, const FloatField& frame, int half_window, int iters, Shift& d) {
  const int cx = (tmpl.width - 1) / 2;
  const int cy = (tmpl.height - 1) / 2;
  const int x_lo = std::max(1, cx - half_window), x_hi = std::min(tmpl.width - 2, cx + half_window);
  const int y_lo = std::max(1, cy - half_window), y_hi = std::min(tmpl.height - 2, cy + half_window);
  if (x_lo > x_hi || y_lo > y_hi) throw Error(ErrorCode::kUntrackable, "tracking window is empty");

  double gxx = 0.0, gxy = 0.0, gyy = 0.0;
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      const double gx = 0.5 * (tmpl.at(x + 1, y) - tmpl.at(x - 1, y));
      const double gy = 0.5 * (tmpl.at(x, y + 1) - tmpl.at(x, y - 1));
      gxx += gx * gx;
      gxy += gx * gy;
      gyy += gy * gy;
    }
  const double det = gxx * gyy - gxy * gxy;
  const double trace = gxx + gyy;
  if (!(trace > 0.0) || det <= 1e-9 * trace * trace)
    throw Error(ErrorCode::kUntrackable, "untrackable: singular gradient matrix (textureless image)");

  for (int it = 0; it < iters; ++it) {
    double bx = 0.0, by = 0.0;
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double gx = 0.5 * (tmpl.at(x + 1, y) - tmpl.at(x - 1, y));
        const double gy = 0.5 * (tmpl.at(x, y + 1) - tmpl.at(x, y - 1));
        const double e = tmpl.at(x, y) - sample_bicubic(frame, x + d.dx, y + d.dy);
        bx += gx * e;
        by += gy * e;
      }
    const double ddx = (gyy * bx - gxy * by) / det;
    const double ddy = (gxx * by - gxy * bx) / det;
    d.dx += ddx;
    d.dy += ddy;
    if (std::abs(ddx) < 1e-7 && std::abs(ddy) < 1e-7) break;
  }
}

}  // namespace

Shift lk_shift(const FloatField& tmpl, const FloatField& frame, const TrackerOptions& opt) {
  if (tmpl.width != frame.width || tmpl.height != frame.height)
    throw Error(ErrorCode::kSizeMismatch, "lk_shift: template and frame sizes differ");
  if (opt.window < 2) throw Error(ErrorCode::kInvalidArgument, "lk_shift: window must be >= 2");
  if (opt.levels < 1) throw Error(ErrorCode::kInvalidArgument, "lk_shift: levels must be >= 1");
  if (opt.iters < 1) throw Error(ErrorCode::kInvalidArgument, "lk_shift: iters must be >= 1");

  std::vector<FloatField> tp{tmpl}, fp{frame};
  for (int l = 1; l < opt.levels; ++l) {
    if (tp.back().width < 8 || tp.back().height < 8) break;
    tp.push_back(half_size(tp.back()));
    fp.push_back(half_size(fp.back()));
  }

  Shift d;
  for (int l = static_cast<int>(tp.size()) - 1; l >= 0; --l) {
    refine_level(tp[l], fp[l], std::max(2, opt.window >> l), opt.iters, d);
    if (l > 0) {
      d.dx *= 2.0;
      d.dy *= 2.0;
    }
  }
  if (!std::isfinite(d.dx) || !std::isfinite(d.dy) || std::abs(d.dx) >= tmpl.width ||
      std::abs(d.dy) >= tmpl.height)
    throw Error(ErrorCode::kUntrackable, "untrackable: tracker diverged");
  return d;
}

NormalizationStats dataset_stats(std::span<const FloatField> images) {
  if (images.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset_stats: empty image list");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& f : images)
    for (double v : f.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) throw Error(ErrorCode::kDegenerateRange, "dataset_stats: degenerate range (max == min)");
  return {lo, hi};
}

GrayImage quantize(const FloatField& img, const NormalizationStats& stats) {
  const double range = stats.global_max - stats.global_min;
  if (!(range > 0.0)) throw Error(ErrorCode::kDegenerateRange, "quantize: degenerate range");
  GrayImage out(img.width, img.height, 0, range / 255.0, stats.global_min);
  for (std::size_t i = 0; i < img.size(); ++i)
    out.data[i] = round_level((img.data[i] - stats.global_min) / range * 255.0);
  return out;
}

namespace {

void check_rect(int width, int height, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width || y0 + h > height)
    throw Error(ErrorCode::kInvalidArgument, "crop rectangle (" + std::to_string(x0) + "," + std::to_string(y0) +
                                                 "," + std::to_string(w) + "," + std::to_string(h) +
                                                 ") outside image");
}

// Resample a row-major grid of doubles along both axes.
std::vector<double> resample_grid(const std::vector<double>& src, int in_w, int in_h, int out_w, int out_h) {
  auto taps = [](int in, int out) {
    std::vector<std::array<double, 4>> w(out);
    std::vector<int> base(out);
    for (int i = 0; i < out; ++i) {
      const double pos = (in == 1) ? 0.0 : static_cast<double>(i) * (in - 1) / (out - 1);
      const double f = std::floor(pos);
      base[i] = static_cast<int>(f);
      cubic_weights(pos - f, w[i].data());
    }
    return std::pair{w, base};
  };
  const auto [wx, bx] = taps(in_w, out_w);
  const auto [wy, by] = taps(in_h, out_h);

  std::vector<double> tmp(static_cast<std::size_t>(out_w) * in_h);
  for (int y = 0; y < in_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += wx[x][k] * src[static_cast<std::size_t>(y) * in_w + clampi(bx[x] - 1 + k, 0, in_w - 1)];
      tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += wy[y][k] * tmp[static_cast<std::size_t>(clampi(by[y] - 1 + k, 0, in_h - 1)) * out_w + x];
      out[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  return out;
}

}  // namespace

GrayImage crop(const GrayImage& img, int x0, int y0, int w, int h) {
  check_rect(img.width, img.height, x0, y0, w, h);
  GrayImage out(w, h, 0, img.scale, img.offset);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = img.at(x0 + x, y0 + y);
  return out;
}

FloatField crop(const FloatField& img, int x0, int y0, int w, int h) {
  check_rect(img.width, img.height, x0, y0, w, h);
  FloatField out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = img.at(x0 + x, y0 + y);
  return out;
}

FloatField resample_bicubic(const FloatField& img, int out_w, int out_h) {
  if (out_w < 2 || out_h < 2) throw Error(ErrorCode::kInvalidArgument, "resample: output size must be >= 2");
  return FloatField(out_w, out_h, resample_grid(img.data, img.width, img.height, out_w, out_h));
}

GrayImage resample_bicubic(const GrayImage& img, int out_w, int out_h) {
  if (out_w < 2 || out_h < 2) throw Error(ErrorCode::kInvalidArgument, "resample: output size must be >= 2");
  const std::vector<double> src(img.data.begin(), img.data.end());
  const auto res = resample_grid(src, img.width, img.height, out_w, out_h);
  GrayImage out(out_w, out_h, 0, img.scale, img.offset);
  for (std::size_t i = 0; i < res.size(); ++i) out.data[i] = round_level(res[i]);
  return out;
}

ChainResult run_chain(std::span<const FloatField> fields, const ChainOptions& opt) {
  if (fields.empty()) throw Error(ErrorCode::kInvalidArgument, "preprocess: no input fields");
  if (opt.template_index >= fields.size()) throw Error(ErrorCode::kInvalidArgument, "preprocess: bad template index");
  const FloatField& tmpl = fields[opt.template_index];
  for (const auto& f : fields)
    if (f.width != tmpl.width || f.height != tmpl.height)
      throw Error(ErrorCode::kSizeMismatch, "preprocess: all input fields must share one size");

  const int cw = opt.crop_w, ch = opt.crop_h;
  const int cx = opt.crop_x < 0 ? (tmpl.width - cw) / 2 : opt.crop_x;
  const int cy = opt.crop_y < 0 ? (tmpl.height - ch) / 2 : opt.crop_y;
  check_rect(tmpl.width, tmpl.height, cx, cy, cw, ch);

  const auto n = static_cast<std::ptrdiff_t>(fields.size());
  ChainResult res;
  res.shifts.resize(fields.size());
  std::vector<FloatField> stable(fields.size());
  std::vector<std::string> failures(fields.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      res.shifts[i] = static_cast<std::size_t>(i) == opt.template_index ? Shift{}
                                                                        : lk_shift(tmpl, fields[i], opt.tracker);
      stable[i] = apply_shift(fields[i], res.shifts[i]);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < failures.size(); ++i)
    if (!failures[i].empty())
      throw Error(ErrorCode::kUntrackable, "preprocess: image " + std::to_string(i) + ": " + failures[i]);

  res.stats = dataset_stats(stable);
  res.images.resize(fields.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const FloatField c = crop(stable[i], cx, cy, cw, ch);
    res.images[i] = quantize(resample_bicubic(c, opt.out_size, opt.out_size), res.stats);
  }
  return res;
}

FloatField parse_field_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> values;
  int w = -1, h = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    int n = 0;
    while (std::getline(row, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || !std::isfinite(v))
        throw Error(ErrorCode::kFormat, "field CSV row " + std::to_string(h + 1) + ": bad value '" + cell + "'");
      values.push_back(v);
      ++n;
    }
    if (w >= 0 && n != w) throw Error(ErrorCode::kFormat, "field CSV row " + std::to_string(h + 1) + ": ragged row");
    w = n;
    ++h;
  }
  if (h == 0) throw Error(ErrorCode::kFormat, "field CSV: no data");
  return FloatField(w, h, std::move(values));
}

}  // namespace moldgan::preprocess
