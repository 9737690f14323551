#include "fundus/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fundus/error.hpp"

namespace fundus {

namespace {

void check_dims(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::InvalidArgument,
                "image dimensions must be positive, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Clipped window bounds along one axis.
struct Span1D {
  int lo;
  int hi;  // inclusive
};

Span1D window(int i, int radius, int extent) {
  return {std::max(0, i - radius), std::min(extent - 1, i + radius)};
}

// Bilinear sample of interleaved data at fractional (sx, sy); taps outside the
// grid read as zero.
double sample_zero_border(std::span<const double> data, int h, int w, int ch, int c, double sx,
                          double sy) {
  const double fx0 = std::floor(sx);
  const double fy0 = std::floor(sy);
  const double ax = sx - fx0;
  const double ay = sy - fy0;
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  auto tap = [&](int y, int x) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return data[(static_cast<std::size_t>(y) * w + x) * ch + c];
  };
  if (ax == 0.0 && ay == 0.0) return tap(y0, x0);
  const double top = (1.0 - ax) * tap(y0, x0) + ax * tap(y0, x0 + 1);
  const double bottom = (1.0 - ax) * tap(y0 + 1, x0) + ax * tap(y0 + 1, x0 + 1);
  return (1.0 - ay) * top + ay * bottom;
}

// Align-corners source coordinate for output index i.
double source_coord(int i, int in_extent, int out_extent) {
  if (out_extent == 1) return 0.5 * (in_extent - 1);
  if (in_extent == out_extent) return static_cast<double>(i);
  return static_cast<double>(i) * static_cast<double>(in_extent - 1) /
         static_cast<double>(out_extent - 1);
}

std::vector<double> resize_planes(std::span<const double> src, int h, int w, int ch, int out_w,
                                  int out_h) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * ch);
  for (int y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, h, out_h);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ay = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, w, out_w);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double ax = sx - x0;
      for (int c = 0; c < ch; ++c) {
        auto v = [&](int yy, int xx) { return src[(static_cast<std::size_t>(yy) * w + xx) * ch + c]; };
        double value;
        if (ax == 0.0 && ay == 0.0) {
          value = v(y0, x0);
        } else {
          const double top = (1.0 - ax) * v(y0, x0) + ax * v(y0, x1);
          const double bottom = (1.0 - ax) * v(y1, x0) + ax * v(y1, x1);
          value = (1.0 - ay) * top + ay * bottom;
        }
        out[(static_cast<std::size_t>(y) * out_w + x) * ch + c] = value;
      }
    }
  }
  return out;
}

}  // namespace

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width);
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::InvalidArgument, "images have 1 or 3 channels");
  }
  data_.assign(pixel_count() * static_cast<std::size_t>(channels), fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width);
  if (channels != 1 && channels != 3) {
    throw Error(ErrorCode::InvalidArgument, "images have 1 or 3 channels");
  }
  if (data_.size() != pixel_count() * static_cast<std::size_t>(channels)) {
    throw Error(ErrorCode::ShapeMismatch, "image data length does not match dimensions");
  }
}

GrayMap::GrayMap(int height, int width, double fill) : height_(height), width_(width) {
  check_dims(height, width);
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

GrayMap::GrayMap(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width);
  if (data_.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorCode::ShapeMismatch, "map data length does not match dimensions");
  }
}

Image invert(const Image& img) {
  Image out = img;
  for (double& v : out.data()) v = 1.0 - v;
  return out;
}

WhiteBalanceResult white_balance(const Image& img, double percentile) {
  if (img.channels() != 3) {
    throw Error(ErrorCode::InvalidArgument, "white balance needs a 3-channel image");
  }
  if (!(percentile > 0.0 && percentile <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "percentile must lie in (0, 1]");
  }
  const std::size_t n = img.pixel_count();
  const std::size_t rank =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(percentile * n)), 1, n);

  WhiteBalanceResult result{img, {}};
  std::vector<double> values(n);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) values[i] = img.data()[i * 3 + c];
    std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
    const double level = values[rank - 1];
    if (level <= 0.0) {
      throw Error(ErrorCode::DegenerateChannel,
                  "channel " + std::to_string(c) + " has a zero percentile intensity");
    }
    result.gains[c] = 1.0 / level;
  }
  auto out = result.image.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = std::min(1.0, result.gains[c] * out[i * 3 + c]);
  }
  return result;
}

GrayMap min_filter(const GrayMap& map, int radius) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
  if (radius == 0) return map;
  const int h = map.height();
  const int w = map.width();
  // A clipped rectangle is the product of two clipped intervals, so the
  // separable row/column minimum is exact.
  GrayMap rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [lo, hi] = window(x, radius, w);
      double m = map.at(y, lo);
      for (int k = lo + 1; k <= hi; ++k) m = std::min(m, map.at(y, k));
      rows.at(y, x) = m;
    }
  }
  GrayMap out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto [lo, hi] = window(y, radius, h);
    for (int x = 0; x < w; ++x) {
      double m = rows.at(lo, x);
      for (int k = lo + 1; k <= hi; ++k) m = std::min(m, rows.at(k, x));
      out.at(y, x) = m;
    }
  }
  return out;
}

GrayMap box_filter(const GrayMap& map, int radius) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
  if (radius == 0) return map;
  const int h = map.height();
  const int w = map.width();

  // Raw window sums along rows, then columns; one division by the clipped
  // window area at the end.
  GrayMap rows(h, w);
  std::vector<double> prefix(static_cast<std::size_t>(std::max(h, w)) + 1);
  for (int y = 0; y < h; ++y) {
    prefix[0] = 0.0;
    for (int x = 0; x < w; ++x) prefix[x + 1] = prefix[x] + map.at(y, x);
    for (int x = 0; x < w; ++x) {
      const auto [lo, hi] = window(x, radius, w);
      rows.at(y, x) = prefix[hi + 1] - prefix[lo];
    }
  }
  GrayMap out(h, w);
  for (int x = 0; x < w; ++x) {
    prefix[0] = 0.0;
    for (int y = 0; y < h; ++y) prefix[y + 1] = prefix[y] + rows.at(y, x);
    const auto [xlo, xhi] = window(x, radius, w);
    const int count_x = xhi - xlo + 1;
    for (int y = 0; y < h; ++y) {
      const auto [lo, hi] = window(y, radius, h);
      out.at(y, x) = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(count_x * (hi - lo + 1));
    }
  }
  return out;
}

GrayMap guided_filter(const GrayMap& guide, const GrayMap& src, int radius, double eps) {
  if (!guide.same_shape(src)) {
    throw Error(ErrorCode::ShapeMismatch, "guide and source maps differ in shape");
  }
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps must be > 0");
  const std::size_t n = src.size();
  // Working on offsets from the first sample leaves the output unchanged and
  // keeps constant inputs exact.
  const double g0 = guide.data()[0];
  const double p0 = src.data()[0];
  GrayMap g(guide.height(), guide.width());
  GrayMap p(guide.height(), guide.width());
  GrayMap gp(guide.height(), guide.width());
  GrayMap gg(guide.height(), guide.width());
  for (std::size_t i = 0; i < n; ++i) {
    g.data()[i] = guide.data()[i] - g0;
    p.data()[i] = src.data()[i] - p0;
    gp.data()[i] = g.data()[i] * p.data()[i];
    gg.data()[i] = g.data()[i] * g.data()[i];
  }
  const GrayMap mean_g = box_filter(g, radius);
  const GrayMap mean_p = box_filter(p, radius);
  const GrayMap corr_gp = box_filter(gp, radius);
  const GrayMap corr_gg = box_filter(gg, radius);

  GrayMap a(guide.height(), guide.width());
  GrayMap b(guide.height(), guide.width());
  for (std::size_t i = 0; i < n; ++i) {
    const double mg = mean_g.data()[i];
    const double mp = mean_p.data()[i];
    const double var = std::max(0.0, corr_gg.data()[i] - mg * mg);
    const double cov = corr_gp.data()[i] - mg * mp;
    a.data()[i] = cov / (var + eps);
    b.data()[i] = mp - a.data()[i] * mg;
  }
  const GrayMap mean_a = box_filter(a, radius);
  const GrayMap mean_b = box_filter(b, radius);
  GrayMap out(guide.height(), guide.width());
  for (std::size_t i = 0; i < n; ++i) {
    out.data()[i] = mean_a.data()[i] * g.data()[i] + mean_b.data()[i] + p0;
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  check_dims(out_h, out_w);
  if (out_w == img.width() && out_h == img.height()) return img;
  return Image(out_h, out_w, img.channels(),
               resize_planes(img.data(), img.height(), img.width(), img.channels(), out_w, out_h));
}

GrayMap resize_bilinear(const GrayMap& map, int out_w, int out_h) {
  check_dims(out_h, out_w);
  if (out_w == map.width() && out_h == map.height()) return map;
  return GrayMap(out_h, out_w, resize_planes(map.data(), map.height(), map.width(), 1, out_w, out_h));
}

Image center_crop(const Image& img, int out_w, int out_h) {
  check_dims(out_h, out_w);
  if (out_w > img.width() || out_h > img.height()) {
    throw Error(ErrorCode::CropTooLarge, std::to_string(out_w) + "x" + std::to_string(out_h) +
                                             " exceeds " + std::to_string(img.width()) + "x" +
                                             std::to_string(img.height()));
  }
  const int left = (img.width() - out_w) / 2;
  const int top = (img.height() - out_h) / 2;
  Image out(out_h, out_w, img.channels());
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y + top, x + left, c);
    }
  }
  return out;
}

Image rotate(const Image& img, double angle_degrees) {
  if (!std::isfinite(angle_degrees)) {
    throw Error(ErrorCode::InvalidArgument, "rotation angle must be finite");
  }
  if (angle_degrees == 0.0) return img;
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const int h = img.height();
  const int w = img.width();
  const int ch = img.channels();
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  Image out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      // Snap coordinates that land within rounding noise of a grid point so
      // quarter turns reduce to index permutations.
      double sx = cx + cs * dx - sn * dy;
      double sy = cy + sn * dx + cs * dy;
      if (std::abs(sx - std::round(sx)) < 1e-9) sx = std::round(sx);
      if (std::abs(sy - std::round(sy)) < 1e-9) sy = std::round(sy);
      for (int c = 0; c < ch; ++c) {
        out.at(y, x, c) = clamp01(sample_zero_border(img.data(), h, w, ch, c, sx, sy));
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out = img;
  const int w = img.width();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y, w - 1 - x, c);
    }
  }
  return out;
}

GrayMap luma(const Image& img) {
  GrayMap out(img.height(), img.width());
  const int ch = img.channels();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    double s = 0.0;
    for (int c = 0; c < ch; ++c) s += img.data()[i * ch + c];
    out.data()[i] = s / ch;
  }
  return out;
}

GrayMap channel_min(const Image& img) {
  GrayMap out(img.height(), img.width());
  const int ch = img.channels();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    double m = img.data()[i * ch];
    for (int c = 1; c < ch; ++c) m = std::min(m, img.data()[i * ch + c]);
    out.data()[i] = m;
  }
  return out;
}

GrayMap channel(const Image& img, int c) {
  if (c < 0 || c >= img.channels()) throw Error(ErrorCode::InvalidArgument, "channel out of range");
  GrayMap out(img.height(), img.width());
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    out.data()[i] = img.data()[i * img.channels() + c];
  }
  return out;
}

Image to_image(const GrayMap& map) {
  Image out(map.height(), map.width(), 1);
  for (std::size_t i = 0; i < map.size(); ++i) out.data()[i] = clamp01(map.data()[i]);
  return out;
}

}  // namespace fundus
