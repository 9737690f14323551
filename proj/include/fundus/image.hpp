#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fundus {

/// Multi-channel image with intensities in [0, 1].
///
/// Storage is row-major and channel-interleaved: the value for row `y`,
/// column `x`, channel `c` lives at `(y * width + x) * channels + c`.
/// Public operations in this library keep every value inside [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Single-channel scalar field without a range constraint (dark channels,
/// guided-filter coefficients, transmission maps before clamping).
class GrayMap {
 public:
  GrayMap() = default;
  GrayMap(int height, int width, double fill = 0.0);
  GrayMap(int height, int width, std::vector<double> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool same_shape(const GrayMap& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const GrayMap&, const GrayMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

struct WhiteBalanceResult {
  Image image;
  std::array<double, 3> gains{};
};

Image invert(const Image& img);

/// Per-channel percentile scaling. The percentile value of a channel is the
/// nearest-rank statistic: the ceil(percentile * N)-th smallest of its N values.
/// Throws DegenerateChannel when that value is zero.
WhiteBalanceResult white_balance(const Image& img, double percentile = 0.99);

/// Window filters use border-clipped (2r+1)x(2r+1) windows; no padding values.
GrayMap min_filter(const GrayMap& map, int radius);
GrayMap box_filter(const GrayMap& map, int radius);

/// Guided filter; all local means via box_filter(radius).
GrayMap guided_filter(const GrayMap& guide, const GrayMap& src, int radius, double eps);

/// Bilinear resampling with the align-corners convention: output pixel i maps
/// to source coordinate i * (in - 1) / (out - 1); a single output column or row
/// samples the source center.
Image resize_bilinear(const Image& img, int out_w, int out_h);
GrayMap resize_bilinear(const GrayMap& map, int out_w, int out_h);

/// Centered crop; with an odd margin the extra row/column is dropped at the
/// bottom/right, so the window is biased toward the top-left.
Image center_crop(const Image& img, int out_w, int out_h);

/// Counter-clockwise rotation (in image display orientation) about the pixel
/// grid center with bilinear sampling; taps outside the source read as 0.
Image rotate(const Image& img, double angle_degrees);

Image hflip(const Image& img);

/// Mean of the channels at each pixel.
GrayMap luma(const Image& img);

/// Per-pixel minimum over channels.
GrayMap channel_min(const Image& img);

/// Single channel of `img` as a map.
GrayMap channel(const Image& img, int c);

Image to_image(const GrayMap& map);

}  // namespace fundus
