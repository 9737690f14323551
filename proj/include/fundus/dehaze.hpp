#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fundus/image.hpp"

namespace fundus {

/// Transmission (depth) map t(x). Every value lies in [t_floor, 1].
class TransmissionMap {
 public:
  TransmissionMap() = default;

  /// Clamps `raw` into [t_floor, 1].
  static TransmissionMap clamped(GrayMap raw, double t_floor);

  const GrayMap& map() const noexcept { return map_; }
  double t_floor() const noexcept { return t_floor_; }
  int height() const noexcept { return map_.height(); }
  int width() const noexcept { return map_.width(); }
  double mean() const;

 private:
  TransmissionMap(GrayMap map, double t_floor) : map_(std::move(map)), t_floor_(t_floor) {}

  GrayMap map_;
  double t_floor_ = 0.1;
};

struct AtmosphericLight {
  std::array<double, 3> rgb{1.0, 1.0, 1.0};
};

struct DehazeParams {
  int patch_radius = 7;
  double omega = 0.95;
  double top_fraction = 0.001;
  double t_floor = 0.1;
  int guided_radius = 30;
  double guided_eps = 1e-3;

  /// Throws InvalidArgument when a field leaves its range.
  void validate() const;
};

struct DehazeResult {
  Image radiance;
  TransmissionMap transmission;
  AtmosphericLight light;
};

struct IlluminationResult {
  Image image;
  /// Transmission estimated in the inverted-intensity domain.
  TransmissionMap transmission;
  std::array<double, 3> white_balance_gains{};
};

struct ReferenceMap {
  TransmissionMap map;
  int source_count = 0;
  int resolution = 0;
  /// Inputs that could not be read, as "path: reason".
  std::vector<std::string> skipped;
};

/// min over the clipped window of the per-pixel channel minimum.
GrayMap dark_channel(const Image& img, int patch_radius);

/// Mean source color over the ceil(top_fraction * N) pixels with the largest
/// dark-channel values (ties go to the lower row-major index). Components are
/// clamped to [1e-3, 1].
AtmosphericLight estimate_atmospheric_light(const Image& img, const GrayMap& dark,
                                            double top_fraction);

/// t = 1 - omega * dark_channel(img / A), clamped to [t_floor, 1].
TransmissionMap estimate_transmission(const Image& img, const AtmosphericLight& a,
                                      const DehazeParams& params);

/// Guided-filter refinement using the guide's luma; result re-clamped.
TransmissionMap refine_transmission(const Image& guide, const TransmissionMap& t,
                                    const DehazeParams& params);

/// Inverts the haze model: J = (I - A) / max(t, t_floor) + A, clamped to [0, 1].
Image recover_radiance(const Image& img, const TransmissionMap& t, const AtmosphericLight& a,
                       double t_floor);

/// Dark channel, airlight, transmission, refinement and radiance recovery.
/// When `fixed_light` is set it replaces the airlight estimate.
DehazeResult dehaze_image(const Image& img, const DehazeParams& params,
                          const std::optional<AtmosphericLight>& fixed_light = std::nullopt);

/// Illumination compensation: white balance, invert, dehaze with A = 1,
/// invert back. Equivalent to J = I / t with t estimated on the inverted image.
IlluminationResult illuminate(const Image& img, const DehazeParams& params,
                              double wb_percentile = 0.99);

/// Transmission map of one image as used for the dataset reference: white
/// balance, invert, estimate with A = 1, refine.
TransmissionMap inverted_domain_transmission(const Image& img, const DehazeParams& params,
                                             double wb_percentile = 0.99);

/// Per-pixel mean of the inverted-domain transmission maps of every readable
/// image, each resized to out_size x out_size. Unreadable files are listed in
/// `skipped`; throws EmptyDataset if nothing could be read.
ReferenceMap compute_reference_map(const std::vector<std::filesystem::path>& paths,
                                   const DehazeParams& params, int out_size,
                                   double wb_percentile = 0.99);

/// Order-independent mean of equally sized maps (compensated summation).
TransmissionMap average_maps(const std::vector<TransmissionMap>& maps);

/// Grayscale rendering with t mapped linearly from [t_floor, 1] to [0, 1].
Image transmission_to_image(const TransmissionMap& t);

/// Raw sidecar layout, all little-endian:
///   bytes 0..7   magic "FUNDREF1"
///   u32          height
///   u32          width
///   u32          source_count
///   f64          t_floor
///   f64[h * w]   values, row-major
void save_reference_map(const ReferenceMap& ref, const std::filesystem::path& path);
ReferenceMap load_reference_map(const std::filesystem::path& path);

}  // namespace fundus
