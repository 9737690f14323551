#include "fundus/dehaze.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fundus/error.hpp"
#include "fundus/image_io.hpp"

namespace fundus {

namespace {

constexpr double kMinAirlight = 1e-3;
constexpr char kRefMagic[8] = {'F', 'U', 'N', 'D', 'R', 'E', 'F', '1'};

void require_rgb(const Image& img, const char* what) {
  if (img.channels() != 3) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " needs a 3-channel image");
  }
}

void require_same_grid(const Image& img, const TransmissionMap& t) {
  if (img.height() != t.height() || img.width() != t.width()) {
    throw Error(ErrorCode::ShapeMismatch, "image and transmission map differ in size");
  }
}

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

// Neumaier compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

TransmissionMap TransmissionMap::clamped(GrayMap raw, double t_floor) {
  if (!(t_floor > 0.0 && t_floor <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "t_floor must lie in (0, 1]");
  }
  for (double& v : raw.data()) v = std::clamp(v, t_floor, 1.0);
  return TransmissionMap(std::move(raw), t_floor);
}

double TransmissionMap::mean() const {
  CompensatedSum acc;
  for (double v : map_.data()) acc.add(v);
  return acc.value() / static_cast<double>(map_.size());
}

void DehazeParams::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (patch_radius < 0) fail("patch_radius must be >= 0");
  if (!(omega > 0.0 && omega <= 1.0)) fail("omega must lie in (0, 1]");
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) fail("top_fraction must lie in (0, 1]");
  if (!(t_floor > 0.0 && t_floor <= 1.0)) fail("t_floor must lie in (0, 1]");
  if (guided_radius < 0) fail("guided_radius must be >= 0");
  if (!(guided_eps > 0.0)) fail("guided_eps must be > 0");
}

GrayMap dark_channel(const Image& img, int patch_radius) {
  require_rgb(img, "dark channel");
  return min_filter(channel_min(img), patch_radius);
}

AtmosphericLight estimate_atmospheric_light(const Image& img, const GrayMap& dark,
                                            double top_fraction) {
  require_rgb(img, "airlight estimation");
  if (dark.height() != img.height() || dark.width() != img.width()) {
    throw Error(ErrorCode::ShapeMismatch, "dark channel does not match the image");
  }
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "top_fraction must lie in (0, 1]");
  }
  const std::size_t n = img.pixel_count();
  const std::size_t count =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(top_fraction * n)), 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto d = dark.data();
  std::partial_sort(order.begin(), order.begin() + count, order.end(),
                    [&](std::size_t a, std::size_t b) { return d[a] > d[b] || (d[a] == d[b] && a < b); });

  AtmosphericLight light;
  for (int c = 0; c < 3; ++c) {
    CompensatedSum acc;
    for (std::size_t k = 0; k < count; ++k) acc.add(img.data()[order[k] * 3 + c]);
    light.rgb[c] = std::clamp(acc.value() / static_cast<double>(count), kMinAirlight, 1.0);
  }
  return light;
}

TransmissionMap estimate_transmission(const Image& img, const AtmosphericLight& a,
                                      const DehazeParams& params) {
  require_rgb(img, "transmission estimation");
  params.validate();
  Image normalized = img;
  auto v = normalized.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) v[i * 3 + c] /= a.rgb[c];
  }
  // img / A may leave [0, 1]; the dark channel is taken on raw values.
  GrayMap t = min_filter(channel_min(normalized), params.patch_radius);
  for (double& x : t.data()) x = 1.0 - params.omega * x;
  return TransmissionMap::clamped(std::move(t), params.t_floor);
}

TransmissionMap refine_transmission(const Image& guide, const TransmissionMap& t,
                                    const DehazeParams& params) {
  require_same_grid(guide, t);
  params.validate();
  GrayMap refined = guided_filter(luma(guide), t.map(), params.guided_radius, params.guided_eps);
  return TransmissionMap::clamped(std::move(refined), params.t_floor);
}

Image recover_radiance(const Image& img, const TransmissionMap& t, const AtmosphericLight& a,
                       double t_floor) {
  require_rgb(img, "radiance recovery");
  require_same_grid(img, t);
  Image out = img;
  auto v = out.data();
  auto tv = t.map().data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double denom = std::max(tv[i], t_floor);
    for (int c = 0; c < 3; ++c) {
      const double j = (v[i * 3 + c] - a.rgb[c]) / denom + a.rgb[c];
      v[i * 3 + c] = std::clamp(j, 0.0, 1.0);
    }
  }
  return out;
}

DehazeResult dehaze_image(const Image& img, const DehazeParams& params,
                          const std::optional<AtmosphericLight>& fixed_light) {
  require_rgb(img, "dehazing");
  params.validate();
  const AtmosphericLight light =
      fixed_light ? *fixed_light
                  : estimate_atmospheric_light(img, dark_channel(img, params.patch_radius),
                                               params.top_fraction);
  const TransmissionMap raw = estimate_transmission(img, light, params);
  TransmissionMap refined = refine_transmission(img, raw, params);
  Image radiance = recover_radiance(img, refined, light, params.t_floor);
  return {std::move(radiance), std::move(refined), light};
}

IlluminationResult illuminate(const Image& img, const DehazeParams& params, double wb_percentile) {
  require_rgb(img, "illumination compensation");
  WhiteBalanceResult wb = white_balance(img, wb_percentile);
  DehazeResult dehazed = dehaze_image(invert(wb.image), params, AtmosphericLight{});
  return {invert(dehazed.radiance), std::move(dehazed.transmission), wb.gains};
}

TransmissionMap inverted_domain_transmission(const Image& img, const DehazeParams& params,
                                             double wb_percentile) {
  require_rgb(img, "transmission estimation");
  const Image inverted = invert(white_balance(img, wb_percentile).image);
  const TransmissionMap raw = estimate_transmission(inverted, AtmosphericLight{}, params);
  return refine_transmission(inverted, raw, params);
}

TransmissionMap average_maps(const std::vector<TransmissionMap>& maps) {
  if (maps.empty()) throw Error(ErrorCode::EmptyDataset, "no maps to average");
  const int h = maps.front().height();
  const int w = maps.front().width();
  double t_floor = maps.front().t_floor();
  for (const auto& m : maps) {
    if (m.height() != h || m.width() != w) {
      throw Error(ErrorCode::ShapeMismatch, "maps to average differ in size");
    }
    t_floor = std::min(t_floor, m.t_floor());
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  GrayMap mean(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    CompensatedSum acc;
    double lo = maps.front().map().data()[i];
    double hi = lo;
    for (const auto& m : maps) {
      const double v = m.map().data()[i];
      acc.add(v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    // Identical samples average to themselves without rounding.
    mean.data()[i] = lo == hi ? lo : acc.value() / static_cast<double>(maps.size());
  }
  return TransmissionMap::clamped(std::move(mean), t_floor);
}

ReferenceMap compute_reference_map(const std::vector<std::filesystem::path>& paths,
                                   const DehazeParams& params, int out_size, double wb_percentile) {
  if (paths.empty()) throw Error(ErrorCode::EmptyDataset, "no images given for the reference map");
  if (out_size < 1) throw Error(ErrorCode::InvalidArgument, "reference resolution must be >= 1");
  params.validate();

  ReferenceMap ref;
  std::vector<TransmissionMap> maps;
  maps.reserve(paths.size());
  for (const auto& path : paths) {
    try {
      const TransmissionMap t = inverted_domain_transmission(read_image(path), params, wb_percentile);
      maps.push_back(TransmissionMap::clamped(resize_bilinear(t.map(), out_size, out_size),
                                              params.t_floor));
    } catch (const Error& e) {
      ref.skipped.push_back(path.string() + ": " + e.what());
    }
  }
  if (maps.empty()) {
    throw Error(ErrorCode::EmptyDataset,
                "none of the " + std::to_string(paths.size()) + " images could be read");
  }
  ref.map = average_maps(maps);
  ref.source_count = static_cast<int>(maps.size());
  ref.resolution = out_size;
  return ref;
}

Image transmission_to_image(const TransmissionMap& t) {
  Image out(t.height(), t.width(), 1);
  const double span = 1.0 - t.t_floor();
  auto src = t.map().data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    out.data()[i] = span > 0.0 ? std::clamp((src[i] - t.t_floor()) / span, 0.0, 1.0) : 1.0;
  }
  return out;
}

void save_reference_map(const ReferenceMap& ref, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out.write(kRefMagic, sizeof(kRefMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.map.height()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.map.width()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.source_count));
  put_le<double>(out, ref.map.t_floor());
  for (double v : ref.map.map().data()) put_le<double>(out, v);
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

ReferenceMap load_reference_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kRefMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a reference map file");
  }
  const auto h = get_le<std::uint32_t>(in);
  const auto w = get_le<std::uint32_t>(in);
  const auto count = get_le<std::uint32_t>(in);
  const auto t_floor = get_le<double>(in);
  if (!in || h == 0 || w == 0 || h > 1u << 15 || w > 1u << 15) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": bad reference map header");
  }
  std::vector<double> values(static_cast<std::size_t>(h) * w);
  for (double& v : values) v = get_le<double>(in);
  if (!in) throw Error(ErrorCode::CorruptFile, path.string() + ": truncated reference map");
  ReferenceMap ref;
  ref.map = TransmissionMap::clamped(GrayMap(static_cast<int>(h), static_cast<int>(w), std::move(values)),
                                     t_floor);
  ref.source_count = static_cast<int>(count);
  ref.resolution = static_cast<int>(h);
  return ref;
}

}  // namespace fundus
