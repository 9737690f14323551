#include "fundus/shadow_layer.hpp"

namespace fundus {

void ShadowLayerConfig::validate() const {
  if (!(a_value > 0.0 && a_value <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "a_value must lie in (0, 1]");
  }
  if (!(t_min_clamp > 0.0)) throw Error(ErrorCode::InvalidArgument, "t_min_clamp must be > 0");
}

Image remove_shadows(const Image& img, const TransmissionMap& t, const ShadowLayerConfig& cfg) {
  cfg.validate();
  if (img.channels() != 3) throw Error(ErrorCode::InvalidArgument, "shadow removal needs RGB input");
  if (img.height() != t.height() || img.width() != t.width()) {
    throw Error(ErrorCode::ShapeMismatch, "image and transmission map differ in size");
  }
  Image out = img;
  auto v = out.data();
  auto tv = t.map().data();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    if (!(tv[p] >= cfg.t_min_clamp)) {
      throw Error(ErrorCode::TransmissionUnderflow, "transmission below t_min_clamp");
    }
    for (int c = 0; c < 3; ++c) {
      double j = shadow_value(v[p * 3 + c], tv[p], cfg.a_value);
      if (cfg.clamp_output_for_export) j = std::clamp(j, 0.0, 1.0);
      v[p * 3 + c] = j;
    }
  }
  return out;
}

}  // namespace fundus
