#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>

#include "fundus/dehaze.hpp"
#include "fundus/error.hpp"
#include "fundus/image.hpp"

namespace fundus {

/// Shadow Removal Layer:
///
///   J = 1 - (((1 - I) - A) / t + A)
///
/// i.e. dehazing of the inverted image followed by inversion. With A = 1 this
/// is J = I / t. Inside the differentiable path J is not clamped; only
/// exported images are clamped to [0, 1].
struct ShadowLayerConfig {
  double a_value = 1.0;
  double t_min_clamp = 0.1;
  bool clamp_output_for_export = true;

  void validate() const;
};

/// Batch geometry. Images are planar [n, 3, h, w]; transmission is
/// [n, 1, h, w] and one t value serves all three color channels.
struct ShadowBatch {
  int n = 0;
  int h = 0;
  int w = 0;

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t image_size() const noexcept { return static_cast<std::size_t>(n) * 3 * plane(); }
  std::size_t map_size() const noexcept { return static_cast<std::size_t>(n) * plane(); }
};

template <typename T>
constexpr T shadow_value(T i, T t, T a) {
  return T(1) - (((T(1) - i) - a) / t + a);
}

/// dJ/dI = 1 / t
template <typename T>
constexpr T shadow_d_image(T /*i*/, T t, T /*a*/) {
  return T(1) / t;
}

/// dJ/dt = ((1 - I) - A) / t^2
template <typename T>
constexpr T shadow_d_transmission(T i, T t, T a) {
  return ((T(1) - i) - a) / (t * t);
}

namespace detail {

inline void check_shadow_spans(const ShadowBatch& b, std::size_t image, std::size_t map,
                               std::size_t out) {
  if (image != b.image_size() || out != b.image_size() || map != b.map_size()) {
    throw Error(ErrorCode::ShapeMismatch, "shadow layer spans do not match the batch geometry");
  }
}

}  // namespace detail

template <typename T>
void shadow_forward(std::span<const T> image, std::span<const T> t, const ShadowBatch& batch,
                    const ShadowLayerConfig& cfg, std::span<T> out) {
  detail::check_shadow_spans(batch, image.size(), t.size(), out.size());
  const T t_min = static_cast<T>(cfg.t_min_clamp);
  const T a = static_cast<T>(cfg.a_value);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!(t[k] >= t_min)) {
      throw Error(ErrorCode::TransmissionUnderflow,
                  "t = " + std::to_string(static_cast<double>(t[k])) + " below t_min_clamp");
    }
  }
  const std::size_t plane = batch.plane();
  for (int s = 0; s < batch.n; ++s) {
    const T* tv = t.data() + static_cast<std::size_t>(s) * plane;
    for (int c = 0; c < 3; ++c) {
      const std::size_t base = (static_cast<std::size_t>(s) * 3 + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[base + p] = shadow_value(image[base + p], tv[p], a);
    }
  }
}

/// Writes dI = dJ / t and dt = sum over channels of dJ * ((1 - I) - A) / t^2.
template <typename T>
void shadow_backward(std::span<const T> image, std::span<const T> t, const ShadowBatch& batch,
                     const ShadowLayerConfig& cfg, std::span<const T> grad_out,
                     std::span<T> grad_image, std::span<T> grad_t) {
  detail::check_shadow_spans(batch, image.size(), t.size(), grad_out.size());
  if (grad_image.size() != image.size() || grad_t.size() != t.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shadow layer gradient spans do not match");
  }
  const T a = static_cast<T>(cfg.a_value);
  const std::size_t plane = batch.plane();
  std::fill(grad_t.begin(), grad_t.end(), T(0));
  for (int s = 0; s < batch.n; ++s) {
    const T* tv = t.data() + static_cast<std::size_t>(s) * plane;
    T* gt = grad_t.data() + static_cast<std::size_t>(s) * plane;
    for (int c = 0; c < 3; ++c) {
      const std::size_t base = (static_cast<std::size_t>(s) * 3 + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T g = grad_out[base + p];
        grad_image[base + p] = g * shadow_d_image(image[base + p], tv[p], a);
        gt[p] += g * shadow_d_transmission(image[base + p], tv[p], a);
      }
    }
  }
}

/// Applies the layer to one interleaved image, clamping the result to [0, 1]
/// when `cfg.clamp_output_for_export` is set.
Image remove_shadows(const Image& img, const TransmissionMap& t, const ShadowLayerConfig& cfg);

}  // namespace fundus
