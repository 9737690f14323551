#pragma once

#include <cstdint>

#include "fundus/autodiff/checkpoint.hpp"
#include "fundus/autodiff/tensor.hpp"

namespace fundus {

/// U-Net-style transmission estimator. Level l of the encoder has
/// base_channels * 2^l channels; the bottleneck has base_channels * 2^depth.
struct TinyUNetConfig {
  int depth = 3;
  int base_channels = 8;
  int in_channels = 3;
  int out_channels = 1;
  double t_min = 0.1;

  void validate() const;
};

inline constexpr double kProbEps = 0x1p-20;

/// Conv-ReLU-pool blocks with channel doubling, then global average pooling,
/// one dense unit and a sigmoid squeezed into [kProbEps, 1 - kProbEps] so the
/// probability never rounds to exactly 0 or 1 in float.
struct TinyClassifierConfig {
  int conv_blocks = 4;
  int base_channels = 8;
  int in_channels = 3;

  void validate() const;
};

/// He-normal weights (std = sqrt(2 / fan_in)) and zero biases; deterministic
/// per seed. Parameter order is the order forward() consumes them.
template <typename T>
ad::ParamList<T> init_unet(const TinyUNetConfig& config, std::uint64_t seed);

template <typename T>
ad::ParamList<T> init_classifier(const TinyClassifierConfig& config, std::uint64_t seed);

/// x [N, in_channels, H, W] -> t [N, 1, H, W] with values in [t_min, 1].
/// Throws BadSpatialDims unless H and W are divisible by 2^depth.
template <typename T>
ad::BasicTensor<T> unet_forward(const TinyUNetConfig& config, const ad::ParamList<T>& params,
                                const ad::BasicTensor<T>& x);

/// x [N, in_channels, H, W] -> probability [N, 1]. Throws BadSpatialDims when
/// the pooling chain would shrink a side below one pixel or hit an odd size.
template <typename T>
ad::BasicTensor<T> classifier_forward(const TinyClassifierConfig& config,
                                      const ad::ParamList<T>& params, const ad::BasicTensor<T>& x);

}  // namespace fundus
