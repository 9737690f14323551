#pragma once

#include "fundus/autodiff/tensor.hpp"
#include "fundus/shadow_layer.hpp"

namespace fundus::ad {

/// Cross-correlation of x [N, Cin, H, W] with w [Cout, Cin, k, k] plus bias
/// b [Cout]; k must be odd. Output is [N, Cout, (H + 2 pad - k) / stride + 1, ...].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride = 1, int pad = 0);

/// 2x2 max pooling with stride 2. The gradient goes to the first maximum of
/// each window in row-major order. Throws OddSpatialDims for odd H or W.
template <typename T>
BasicTensor<T> max_pool2(const BasicTensor<T>& x);

/// Nearest-neighbour 2x upsampling of [N, C, H, W].
template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x);

/// Channel concatenation of two [N, C, H, W] tensors.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// lo + (hi - lo) * x, elementwise.
template <typename T>
BasicTensor<T> scale_shift(const BasicTensor<T>& x, T lo, T hi);

/// [N, C, H, W] -> [N, C] spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// x [N, in] times w^T, w [out, in], plus b [out].
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

/// Sum of all elements, shape [1].
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

/// Mean over a batch of binary cross-entropies; pred and label are [N, 1].
/// Throws DomainError if a prediction is not strictly inside (0, 1).
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& label);

/// Mean squared difference, shape [1].
template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Shadow Removal Layer on image [N, 3, H, W] and transmission [N, 1, H, W].
template <typename T>
BasicTensor<T> shadow_removal(const BasicTensor<T>& image, const BasicTensor<T>& t,
                              const ShadowLayerConfig& cfg);

}  // namespace fundus::ad
