#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fundus/autodiff/tensor.hpp"

namespace fundus::ad {

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Checkpoint layout (version 1), all integers u32 little-endian:
///
///   magic    "FUNDCKPT" (8 bytes)
///   version  1
///   dtype    4 (float32) or 8 (float64)
///   count    number of tensors
///   then per tensor, in list order:
///     name_len, name bytes (UTF-8, no terminator)
///     rank, extents[rank]
///     values, row-major, little-endian IEEE-754 of the stated dtype
template <typename T>
std::string serialize_checkpoint(const ParamList<T>& params);

template <typename T>
void save_checkpoint(const ParamList<T>& params, const std::filesystem::path& path);

/// Reads a checkpoint into freshly allocated leaf tensors (requires_grad set).
template <typename T>
ParamList<T> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params`, matching by name and shape.
/// Throws ShapeMismatch on a missing name or differing shape.
template <typename T>
void load_checkpoint_into(ParamList<T>& params, const std::filesystem::path& path);

/// Tensor handles of a parameter list, in order.
template <typename T>
std::vector<BasicTensor<T>> tensors_of(const ParamList<T>& params) {
  std::vector<BasicTensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace fundus::ad
