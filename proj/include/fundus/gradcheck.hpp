#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fundus/autodiff/tensor.hpp"

namespace fundus {

struct GradcheckRow {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double step = 1e-6;
  /// Denominator floor of the relative error.
  double floor = 1e-8;
  /// Entries probed per input; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over the
/// probed entries of every input, using central differences of `loss`.
/// `loss` must return a scalar built from the given inputs.
double max_relative_error(const std::function<ad::TensorD(const std::vector<ad::TensorD>&)>& loss,
                          std::vector<ad::TensorD> inputs, const GradcheckOptions& options,
                          std::size_t* checked = nullptr);

/// Finite-difference checks of the Shadow Removal Layer, every differentiable
/// op, and the full U-Net -> shadow layer -> classifier -> loss chain.
std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace fundus
