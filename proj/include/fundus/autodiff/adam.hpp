#pragma once

#include <cstdint>
#include <vector>

#include "fundus/autodiff/tensor.hpp"

namespace fundus::ad {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Each parameter keeps its own step count, so a
/// parameter that was frozen starts its bias correction fresh when unfrozen.
template <typename T>
class Adam {
 public:
  Adam(std::vector<BasicTensor<T>> params, AdamConfig config = {});

  /// Updates every non-frozen parameter in place. Throws MissingGrad if a
  /// non-frozen parameter has no gradient.
  void step();
  void zero_grad();

  const AdamConfig& config() const noexcept { return config_; }
  std::int64_t steps() const noexcept { return steps_; }
  std::int64_t param_steps(std::size_t i) const { return param_steps_.at(i); }
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<BasicTensor<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::vector<std::int64_t> param_steps_;
  std::int64_t steps_ = 0;
};

/// Sets the frozen flag on each tensor. Frozen parameters still receive
/// gradients; the optimizer leaves them untouched.
template <typename T>
void freeze(std::vector<BasicTensor<T>>& params, bool flag) {
  for (auto& p : params) p.set_frozen(flag);
}

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace fundus::ad
