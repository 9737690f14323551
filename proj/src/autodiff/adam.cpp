#include "fundus/autodiff/adam.hpp"

#include <cmath>

#include "fundus/error.hpp"

namespace fundus::ad {

template <typename T>
Adam<T>::Adam(std::vector<BasicTensor<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
  param_steps_.assign(params_.size(), 0);
}

template <typename T>
void Adam<T>::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (p.frozen()) continue;
    if (!p.has_grad()) {
      throw Error(ErrorCode::MissingGrad,
                  "parameter " + std::to_string(k) + " " + shape_str(p.shape()) + " has no gradient");
    }
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (p.frozen()) continue;
    const std::int64_t t = ++param_steps_[k];
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto values = p.values();
    auto grad = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      values[i] = static_cast<T>(values[i] - update);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace fundus::ad
