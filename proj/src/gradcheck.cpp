#include "fundus/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fundus/autodiff/ops.hpp"
#include "fundus/data.hpp"
#include "fundus/models.hpp"

namespace fundus {
namespace {

using ad::TensorD;
using LossFn = std::function<TensorD(const std::vector<TensorD>&)>;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  TensorD uniform(ad::Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(ad::shape_numel(shape));
    for (double& x : v) x = d(rng_);
    return TensorD::from(std::move(shape), std::move(v), true);
  }

  // Values bounded away from zero, random sign; keeps ReLU inputs off the kink.
  TensorD signed_away(ad::Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(ad::shape_numel(shape));
    for (double& x : v) x = sign(rng_) ? d(rng_) : -d(rng_);
    return TensorD::from(std::move(shape), std::move(v), true);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Scalar projection with fixed random weights so every output entry matters.
TensorD project(const TensorD& y, std::uint64_t seed) {
  Sampler s(seed);
  auto w = s.uniform(y.shape(), -1.0, 1.0);
  w.set_requires_grad(false);
  return ad::sum(ad::mul(y, w));
}

double loss_value(const LossFn& loss, const std::vector<TensorD>& inputs) {
  ad::NoGradGuard no_grad;
  return loss(inputs).item();
}

}  // namespace

double max_relative_error(const LossFn& loss, std::vector<TensorD> inputs, const GradcheckOptions& options,
                          std::size_t* checked) {
  for (auto& in : inputs) {
    in.zero_grad();
    in.set_requires_grad(true);
  }
  ad::backward(loss(inputs));

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  std::size_t count = 0;
  for (auto& in : inputs) {
    std::vector<std::size_t> idx(in.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries != 0 && idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
    }
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    for (std::size_t i : idx) {
      const double orig = in.values()[i];
      in.values()[i] = orig + options.step;
      const double up = loss_value(loss, inputs);
      in.values()[i] = orig - options.step;
      const double down = loss_value(loss, inputs);
      in.values()[i] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
      ++count;
    }
  }
  if (checked) *checked = count;
  return worst;
}

std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckRow> rows;
  Sampler s(seed ^ 0x6a09e667f3bcc908ull);
  constexpr double kOpTol = 1e-5;
  constexpr double kChainTol = 1e-3;

  auto check = [&](std::string name, const LossFn& fn, std::vector<TensorD> inputs, double tol,
                   std::size_t max_entries = 0, double floor = 1e-8) {
    GradcheckOptions opt;
    opt.seed = seed + rows.size();
    opt.max_entries = max_entries;
    opt.floor = floor;
    GradcheckRow row;
    row.name = std::move(name);
    row.tolerance = tol;
    row.max_rel_err = max_relative_error(fn, std::move(inputs), opt, &row.checked);
    row.passed = std::isfinite(row.max_rel_err) && row.max_rel_err <= tol;
    rows.push_back(row);
  };

  for (double a : {1.0, 0.8}) {
    ShadowLayerConfig cfg;
    cfg.a_value = a;
    check(a == 1.0 ? "shadow_removal A=1" : "shadow_removal A=0.8",
          [cfg](const auto& in) { return project(ad::shadow_removal(in[0], in[1], cfg), 11); },
          {s.uniform({2, 3, 4, 5}, 0.0, 1.0), s.uniform({2, 1, 4, 5}, 0.2, 1.0)}, kOpTol);
  }

  check("conv2d 3x3 pad1", [](const auto& in) { return project(ad::conv2d(in[0], in[1], in[2], 1, 1), 12); },
        {s.uniform({2, 3, 5, 6}, -1, 1), s.uniform({4, 3, 3, 3}, -1, 1), s.uniform({4}, -1, 1)}, kOpTol);
  check("conv2d 3x3 stride2",
        [](const auto& in) { return project(ad::conv2d(in[0], in[1], in[2], 2, 0), 13); },
        {s.uniform({1, 2, 7, 7}, -1, 1), s.uniform({3, 2, 3, 3}, -1, 1), s.uniform({3}, -1, 1)}, kOpTol);
  check("conv2d 1x1", [](const auto& in) { return project(ad::conv2d(in[0], in[1], in[2]), 14); },
        {s.uniform({2, 3, 4, 4}, -1, 1), s.uniform({2, 3, 1, 1}, -1, 1), s.uniform({2}, -1, 1)}, kOpTol);
  check("max_pool2", [](const auto& in) { return project(ad::max_pool2(in[0]), 15); },
        {s.uniform({2, 2, 4, 6}, -1, 1)}, kOpTol);
  check("upsample_nearest2", [](const auto& in) { return project(ad::upsample_nearest2(in[0]), 16); },
        {s.uniform({1, 2, 3, 3}, -1, 1)}, kOpTol);
  check("concat_channels", [](const auto& in) { return project(ad::concat_channels(in[0], in[1]), 17); },
        {s.uniform({2, 1, 3, 3}, -1, 1), s.uniform({2, 2, 3, 3}, -1, 1)}, kOpTol);
  check("relu", [](const auto& in) { return project(ad::relu(in[0]), 18); },
        {s.signed_away({2, 3, 4, 4}, 0.05, 1.0)}, kOpTol);
  check("sigmoid", [](const auto& in) { return project(ad::sigmoid(in[0]), 19); },
        {s.uniform({3, 5}, -4, 4)}, kOpTol);
  check("scale_shift", [](const auto& in) { return project(ad::scale_shift(in[0], 0.1, 1.0), 20); },
        {s.uniform({3, 5}, 0, 1)}, kOpTol);
  check("global_avg_pool", [](const auto& in) { return project(ad::global_avg_pool(in[0]), 21); },
        {s.uniform({2, 3, 4, 4}, -1, 1)}, kOpTol);
  check("dense", [](const auto& in) { return project(ad::dense(in[0], in[1], in[2]), 22); },
        {s.uniform({3, 4}, -1, 1), s.uniform({2, 4}, -1, 1), s.uniform({2}, -1, 1)}, kOpTol);
  check("add", [](const auto& in) { return project(ad::add(in[0], in[1]), 23); },
        {s.uniform({2, 3}, -1, 1), s.uniform({2, 3}, -1, 1)}, kOpTol);
  check("mul", [](const auto& in) { return project(ad::mul(in[0], in[1]), 24); },
        {s.uniform({2, 3}, -1, 1), s.uniform({2, 3}, -1, 1)}, kOpTol);
  check("scale", [](const auto& in) { return project(ad::scale(in[0], 2.5), 25); },
        {s.uniform({2, 3}, -1, 1)}, kOpTol);
  {
    auto label = TensorD::from({4, 1}, {0.0, 1.0, 1.0, 0.0});
    check("bce_loss", [label](const auto& in) { return ad::bce_loss(in[0], label); },
          {s.uniform({4, 1}, 0.1, 0.9)}, kOpTol);
  }
  check("mse_loss", [](const auto& in) { return ad::mse_loss(in[0], in[1]); },
        {s.uniform({2, 1, 3, 3}, 0, 1), s.uniform({2, 1, 3, 3}, 0, 1)}, kOpTol);

  {
    TinyUNetConfig ucfg;
    ucfg.depth = 2;
    ucfg.base_channels = 2;
    TinyClassifierConfig ccfg;
    ccfg.conv_blocks = 2;
    ccfg.base_channels = 2;
    auto unet = init_unet<double>(ucfg, seed + 101);
    auto cls = init_classifier<double>(ccfg, seed + 102);
    // Zero biases put dead-window pre-activations exactly on the ReLU kink.
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (auto* list : {&unet, &cls})
      for (auto& p : *list)
        if (p.name.ends_with(".bias"))
          for (double& v : p.tensor.values()) v = jitter(s.rng());
    const auto image = s.uniform({2, 3, 16, 16}, 0.0, 1.0);
    auto reference = s.uniform({2, 1, 16, 16}, 0.3, 1.0);
    reference.set_requires_grad(false);
    const auto label = TensorD::from({2, 1}, {0.0, 1.0});
    const ShadowLayerConfig shadow;

    std::vector<TensorD> inputs = ad::tensors_of(unet);
    const std::size_t n_unet = inputs.size();
    for (const auto& p : cls) inputs.push_back(p.tensor);
    inputs.push_back(image);

    auto chain = [=](const std::vector<TensorD>& in) mutable {
      for (std::size_t i = 0; i < n_unet; ++i) unet[i].tensor = in[i];
      for (std::size_t i = 0; i < cls.size(); ++i) cls[i].tensor = in[n_unet + i];
      const auto& x = in.back();
      const auto t = unet_forward(ucfg, unet, x);
      const auto j = ad::shadow_removal(x, t, shadow);
      const auto p = classifier_forward(ccfg, cls, j);
      return ad::add(ad::bce_loss(p, label), ad::mse_loss(t, reference));
    };
    check("unet+shadow+classifier", chain, inputs, kChainTol, 6, 1e-6);
  }
  return rows;
}

}  // namespace fundus
