#include "fundus/shadow_layer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fundus/autodiff/ops.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fundus;

namespace {

struct Batch {
  ShadowBatch geom;
  std::vector<double> image;
  std::vector<double> t;
};

Batch random_batch(std::mt19937_64& rng, int n, int h, int w, double t_lo = 0.2) {
  Batch b{{n, h, w}, {}, {}};
  std::uniform_real_distribution<double> di(0.05, 0.95), dt(t_lo, 1.0);
  b.image.resize(b.geom.image_size());
  b.t.resize(b.geom.map_size());
  for (double& v : b.image) v = di(rng);
  for (double& v : b.t) v = dt(rng);
  return b;
}

std::vector<double> forward(const Batch& b, const ShadowLayerConfig& cfg) {
  std::vector<double> out(b.geom.image_size());
  shadow_forward<double>(b.image, b.t, b.geom, cfg, out);
  return out;
}

double weighted_sum(const std::vector<double>& v, const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  return s;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

}  // namespace

TEST(ShadowForward, ScalarExamples) {
  EXPECT_EQ(shadow_value(0.5, 1.0, 1.0), 0.5);
  EXPECT_NEAR(shadow_value(0.4, 0.8, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(shadow_value(0.6, 0.8, 0.9), 0.725, 1e-15);
  EXPECT_EQ(shadow_value(0.6, 0.8, 0.9), oracle::shadow(0.6, 0.8, 0.9));
}

TEST(ShadowForward, BatchMatchesOracle) {
  std::mt19937_64 rng(31);
  const Batch b = random_batch(rng, 2, 5, 4);
  for (double a : {1.0, 0.8, 0.35}) {
    ShadowLayerConfig cfg;
    cfg.a_value = a;
    const auto out = forward(b, cfg);
    const std::size_t plane = b.geom.plane();
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t k = (static_cast<std::size_t>(s) * 3 + c) * plane + p;
          EXPECT_EQ(out[k], oracle::shadow(b.image[k], b.t[s * plane + p], a));
        }
  }
}

TEST(ShadowForward, UnitAirlightIsDivision) {
  std::mt19937_64 rng(32);
  const Batch b = random_batch(rng, 3, 6, 7, 0.1);
  const auto out = forward(b, ShadowLayerConfig{});
  const std::size_t plane = b.geom.plane();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t s = k / (3 * plane);
    EXPECT_NEAR(out[k], b.image[k] / b.t[s * plane + k % plane], 1e-12);
  }
}

TEST(ShadowForward, NotClampedInPath) {
  const Batch b{{1, 1, 1}, {0.9, 0.9, 0.9}, {0.3}};
  const auto out = forward(b, ShadowLayerConfig{});
  EXPECT_NEAR(out[0], 3.0, 1e-12);
}

TEST(ShadowForward, Errors) {
  const ShadowBatch geom{1, 2, 2};
  std::vector<double> img(12, 0.5), t(4, 0.5), out(12);
  EXPECT_FUNDUS_ERROR(shadow_forward<double>(img, std::span<const double>(t).first(3), geom,
                                             ShadowLayerConfig{}, out),
                      ErrorCode::ShapeMismatch);
  EXPECT_FUNDUS_ERROR(shadow_forward<double>(std::span<const double>(img).first(9), t, geom,
                                             ShadowLayerConfig{}, out),
                      ErrorCode::ShapeMismatch);
  t[2] = 0.05;
  EXPECT_FUNDUS_ERROR(shadow_forward<double>(img, t, geom, ShadowLayerConfig{}, out),
                      ErrorCode::TransmissionUnderflow);
  t[2] = std::nan("");
  EXPECT_FUNDUS_ERROR(shadow_forward<double>(img, t, geom, ShadowLayerConfig{}, out),
                      ErrorCode::TransmissionUnderflow);
  t[2] = 0.1;
  EXPECT_NO_THROW(shadow_forward<double>(img, t, geom, ShadowLayerConfig{}, out));
}

TEST(ShadowBackward, ScalarExamples) {
  EXPECT_EQ(shadow_d_image(0.3, 1.0, 1.0), 1.0);
  EXPECT_NEAR(shadow_d_image(0.4, 0.8, 1.0), 1.25, 1e-15);
  EXPECT_NEAR(shadow_d_transmission(0.4, 0.8, 1.0), -0.625, 1e-15);

  const double h = 1e-5;
  const double di = (shadow_value(0.4 + h, 0.8, 1.0) - shadow_value(0.4 - h, 0.8, 1.0)) / (2 * h);
  const double dt = (shadow_value(0.4, 0.8 + h, 1.0) - shadow_value(0.4, 0.8 - h, 1.0)) / (2 * h);
  EXPECT_LT(relative_error(1.25, di), 1e-6);
  EXPECT_LT(relative_error(-0.625, dt), 1e-6);
}

TEST(ShadowBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(33);
  const double h = 1e-4;
  for (double a : {1.0, 0.7}) {
    ShadowLayerConfig cfg;
    cfg.a_value = a;
    Batch b = random_batch(rng, 2, 3, 4);
    std::vector<double> upstream(b.geom.image_size());
    std::normal_distribution<double> nd;
    for (double& g : upstream) g = nd(rng);

    std::vector<double> gi(b.image.size()), gt(b.t.size());
    shadow_backward<double>(b.image, b.t, b.geom, cfg, upstream, gi, gt);

    for (std::size_t k = 0; k < b.image.size(); ++k) {
      const double keep = b.image[k];
      b.image[k] = keep + h;
      const double up = weighted_sum(forward(b, cfg), upstream);
      b.image[k] = keep - h;
      const double down = weighted_sum(forward(b, cfg), upstream);
      b.image[k] = keep;
      EXPECT_LT(relative_error(gi[k], (up - down) / (2 * h)), 1e-4) << "image " << k;
    }
    for (std::size_t k = 0; k < b.t.size(); ++k) {
      const double keep = b.t[k];
      b.t[k] = keep + h;
      const double up = weighted_sum(forward(b, cfg), upstream);
      b.t[k] = keep - h;
      const double down = weighted_sum(forward(b, cfg), upstream);
      b.t[k] = keep;
      EXPECT_LT(relative_error(gt[k], (up - down) / (2 * h)), 1e-4) << "t " << k;
    }
  }
}

TEST(ShadowBackward, ChannelContributionsSum) {
  std::mt19937_64 rng(34);
  const Batch b = random_batch(rng, 1, 4, 4);
  const ShadowLayerConfig cfg;
  std::normal_distribution<double> nd;
  std::vector<double> upstream(b.geom.image_size());
  for (double& g : upstream) g = nd(rng);

  std::vector<double> gi(b.image.size()), full(b.t.size()), total(b.t.size(), 0.0);
  shadow_backward<double>(b.image, b.t, b.geom, cfg, upstream, gi, full);
  for (int keep = 0; keep < 3; ++keep) {
    std::vector<double> only(upstream.size(), 0.0), part(b.t.size());
    for (std::size_t p = 0; p < b.geom.plane(); ++p) only[keep * b.geom.plane() + p] = upstream[keep * b.geom.plane() + p];
    shadow_backward<double>(b.image, b.t, b.geom, cfg, only, gi, part);
    for (std::size_t p = 0; p < part.size(); ++p) total[p] += part[p];
  }
  for (std::size_t p = 0; p < full.size(); ++p) EXPECT_NEAR(full[p], total[p], 1e-12);
}

TEST(ShadowBackward, DecreasingInTransmission) {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> di(1e-3, 1.0), dt(0.1, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const double i = di(rng), t = dt(rng);
    EXPECT_LT(shadow_d_transmission(i, t, 1.0), 0.0);
    EXPECT_NEAR(shadow_d_transmission(i, t, 1.0), -i / (t * t), 1e-12);
    EXPECT_GT(shadow_value(i, t, 1.0), shadow_value(i, std::min(1.0, t + 0.01), 1.0));
  }
}

TEST(ShadowBackward, ShapeErrors) {
  const ShadowBatch geom{1, 2, 2};
  std::vector<double> img(12, 0.5), t(4, 0.5), up(12, 1.0), gi(12), gt(4);
  EXPECT_FUNDUS_ERROR(shadow_backward<double>(img, t, geom, ShadowLayerConfig{},
                                              std::span<const double>(up).first(6), gi, gt),
                      ErrorCode::ShapeMismatch);
  EXPECT_FUNDUS_ERROR(shadow_backward<double>(img, t, geom, ShadowLayerConfig{}, up,
                                              std::span<double>(gi).first(6), gt),
                      ErrorCode::ShapeMismatch);
  EXPECT_FUNDUS_ERROR(shadow_backward<double>(img, t, geom, ShadowLayerConfig{}, up, gi,
                                              std::span<double>(gt).first(2)),
                      ErrorCode::ShapeMismatch);
}

TEST(ShadowLayerConfig, Validation) {
  ShadowLayerConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.a_value = 0.0;
  EXPECT_FUNDUS_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
  cfg.a_value = 1.2;
  EXPECT_FUNDUS_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.t_min_clamp = 0.0;
  EXPECT_FUNDUS_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
}

TEST(RemoveShadows, ExportClamps) {
  Image img(1, 2, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0.9;
    img.at(0, 1, c) = 0.2;
  }
  GrayMap t(1, 2);
  t.at(0, 0) = 0.5;
  t.at(0, 1) = 0.5;
  const auto tm = TransmissionMap::clamped(t, 0.1);

  const Image clamped = remove_shadows(img, tm, ShadowLayerConfig{});
  EXPECT_EQ(clamped.at(0, 0, 0), 1.0);
  EXPECT_NEAR(clamped.at(0, 1, 0), 0.4, 1e-15);

  ShadowLayerConfig raw;
  raw.clamp_output_for_export = false;
  EXPECT_NEAR(remove_shadows(img, tm, raw).at(0, 0, 0), 1.8, 1e-12);

  EXPECT_FUNDUS_ERROR(remove_shadows(Image(2, 1, 3), tm, raw), ErrorCode::ShapeMismatch);
  ShadowLayerConfig strict;
  strict.t_min_clamp = 0.6;
  EXPECT_FUNDUS_ERROR(remove_shadows(img, tm, strict), ErrorCode::TransmissionUnderflow);
}

TEST(ShadowRemovalOp, MatchesKernelsInFloat) {
  std::mt19937_64 rng(36);
  const Batch b = random_batch(rng, 2, 3, 3);
  std::vector<float> img(b.image.begin(), b.image.end()), t(b.t.begin(), b.t.end());
  auto ti = ad::Tensor::from({2, 3, 3, 3}, img, true);
  auto tt = ad::Tensor::from({2, 1, 3, 3}, t, true);
  const auto out = ad::shadow_removal(ti, tt, ShadowLayerConfig{});
  std::vector<float> expected(img.size());
  shadow_forward<float>(img, t, b.geom, ShadowLayerConfig{}, expected);
  for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_EQ(out.values()[k], expected[k]);

  ad::backward(ad::sum(out));
  std::vector<float> gi(img.size()), gt(t.size()), ones(img.size(), 1.0f);
  shadow_backward<float>(img, t, b.geom, ShadowLayerConfig{}, ones, gi, gt);
  for (std::size_t k = 0; k < gi.size(); ++k) EXPECT_EQ(ti.grad()[k], gi[k]);
  for (std::size_t k = 0; k < gt.size(); ++k) EXPECT_EQ(tt.grad()[k], gt[k]);
}
