#include "fundus/models.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fundus/autodiff/ops.hpp"
#include "fundus/error.hpp"

namespace fundus {

namespace {

template <typename T>
class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  void conv(const std::string& name, int cin, int cout, int k) {
    weight(name + ".weight", {cout, cin, k, k}, cin * k * k);
    bias(name + ".bias", cout);
  }
  void dense(const std::string& name, int in, int out) {
    weight(name + ".weight", {out, in}, in);
    bias(name + ".bias", out);
  }
  ad::ParamList<T> take() { return std::move(params_); }

 private:
  void weight(const std::string& name, ad::Shape shape, int fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    std::vector<T> values(ad::shape_numel(shape));
    for (T& v : values) v = static_cast<T>(dist(rng_));
    params_.push_back({name, ad::BasicTensor<T>::from(std::move(shape), std::move(values), true)});
  }
  void bias(const std::string& name, int n) {
    params_.push_back({name, ad::BasicTensor<T>::zeros({n}, true)});
  }

  std::mt19937_64 rng_;
  ad::ParamList<T> params_;
};

// Walks a parameter list in construction order.
template <typename T>
class ParamCursor {
 public:
  explicit ParamCursor(const ad::ParamList<T>& params) : params_(params) {}

  const ad::BasicTensor<T>& next() {
    if (pos_ >= params_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter list is shorter than the architecture");
    }
    return params_[pos_++].tensor;
  }
  void finish() const {
    if (pos_ != params_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter list is longer than the architecture");
    }
  }

 private:
  const ad::ParamList<T>& params_;
  std::size_t pos_ = 0;
};

template <typename T>
ad::BasicTensor<T> conv_relu(ParamCursor<T>& cur, const ad::BasicTensor<T>& x) {
  const auto& w = cur.next();
  const auto& b = cur.next();
  return ad::relu(ad::conv2d(x, w, b, 1, w.dim(2) / 2));
}

template <typename T>
void require_image_batch(const ad::BasicTensor<T>& x, int channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects [N," + std::to_string(channels) +
                                              ",H,W], got " + ad::shape_str(x.shape()));
  }
}

}  // namespace

void TinyUNetConfig::validate() const {
  if (depth < 1) throw Error(ErrorCode::InvalidArgument, "U-Net depth must be >= 1");
  if (base_channels < 1 || in_channels < 1 || out_channels < 1) {
    throw Error(ErrorCode::InvalidArgument, "U-Net channel counts must be positive");
  }
  if (!(t_min > 0.0 && t_min < 1.0)) throw Error(ErrorCode::InvalidArgument, "t_min must lie in (0, 1)");
}

void TinyClassifierConfig::validate() const {
  if (conv_blocks < 1) throw Error(ErrorCode::InvalidArgument, "classifier needs >= 1 block");
  if (base_channels < 1 || in_channels < 1) {
    throw Error(ErrorCode::InvalidArgument, "classifier channel counts must be positive");
  }
}

template <typename T>
ad::ParamList<T> init_unet(const TinyUNetConfig& config, std::uint64_t seed) {
  config.validate();
  ParamBuilder<T> pb(seed);
  int in = config.in_channels;
  for (int l = 0; l < config.depth; ++l) {
    const int ch = config.base_channels << l;
    pb.conv("enc" + std::to_string(l) + ".conv1", in, ch, 3);
    pb.conv("enc" + std::to_string(l) + ".conv2", ch, ch, 3);
    in = ch;
  }
  const int bottom = config.base_channels << config.depth;
  pb.conv("bottleneck.conv1", in, bottom, 3);
  pb.conv("bottleneck.conv2", bottom, bottom, 3);
  in = bottom;
  for (int l = config.depth - 1; l >= 0; --l) {
    const int ch = config.base_channels << l;
    pb.conv("dec" + std::to_string(l) + ".conv1", in + ch, ch, 3);
    pb.conv("dec" + std::to_string(l) + ".conv2", ch, ch, 3);
    in = ch;
  }
  pb.conv("head", in, config.out_channels, 1);
  return pb.take();
}

template <typename T>
ad::ParamList<T> init_classifier(const TinyClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  ParamBuilder<T> pb(seed);
  int in = config.in_channels;
  for (int b = 0; b < config.conv_blocks; ++b) {
    const int ch = config.base_channels << b;
    pb.conv("block" + std::to_string(b) + ".conv", in, ch, 3);
    in = ch;
  }
  pb.dense("fc", in, 1);
  return pb.take();
}

template <typename T>
ad::BasicTensor<T> unet_forward(const TinyUNetConfig& config, const ad::ParamList<T>& params,
                                const ad::BasicTensor<T>& x) {
  config.validate();
  require_image_batch(x, config.in_channels, "unet_forward");
  const int mult = 1 << config.depth;
  if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0) {
    throw Error(ErrorCode::BadSpatialDims, "U-Net input " + ad::shape_str(x.shape()) +
                                               " is not divisible by " + std::to_string(mult));
  }
  ParamCursor<T> cur(params);
  std::vector<ad::BasicTensor<T>> skips;
  ad::BasicTensor<T> h = x;
  for (int l = 0; l < config.depth; ++l) {
    h = conv_relu(cur, h);
    h = conv_relu(cur, h);
    skips.push_back(h);
    h = ad::max_pool2(h);
  }
  h = conv_relu(cur, h);
  h = conv_relu(cur, h);
  for (int l = config.depth - 1; l >= 0; --l) {
    h = ad::concat_channels(ad::upsample_nearest2(h), skips[static_cast<std::size_t>(l)]);
    h = conv_relu(cur, h);
    h = conv_relu(cur, h);
  }
  const auto& hw = cur.next();
  const auto& hb = cur.next();
  cur.finish();
  const auto logits = ad::conv2d(h, hw, hb, 1, 0);
  return ad::scale_shift(ad::sigmoid(logits), static_cast<T>(config.t_min), T(1));
}

template <typename T>
ad::BasicTensor<T> classifier_forward(const TinyClassifierConfig& config,
                                      const ad::ParamList<T>& params, const ad::BasicTensor<T>& x) {
  config.validate();
  require_image_batch(x, config.in_channels, "classifier_forward");
  int h = x.dim(2);
  int w = x.dim(3);
  for (int b = 0; b < config.conv_blocks; ++b) {
    if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2) {
      throw Error(ErrorCode::BadSpatialDims, "classifier input " + ad::shape_str(x.shape()) +
                                                 " does not survive " +
                                                 std::to_string(config.conv_blocks) + " poolings");
    }
    h /= 2;
    w /= 2;
  }
  ParamCursor<T> cur(params);
  ad::BasicTensor<T> act = x;
  for (int b = 0; b < config.conv_blocks; ++b) act = ad::max_pool2(conv_relu(cur, act));
  const auto& fw = cur.next();
  const auto& fb = cur.next();
  cur.finish();
  return ad::scale_shift(ad::sigmoid(ad::dense(ad::global_avg_pool(act), fw, fb)), static_cast<T>(kProbEps),
                         static_cast<T>(1.0 - kProbEps));
}

#define FUNDUS_INSTANTIATE_MODELS(T)                                                            \
  template ad::ParamList<T> init_unet(const TinyUNetConfig&, std::uint64_t);                    \
  template ad::ParamList<T> init_classifier(const TinyClassifierConfig&, std::uint64_t);        \
  template ad::BasicTensor<T> unet_forward(const TinyUNetConfig&, const ad::ParamList<T>&,      \
                                           const ad::BasicTensor<T>&);                          \
  template ad::BasicTensor<T> classifier_forward(const TinyClassifierConfig&,                   \
                                                 const ad::ParamList<T>&, const ad::BasicTensor<T>&);

FUNDUS_INSTANTIATE_MODELS(float)
FUNDUS_INSTANTIATE_MODELS(double)

}  // namespace fundus
