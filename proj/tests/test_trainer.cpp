#include "fundus/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fundus/autodiff/checkpoint.hpp"
#include "fundus/autodiff/ops.hpp"
#include "support.hpp"

using namespace fundus;
using ad::Tensor;
using testing_support::TempDir;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.input_size = 16;
  c.batch_size = 4;
  c.epochs_fit = 1;
  c.epochs_finetune = 1;
  c.lr = 1e-3;
  c.unet.depth = 2;
  c.unet.base_channels = 4;
  c.classifier.conv_blocks = 2;
  c.classifier.base_channels = 4;
  return c;
}

std::vector<Sample> synth_split(Split split, int n, int size) {
  SynthConfig cfg;
  cfg.image_size = size;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back({synth_render(cfg, split, i, i % 2).image, i % 2, {}});
  return out;
}

Dataset tiny_dataset() { return {synth_split(Split::Train, 6, 16), synth_split(Split::Test, 5, 16)}; }

ReferenceMap flat_reference(double value, int size = 16) {
  ReferenceMap r;
  r.map = TransmissionMap::clamped(GrayMap(size, size, value), 0.1);
  r.source_count = 1;
  r.resolution = size;
  return r;
}

std::string bytes_of(const ad::ParamList<float>& p) { return ad::serialize_checkpoint(p); }

// Labels 1 for bright and 0 for dark uniform images.
std::vector<Sample> bright_dark_split(int n) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const int label = (i * 7) % 3 == 0 ? 1 : 0;
    Image img(16, 16, 3);
    for (double& v : img.data()) v = label ? 0.9 : 0.1;
    out.push_back({img, label, {}});
  }
  return out;
}

// One conv block that averages the input, and a head thresholding at 0.5.
PipelineModels bright_detector(const TrainConfig& c) {
  PipelineModels m;
  TrainConfig one = c;
  one.classifier.conv_blocks = 1;
  m.classifier = init_classifier<float>(one.classifier, 1);
  for (auto& p : m.classifier) {
    auto v = p.tensor.values();
    if (p.name == "block0.conv.weight") std::fill(v.begin(), v.end(), 1.0f / 27.0f);
    if (p.name == "block0.conv.bias") std::fill(v.begin(), v.end(), 0.0f);
    if (p.name == "fc.weight") std::fill(v.begin(), v.end(), 10.0f / static_cast<float>(v.size()));
    if (p.name == "fc.bias") v[0] = -5.0f;
  }
  return m;
}

}  // namespace

TEST(TotalLoss, Examples) {
  const auto pred = Tensor::from({1, 1}, {0.5f});
  const auto label = Tensor::from({1, 1}, {1.0f});
  const auto t = Tensor::full({1, 1, 4, 4}, 0.7f);
  const auto terms = total_loss(pred, label, t, t, 1.0);
  EXPECT_NEAR(terms.total.item(), std::log(2.0), 1e-7);
  EXPECT_EQ(terms.mse.item(), 0.0f);

  const auto other = Tensor::full({1, 1, 4, 4}, 0.2f);
  EXPECT_EQ(total_loss(pred, label, t, other, 0.0).total.item(), terms.bce.item());
  EXPECT_FUNDUS_ERROR(total_loss(pred, label, t, Tensor::full({1, 1, 4, 5}, 0.2f), 1.0), ErrorCode::ShapeMismatch);
}

TEST(TotalLoss, Decomposition) {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<float> d(0.1f, 0.9f);
  for (double lambda : {0.0, 0.5, 1.0, 3.0}) {
    std::vector<float> p(4), t(64), m(64);
    for (float& v : p) v = d(rng);
    for (float& v : t) v = d(rng);
    for (float& v : m) v = d(rng);
    const auto terms = total_loss(Tensor::from({4, 1}, p), Tensor::from({4, 1}, {0.f, 1.f, 1.f, 0.f}),
                                  Tensor::from({4, 1, 4, 4}, t), Tensor::from({4, 1, 4, 4}, m), lambda);
    const float expected = terms.bce.item() + static_cast<float>(lambda) * terms.mse.item();
    EXPECT_NEAR(terms.total.item(), expected, 1e-12);
  }
}

TEST(TotalLoss, GradientIsSumOfTerms) {
  const TrainConfig c = tiny_config();
  auto models = initial_models(c, true);
  std::mt19937_64 rng(62);
  const auto data = tiny_dataset();
  std::vector<const Image*> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(&data.train[i].image);
  const auto x = to_batch(imgs);
  const auto y = Tensor::from({4, 1}, {0.f, 1.f, 0.f, 1.f});
  const auto ref = reference_tensor(flat_reference(0.6), 16, 4);
  const double lambda = 2.0;

  auto grads = [&](int which) {
    for (auto& p : models.unet) p.tensor.zero_grad();
    const auto t = unet_forward(c.unet_config(), models.unet, x);
    const auto prob = classifier_forward(c.classifier, models.classifier, ad::shadow_removal(x, t, c.shadow()));
    const auto terms = total_loss(prob, y, t, ref, lambda);
    ad::backward(which == 0 ? terms.total : which == 1 ? terms.bce : ad::scale(terms.mse, static_cast<float>(lambda)));
    std::vector<float> g;
    for (const auto& p : models.unet) g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    return g;
  };
  const auto total = grads(0), bce = grads(1), mse = grads(2);
  ASSERT_EQ(total.size(), bce.size());
  std::uniform_int_distribution<std::size_t> pick(0, total.size() - 1);
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = pick(rng);
    EXPECT_NEAR(total[i], bce[i] + mse[i], 1e-6 * (1.0 + std::abs(total[i])));
  }
}

TEST(ReferenceTensor, ResizedAndRepeated) {
  GrayMap m(2, 2);
  m.at(0, 0) = 0.2;
  m.at(0, 1) = 0.4;
  m.at(1, 0) = 0.6;
  m.at(1, 1) = 0.8;
  ReferenceMap ref;
  ref.map = TransmissionMap::clamped(m, 0.1);
  const auto t = reference_tensor(ref, 2, 3);
  ASSERT_EQ(t.shape(), (ad::Shape{3, 1, 2, 2}));
  EXPECT_FLOAT_EQ(t.values()[9], 0.4f);
  const auto big = reference_tensor(flat_reference(0.35, 8), 16, 2);
  for (float v : big.values()) EXPECT_FLOAT_EQ(v, 0.35f);
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  TrainConfig c = tiny_config();
  c.epochs_fit = 0;
  c.epochs_finetune = 0;
  const auto result = train(c, tiny_dataset(), flat_reference(0.6));
  const auto init = initial_models(c, true);
  EXPECT_EQ(bytes_of(result.models.unet), bytes_of(init.unet));
  EXPECT_EQ(bytes_of(result.models.classifier), bytes_of(init.classifier));
  EXPECT_TRUE(result.history.empty());
  const auto base = train_baseline(c, tiny_dataset());
  EXPECT_EQ(bytes_of(base.models.classifier), bytes_of(init.classifier));
}

TEST(Train, ClassifierFrozenDuringFit) {
  TrainConfig c = tiny_config();
  c.epochs_fit = 2;
  const auto init = initial_models(c, true);
  std::vector<std::string> phases;
  TrainCallbacks cb;
  cb.on_phase_end = [&](const std::string& phase, const PipelineModels& m) {
    phases.push_back(phase);
    if (phase == "fit") {
      EXPECT_EQ(bytes_of(m.classifier), bytes_of(init.classifier));
      EXPECT_NE(bytes_of(m.unet), bytes_of(init.unet));
    } else {
      EXPECT_NE(bytes_of(m.classifier), bytes_of(init.classifier));
    }
  };
  const auto result = train(c, tiny_dataset(), flat_reference(0.6), cb);
  EXPECT_EQ(phases, (std::vector<std::string>{"fit", "finetune"}));
  ASSERT_EQ(result.history.size(), 3u);
  EXPECT_EQ(result.history[0].phase, "fit");
  EXPECT_EQ(result.history[2].phase, "finetune");
  EXPECT_EQ(result.history[2].epoch, 2);
  for (const auto& p : result.models.classifier) EXPECT_FALSE(p.tensor.frozen());
}

TEST(Train, LossDescends) {
  TrainConfig c = tiny_config();
  c.epochs_fit = 4;
  c.epochs_finetune = 4;
  const auto result = train(c, tiny_dataset(), flat_reference(0.6));
  ASSERT_EQ(result.history.size(), 8u);
  EXPECT_LT(result.history.back().total, result.history.front().total);
  for (const auto& r : result.history) {
    EXPECT_NEAR(r.total, r.bce + r.mse, 1e-5);
    EXPECT_GE(r.test_accuracy, 0.0);
    EXPECT_LE(r.test_accuracy, 1.0);
  }
  const auto base = train_baseline(c, tiny_dataset());
  EXPECT_LT(base.history.back().total, base.history.front().total);
}

TEST(Train, Deterministic) {
  const TrainConfig c = tiny_config();
  const auto a = train(c, tiny_dataset(), flat_reference(0.6));
  const auto b = train(c, tiny_dataset(), flat_reference(0.6));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].total, b.history[i].total);
    EXPECT_EQ(a.history[i].test_accuracy, b.history[i].test_accuracy);
  }
  EXPECT_EQ(bytes_of(a.models.unet), bytes_of(b.models.unet));
  EXPECT_EQ(bytes_of(a.models.classifier), bytes_of(b.models.classifier));

  TrainConfig other = c;
  other.seed = 2;
  EXPECT_NE(bytes_of(train(other, tiny_dataset(), flat_reference(0.6)).models.unet), bytes_of(a.models.unet));
}

TEST(Train, DatasetErrors) {
  const TrainConfig c = tiny_config();
  Dataset empty;
  EXPECT_FUNDUS_ERROR(train(c, empty, flat_reference(0.6)), ErrorCode::EmptyDataset);
  Dataset single = tiny_dataset();
  for (auto& s : single.train) s.label = 1;
  EXPECT_FUNDUS_ERROR(train(c, single, flat_reference(0.6)), ErrorCode::SingleClassDataset);
  EXPECT_FUNDUS_ERROR(train_baseline(c, single), ErrorCode::SingleClassDataset);
  TrainConfig bad = c;
  bad.batch_size = 0;
  EXPECT_FUNDUS_ERROR(train(bad, tiny_dataset(), flat_reference(0.6)), ErrorCode::InvalidArgument);
  bad = c;
  bad.input_size = 18;
  EXPECT_FUNDUS_ERROR(bad.validate(), ErrorCode::InvalidArgument);
}

TEST(Evaluate, ConstantHalfGivesPositiveFraction) {
  TrainConfig c = tiny_config();
  auto models = initial_models(c, true);
  for (auto& p : models.classifier)
    if (p.name.starts_with("fc")) std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
  auto split = synth_split(Split::Test, 7, 16);
  for (std::size_t i = 0; i < split.size(); ++i) split[i].label = i < 3 ? 1 : 0;
  const auto r = evaluate(c, models, split, nullptr);
  EXPECT_EQ(r.n_total, 7);
  EXPECT_EQ(r.n_correct, 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 7.0);
  EXPECT_EQ(r.true_positive, 3);
  EXPECT_EQ(r.false_positive, 4);
  EXPECT_EQ(r.true_negative + r.false_negative, 0);
  EXPECT_NEAR(r.bce, std::log(2.0), 1e-7);
}

TEST(Evaluate, PerfectPredictor) {
  TrainConfig c = tiny_config();
  c.classifier.conv_blocks = 1;
  const auto split = bright_dark_split(9);
  const auto r = evaluate(c, bright_detector(c), split);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.n_correct, 9);
  EXPECT_EQ(r.true_positive + r.false_negative, 3);
  EXPECT_EQ(r.mse, 0.0);
}

TEST(Evaluate, OrderInvariantAndPure) {
  const TrainConfig c = tiny_config();
  const auto models = train(c, tiny_dataset(), flat_reference(0.6)).models;
  auto split = synth_split(Split::Test, 9, 16);
  const std::string before_u = bytes_of(models.unet), before_c = bytes_of(models.classifier);
  const auto ref = flat_reference(0.6);
  const auto r = evaluate(c, models, split, &ref);
  EXPECT_EQ(bytes_of(models.unet), before_u);
  EXPECT_EQ(bytes_of(models.classifier), before_c);
  EXPECT_GT(r.mse, 0.0);

  std::mt19937_64 rng(63);
  for (int k = 0; k < 3; ++k) {
    std::shuffle(split.begin(), split.end(), rng);
    const auto s = evaluate(c, models, split, &ref);
    EXPECT_EQ(s.n_correct, r.n_correct);
    EXPECT_EQ(s.true_positive, r.true_positive);
    EXPECT_NEAR(s.bce, r.bce, 1e-12);
    EXPECT_NEAR(s.mse, r.mse, 1e-9);
  }
  EXPECT_FUNDUS_ERROR(evaluate(c, models, {}), ErrorCode::EmptyDataset);
}

TEST(Preview, ShapesAndRanges) {
  const TrainConfig c = tiny_config();
  const auto models = initial_models(c, true);
  const auto data = tiny_dataset();
  const auto [t, j] = pipeline_preview(c, models, data.test[0].image);
  EXPECT_EQ(t.height(), 16);
  EXPECT_EQ(j.channels(), 3);
  for (double v : t.map().data()) {
    EXPECT_GE(v, c.t_min);
    EXPECT_LE(v, 1.0);
  }
  for (double v : j.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_FUNDUS_ERROR(pipeline_preview(c, initial_models(c, false), data.test[0].image), ErrorCode::InvalidArgument);
}

TEST(Experiment, WritesReportAndArtifacts) {
  TempDir dir("exp");
  const TrainConfig c = tiny_config();
  const auto report = run_experiment(c, tiny_dataset(), flat_reference(0.6), dir.path());
  EXPECT_DOUBLE_EQ(report.difference, report.pipeline.accuracy - report.baseline.accuracy);
  EXPECT_EQ(report.baseline.n_total, 5);
  EXPECT_EQ(report.pipeline.n_total, 5);
  EXPECT_EQ(report.baseline_history.size(), 2u);
  EXPECT_EQ(report.baseline_history[0].phase, "baseline");

  for (const char* name : {"report.json", "report.txt", "history_baseline.csv", "history_pipeline.csv",
                           "classifier_baseline.ckpt", "unet_fit.ckpt", "classifier_fit.ckpt", "unet_finetune.ckpt",
                           "classifier_finetune.ckpt", "samples/test_0000_input.png", "samples/test_0000_t.png",
                           "samples/test_0003_j.png"})
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;

  const auto json = nlohmann::json::parse(testing_support::read_bytes(dir / "report.json"));
  EXPECT_EQ(json["baseline"]["accuracy"].get<double>(), report.baseline.accuracy);
  EXPECT_EQ(json["pipeline"]["n_total"].get<int>(), 5);

  const std::string table = testing_support::read_bytes(dir / "report.txt");
  int rows = 0;
  for (const char* model : {"baseline", "pipeline"}) rows += table.find(std::string("\n") + model) != std::string::npos;
  EXPECT_EQ(rows, 2);

  const std::string csv = testing_support::read_bytes(dir / "history_pipeline.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,phase,bce,mse,total,test_accuracy");
  EXPECT_NE(csv.find("\n0,fit,"), std::string::npos);
  EXPECT_NE(csv.find("\n1,finetune,"), std::string::npos);
}

TEST(Experiment, BranchesShareSplitsAndSeeds) {
  const TrainConfig c = tiny_config();
  const auto data = tiny_dataset();
  const auto report = run_experiment(c, data, flat_reference(0.6), {});
  const auto base = train_baseline(c, data);
  const auto pipe = train(c, data, flat_reference(0.6));
  EXPECT_EQ(report.baseline.accuracy, evaluate(c, base.models, data.test).accuracy);
  EXPECT_EQ(report.pipeline.accuracy, evaluate(c, pipe.models, data.test).accuracy);
  EXPECT_EQ(bytes_of(initial_models(c, true).classifier), bytes_of(initial_models(c, false).classifier));
}
