#include "fundus/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fundus/autodiff/adam.hpp"
#include "fundus/autodiff/ops.hpp"
#include "fundus/error.hpp"
#include "fundus/image_io.hpp"

namespace fundus {
namespace {

enum SeedSlot : std::uint64_t { kUnetSeed = 1, kClassifierSeed = 2, kAugmentSeed = 3, kShuffleSeed = 4 };

std::uint64_t derived_seed(const TrainConfig& c, SeedSlot slot) { return record_seed(c.seed, slot); }

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

void check_training_split(const std::vector<Sample>& train) {
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "training split is empty");
  const bool has0 = std::any_of(train.begin(), train.end(), [](const Sample& s) { return s.label == 0; });
  const bool has1 = std::any_of(train.begin(), train.end(), [](const Sample& s) { return s.label == 1; });
  if (!has0 || !has1) throw Error(ErrorCode::SingleClassDataset, "training split holds a single class");
}

std::vector<std::size_t> epoch_order(const TrainConfig& c, std::size_t n, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(record_seed(derived_seed(c, kShuffleSeed), static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct Batch {
  ad::Tensor x;
  ad::Tensor y;
};

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
  std::vector<const Image*> imgs;
  std::vector<float> labels;
  imgs.reserve(idx.size());
  for (std::size_t i : idx) {
    imgs.push_back(&samples[i].image);
    labels.push_back(static_cast<float>(samples[i].label));
  }
  return {to_batch(imgs), ad::Tensor::from({static_cast<int>(idx.size()), 1}, std::move(labels))};
}

std::vector<ad::Tensor> all_params(const PipelineModels& m) {
  auto out = ad::tensors_of(m.unet);
  for (const auto& p : m.classifier) out.push_back(p.tensor);
  return out;
}

struct ForwardOut {
  ad::Tensor prob;
  ad::Tensor t;
};

ForwardOut forward(const TrainConfig& c, const PipelineModels& m, const ad::Tensor& x) {
  if (!m.has_unet()) return {classifier_forward(c.classifier, m.classifier, x), {}};
  auto t = unet_forward(c.unet_config(), m.unet, x);
  auto j = ad::shadow_removal(x, t, c.shadow());
  return {classifier_forward(c.classifier, m.classifier, j), t};
}

// Slices a repeated reference tensor down to the first n maps.
ad::Tensor reference_for(const ad::Tensor& full, int n) {
  if (full.dim(0) == n) return full;
  const std::size_t plane = static_cast<std::size_t>(full.dim(2)) * full.dim(3);
  std::vector<float> v(full.values().begin(), full.values().begin() + plane * n);
  return ad::Tensor::from({n, 1, full.dim(2), full.dim(3)}, std::move(v));
}

struct PhaseSpec {
  std::string name;
  int epochs;
  double lambda_mse;
  bool freeze_classifier;
};

void run_phase(const TrainConfig& c, const PhaseSpec& phase, PipelineModels& models, ad::Adam<float>& opt,
               const std::vector<Sample>& augmented, const std::vector<Sample>& test,
               const ReferenceMap* reference, const ad::Tensor& ref_batch, int& global_epoch,
               std::vector<EpochRecord>& history, const TrainCallbacks& cb) {
  auto cls = ad::tensors_of(models.classifier);
  ad::freeze(cls, phase.freeze_classifier);

  for (int e = 0; e < phase.epochs; ++e) {
    const auto order = epoch_order(c, augmented.size(), global_epoch);
    double bce_sum = 0.0, mse_sum = 0.0, total_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(c.batch_size)) {
      const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(c.batch_size));
      const Batch b = make_batch(augmented, std::span(order).subspan(start, count));
      opt.zero_grad();
      const auto out = forward(c, models, b.x);
      ad::Tensor loss;
      if (models.has_unet()) {
        const auto terms = total_loss(out.prob, b.y, out.t, reference_for(ref_batch, static_cast<int>(count)),
                                      phase.lambda_mse);
        loss = terms.total;
        bce_sum += terms.bce.item();
        mse_sum += terms.mse.item();
      } else {
        loss = ad::bce_loss(out.prob, b.y);
        bce_sum += loss.item();
      }
      total_sum += loss.item();
      ad::backward(loss);
      opt.step();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = global_epoch;
    rec.phase = phase.name;
    rec.bce = bce_sum / static_cast<double>(batches);
    rec.mse = mse_sum / static_cast<double>(batches);
    rec.total = total_sum / static_cast<double>(batches);
    rec.test_accuracy = test.empty() ? std::nan("") : evaluate(c, models, test, reference).accuracy;
    history.push_back(rec);
    if (cb.on_epoch) cb.on_epoch(rec);
    ++global_epoch;
  }
  ad::freeze(cls, false);
  if (cb.on_phase_end) cb.on_phase_end(phase.name, models);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  require(input_size >= 8, "input_size must be at least 8");
  require(batch_size >= 1, "batch_size must be positive");
  require(epochs_fit >= 0 && epochs_finetune >= 0, "epoch counts must be non-negative");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(lambda_mse_fit >= 0.0 && lambda_mse_finetune >= 0.0, "lambda_mse must be non-negative");
  require(rotation_range >= 0.0 && rotation_range <= 360.0, "rotation_range must lie in [0, 360]");
  shadow().validate();
  unet_config().validate();
  classifier.validate();
  require(input_size % (1 << unet.depth) == 0, "input_size must be divisible by 2^unet.depth");
}

ShadowLayerConfig TrainConfig::shadow() const {
  ShadowLayerConfig s;
  s.a_value = a_value;
  s.t_min_clamp = t_min;
  return s;
}

TinyUNetConfig TrainConfig::unet_config() const {
  TinyUNetConfig u = unet;
  u.t_min = t_min;
  return u;
}

LossTerms total_loss(const ad::Tensor& pred, const ad::Tensor& label, const ad::Tensor& t,
                     const ad::Tensor& reference, double lambda_mse) {
  if (t.shape() != reference.shape())
    throw Error(ErrorCode::ShapeMismatch,
                "reference " + ad::shape_str(reference.shape()) + " vs t " + ad::shape_str(t.shape()));
  LossTerms out;
  out.bce = ad::bce_loss(pred, label);
  out.mse = ad::mse_loss(t, reference);
  out.total = ad::add(out.bce, ad::scale(out.mse, static_cast<float>(lambda_mse)));
  return out;
}

ad::Tensor reference_tensor(const ReferenceMap& ref, int size, int batch) {
  const GrayMap m = resize_bilinear(ref.map.map(), size, size);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<float> v(plane * static_cast<std::size_t>(batch));
  for (int n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < plane; ++i) v[n * plane + i] = static_cast<float>(m.data()[i]);
  return ad::Tensor::from({batch, 1, size, size}, std::move(v));
}

PipelineModels initial_models(const TrainConfig& config, bool with_unet) {
  PipelineModels m;
  if (with_unet) m.unet = init_unet<float>(config.unet_config(), derived_seed(config, kUnetSeed));
  m.classifier = init_classifier<float>(config.classifier, derived_seed(config, kClassifierSeed));
  return m;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const ReferenceMap& reference,
                  const TrainCallbacks& callbacks) {
  config.validate();
  check_training_split(dataset.train);
  const auto augmented =
      augment_training_set(dataset.train, derived_seed(config, kAugmentSeed), config.rotation_range);

  TrainResult result;
  result.models = initial_models(config, true);
  ad::Adam<float> opt(all_params(result.models), {.lr = config.lr});
  const auto ref_batch = reference_tensor(reference, config.input_size, config.batch_size);

  int epoch = 0;
  run_phase(config, {"fit", config.epochs_fit, config.lambda_mse_fit, true}, result.models, opt, augmented,
            dataset.test, &reference, ref_batch, epoch, result.history, callbacks);
  run_phase(config, {"finetune", config.epochs_finetune, config.lambda_mse_finetune, false}, result.models,
            opt, augmented, dataset.test, &reference, ref_batch, epoch, result.history, callbacks);
  return result;
}

TrainResult train_baseline(const TrainConfig& config, const Dataset& dataset, const TrainCallbacks& callbacks) {
  config.validate();
  check_training_split(dataset.train);
  const auto augmented =
      augment_training_set(dataset.train, derived_seed(config, kAugmentSeed), config.rotation_range);

  TrainResult result;
  result.models = initial_models(config, false);
  ad::Adam<float> opt(all_params(result.models), {.lr = config.lr});
  int epoch = 0;
  run_phase(config, {"baseline", config.epochs_fit + config.epochs_finetune, 0.0, false}, result.models, opt,
            augmented, dataset.test, nullptr, {}, epoch, result.history, callbacks);
  return result;
}

EvalReport evaluate(const TrainConfig& config, const PipelineModels& models, const std::vector<Sample>& split,
                    const ReferenceMap* reference) {
  if (split.empty()) throw Error(ErrorCode::EmptyDataset, "evaluation split is empty");
  ad::NoGradGuard no_grad;
  EvalReport r;
  r.n_total = static_cast<int>(split.size());
  ad::Tensor ref_batch;
  if (reference && models.has_unet()) ref_batch = reference_tensor(*reference, config.input_size, config.batch_size);

  double bce_sum = 0.0, mse_sum = 0.0;
  std::vector<std::size_t> idx(split.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t count = std::min(idx.size() - start, static_cast<std::size_t>(config.batch_size));
    const Batch b = make_batch(split, std::span(idx).subspan(start, count));
    const auto out = forward(config, models, b.x);
    for (std::size_t k = 0; k < count; ++k) {
      const double p = out.prob.values()[k];
      const int label = split[start + k].label;
      const int predicted = p >= 0.5 ? 1 : 0;
      const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
      bce_sum += label == 1 ? -std::log(pc) : -std::log(1.0 - pc);
      if (predicted == 1 && label == 1) ++r.true_positive;
      if (predicted == 0 && label == 0) ++r.true_negative;
      if (predicted == 1 && label == 0) ++r.false_positive;
      if (predicted == 0 && label == 1) ++r.false_negative;
    }
    if (ref_batch.defined()) {
      const auto ref = reference_for(ref_batch, static_cast<int>(count));
      double sq = 0.0;
      for (std::size_t i = 0; i < ref.numel(); ++i) {
        const double d = static_cast<double>(out.t.values()[i]) - ref.values()[i];
        sq += d * d;
      }
      mse_sum += sq / static_cast<double>(ref.numel() / count);
    }
  }
  r.n_correct = r.true_positive + r.true_negative;
  r.accuracy = static_cast<double>(r.n_correct) / r.n_total;
  r.bce = bce_sum / r.n_total;
  r.mse = mse_sum / r.n_total;
  return r;
}

std::pair<TransmissionMap, Image> pipeline_preview(const TrainConfig& config, const PipelineModels& models,
                                                   const Image& input) {
  if (!models.has_unet()) throw Error(ErrorCode::InvalidArgument, "preview needs a transmission network");
  ad::NoGradGuard no_grad;
  const auto t = unet_forward(config.unet_config(), models.unet, to_batch({&input}));
  GrayMap raw(input.height(), input.width());
  for (std::size_t i = 0; i < raw.data().size(); ++i) raw.data()[i] = t.values()[i];
  auto tm = TransmissionMap::clamped(std::move(raw), config.t_min);
  Image j = remove_shadows(input, tm, config.shadow());
  return {std::move(tm), std::move(j)};
}

ExperimentReport run_experiment(const TrainConfig& config, const Dataset& dataset, const ReferenceMap& reference,
                                const std::filesystem::path& out_dir, const TrainCallbacks& callbacks) {
  namespace fs = std::filesystem;
  if (dataset.test.empty()) throw Error(ErrorCode::EmptyDataset, "test split is empty");
  const bool write = !out_dir.empty();
  if (write) fs::create_directories(out_dir);

  TrainCallbacks cb = callbacks;
  cb.on_phase_end = [&](const std::string& phase, const PipelineModels& m) {
    if (write) {
      if (m.has_unet()) ad::save_checkpoint(m.unet, out_dir / ("unet_" + phase + ".ckpt"));
      ad::save_checkpoint(m.classifier, out_dir / ("classifier_" + phase + ".ckpt"));
    }
    if (callbacks.on_phase_end) callbacks.on_phase_end(phase, m);
  };

  const auto base = train_baseline(config, dataset, cb);
  const auto pipe = train(config, dataset, reference, cb);

  ExperimentReport report;
  report.baseline = evaluate(config, base.models, dataset.test);
  report.pipeline = evaluate(config, pipe.models, dataset.test, &reference);
  report.difference = report.pipeline.accuracy - report.baseline.accuracy;
  report.baseline_history = base.history;
  report.pipeline_history = pipe.history;

  if (write) {
    write_history_csv(base.history, out_dir / "history_baseline.csv");
    write_history_csv(pipe.history, out_dir / "history_pipeline.csv");
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["baseline"] = nlohmann::ordered_json::parse(eval_report_json(report.baseline));
    j["pipeline"] = nlohmann::ordered_json::parse(eval_report_json(report.pipeline));
    j["difference"] = report.difference;
    std::ofstream(out_dir / "report.json") << j.dump(2) << '\n';
    std::ofstream(out_dir / "report.txt") << format_comparison_table(report);

    const fs::path samples = out_dir / "samples";
    fs::create_directories(samples);
    const std::size_t n = std::min<std::size_t>(4, dataset.test.size());
    for (std::size_t i = 0; i < n; ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "test_%04zu", i);
      const auto [t, jimg] = pipeline_preview(config, pipe.models, dataset.test[i].image);
      write_image(dataset.test[i].image, samples / (std::string(stem) + "_input.png"));
      write_image(transmission_to_image(t), samples / (std::string(stem) + "_t.png"));
      write_image(jimg, samples / (std::string(stem) + "_j.png"));
    }
  }
  return report;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "epoch,phase,bce,mse,total,test_accuracy\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.phase << ',' << fmt(r.bce) << ',' << fmt(r.mse) << ',' << fmt(r.total) << ','
        << fmt(r.test_accuracy) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["n_correct"] = r.n_correct;
  j["n_total"] = r.n_total;
  j["true_positive"] = r.true_positive;
  j["true_negative"] = r.true_negative;
  j["false_positive"] = r.false_positive;
  j["false_negative"] = r.false_negative;
  j["bce"] = r.bce;
  j["mse"] = r.mse;
  return j.dump(2);
}

std::string format_comparison_table(const ExperimentReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s\n", "model", "accuracy", "correct", "bce", "mse");
  os << line;
  auto row = [&](const char* name, const EvalReport& r) {
    std::snprintf(line, sizeof line, "%-10s %9.4f %5d/%-3d %9.4f %9.5f\n", name, r.accuracy, r.n_correct,
                  r.n_total, r.bce, r.mse);
    os << line;
  };
  row("baseline", report.baseline);
  row("pipeline", report.pipeline);
  std::snprintf(line, sizeof line, "difference %+9.4f\n", report.difference);
  os << line;
  return os.str();
}

}  // namespace fundus
