#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fundus/autodiff/checkpoint.hpp"
#include "fundus/data.hpp"
#include "fundus/dehaze.hpp"
#include "fundus/models.hpp"
#include "fundus/shadow_layer.hpp"

namespace fundus {

struct TrainConfig {
  int input_size = 64;
  int batch_size = 4;
  int epochs_fit = 20;
  int epochs_finetune = 20;
  double lr = 2e-4;
  /// Weight on the transmission-map MSE term, per phase.
  double lambda_mse_fit = 1.0;
  double lambda_mse_finetune = 1.0;
  std::uint64_t seed = 1;
  double a_value = 1.0;
  double t_min = 0.1;
  double rotation_range = 230.0;
  TinyUNetConfig unet;
  TinyClassifierConfig classifier;

  /// Throws InvalidArgument on out-of-range fields; syncs unet.t_min with t_min.
  void validate() const;
  ShadowLayerConfig shadow() const;
  TinyUNetConfig unet_config() const;
};

struct PipelineModels {
  /// Empty for the classifier-only baseline.
  ad::ParamList<float> unet;
  ad::ParamList<float> classifier;

  bool has_unet() const noexcept { return !unet.empty(); }
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;
  double bce = 0.0;
  double mse = 0.0;
  double total = 0.0;
  double test_accuracy = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  int n_correct = 0;
  int n_total = 0;
  int true_positive = 0;
  int true_negative = 0;
  int false_positive = 0;
  int false_negative = 0;
  double bce = 0.0;
  /// Mean transmission MSE against the reference; 0 for the baseline.
  double mse = 0.0;
};

struct TrainResult {
  PipelineModels models;
  std::vector<EpochRecord> history;
};

struct LossTerms {
  ad::Tensor total;
  ad::Tensor bce;
  ad::Tensor mse;
};

/// BCE(pred, label) + lambda_mse * MSE(t, reference). `reference` must have
/// the shape of `t`.
LossTerms total_loss(const ad::Tensor& pred, const ad::Tensor& label, const ad::Tensor& t,
                     const ad::Tensor& reference, double lambda_mse);

/// Reference map resized (bilinear) to size x size and repeated to [batch, 1, size, size].
ad::Tensor reference_tensor(const ReferenceMap& ref, int size, int batch);

/// Initial parameters for a config (seeds derived from config.seed).
PipelineModels initial_models(const TrainConfig& config, bool with_unet);

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with "fit" and "finetune" (or "baseline") after each phase.
  std::function<void(const std::string& phase, const PipelineModels&)> on_phase_end;
};

/// Two-phase training: `epochs_fit` epochs with the classifier frozen, then
/// `epochs_finetune` epochs updating both networks. Throws EmptyDataset or
/// SingleClassDataset when the training split is unusable.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const ReferenceMap& reference,
                  const TrainCallbacks& callbacks = {});

/// Classifier alone on the same inputs for epochs_fit + epochs_finetune epochs.
TrainResult train_baseline(const TrainConfig& config, const Dataset& dataset,
                           const TrainCallbacks& callbacks = {});

/// Accuracy with the rule p >= 0.5 -> positive. No augmentation, no parameter
/// mutation. `reference` is only used for the MSE column and may be null.
EvalReport evaluate(const TrainConfig& config, const PipelineModels& models,
                    const std::vector<Sample>& split, const ReferenceMap* reference = nullptr);

/// Transmission map and shadow-removed image for one preprocessed sample.
std::pair<TransmissionMap, Image> pipeline_preview(const TrainConfig& config,
                                                   const PipelineModels& models, const Image& input);

struct ExperimentReport {
  EvalReport baseline;
  EvalReport pipeline;
  double difference = 0.0;
  std::vector<EpochRecord> baseline_history;
  std::vector<EpochRecord> pipeline_history;
};

/// Baseline vs U-Net + Shadow Removal Layer + classifier on identical splits
/// and seeds. Writes report.json, report.txt, both history CSVs, checkpoints
/// and sample (t, J) pairs under out_dir when it is non-empty.
ExperimentReport run_experiment(const TrainConfig& config, const Dataset& dataset,
                                const ReferenceMap& reference, const std::filesystem::path& out_dir,
                                const TrainCallbacks& callbacks = {});

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::string eval_report_json(const EvalReport& report);
std::string format_comparison_table(const ExperimentReport& report);

}  // namespace fundus
