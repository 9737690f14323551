#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fundus/autodiff/tensor.hpp"
#include "fundus/image.hpp"

namespace fundus {

enum class Split { Train, Test };

std::string_view to_string(Split split);

struct DatasetRecord {
  std::filesystem::path path;
  /// 0 healthy (grade 0), 1 unhealthy (grades 1-3).
  int label = 0;
  int grade = 0;
  Split split = Split::Train;
};

struct Manifest {
  std::vector<DatasetRecord> records;
  /// Rows whose image file does not exist; they are not in `records`.
  std::vector<std::string> missing_files;
};

/// Parses a manifest CSV with header `path,grade,split`. Relative paths are
/// resolved against the manifest's directory. Throws MalformedCsv,
/// UnknownSplit, GradeOutOfRange, or EmptyDataset (no data rows).
Manifest load_manifest(const std::filesystem::path& csv_path);

/// Deterministic per-record seed derived from a dataset seed.
std::uint64_t record_seed(std::uint64_t dataset_seed, std::uint64_t index);

/// [original, rotated, hflip(original), hflip(rotated)], with one rotation
/// angle drawn uniformly from [0, max_angle_degrees] using `seed`.
std::array<Image, 4> augment_record(const Image& img, std::uint64_t seed,
                                    double max_angle_degrees = 230.0);

/// Angle augment_record uses for `seed`.
double augmentation_angle(std::uint64_t seed, double max_angle_degrees = 230.0);

/// Largest centered square crop, bilinear resize to size x size, gray
/// promoted to RGB.
Image preprocess_record(const Image& img, int size);

struct SynthConfig {
  int n_train = 200;
  int n_test = 50;
  int image_size = 64;
  double lesion_probability = 0.5;
  /// Shading field s(x) spans [1 - shading_strength, 1].
  double shading_strength = 0.6;
  int vessel_min = 4;
  int vessel_max = 8;
  int lesion_min = 1;
  int lesion_max = 5;
  std::uint64_t seed = 7;

  void validate() const;
};

/// One synthetic fundus image and its generation metadata.
struct SynthSample {
  Image image;
  /// Shading-free rendering of the same scene.
  Image unshaded;
  /// Multiplicative shading field applied to `unshaded`.
  GrayMap shading;
  int label = 0;
  int lesion_count = 0;
};

/// Renders sample `index` of `split`; a pure function of (cfg, split, index, label).
SynthSample synth_render(const SynthConfig& cfg, Split split, int index, int label);

/// Labels for a split: Bernoulli(lesion_probability) draws, with the last
/// record forced to the missing class if a split would hold a single class.
std::vector<int> synth_labels(const SynthConfig& cfg, Split split);

/// Writes train_NNNN.png / test_NNNN.png and manifest.csv into out_dir;
/// returns the manifest path. Byte-identical output for a fixed config.
std::filesystem::path synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Preprocessed, in-memory sample ready for batching.
struct Sample {
  Image image;
  int label = 0;
  std::filesystem::path source;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Reads and preprocesses every record of a manifest to size x size.
Dataset load_dataset(const Manifest& manifest, int size);

/// Four augmented variants per training sample, in record order.
std::vector<Sample> augment_training_set(const std::vector<Sample>& train, std::uint64_t seed,
                                         double max_angle_degrees = 230.0);

/// Planar float batch [N, C, H, W] from interleaved images of one size.
ad::Tensor to_batch(const std::vector<const Image*>& images);

}  // namespace fundus
