#include "fundus/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fundus/error.hpp"
#include "fundus/image_io.hpp"

namespace fundus {

namespace {

constexpr std::uint64_t kTrainSalt = 0x7452414e5f5f5f31ull;
constexpr std::uint64_t kTestSalt = 0x544553545f5f5f32ull;
constexpr std::uint64_t kLabelSalt = 0x4c4142454c535f33ull;

std::uint64_t split_salt(Split split) { return split == Split::Train ? kTrainSalt : kTestSalt; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

int grade_for_lesions(int lesions) {
  if (lesions <= 0) return 0;
  if (lesions == 1) return 1;
  return lesions <= 3 ? 2 : 3;
}

std::string sample_name(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.png", split == Split::Train ? "train" : "test", index);
  return buf;
}

struct Point {
  double x;
  double y;
};

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double u = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double dx = p.x - (a.x + u * vx);
  const double dy = p.y - (a.y + u * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Manifest load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedCsv, csv_path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (trim(line) != "path,grade,split") {
    throw Error(ErrorCode::MalformedCsv,
                csv_path.string() + ": expected header 'path,grade,split', got '" + line + "'");
  }
  const auto base = csv_path.parent_path();
  Manifest manifest;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw Error(ErrorCode::MalformedCsv, where + ": expected 3 fields, got " + std::to_string(fields.size()));
    }
    DatasetRecord rec;
    const std::string path = trim(fields[0]);
    if (path.empty()) throw Error(ErrorCode::MalformedCsv, where + ": empty path");
    rec.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;

    const std::string grade = trim(fields[1]);
    std::size_t used = 0;
    try {
      rec.grade = std::stoi(grade, &used);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedCsv, where + ": grade '" + grade + "' is not an integer");
    }
    if (used != grade.size()) {
      throw Error(ErrorCode::MalformedCsv, where + ": grade '" + grade + "' is not an integer");
    }
    if (rec.grade < 0 || rec.grade > 3) {
      throw Error(ErrorCode::GradeOutOfRange, where + ": grade " + grade + " outside 0..3");
    }
    rec.label = rec.grade == 0 ? 0 : 1;

    const std::string split = trim(fields[2]);
    if (split == "train") {
      rec.split = Split::Train;
    } else if (split == "test") {
      rec.split = Split::Test;
    } else {
      throw Error(ErrorCode::UnknownSplit, where + ": split '" + split + "'");
    }
    if (!std::filesystem::exists(rec.path)) {
      manifest.missing_files.push_back(rec.path.string());
      continue;
    }
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty() && manifest.missing_files.empty()) {
    throw Error(ErrorCode::EmptyDataset, csv_path.string() + ": no data rows");
  }
  return manifest;
}

std::uint64_t record_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ (index * 0xd1b54a32d192ed03ull));
}

double augmentation_angle(std::uint64_t seed, double max_angle_degrees) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, max_angle_degrees);
  return angle(rng);
}

std::array<Image, 4> augment_record(const Image& img, std::uint64_t seed, double max_angle_degrees) {
  Image rotated = rotate(img, augmentation_angle(seed, max_angle_degrees));
  Image flipped = hflip(img);
  Image rotated_flipped = hflip(rotated);
  return {img, std::move(rotated), std::move(flipped), std::move(rotated_flipped)};
}

Image preprocess_record(const Image& img, int size) {
  if (size < 8) throw Error(ErrorCode::InvalidArgument, "preprocess size must be >= 8");
  const int side = std::min(img.width(), img.height());
  Image out = resize_bilinear(center_crop(img, side, side), size, size);
  if (out.channels() == 3) return out;
  Image rgb(size, size, 3);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) rgb.data()[i * 3 + c] = out.data()[i];
  }
  return rgb;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (n_train < 2 || n_test < 2) fail("each split needs at least 2 images");
  if (image_size < 16) fail("image_size must be >= 16");
  if (!(lesion_probability > 0.0 && lesion_probability < 1.0)) fail("lesion_probability must lie in (0, 1)");
  if (!(shading_strength >= 0.0 && shading_strength < 1.0)) fail("shading_strength must lie in [0, 1)");
  if (vessel_min < 0 || vessel_max < vessel_min) fail("bad vessel count range");
  if (lesion_min < 1 || lesion_max < lesion_min) fail("bad lesion count range");
}

std::vector<int> synth_labels(const SynthConfig& cfg, Split split) {
  cfg.validate();
  const int n = split == Split::Train ? cfg.n_train : cfg.n_test;
  std::mt19937_64 rng(record_seed(cfg.seed ^ kLabelSalt, split_salt(split)));
  std::bernoulli_distribution draw(cfg.lesion_probability);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int& l : labels) l = draw(rng) ? 1 : 0;
  const int positives = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) labels.back() = 1;
  if (positives == n) labels.back() = 0;
  return labels;
}

SynthSample synth_render(const SynthConfig& cfg, Split split, int index, int label) {
  cfg.validate();
  const int size = cfg.image_size;
  const double scale = size / 64.0;
  std::mt19937_64 rng(record_seed(cfg.seed ^ split_salt(split), static_cast<std::uint64_t>(index)));
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const double center = 0.5 * (size - 1);
  const double radius = 0.47 * size;
  const double exposure = uniform(0.85, 1.0);
  const std::array<double, 3> tissue{exposure * (0.78 + uniform(-0.04, 0.04)),
                                     exposure * (0.40 + uniform(-0.03, 0.03)),
                                     exposure * (0.20 + uniform(-0.03, 0.03))};
  constexpr double kBackground = 0.03;
  constexpr std::array<double, 3> kLesion{0.98, 0.84, 0.48};

  // Shading field, drawn for every sample so the scene is independent of the strength.
  struct Bump {
    double x, y, sigma, amp;
  };
  std::array<Bump, 3> bumps{};
  for (auto& b : bumps) {
    b = {uniform(-0.2, 1.2) * size, uniform(-0.2, 1.2) * size, uniform(0.25, 0.6) * size, uniform(0.5, 1.0)};
  }

  // Vessels: polylines sampled from quadratic Bezier curves.
  std::vector<std::vector<Point>> vessels(static_cast<std::size_t>(uniform_int(cfg.vessel_min, cfg.vessel_max)));
  std::vector<double> vessel_width(vessels.size());
  for (std::size_t v = 0; v < vessels.size(); ++v) {
    const double a0 = uniform(0.0, 2.0 * std::numbers::pi);
    const double r0 = uniform(0.0, 0.3) * radius;
    const double a2 = a0 + uniform(-0.8, 0.8);
    const Point p0{center + r0 * std::cos(a0), center + r0 * std::sin(a0)};
    const Point p2{center + 0.95 * radius * std::cos(a2), center + 0.95 * radius * std::sin(a2)};
    const double bend = uniform(-0.35, 0.35) * radius;
    const Point mid{0.5 * (p0.x + p2.x), 0.5 * (p0.y + p2.y)};
    const double nx = -(p2.y - p0.y);
    const double ny = p2.x - p0.x;
    const double nl = std::max(1e-9, std::hypot(nx, ny));
    const Point p1{mid.x + bend * nx / nl, mid.y + bend * ny / nl};
    for (int k = 0; k <= 16; ++k) {
      const double u = k / 16.0;
      vessels[v].push_back({(1 - u) * (1 - u) * p0.x + 2 * (1 - u) * u * p1.x + u * u * p2.x,
                            (1 - u) * (1 - u) * p0.y + 2 * (1 - u) * u * p1.y + u * u * p2.y});
    }
    vessel_width[v] = scale * uniform(0.6, 1.3);
  }

  struct Lesion {
    double x, y, sigma;
  };
  std::vector<Lesion> lesions;
  if (label == 1) {
    const int count = uniform_int(cfg.lesion_min, cfg.lesion_max);
    for (int k = 0; k < count; ++k) {
      const double a = uniform(0.0, 2.0 * std::numbers::pi);
      const double r = std::sqrt(uniform(0.0, 1.0)) * 0.75 * radius;
      lesions.push_back({center + r * std::cos(a), center + r * std::sin(a), scale * uniform(1.0, 1.6)});
    }
  }

  SynthSample sample;
  sample.label = label;
  sample.lesion_count = static_cast<int>(lesions.size());
  sample.unshaded = Image(size, size, 3);
  std::vector<double> field(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      const double d = std::hypot(p.x - center, p.y - center);
      const double inside = std::clamp(radius - d + 0.5, 0.0, 1.0);
      const double grain = 1.0 + uniform(-0.03, 0.03);
      std::array<double, 3> px{};
      for (int c = 0; c < 3; ++c) px[c] = tissue[c] * grain;
      for (std::size_t v = 0; v < vessels.size(); ++v) {
        double dist = 1e9;
        for (std::size_t k = 0; k + 1 < vessels[v].size(); ++k) {
          dist = std::min(dist, segment_distance(p, vessels[v][k], vessels[v][k + 1]));
        }
        const double w = vessel_width[v];
        const double dark = 0.45 * std::exp(-dist * dist / (2.0 * w * w));
        for (double& ch : px) ch *= 1.0 - dark;
      }
      for (const auto& l : lesions) {
        const double dd = (p.x - l.x) * (p.x - l.x) + (p.y - l.y) * (p.y - l.y);
        const double alpha = std::exp(-dd / (2.0 * l.sigma * l.sigma));
        for (int c = 0; c < 3; ++c) px[c] += alpha * (kLesion[c] - px[c]);
      }
      for (int c = 0; c < 3; ++c) {
        sample.unshaded.at(y, x, c) = std::clamp(inside * px[c] + (1.0 - inside) * kBackground, 0.0, 1.0);
      }
      double f = 0.0;
      for (const auto& b : bumps) {
        f += b.amp * std::exp(-((p.x - b.x) * (p.x - b.x) + (p.y - b.y) * (p.y - b.y)) / (2.0 * b.sigma * b.sigma));
      }
      field[static_cast<std::size_t>(y) * size + x] = f;
    }
  }
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double span = *hi - *lo;
  sample.shading = GrayMap(size, size);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double g = span > 0.0 ? (field[i] - *lo) / span : 0.0;
    sample.shading.data()[i] = 1.0 - cfg.shading_strength * g;
  }
  sample.image = sample.unshaded;
  for (std::size_t i = 0; i < sample.image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) sample.image.data()[i * 3 + c] *= sample.shading.data()[i];
  }
  return sample;
}

std::filesystem::path synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto manifest_path = out_dir / "manifest.csv";
  std::ofstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw Error(ErrorCode::IoFailure, "cannot create " + manifest_path.string());
  manifest << "path,grade,split\n";
  for (Split split : {Split::Train, Split::Test}) {
    const auto labels = synth_labels(cfg, split);
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
      const SynthSample s = synth_render(cfg, split, i, labels[static_cast<std::size_t>(i)]);
      const std::string name = sample_name(split, i);
      write_image(s.image, out_dir / name);
      manifest << name << ',' << grade_for_lesions(s.lesion_count) << ',' << to_string(split) << '\n';
    }
  }
  if (!manifest) throw Error(ErrorCode::IoFailure, "write failed for " + manifest_path.string());
  return manifest_path;
}

Dataset load_dataset(const Manifest& manifest, int size) {
  Dataset ds;
  for (const auto& rec : manifest.records) {
    Sample s{preprocess_record(read_image(rec.path), size), rec.label, rec.path};
    (rec.split == Split::Train ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

std::vector<Sample> augment_training_set(const std::vector<Sample>& train, std::uint64_t seed,
                                         double max_angle_degrees) {
  std::vector<Sample> out;
  out.reserve(train.size() * 4);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto variants = augment_record(train[i].image, record_seed(seed, i), max_angle_degrees);
    for (auto& v : variants) out.push_back({std::move(v), train[i].label, train[i].source});
  }
  return out;
}

ad::Tensor to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
  const Image& first = *images.front();
  const int c = first.channels();
  const int h = first.height();
  const int w = first.width();
  const std::size_t plane = first.pixel_count();
  std::vector<float> values(images.size() * c * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (!img.same_shape(first)) throw Error(ErrorCode::ShapeMismatch, "batch images differ in shape");
    for (std::size_t p = 0; p < plane; ++p) {
      for (int ch = 0; ch < c; ++ch) {
        values[(n * c + ch) * plane + p] = static_cast<float>(img.data()[p * c + ch]);
      }
    }
  }
  return ad::Tensor::from({static_cast<int>(images.size()), c, h, w}, std::move(values));
}

}  // namespace fundus
