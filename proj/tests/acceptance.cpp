// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance            run every criterion
//   acceptance --only 3,9 run a subset

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fundus/autodiff/checkpoint.hpp"
#include "fundus/autodiff/ops.hpp"
#include "fundus/cli.hpp"
#include "fundus/dehaze.hpp"
#include "fundus/models.hpp"
#include "fundus/shadow_layer.hpp"
#include "fundus/trainer.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace fundus;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fundus_accept_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fundus");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Image random_image(std::mt19937_64& rng, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Image img(h, w, 3);
  for (double& v : img.data()) v = d(rng);
  return img;
}

GrayMap random_map(std::mt19937_64& rng, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  GrayMap m(h, w);
  for (double& v : m.data()) v = d(rng);
  return m;
}

Outcome shadow_scalar() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> ui(0.0, 1.0), ut(0.1, 1.0), ua(0.5, 1.0);
  const ShadowBatch one{1, 1, 1};
  auto forward = [&](double i, double t, double a) {
    ShadowLayerConfig cfg;
    cfg.a_value = a;
    const std::vector<double> img{i, i, i}, tv{t};
    std::vector<double> out(3);
    shadow_forward<double>(img, tv, one, cfg, out);
    return out[0];
  };
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double i = ui(rng), t = ut(rng), a = ua(rng);
    worst = std::max(worst, std::abs(forward(i, t, a) - oracle::shadow(i, t, a)));
  }
  const double anchored = forward(0.4, 0.8, 1.0);
  return {worst < 1e-6 && std::abs(anchored - 0.5) < 1e-12,
          "max abs err " + fmt("%.2e", worst) + ", (0.4, 0.8, 1) -> " + fmt("%.15g", anchored)};
}

Outcome shadow_division() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> ui(0.0, 1.0), ut(0.1, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ShadowBatch b{3, 9, 7};
    std::vector<double> img(b.image_size()), t(b.map_size()), out(b.image_size());
    for (double& v : img) v = ui(rng);
    for (double& v : t) v = ut(rng);
    shadow_forward<double>(img, t, b, ShadowLayerConfig{}, out);
    for (int s = 0; s < b.n; ++s)
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < b.plane(); ++p) {
          const std::size_t k = (static_cast<std::size_t>(s) * 3 + c) * b.plane() + p;
          worst = std::max(worst, std::abs(out[k] - img[k] / t[s * b.plane() + p]));
        }
  }
  return {worst <= 1e-12, "max |J - I/t| " + fmt("%.2e", worst) + " over 20 batches"};
}

Outcome shadow_gradient() {
  const auto start = Clock::now();
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> ui(0.0, 1.0), ut(0.2, 1.0), ug(-1.0, 1.0);
  const double h = 1e-4;
  double worst = 0.0;
  for (double a : {1.0, 0.8}) {
    ShadowLayerConfig cfg;
    cfg.a_value = a;
    const ShadowBatch b{2, 5, 10};
    std::vector<double> img(b.image_size()), t(b.map_size()), gout(b.image_size());
    for (double& v : img) v = ui(rng);
    for (double& v : t) v = ut(rng);
    for (double& v : gout) v = ug(rng);
    std::vector<double> gi(b.image_size()), gt(b.map_size());
    shadow_backward<double>(img, t, b, cfg, gout, gi, gt);
    auto rel = [](double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-8}); };
    std::uniform_int_distribution<std::size_t> pixel(0, b.map_size() - 1);
    for (int k = 0; k < 50; ++k) {
      const std::size_t m = pixel(rng);
      const std::size_t s = m / b.plane(), p = m % b.plane();
      double numeric_t = 0.0;
      for (int c = 0; c < 3; ++c) {
        const std::size_t q = (s * 3 + c) * b.plane() + p;
        const double numeric_i =
            gout[q] * (oracle::shadow(img[q] + h, t[m], a) - oracle::shadow(img[q] - h, t[m], a)) / (2 * h);
        worst = std::max(worst, rel(gi[q], numeric_i));
        numeric_t += gout[q] * (oracle::shadow(img[q], t[m] + h, a) - oracle::shadow(img[q], t[m] - h, a)) / (2 * h);
      }
      worst = std::max(worst, rel(gt[m], numeric_t));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 1.0,
          "max rel err " + fmt("%.2e", worst) + " over 100 pixels, " + fmt("%.3f", secs) + " s"};
}

Outcome end_to_end_gradient() {
  const auto start = Clock::now();
  TinyUNetConfig ucfg;
  ucfg.depth = 2;
  ucfg.base_channels = 2;
  TinyClassifierConfig ccfg;
  ccfg.conv_blocks = 2;
  ccfg.base_channels = 2;
  auto unet = init_unet<double>(ucfg, 201);
  const auto cls = init_classifier<double>(ccfg, 202);
  std::mt19937_64 rng(203);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1), pixel(0.05, 0.95);
  for (auto& p : unet)
    if (p.name.ends_with(".bias"))
      for (double& v : p.tensor.values()) v = jitter(rng);
  std::vector<double> xv(2 * 3 * 16 * 16);
  for (double& v : xv) v = pixel(rng);
  const auto x = ad::TensorD::from({2, 3, 16, 16}, xv);
  const auto reference = ad::TensorD::full({2, 1, 16, 16}, 0.6);
  const auto label = ad::TensorD::from({2, 1}, {1.0, 0.0});

  auto loss = [&]() {
    const auto t = unet_forward(ucfg, unet, x);
    const auto j = ad::shadow_removal(x, t, ShadowLayerConfig{});
    return ad::add(ad::bce_loss(classifier_forward(ccfg, cls, j), label), ad::mse_loss(t, reference));
  };
  for (auto& p : unet) p.tensor.set_requires_grad(true);
  ad::backward(loss());

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t i = 0; i < unet.size(); ++i) {
    std::uniform_int_distribution<std::size_t> entry(0, unet[i].tensor.numel() - 1);
    for (int k = 0; k < 4; ++k) picks.emplace_back(i, entry(rng));
  }
  const double h = 1e-6;
  double worst = 0.0;
  ad::NoGradGuard no_grad;
  for (const auto& [i, e] : picks) {
    double& w = unet[i].tensor.values()[e];
    const double saved = w;
    w = saved + h;
    const double up = loss().item();
    w = saved - h;
    const double down = loss().item();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = unet[i].tensor.grad()[e];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  }
  const double secs = seconds_since(start);
  return {picks.size() >= 50 && worst < 1e-3 && secs < 120.0,
          std::to_string(picks.size()) + " U-Net entries, max rel err " + fmt("%.2e", worst) + ", " +
              fmt("%.2f", secs) + " s"};
}

Outcome haze_round_trip() {
  std::mt19937_64 rng(104);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Image j0 = random_image(rng, 15, 11, 0.2, 0.8);
    const GrayMap tm = random_map(rng, 15, 11, 0.3, 1.0);
    std::uniform_real_distribution<double> ua(0.7, 1.0);
    const AtmosphericLight light{{ua(rng), ua(rng), ua(rng)}};
    Image hazy(15, 11, 3);
    for (int y = 0; y < 15; ++y)
      for (int x = 0; x < 11; ++x)
        for (int c = 0; c < 3; ++c)
          hazy.at(y, x, c) = j0.at(y, x, c) * tm.at(y, x) + light.rgb[c] * (1.0 - tm.at(y, x));
    const Image j = recover_radiance(hazy, TransmissionMap::clamped(tm, 0.1), light, 0.1);
    for (std::size_t k = 0; k < j.data().size(); ++k) worst = std::max(worst, std::abs(j.data()[k] - j0.data()[k]));
  }

  DehazeParams p;
  p.omega = 1.0;
  p.patch_radius = 2;
  bool exact = true;
  double mae = 0.0;
  for (double t0 : {0.5, 0.625, 0.75, 0.875, 1.0}) {
    Image scene = random_image(rng, 24, 24, 0.1, 1.0);
    std::uniform_int_distribution<int> pick(0, 2);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) scene.at(y, x, pick(rng)) = 0.0;
    const Image hazy = oracle::synthesize_haze(scene, GrayMap(24, 24, t0), 1.0);
    const auto t = estimate_transmission(hazy, AtmosphericLight{}, p);
    for (double v : t.map().data()) exact = exact && v == t0;
    const Image j = recover_radiance(hazy, t, AtmosphericLight{}, p.t_floor);
    double sum = 0.0;
    for (std::size_t k = 0; k < j.data().size(); ++k) sum += std::abs(j.data()[k] - scene.data()[k]);
    mae = std::max(mae, sum / static_cast<double>(j.data().size()));
  }
  return {worst < 1e-6 && exact && mae < 0.05, "true-t max err " + fmt("%.2e", worst) + ", DCP t exact " +
                                                   (exact ? "yes" : "no") + ", radiance MAE " + fmt("%.2e", mae)};
}

Outcome window_filters() {
  std::mt19937_64 rng(105);
  std::uniform_int_distribution<int> side(1, 16), radius(0, 6), grid(0, 256);
  int mismatches = 0;
  for (int k = 0; k < 50; ++k) {
    const int h = side(rng), w = side(rng), r = radius(rng);
    const Image img = random_image(rng, h, w, 0.0, 1.0);
    const GrayMap m = random_map(rng, h, w, 0.0, 1.0);
    GrayMap dyadic(h, w);
    for (double& v : dyadic.data()) v = grid(rng) / 256.0;
    mismatches += !(dark_channel(img, r) == oracle::dark_channel(img, r));
    mismatches += !(min_filter(m, r) == oracle::window_min(m, r));
    mismatches += !(box_filter(dyadic, r) == oracle::window_mean(dyadic, r));
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 150 comparisons"};
}

Outcome freezing_contract() {
  ScratchDir dir("freeze");
  if (cli({"synth", "--n-train", "24", "--n-test", "8", "-o", (dir.path() / "data").string()}) != 0)
    return {false, "synth failed"};
  if (cli({"train", "--manifest", (dir.path() / "data" / "manifest.csv").string(), "--epochs-fit", "2",
           "--epochs-finetune", "0", "-o", (dir.path() / "run").string()}) != 0)
    return {false, "train failed"};
  const auto init = initial_models(TrainConfig{}, true);
  const bool classifier_same =
      read_bytes(dir.path() / "run" / "classifier_fit.ckpt") == ad::serialize_checkpoint(init.classifier);
  const bool unet_changed = read_bytes(dir.path() / "run" / "unet_fit.ckpt") != ad::serialize_checkpoint(init.unet);
  return {classifier_same && unet_changed, std::string("classifier identical: ") + (classifier_same ? "yes" : "no") +
                                               ", U-Net changed: " + (unet_changed ? "yes" : "no")};
}

Outcome table_analogue() {
  int wins = 0;
  double slowest = 0.0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto start = Clock::now();
    ScratchDir dir("exp");
    SynthConfig synth;
    synth.seed = seed;
    const auto manifest = load_manifest(synth_generate(synth, dir.path()));
    TrainConfig c;
    c.seed = seed;
    const auto dataset = load_dataset(manifest, c.input_size);
    std::vector<fs::path> train_paths;
    for (const auto& r : manifest.records)
      if (r.split == Split::Train) train_paths.push_back(r.path);
    const auto ref = compute_reference_map(train_paths, DehazeParams{}, c.input_size);
    const auto report = run_experiment(c, dataset, ref, {});
    const double secs = seconds_since(start);
    slowest = std::max(slowest, secs);
    wins += report.pipeline.accuracy >= report.baseline.accuracy;
    std::cerr << "  seed " << seed << ": baseline " << report.baseline.accuracy << ", pipeline "
              << report.pipeline.accuracy << ", " << fmt("%.0f", secs) << " s" << std::endl;
    detail += (seed > 1 ? " " : "") + fmt("%.2f", report.baseline.accuracy) + "->" + fmt("%.2f", report.pipeline.accuracy);
  }
  return {wins >= 4 && slowest < 1800.0, std::to_string(wins) + "/5 seeds pipeline >= baseline (" + detail +
                                             "), slowest seed " + fmt("%.0f", slowest) + " s"};
}

Outcome reference_properties() {
  std::mt19937_64 rng(106);
  const auto make = [&] { return TransmissionMap::clamped(random_map(rng, 13, 17, 0.1, 1.0), 0.1); };
  const auto a = make(), b = make(), c = make(), d = make();
  const bool identity = average_maps({a}).map() == a.map();
  const auto ab = average_maps({a, b});
  bool pair_exact = true;
  for (std::size_t k = 0; k < ab.map().data().size(); ++k)
    pair_exact = pair_exact && ab.map().data()[k] == (a.map().data()[k] + b.map().data()[k]) / 2.0;
  const auto forward = average_maps({a, b, c, d});
  const auto backward = average_maps({d, c, b, a});
  const auto shuffled = average_maps({c, a, d, b});
  double spread = 0.0;
  for (std::size_t k = 0; k < forward.map().data().size(); ++k) {
    spread = std::max(spread, std::abs(forward.map().data()[k] - backward.map().data()[k]));
    spread = std::max(spread, std::abs(forward.map().data()[k] - shuffled.map().data()[k]));
  }
  return {identity && pair_exact && spread <= 1e-12, std::string("identity ") + (identity ? "yes" : "no") +
                                                         ", pair exact " + (pair_exact ? "yes" : "no") +
                                                         ", order spread " + fmt("%.2e", spread)};
}

Outcome train_determinism() {
  ScratchDir dir("determinism");
  if (cli({"synth", "--n-train", "16", "--n-test", "8", "--image-size", "32", "-o", (dir.path() / "data").string()}) != 0)
    return {false, "synth failed"};
  const std::vector<std::string> args{"--seed", "4", "train", "--manifest",
                                      (dir.path() / "data" / "manifest.csv").string(), "--input-size", "32",
                                      "--epochs-fit", "2", "--epochs-finetune", "2"};
  for (const char* run : {"a", "b"}) {
    auto with_out = args;
    with_out.insert(with_out.end(), {"-o", (dir.path() / run).string()});
    if (cli(with_out) != 0) return {false, "train failed"};
  }
  int compared = 0, different = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "a")) {
    const auto name = e.path().filename();
    if (name.extension() != ".ckpt" && name != "history.csv") continue;
    ++compared;
    different += read_bytes(e.path()) != read_bytes(dir.path() / "b" / name);
  }
  return {compared == 5 && different == 0,
          std::to_string(compared) + " files compared (history + checkpoints), " + std::to_string(different) +
              " differ"};
}

Outcome illumination_effect() {
  double worst = 0.0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = scenarios::shading_reduction(0.6, seed);
    const double reduction = 1.0 - r.after / r.before;
    worst = seed == 1 ? reduction : std::min(worst, reduction);
    detail += (seed > 1 ? " " : "") + fmt("%.0f%%", 100.0 * reduction);
  }
  return {worst >= 0.5, "spread reduction per image: " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "shadow layer matches scalar oracle", shadow_scalar},
      {2, "A = 1 reduces to division by t", shadow_division},
      {3, "shadow layer gradients match finite differences", shadow_gradient},
      {4, "end-to-end gradients reach U-Net parameters", end_to_end_gradient},
      {5, "haze model round trip", haze_round_trip},
      {6, "dark channel and window filters match brute force", window_filters},
      {7, "classifier frozen during fitting phase", freezing_contract},
      {8, "pipeline >= baseline on shading-confounded data", table_analogue},
      {9, "reference map averaging properties", reference_properties},
      {10, "train is byte-for-byte deterministic", train_determinism},
      {11, "illumination compensation halves shading spread", illumination_effect},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
