#include "fundus/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fundus/dehaze.hpp"
#include "fundus/error.hpp"
#include "fundus/gradcheck.hpp"
#include "fundus/image_io.hpp"
#include "fundus/trainer.hpp"

namespace fundus {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr int kConfigVersion = 1;

// JSON config files: {"version": 1, "<subcommand>": {"<long-flag>": value}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    if (!j.contains("version") || j["version"] != kConfigVersion)
      throw CLI::ConfigError("config \"version\" must be " + std::to_string(kConfigVersion));
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items())
      if (key != "version") flatten(key, value, {}, items);
    return items;
  }

 private:
  static void flatten(const std::string& key, const nlohmann::json& value, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    if (value.is_object()) {
      parents.push_back(key);
      for (const auto& [k, v] : value.items()) flatten(k, v, parents, items);
      return;
    }
    CLI::ConfigItem item;
    item.parents = std::move(parents);
    item.name = key;
    if (value.is_array()) {
      for (const auto& v : value) item.inputs.push_back(scalar(v));
    } else {
      item.inputs.push_back(scalar(value));
    }
    items.push_back(std::move(item));
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

// Files as given plus image files found directly inside directories, sorted.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::set<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && is_image_file(e.path())) files.insert(e.path());
    } else {
      files.insert(p);
    }
  }
  return {files.begin(), files.end()};
}

void add_dehaze_flags(CLI::App* sub, DehazeParams& p) {
  sub->add_option("--patch-radius", p.patch_radius, "Dark channel window radius");
  sub->add_option("--omega", p.omega, "Fraction of haze removed");
  sub->add_option("--top-fraction", p.top_fraction, "Brightest dark-channel fraction used for airlight");
  sub->add_option("--t-floor", p.t_floor, "Lower bound on transmission");
  sub->add_option("--guided-radius", p.guided_radius, "Guided filter radius");
  sub->add_option("--guided-eps", p.guided_eps, "Guided filter regularizer");
}

void out_dir_option(CLI::App* sub, std::string& dir) {
  sub->add_option("-o,--out", dir, "Output directory")->envname(kOutDirEnv);
}

std::string rgb_str(const std::array<double, 3>& v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "(%.4f, %.4f, %.4f)", v[0], v[1], v[2]);
  return buf;
}

std::string num(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Runs `per_file` over each input; failures are listed and turn the exit code to 1.
int for_each_image(const Context& ctx, const std::vector<std::string>& inputs,
                   const std::function<std::string(const fs::path&)>& per_file) {
  const auto files = expand_inputs(inputs);
  if (files.empty()) {
    ctx.err << "error: no input images\n";
    return kExitFailure;
  }
  std::vector<std::string> failures;
  for (const auto& f : files) {
    try {
      ctx.out << f.string() << ": " << per_file(f) << '\n';
    } catch (const std::exception& e) {
      failures.push_back(f.string() + ": " + e.what());
    }
  }
  for (const auto& f : failures) ctx.err << "failed " << f << '\n';
  return failures.empty() ? kExitOk : kExitFailure;
}

struct ImageFlags {
  std::vector<std::string> inputs;
  std::string out = "out";
  DehazeParams params;
  double wb_percentile = 0.99;
  bool emit_transmission = false;
};

void add_image_flags(CLI::App* sub, ImageFlags& f, bool dehaze, bool wb) {
  sub->add_option("inputs", f.inputs, "Input images or directories")->required();
  out_dir_option(sub, f.out);
  if (dehaze) {
    add_dehaze_flags(sub, f.params);
    sub->add_flag("--emit-transmission", f.emit_transmission, "Also write the transmission map as PNG");
  }
  if (wb) sub->add_option("--wb-percentile", f.wb_percentile, "White balance percentile");
}

int cmd_illuminate(const Context& ctx, const ImageFlags& f) {
  f.params.validate();
  fs::create_directories(f.out);
  return for_each_image(ctx, f.inputs, [&](const fs::path& p) {
    const auto r = illuminate(read_image(p), f.params, f.wb_percentile);
    write_image(r.image, fs::path(f.out) / (p.stem().string() + "_illuminated.png"));
    if (f.emit_transmission)
      write_image(transmission_to_image(r.transmission), fs::path(f.out) / (p.stem().string() + "_t.png"));
    return "A=" + rgb_str({1.0, 1.0, 1.0}) + " mean_t=" + num(r.transmission.mean()) +
           " wb_gains=" + rgb_str(r.white_balance_gains);
  });
}

int cmd_dehaze(const Context& ctx, const ImageFlags& f) {
  f.params.validate();
  fs::create_directories(f.out);
  return for_each_image(ctx, f.inputs, [&](const fs::path& p) {
    const auto r = dehaze_image(read_image(p), f.params);
    write_image(r.radiance, fs::path(f.out) / (p.stem().string() + "_dehazed.png"));
    if (f.emit_transmission)
      write_image(transmission_to_image(r.transmission), fs::path(f.out) / (p.stem().string() + "_t.png"));
    return "A=" + rgb_str(r.light.rgb) + " mean_t=" + num(r.transmission.mean());
  });
}

int cmd_wb(const Context& ctx, const ImageFlags& f) {
  fs::create_directories(f.out);
  return for_each_image(ctx, f.inputs, [&](const fs::path& p) {
    const auto r = white_balance(read_image(p), f.wb_percentile);
    write_image(r.image, fs::path(f.out) / (p.stem().string() + "_wb.png"));
    return "gains=" + rgb_str(r.gains);
  });
}

std::vector<fs::path> train_paths(const Manifest& m) {
  std::vector<fs::path> out;
  for (const auto& r : m.records)
    if (r.split == Split::Train) out.push_back(r.path);
  return out;
}

void report_missing(const Context& ctx, const Manifest& m) {
  for (const auto& f : m.missing_files) ctx.err << "warning: missing file " << f << '\n';
}

struct RefmapFlags {
  std::vector<std::string> inputs;
  std::string manifest;
  std::string out = "out";
  int size = 64;
  double wb_percentile = 0.99;
  DehazeParams params;
};

void write_reference(const ReferenceMap& ref, const fs::path& dir) {
  fs::create_directories(dir);
  write_image(transmission_to_image(ref.map), dir / "refmap.png");
  save_reference_map(ref, dir / "refmap.bin");
}

int cmd_refmap(const Context& ctx, const RefmapFlags& f) {
  f.params.validate();
  std::vector<fs::path> paths;
  if (!f.manifest.empty()) {
    const auto m = load_manifest(f.manifest);
    report_missing(ctx, m);
    paths = train_paths(m);
  }
  for (const auto& p : expand_inputs(f.inputs)) paths.push_back(p);
  if (paths.empty()) throw Error(ErrorCode::EmptyDataset, "no input images");
  const auto ref = compute_reference_map(paths, f.params, f.size, f.wb_percentile);
  for (const auto& s : ref.skipped) ctx.err << "skipped " << s << '\n';
  write_reference(ref, f.out);
  ctx.out << "sources=" << ref.source_count << " resolution=" << ref.resolution
          << " mean_t=" << num(ref.map.mean()) << " -> " << (fs::path(f.out) / "refmap.bin").string() << '\n';
  return kExitOk;
}

void add_synth_flags(CLI::App* sub, SynthConfig& c) {
  sub->add_option("--n-train", c.n_train, "Training images");
  sub->add_option("--n-test", c.n_test, "Test images");
  sub->add_option("--image-size", c.image_size, "Side length in pixels");
  sub->add_option("--lesion-probability", c.lesion_probability, "Probability of the unhealthy class");
  sub->add_option("--shading", c.shading_strength, "Shading strength in [0, 1)");
}

int cmd_synth(const Context& ctx, SynthConfig c, const std::string& out, std::uint64_t seed) {
  c.seed = seed;
  const auto manifest = synth_generate(c, out);
  ctx.out << "wrote " << c.n_train << " train + " << c.n_test << " test images, manifest " << manifest.string()
          << '\n';
  return kExitOk;
}

struct TrainFlags {
  TrainConfig config;
  double lambda_mse = 1.0;
  CLI::Option* lambda_fit = nullptr;
  CLI::Option* lambda_finetune = nullptr;
  std::string manifest;
  std::string reference;
  std::string out = "out";

  // Per-phase weights default to --lambda-mse unless given explicitly.
  TrainConfig resolved(std::uint64_t seed) const {
    TrainConfig c = config;
    c.seed = seed;
    if (lambda_fit->count() == 0) c.lambda_mse_fit = lambda_mse;
    if (lambda_finetune->count() == 0) c.lambda_mse_finetune = lambda_mse;
    c.validate();
    return c;
  }
};

void add_model_flags(CLI::App* sub, TrainConfig& c) {
  sub->add_option("--input-size", c.input_size, "Network input side length");
  sub->add_option("--batch-size", c.batch_size, "Minibatch size");
  sub->add_option("--t-min", c.t_min, "Lower bound of the predicted transmission");
  sub->add_option("--a-value", c.a_value, "Atmospheric light in the shadow removal layer");
  sub->add_option("--unet-depth", c.unet.depth, "U-Net pooling levels");
  sub->add_option("--unet-base-channels", c.unet.base_channels, "U-Net channels at the first level");
  sub->add_option("--classifier-blocks", c.classifier.conv_blocks, "Classifier conv blocks");
  sub->add_option("--classifier-base-channels", c.classifier.base_channels, "Classifier first-block channels");
}

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  add_model_flags(sub, f.config);
  sub->add_option("--epochs-fit", f.config.epochs_fit, "Epochs with the classifier frozen");
  sub->add_option("--epochs-finetune", f.config.epochs_finetune, "Epochs training both networks");
  sub->add_option("--lr", f.config.lr, "Adam learning rate");
  sub->add_option("--lambda-mse", f.lambda_mse, "Weight of the reference-map MSE term");
  f.lambda_fit = sub->add_option("--lambda-mse-fit", f.config.lambda_mse_fit, "MSE weight in the fit phase");
  f.lambda_finetune =
      sub->add_option("--lambda-mse-finetune", f.config.lambda_mse_finetune, "MSE weight in fine-tuning");
  sub->add_option("--rotation-range", f.config.rotation_range, "Augmentation rotation range in degrees");
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  j["version"] = kConfigVersion;
  j["seed"] = c.seed;
  j["input_size"] = c.input_size;
  j["batch_size"] = c.batch_size;
  j["epochs_fit"] = c.epochs_fit;
  j["epochs_finetune"] = c.epochs_finetune;
  j["lr"] = c.lr;
  j["lambda_mse_fit"] = c.lambda_mse_fit;
  j["lambda_mse_finetune"] = c.lambda_mse_finetune;
  j["a_value"] = c.a_value;
  j["t_min"] = c.t_min;
  j["rotation_range"] = c.rotation_range;
  j["unet"] = {{"depth", c.unet.depth}, {"base_channels", c.unet.base_channels}};
  j["classifier"] = {{"conv_blocks", c.classifier.conv_blocks}, {"base_channels", c.classifier.base_channels}};
  return j;
}

ReferenceMap reference_for(const Context& ctx, const TrainFlags& f, const Manifest& m, const TrainConfig& c) {
  if (!f.reference.empty()) return load_reference_map(f.reference);
  auto ref = compute_reference_map(train_paths(m), DehazeParams{}, c.input_size);
  for (const auto& s : ref.skipped) ctx.err << "skipped " << s << '\n';
  return ref;
}

TrainCallbacks epoch_logger(const Context& ctx) {
  TrainCallbacks cb;
  cb.on_epoch = [&ctx](const EpochRecord& r) {
    ctx.out << "epoch " << r.epoch << " [" << r.phase << "] bce=" << num(r.bce) << " mse=" << num(r.mse)
            << " total=" << num(r.total) << " test_acc=" << num(r.test_accuracy, "%.4f") << std::endl;
  };
  return cb;
}

int cmd_train(const Context& ctx, const TrainFlags& f, std::uint64_t seed) {
  const TrainConfig c = f.resolved(seed);
  const auto m = load_manifest(f.manifest);
  report_missing(ctx, m);
  const auto dataset = load_dataset(m, c.input_size);
  const auto ref = reference_for(ctx, f, m, c);
  const fs::path out(f.out);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << config_json(c).dump(2) << '\n';
  save_reference_map(ref, out / "refmap.bin");

  auto cb = epoch_logger(ctx);
  cb.on_phase_end = [&](const std::string& phase, const PipelineModels& models) {
    ad::save_checkpoint(models.unet, out / ("unet_" + phase + ".ckpt"));
    ad::save_checkpoint(models.classifier, out / ("classifier_" + phase + ".ckpt"));
  };
  const auto result = train(c, dataset, ref, cb);
  write_history_csv(result.history, out / "history.csv");
  ctx.out << "wrote " << (out / "history.csv").string() << '\n';
  return kExitOk;
}

struct EvalFlags {
  TrainConfig config;
  std::string manifest;
  std::string unet;
  std::string classifier;
  std::string reference;
  std::string split = "test";
};

int cmd_eval(const Context& ctx, const EvalFlags& f) {
  TrainConfig c = f.config;
  c.validate();
  const auto m = load_manifest(f.manifest);
  report_missing(ctx, m);
  const auto dataset = load_dataset(m, c.input_size);
  PipelineModels models = initial_models(c, !f.unet.empty());
  if (!f.unet.empty()) ad::load_checkpoint_into(models.unet, f.unet);
  ad::load_checkpoint_into(models.classifier, f.classifier);
  std::optional<ReferenceMap> ref;
  if (!f.reference.empty()) ref = load_reference_map(f.reference);
  const auto& split = f.split == "train" ? dataset.train : dataset.test;
  const auto report = evaluate(c, models, split, ref ? &*ref : nullptr);
  ctx.out << eval_report_json(report) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, std::uint64_t seed) {
  const auto rows = run_gradcheck_suite(seed);
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %12s %10s %8s %s\n", "check", "max_rel_err", "tolerance", "entries",
                "result");
  ctx.out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-26s %12.3e %10.1e %8zu %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                  r.checked, r.passed ? "ok" : "FAIL");
    ctx.out << line;
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitFailure;
}

int cmd_experiment(const Context& ctx, const TrainFlags& f, const SynthConfig& synth, std::uint64_t seed) {
  const TrainConfig c = f.resolved(seed);
  const fs::path out(f.out);
  fs::path manifest_path(f.manifest);
  if (manifest_path.empty()) {
    SynthConfig s = synth;
    s.seed = seed;
    manifest_path = synth_generate(s, out / "data");
    ctx.out << "generated synthetic data in " << (out / "data").string() << '\n';
  }
  const auto m = load_manifest(manifest_path);
  report_missing(ctx, m);
  const auto dataset = load_dataset(m, c.input_size);
  const auto ref = reference_for(ctx, f, m, c);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << config_json(c).dump(2) << '\n';
  write_reference(ref, out);
  const auto report = run_experiment(c, dataset, ref, out, epoch_logger(ctx));
  ctx.out << format_comparison_table(report);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Context ctx{out, err};
  CLI::App app{"Illumination compensation and learned preprocessing for fundus-like images", "fundus"};
  app.option_defaults()->always_capture_default();
  app.get_formatter()->column_width(40);
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON config file; explicit flags take precedence");
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "Seed for every random choice");

  ImageFlags ill, deh, wb;
  auto* s_ill = app.add_subcommand("illuminate", "White balance, then dehaze the inverted image with A = 1");
  add_image_flags(s_ill, ill, true, true);
  auto* s_deh = app.add_subcommand("dehaze", "Dark channel prior dehazing with estimated airlight");
  add_image_flags(s_deh, deh, true, false);
  auto* s_wb = app.add_subcommand("wb", "Per-channel percentile white balance");
  add_image_flags(s_wb, wb, false, true);

  RefmapFlags rf;
  auto* s_ref = app.add_subcommand("refmap", "Average transmission map over the training images");
  s_ref->add_option("inputs", rf.inputs, "Input images or directories");
  s_ref->add_option("--manifest", rf.manifest, "Manifest CSV; its train split is used");
  s_ref->add_option("--size", rf.size, "Output side length");
  s_ref->add_option("--wb-percentile", rf.wb_percentile, "White balance percentile");
  out_dir_option(s_ref, rf.out);
  add_dehaze_flags(s_ref, rf.params);

  SynthConfig sc;
  std::string synth_out = "out";
  auto* s_syn = app.add_subcommand("synth", "Generate the synthetic shading-confounded dataset");
  add_synth_flags(s_syn, sc);
  out_dir_option(s_syn, synth_out);

  TrainFlags tf;
  auto* s_train = app.add_subcommand("train", "Two-phase training of U-Net, shadow removal layer and classifier");
  add_train_flags(s_train, tf);
  s_train->add_option("--manifest", tf.manifest, "Manifest CSV")->required();
  s_train->add_option("--reference", tf.reference, "Reference map sidecar (.bin); computed when absent");
  out_dir_option(s_train, tf.out);

  EvalFlags ef;
  auto* s_eval = app.add_subcommand("eval", "Evaluate checkpoints on a manifest split");
  add_model_flags(s_eval, ef.config);
  s_eval->add_option("--manifest", ef.manifest, "Manifest CSV")->required();
  s_eval->add_option("--classifier", ef.classifier, "Classifier checkpoint")->required();
  s_eval->add_option("--unet", ef.unet, "U-Net checkpoint; omit for the classifier-only baseline");
  s_eval->add_option("--reference", ef.reference, "Reference map sidecar for the MSE column");
  s_eval->add_option("--split", ef.split, "Split to evaluate")->check(CLI::IsMember({"train", "test"}));

  auto* s_grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");

  TrainFlags xf;
  SynthConfig xs;
  auto* s_exp = app.add_subcommand("experiment", "Baseline classifier vs the full pipeline on the same splits");
  add_train_flags(s_exp, xf);
  add_synth_flags(s_exp, xs);
  s_exp->add_option("--manifest", xf.manifest, "Manifest CSV; synthetic data is generated when absent");
  s_exp->add_option("--reference", xf.reference, "Reference map sidecar (.bin); computed when absent");
  out_dir_option(s_exp, xf.out);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*s_ill) return cmd_illuminate(ctx, ill);
    if (*s_deh) return cmd_dehaze(ctx, deh);
    if (*s_wb) return cmd_wb(ctx, wb);
    if (*s_ref) return cmd_refmap(ctx, rf);
    if (*s_syn) return cmd_synth(ctx, sc, synth_out, seed);
    if (*s_train) return cmd_train(ctx, tf, seed);
    if (*s_eval) return cmd_eval(ctx, ef);
    if (*s_grad) return cmd_gradcheck(ctx, seed);
    if (*s_exp) return cmd_experiment(ctx, xf, xs, seed);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidArgument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fundus
