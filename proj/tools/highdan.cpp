#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "highdan/metrics.hpp"
#include "highdan/palette.hpp"
#include "highdan/trainer.hpp"
#include "highdan/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace highdan;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

constexpr double kReferenceParams = 16.55e6;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  SynthSpec spec;
  ShiftSpec shift;
  std::uint64_t target_seed = 0;
  std::uint64_t shift_seed = 0;
  double gain = 1.0, offset = 0.0;
};

int run_synth(const SynthArgs& a, const CLI::App& cmd) {
  SynthSpec spec = a.spec;
  ShiftSpec shift = a.shift;
  spec.target_seed = cmd.count("--target-seed") ? a.target_seed : spec.seed;
  shift.seed = cmd.count("--shift-seed") ? a.shift_seed : spec.seed;
  if (cmd.count("--gain")) shift.gain_min = shift.gain_max = a.gain;
  if (cmd.count("--offset")) shift.offset_min = shift.offset_max = a.offset;
  const ScenePair pair = synth_scene_pair(spec, shift);
  const fs::path out = a.out;
  save_scene(pair.source, out / "source");
  save_scene(pair.target, out / "target");

  json realized = json::object();
  for (const auto& [id, bands] : pair.shifts) {
    json list = json::array();
    for (const auto& b : bands) list.push_back({{"gain", b.gain}, {"offset", b.offset}});
    realized[id] = list;
  }
  const json summary = {{"shift",
                         {{"gain_min", shift.gain_min},
                          {"gain_max", shift.gain_max},
                          {"offset_min", shift.offset_min},
                          {"offset_max", shift.offset_max},
                          {"noise_std", shift.noise_std},
                          {"class_skew", shift.class_skew},
                          {"seed", shift.seed}}},
                        {"seed", spec.seed},
                        {"target_seed", *spec.target_seed},
                        {"realized", realized}};
  write_text(out / "shift.json", summary.dump(2) + "\n");
  std::cout << "source: " << (out / "source").string() << "\n"
            << "target: " << (out / "target").string() << "\n"
            << "shift:  " << summary["shift"].dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  TrainConfig defaults;
  double lambda = 0.5, mu = 0.5;
  std::string dice_mode = "macro";
  bool feature_da = true, category_da = true, dice = true;
};

int run_train(const TrainArgs& a, const CLI::App& cmd) {
  std::ifstream in(a.config);
  if (!in) throw ConfigError("cannot read config " + a.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + a.config + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto& d = a.defaults;
  auto override_key = [&](const char* flag, const char* key, const json& value) {
    if (cmd.count(flag)) j[key] = value;
  };
  override_key("--source-dir", "source_dir", d.source_dir);
  override_key("--target-dir", "target_dir", d.target_dir);
  override_key("--out-dir", "out_dir", d.out_dir);
  override_key("--epochs", "epochs", d.epochs);
  override_key("--seed", "seed", d.seed);
  override_key("--tile-size", "tile_size", d.tile_size);
  override_key("--stride", "stride", d.stride);
  override_key("--batch-size", "batch_size", d.batch_size);
  override_key("--lr-segmenter", "lr_segmenter", d.lr_segmenter);
  override_key("--lr-discriminator", "lr_discriminator", d.lr_discriminator);
  override_key("--pca-components", "pca_components", d.pca_components);
  override_key("--checkpoint-every", "checkpoint_every", d.checkpoint_every);
  override_key("--dice-mode", "dice_mode", a.dice_mode);
  override_key("--feature-da", "enable_feature_da", a.feature_da);
  override_key("--category-da", "enable_category_da", a.category_da);
  override_key("--dice", "enable_dice", a.dice);
  if (cmd.count("--lambda") || cmd.count("--mu")) {
    if (!j.contains("weights") || !j["weights"].is_object()) j["weights"] = json::object();
    if (cmd.count("--lambda")) j["weights"]["lambda"] = a.lambda;
    if (cmd.count("--mu")) j["weights"]["mu"] = a.mu;
  }
  const TrainConfig cfg = train_config_from_json(j);

  std::cerr << "active modules:";
  for (const auto& m : cfg.active_modules()) std::cerr << " " << m;
  std::cerr << "\n";
  const auto result = fit(cfg, [](const LossRecord& r) {
    if (r.iter == 1 || r.iter % 10 == 0) {
      std::cerr << "iter " << r.iter << "  seg " << r.seg << "  total " << r.total << "\n";
    }
  });
  std::cout << "iterations: " << result.state.iteration << "\n"
            << "checkpoint: " << (fs::path(cfg.out_dir) / "checkpoint.bin").string() << "\n"
            << "trace:      " << (fs::path(cfg.out_dir) / "trace.csv").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval / predict

struct InferArgs {
  std::string checkpoint;
  std::string scene;
  Index tile = 0;
  Index stride = 0;
  bool da = true;
  std::string domain = "auto";
};

Domain resolve_domain(const std::string& flag, const Scene& scene, const TrainState& state) {
  if (flag == "source") return Domain::Source;
  if (flag == "target") return Domain::Target;
  if (flag != "auto") throw ArgumentError("--domain must be auto, source or target");
  return scene.name == state.source_name ? Domain::Source : Domain::Target;
}

Prediction predict_scene(const InferArgs& a, const Scene& scene) {
  if (a.checkpoint.empty()) throw ArgumentError("--checkpoint is required");
  TrainState state = load_checkpoint(a.checkpoint);
  const Index tile = a.tile > 0 ? a.tile : std::min(state.config.tile_size, std::min(scene.height, scene.width) / 32 * 32);
  const Index stride = a.stride > 0 ? a.stride : std::max<Index>(1, tile / 2);
  return infer_full_scene(state, scene, tile, stride, a.da, resolve_domain(a.domain, scene, state));
}

struct EvalArgs {
  InferArgs infer;
  std::string report = "report.json";
  std::string f1_mode = "standard";
  bool gt_as_pred = false;
};

int run_eval(const EvalArgs& a) {
  const F1Mode mode = f1_mode_from_string(a.f1_mode);
  const Scene scene = load_scene(a.infer.scene);
  // Ignored ground-truth pixels are skipped by accumulate, so the labels
  // themselves are a valid prediction for the bypass.
  const LabelMap pred = a.gt_as_pred ? scene.labels : predict_scene(a.infer, scene).labels;
  const auto cm = accumulate(ConfusionMatrix(scene.num_classes), pred.data, scene.labels.data, scene.indexer());
  const auto report = make_report(cm, scene.class_names, scene.indexer(), mode);
  write_text(a.report, report_to_json(report).dump(2) + "\n");
  std::cout << format_report_table(report);
  return kExitOk;
}

struct PredictArgs {
  InferArgs infer;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  const Scene scene = load_scene(a.infer.scene);
  const Prediction pred = predict_scene(a.infer, scene);
  const fs::path out = a.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  {
    std::ofstream f(out / "pred.u8", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (out / "pred.u8").string());
    f.write(reinterpret_cast<const char*>(pred.labels.data.data()), static_cast<std::streamsize>(pred.labels.data.size()));
    if (!f) throw IoError("failed writing " + (out / "pred.u8").string());
  }
  write_png(out / "pred.png", scene.width, scene.height, colorize(pred.labels, scene.indexer()));
  std::cout << "pred.u8: " << (out / "pred.u8").string() << "\n"
            << "pred.png: " << (out / "pred.png").string() << "\n"
            << "attention: " << (pred.attention_applied ? "applied" : "not applied") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- params

struct ParamsArgs {
  std::string config;
  Index hsi = 30, msi = 4, sar = 2;
  Index classes = 13;
  bool as_json = false;
};

int run_params(const ParamsArgs& a, const CLI::App& cmd) {
  ModelConfig cfg;
  Index hsi = a.hsi;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot read config " + a.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + a.config + " is not valid JSON: " + e.what());
    }
    if (j.contains("model")) architecture_from_json(j["model"], cfg);
    if (j.contains("pca_components") && !cmd.count("--hsi-channels")) hsi = j["pca_components"].get<Index>();
  }
  for (const auto& [id, channels] : {std::pair<std::string, Index>{"hsi", hsi}, {"msi", a.msi}, {"sar", a.sar}}) {
    if (channels > 0) cfg.encoder.modalities.push_back({id, channels});
  }
  cfg.decoder.num_classes = a.classes;
  const Segmenter<Real> model(cfg);
  const auto params = count_params(model.store());
  const double deviation = 100.0 * (static_cast<double>(params.total) - kReferenceParams) / kReferenceParams;
  const double seg_deviation = 100.0 * (static_cast<double>(params.segmenter) - kReferenceParams) / kReferenceParams;
  if (a.as_json) {
    json modules = json::object();
    for (const auto& [name, count] : params.modules) modules[name] = count;
    std::cout << json{{"modules", modules},
                      {"segmenter", params.segmenter},
                      {"discriminators", params.discriminators},
                      {"total", params.total},
                      {"reference", kReferenceParams},
                      {"deviation_percent", deviation},
                      {"segmenter_deviation_percent", seg_deviation}}
                     .dump(2)
              << "\n";
    return kExitOk;
  }
  std::cout << std::left << std::setw(24) << "module" << std::right << std::setw(14) << "params" << "\n";
  for (const auto& [name, count] : params.modules) {
    std::cout << std::left << std::setw(24) << name << std::right << std::setw(14) << count << "\n";
  }
  std::cout << std::left << std::setw(24) << "segmenter" << std::right << std::setw(14) << params.segmenter << "\n"
            << std::left << std::setw(24) << "discriminators" << std::right << std::setw(14) << params.discriminators
            << "\n"
            << std::left << std::setw(24) << "total" << std::right << std::setw(14) << params.total << "\n"
            << std::fixed << std::setprecision(2) << "reference 16.55 M: total deviates " << std::showpos << deviation
            << "%, segmenter alone " << seg_deviation << "%" << std::noshowpos << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal segmentation with adversarial domain adaptation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a paired source/target synthetic scene");
  synth_cmd->add_option("--out", synth.out, "Output directory (receives source/, target/, shift.json)")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "Signature and source layout seed");
  synth_cmd->add_option("--target-seed", synth.target_seed, "Target layout seed (default: --seed)");
  synth_cmd->add_option("--shift-seed", synth.shift_seed, "Seed of the per-band shift draws (default: --seed)");
  synth_cmd->add_option("--height", synth.spec.height, "Scene height");
  synth_cmd->add_option("--width", synth.spec.width, "Scene width");
  synth_cmd->add_option("--hsi-bands", synth.spec.hsi_bands, "Hyperspectral bands (0 omits the modality)");
  synth_cmd->add_option("--msi-bands", synth.spec.msi_bands, "Multispectral bands (0 omits the modality)");
  synth_cmd->add_option("--sar-bands", synth.spec.sar_bands, "SAR bands (0 omits the modality)");
  synth_cmd->add_option("--classes", synth.spec.num_classes, "Number of classes");
  synth_cmd->add_option("--sites", synth.spec.num_sites, "Voronoi sites in the layout");
  synth_cmd->add_option("--pixel-noise", synth.spec.pixel_noise, "Pixel noise std of both scenes");
  synth_cmd->add_option("--unlabeled", synth.spec.unlabeled_fraction, "Fraction of cells labeled as ignore");
  synth_cmd->add_option("--gain-min", synth.shift.gain_min, "Lower bound of the per-band target gain");
  synth_cmd->add_option("--gain-max", synth.shift.gain_max, "Upper bound of the per-band target gain");
  synth_cmd->add_option("--gain", synth.gain, "Fixed target gain (sets both bounds)");
  synth_cmd->add_option("--offset-min", synth.shift.offset_min, "Lower bound of the per-band target offset");
  synth_cmd->add_option("--offset-max", synth.shift.offset_max, "Upper bound of the per-band target offset");
  synth_cmd->add_option("--offset", synth.offset, "Fixed target offset (sets both bounds)");
  synth_cmd->add_option("--noise", synth.shift.noise_std, "Extra target noise std");
  synth_cmd->add_option("--skew", synth.shift.class_skew, "Target class-prior skew");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train from a JSON config; flags override config keys");
  train_cmd->add_option("--config", train.config, "TrainConfig JSON file")->required();
  train_cmd->add_option("--source-dir", train.defaults.source_dir, "Labeled source scene directory");
  train_cmd->add_option("--target-dir", train.defaults.target_dir, "Unlabeled target scene directory");
  train_cmd->add_option("--out-dir", train.defaults.out_dir, "Output directory");
  train_cmd->add_option("--epochs", train.defaults.epochs, "Passes over the source tiles");
  train_cmd->add_option("--seed", train.defaults.seed, "Run seed");
  train_cmd->add_option("--tile-size", train.defaults.tile_size, "Tile size (multiple of 32)");
  train_cmd->add_option("--stride", train.defaults.stride, "Tiling stride");
  train_cmd->add_option("--batch-size", train.defaults.batch_size, "Batch size");
  train_cmd->add_option("--lr-segmenter", train.defaults.lr_segmenter, "Adam rate of encoder and decoder");
  train_cmd->add_option("--lr-discriminator", train.defaults.lr_discriminator, "Adam rate of both discriminators");
  train_cmd->add_option("--lambda", train.lambda, "Feature-level adversarial weight");
  train_cmd->add_option("--mu", train.mu, "Category-level adversarial weight");
  train_cmd->add_option("--pca-components", train.defaults.pca_components, "Hyperspectral PCA components (0 disables)");
  train_cmd->add_option("--checkpoint-every", train.defaults.checkpoint_every, "Checkpoint period in iterations (0: final only)");
  train_cmd->add_option("--dice-mode", train.dice_mode, "Dice reduction")->check(CLI::IsMember({"macro", "global"}));
  train_cmd->add_flag("--feature-da,!--no-feature-da", train.feature_da, "Feature-level adaptation (on unless the config disables it)");
  train_cmd->add_flag("--category-da,!--no-category-da", train.category_da, "Category-level adaptation (on unless the config disables it)");
  train_cmd->add_flag("--dice,!--no-dice", train.dice, "Dice term in the segmentation loss (on unless the config disables it)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Predict a labeled scene and write a metrics report");
  eval_cmd->add_option("--checkpoint", eval.infer.checkpoint, "Checkpoint file");
  eval_cmd->add_option("--scene", eval.infer.scene, "Scene directory")->required();
  eval_cmd->add_option("--report", eval.report, "Report JSON path");
  eval_cmd->add_option("--tile", eval.infer.tile, "Inference tile (0: training tile)");
  eval_cmd->add_option("--stride", eval.infer.stride, "Inference stride (0: half the tile)");
  eval_cmd->add_flag("--da,!--no-da", eval.infer.da, "Attention correction on target-domain scenes (default on)");
  eval_cmd->add_option("--domain", eval.infer.domain, "Scene domain; auto compares with the training source name")
      ->check(CLI::IsMember({"auto", "source", "target"}));
  eval_cmd->add_option("--f1-mode", eval.f1_mode, "F1 variant")->check(CLI::IsMember({"standard", "paper_literal"}));
  eval_cmd->add_flag("--gt-as-pred", eval.gt_as_pred, "Score the labels against themselves (no checkpoint)");

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Write pred.u8 and pred.png for a scene");
  predict_cmd->add_option("--checkpoint", predict.infer.checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--scene", predict.infer.scene, "Scene directory")->required();
  predict_cmd->add_option("--out", predict.out, "Output directory")->required();
  predict_cmd->add_option("--tile", predict.infer.tile, "Inference tile (0: training tile)");
  predict_cmd->add_option("--stride", predict.infer.stride, "Inference stride (0: half the tile)");
  predict_cmd->add_flag("--da,!--no-da", predict.infer.da, "Attention correction on target-domain scenes (default on)");
  predict_cmd->add_option("--domain", predict.infer.domain, "Scene domain; auto compares with the training source name")
      ->check(CLI::IsMember({"auto", "source", "target"}));

  ParamsArgs params;
  auto* params_cmd = app.add_subcommand("params", "Print learnable parameter counts per module");
  params_cmd->add_option("--config", params.config, "Optional config JSON (its model object and pca_components)");
  params_cmd->add_option("--hsi-channels", params.hsi, "hsi input channels after PCA (0 omits)");
  params_cmd->add_option("--msi-channels", params.msi, "msi input channels (0 omits)");
  params_cmd->add_option("--sar-channels", params.sar, "sar input channels (0 omits)");
  params_cmd->add_option("--classes", params.classes, "Number of classes");
  params_cmd->add_flag("--json", params.as_json, "Print JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth, *synth_cmd);
    if (*train_cmd) return run_train(train, *train_cmd);
    if (*eval_cmd) {
      if (!eval.gt_as_pred && eval.infer.checkpoint.empty()) throw ArgumentError("--checkpoint is required");
      return run_eval(eval);
    }
    if (*predict_cmd) return run_predict(predict);
    if (*params_cmd) return run_params(params, *params_cmd);
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const UndefinedMetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
