#include "highdan/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "highdan/version.hpp"

namespace highdan {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (tile_size < 32 || tile_size % 32 != 0) throw ConfigError("tile_size must be a positive multiple of 32");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_segmenter > 0) || !(lr_discriminator > 0)) throw ConfigError("learning rates must be positive");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(weights.lambda >= 0) || !(weights.mu >= 0)) throw ConfigError("weights.lambda and weights.mu must be >= 0");
  if (pca_components < 0) throw ConfigError("pca_components must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

std::vector<std::string> TrainConfig::active_modules() const {
  std::vector<std::string> mods{"seg"};
  if (enable_dice) mods.push_back("dice");
  if (enable_feature_da) mods.push_back("feature_da");
  if (enable_category_da) mods.push_back("category_da");
  return mods;
}

json train_config_to_json(const TrainConfig& cfg) {
  return {{"source_dir", cfg.source_dir},
          {"target_dir", cfg.target_dir},
          {"tile_size", cfg.tile_size},
          {"stride", cfg.stride},
          {"batch_size", cfg.batch_size},
          {"lr_segmenter", cfg.lr_segmenter},
          {"lr_discriminator", cfg.lr_discriminator},
          {"epochs", cfg.epochs},
          {"weights", {{"lambda", cfg.weights.lambda}, {"mu", cfg.weights.mu}}},
          {"pca_components", cfg.pca_components},
          {"enable_feature_da", cfg.enable_feature_da},
          {"enable_category_da", cfg.enable_category_da},
          {"enable_dice", cfg.enable_dice},
          {"dice_mode", cfg.dice_mode == DiceMode::Macro ? "macro" : "global"},
          {"seed", cfg.seed},
          {"out_dir", cfg.out_dir},
          {"checkpoint_every", cfg.checkpoint_every},
          {"model", architecture_to_json(cfg.model)}};
}

namespace {

template <typename T>
void read_key(const json& j, const std::string& key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kKeys = {
      "source_dir",   "target_dir",     "tile_size",        "stride",           "batch_size",
      "lr_segmenter", "lr_discriminator", "epochs",         "weights",          "pca_components",
      "enable_feature_da", "enable_category_da", "enable_dice", "dice_mode",    "seed",
      "out_dir",      "checkpoint_every", "model"};
  for (const auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  if (!j.contains("source_dir")) throw ConfigError("missing required config key 'source_dir'");
  TrainConfig cfg;
  read_key(j, "source_dir", cfg.source_dir);
  read_key(j, "target_dir", cfg.target_dir);
  read_key(j, "tile_size", cfg.tile_size);
  read_key(j, "stride", cfg.stride);
  read_key(j, "batch_size", cfg.batch_size);
  read_key(j, "lr_segmenter", cfg.lr_segmenter);
  read_key(j, "lr_discriminator", cfg.lr_discriminator);
  read_key(j, "epochs", cfg.epochs);
  read_key(j, "pca_components", cfg.pca_components);
  read_key(j, "enable_feature_da", cfg.enable_feature_da);
  read_key(j, "enable_category_da", cfg.enable_category_da);
  read_key(j, "enable_dice", cfg.enable_dice);
  read_key(j, "seed", cfg.seed);
  read_key(j, "out_dir", cfg.out_dir);
  read_key(j, "checkpoint_every", cfg.checkpoint_every);
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (!w.is_object()) throw ConfigError("config key 'weights' must be an object");
    for (const auto& [key, value] : w.items()) {
      if (key != "lambda" && key != "mu") throw ConfigError("unknown config key 'weights." + key + "'");
    }
    read_key(w, "lambda", cfg.weights.lambda);
    read_key(w, "mu", cfg.weights.mu);
  }
  if (j.contains("dice_mode")) {
    std::string mode;
    read_key(j, "dice_mode", mode);
    if (mode == "macro") {
      cfg.dice_mode = DiceMode::Macro;
    } else if (mode == "global") {
      cfg.dice_mode = DiceMode::Global;
    } else {
      throw ConfigError("config key 'dice_mode' must be \"macro\" or \"global\"");
    }
  }
  if (j.contains("model")) architecture_from_json(j["model"], cfg.model);
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

Scene preprocess_scene(const Scene& raw, const std::optional<PcaModel>& pca) {
  Scene out = raw;
  for (auto& m : out.modalities) {
    m = band_normalize(m);
    if (m.modality_id == "hsi" && pca) m = apply_pca(*pca, m);
  }
  return out;
}

std::optional<PcaModel> fit_hsi_pca(const Scene& normalized, Index k) {
  const RasterStack* hsi = normalized.find("hsi");
  if (!hsi || k == 0) return std::nullopt;
  if (k > hsi->bands) {
    throw ConfigError("pca_components = " + std::to_string(k) + " exceeds the " + std::to_string(hsi->bands) +
                      " hsi bands");
  }
  return fit_pca(*hsi, k);
}

Batch<Real> make_batch(const std::vector<Tile>& tiles, const std::vector<std::size_t>& indices,
                       const ClassIndexer& indexer) {
  if (indices.empty()) throw ArgumentError("empty batch");
  Batch<Real> batch;
  batch.size = static_cast<Index>(indices.size());
  const Index t = tiles[indices.front()].size;
  const Index plane = t * t;
  for (std::size_t m = 0; m < tiles[indices.front()].modalities.size(); ++m) {
    const auto& first = tiles[indices.front()].modalities[m];
    Tensor<Real> x(batch.size, first.bands, t, t);
    for (Index b = 0; b < batch.size; ++b) {
      const auto& stack = tiles[indices[static_cast<std::size_t>(b)]].modalities[m];
      x.array().segment(b * first.bands * plane, first.bands * plane) = stack.data;
    }
    batch.inputs[first.modality_id] = std::move(x);
  }
  std::vector<std::uint8_t> labels;
  labels.reserve(static_cast<std::size_t>(batch.size * plane));
  for (auto i : indices) labels.insert(labels.end(), tiles[i].labels.data.begin(), tiles[i].labels.data.end());
  batch.targets = make_targets(labels, batch.size, t, t, indexer);
  return batch;
}

std::string trace_row(const LossRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long>(r.iter), r.seg, r.mce,
                r.dice, r.g_feat, r.g_cat, r.d_feat, r.d_cat, r.total);
  return buf;
}

TrainState::TrainState(TrainConfig cfg, const ModelConfig& model_cfg)
    : config(std::move(cfg)),
      model(std::make_unique<Segmenter<Real>>(model_cfg)),
      seg_opt({"encoder.", "decoder."}, config.lr_segmenter),
      disc_feat_opt({"disc_feat."}, config.lr_discriminator),
      disc_cat_opt({"disc_cat."}, config.lr_discriminator),
      source_rng(make_stream(config.seed, "shuffle.source")),
      target_rng(make_stream(config.seed, "shuffle.target")) {
  config.model = model->config();
  indexer.num_classes = static_cast<int>(model_cfg.decoder.num_classes);
}

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError("non-finite loss term: " + std::string(term));
}

}  // namespace

LossRecord train_step(TrainState& state, const Batch<Real>& source, const Batch<Real>* target) {
  if (source.size < 1) throw ArgumentError("train_step: empty source batch");
  const auto& cfg = state.config;
  const bool feat_da = cfg.enable_feature_da;
  const bool cat_da = cfg.enable_category_da;
  if ((feat_da || cat_da) && (!target || target->size < 1)) {
    throw ArgumentError("train_step: adaptation enabled but the target batch is empty");
  }
  auto& model = *state.model;
  auto& store = model.store();
  auto& enc = model.encoder();
  auto& dec = model.decoder();
  const auto lambda = static_cast<Real>(cfg.weights.lambda);
  const auto mu = static_cast<Real>(cfg.weights.mu);

  LossRecord rec;
  rec.iter = state.iteration + 1;

  // (a) segmenter: supervised loss on source, adversarial terms on target.
  store.zero_grad("encoder.");
  store.zero_grad("decoder.");
  const Tensor<Real> v_source = enc.forward(source.inputs, Mode::Train);
  const Tensor<Real> logits_source = dec.forward(v_source, Mode::Train);
  auto mce = mce_loss(logits_source, source.targets);
  rec.mce = mce.value;
  Tensor<Real> dlogits = std::move(mce.grad);
  if (cfg.enable_dice) {
    auto dice = dice_loss_logits(logits_source, source.targets, cfg.dice_mode);
    rec.dice = dice.value;
    dlogits.array() += dice.grad.array();
  }
  require_finite(rec.mce, "mce");
  require_finite(rec.dice, "dice");
  rec.seg = rec.mce + rec.dice;
  enc.backward(dec.backward(dlogits));

  Tensor<Real> v_target, probs_target;
  if (feat_da || cat_da) {
    v_target = enc.forward(target->inputs, Mode::Train);
    Tensor<Real> dv(v_target.shape());
    Tensor<Real> aligned = v_target;
    Tensor<Real> alpha;
    if (feat_da) {
      const Tensor<Real> scores = model.disc_feat().forward(v_target);
      auto g = lsgan_g_loss(scores);
      rec.g_feat = g.value;
      g.grad.array() *= lambda;
      dv.array() += model.disc_feat().backward(g.grad).array();
      auto att = attention_correct(v_target, scores);
      aligned = std::move(att.aligned);
      alpha = std::move(att.alpha);
    }
    if (cat_da) {
      const Tensor<Real> logits_target = dec.forward(aligned, Mode::Train);
      probs_target = predict_probs(logits_target);
      const Tensor<Real> scores = model.disc_cat().forward(probs_target);
      auto g = lsgan_g_loss(scores);
      rec.g_cat = g.value;
      g.grad.array() *= mu;
      const Tensor<Real> dprobs = model.disc_cat().backward(g.grad);
      const Tensor<Real> da = dec.backward(softmax_backward(probs_target, dprobs));
      if (feat_da) {
        dv.array() += attention_correct_backward(v_target, alpha, da).d_features.array();
      } else {
        dv.array() += da.array();
      }
    }
    enc.backward(dv);
  }
  rec.total = total_loss(rec.seg, rec.g_feat, rec.g_cat, cfg.weights);
  state.seg_opt.step(store);

  // (b) D_f on detached fused features.
  if (feat_da) {
    store.zero_grad("disc_feat.");
    auto& d = model.disc_feat();
    const auto s = lsgan_term(d.forward(v_source), Real(0));
    d.backward(s.grad);
    const auto t = lsgan_term(d.forward(v_target), Real(1));
    d.backward(t.grad);
    rec.d_feat = static_cast<double>(s.value) + static_cast<double>(t.value);
    require_finite(rec.d_feat, "d_feat");
    state.disc_feat_opt.step(store);
  }

  // (c) D_c on detached probability maps.
  if (cat_da) {
    store.zero_grad("disc_cat.");
    auto& d = model.disc_cat();
    const auto s = lsgan_term(d.forward(predict_probs(logits_source)), Real(0));
    d.backward(s.grad);
    const auto t = lsgan_term(d.forward(probs_target), Real(1));
    d.backward(t.grad);
    rec.d_cat = static_cast<double>(s.value) + static_cast<double>(t.value);
    require_finite(rec.d_cat, "d_cat");
    state.disc_cat_opt.step(store);
  }

  ++state.iteration;
  return rec;
}

namespace {

/// Fisher–Yates driven directly by the 64-bit engine.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_modalities(const Scene& scene, const ModelConfig& cfg, const std::string& role) {
  if (scene.modalities.size() != cfg.encoder.modalities.size()) {
    throw ConfigError(role + " scene '" + scene.name + "' has " + std::to_string(scene.modalities.size()) +
                      " modalities, the model expects " + std::to_string(cfg.encoder.modalities.size()));
  }
  for (const auto& m : cfg.encoder.modalities) {
    const auto* stack = scene.find(m.id);
    if (!stack) throw ConfigError(role + " scene '" + scene.name + "' lacks modality '" + m.id + "'");
    if (stack->bands != m.channels) {
      throw ConfigError(role + " scene '" + scene.name + "': modality '" + m.id + "' has " +
                        std::to_string(stack->bands) + " channels after preprocessing, the model expects " +
                        std::to_string(m.channels));
    }
  }
  if (scene.num_classes != cfg.decoder.num_classes) throw ConfigError(role + " scene: class count differs from the model");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

FitResult fit(const TrainConfig& config, const Scene& source_raw, const Scene* target_raw,
              const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (config.any_da() && !target_raw) throw ConfigError("target_dir is required when adaptation is enabled");
  source_raw.validate();
  if (target_raw) target_raw->validate();

  const Scene source_norm = preprocess_scene(source_raw, std::nullopt);
  const auto pca = fit_hsi_pca(source_norm, config.pca_components);
  const Scene source = preprocess_scene(source_raw, pca);
  std::optional<Scene> target;
  if (target_raw) target = preprocess_scene(*target_raw, pca);

  ModelConfig model_cfg = config.model;
  model_cfg.encoder.modalities.clear();
  for (const auto& m : source.modalities) model_cfg.encoder.modalities.push_back({m.modality_id, m.bands});
  model_cfg.decoder.num_classes = source.num_classes;

  FitResult result{TrainState(config, model_cfg), {}};
  TrainState& state = result.state;
  state.pca = pca;
  state.source_name = source.name;
  state.class_names = source.class_names;
  state.indexer = source.indexer();
  if (target) check_modalities(*target, state.model->config(), "target");
  if (target && target->ignore_index != source.ignore_index) throw ConfigError("source and target ignore_index differ");
  state.model->initialize(config.seed);

  const auto source_tiles = tile_scene(source, config.tile_size, config.stride, Domain::Source);
  std::vector<Tile> target_tiles;
  if (target && config.any_da()) target_tiles = tile_scene(*target, config.tile_size, config.stride, Domain::Target);

  std::ofstream trace;
  const fs::path out_dir = config.out_dir;
  if (!config.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    trace.open(out_dir / "trace.csv", std::ios::trunc);
    if (!trace) throw IoError("cannot write " + (out_dir / "trace.csv").string());
    trace << kTraceHeader << "\n";
  }

  const auto started = std::chrono::steady_clock::now();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> target_order;
  std::size_t target_cursor = 0;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = iota(source_tiles.size());
    shuffle(order, state.source_rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      const auto src_batch = make_batch(source_tiles, idx, state.indexer);
      std::optional<Batch<Real>> tgt_batch;
      if (!target_tiles.empty()) {
        std::vector<std::size_t> tidx;
        const std::size_t want = std::min(batch, target_tiles.size());
        while (tidx.size() < want) {
          if (target_cursor >= target_order.size()) {
            target_order = iota(target_tiles.size());
            shuffle(target_order, state.target_rng);
            target_cursor = 0;
          }
          tidx.push_back(target_order[target_cursor++]);
        }
        tgt_batch = make_batch(target_tiles, tidx, state.indexer);
      }
      const LossRecord rec = train_step(state, src_batch, tgt_batch ? &*tgt_batch : nullptr);
      result.trace.push_back(rec);
      if (trace) {
        trace << trace_row(rec) << "\n";
        trace.flush();
      }
      if (on_step) on_step(rec);
      if (!config.out_dir.empty() && config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0) {
        save_checkpoint(state, out_dir / ("checkpoint_" + std::to_string(state.iteration) + ".bin"));
      }
    }
  }

  if (!config.out_dir.empty()) {
    save_checkpoint(state, out_dir / "checkpoint.bin");
    const auto params = count_params(state.model->store());
    json breakdown = json::object();
    for (const auto& [name, count] : params.modules) breakdown[name] = count;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const json manifest = {{"version", kVersion},
                           {"config", train_config_to_json(state.config)},
                           {"model", model_config_to_json(state.model->config())},
                           {"active_modules", config.active_modules()},
                           {"source_scene", source.name},
                           {"target_scene", target ? target->name : ""},
                           {"source_tiles", source_tiles.size()},
                           {"target_tiles", target_tiles.size()},
                           {"iterations", state.iteration},
                           {"params", {{"modules", breakdown}, {"total", params.total}}},
                           {"wall_seconds", seconds},
                           {"checkpoint", "checkpoint.bin"},
                           {"trace", "trace.csv"}};
    write_text(out_dir / "run_manifest.json", manifest.dump(2) + "\n");
  }
  return result;
}

FitResult fit(const TrainConfig& config, const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (config.source_dir.empty()) throw ConfigError("missing required config key 'source_dir'");
  const Scene source = load_scene(config.source_dir);
  std::optional<Scene> target;
  if (config.any_da()) {
    if (config.target_dir.empty()) throw ConfigError("target_dir is required when adaptation is enabled");
    target = load_scene(config.target_dir);
  } else if (!config.target_dir.empty()) {
    target = load_scene(config.target_dir);
  }
  return fit(config, source, target ? &*target : nullptr, on_step);
}

Stitcher::Stitcher(Index classes, Index height, Index width)
    : sum(1, classes, height, width), coverage(Eigen::ArrayXi::Zero(height * width)) {}

void Stitcher::add(const Tensor<Real>& probs, Index item, Index row, Index col) {
  const Index t = probs.h();
  for (Index c = 0; c < sum.c(); ++c) {
    for (Index y = 0; y < t; ++y) {
      for (Index x = 0; x < probs.w(); ++x) sum(0, c, row + y, col + x) += probs(item, c, y, x);
    }
  }
  for (Index y = 0; y < t; ++y) {
    for (Index x = 0; x < probs.w(); ++x) ++coverage[(row + y) * sum.w() + col + x];
  }
}

std::pair<Tensor<Real>, std::vector<int>> Stitcher::finish() const {
  Tensor<Real> avg(sum.shape());
  const Index plane = sum.h() * sum.w();
  std::vector<int> arg(static_cast<std::size_t>(plane), 0);
  for (Index p = 0; p < plane; ++p) {
    if (coverage[p] == 0) throw StateError("stitching left a pixel uncovered");
    const Real inv = Real(1) / static_cast<Real>(coverage[p]);
    int best = 0;
    for (Index c = 0; c < sum.c(); ++c) {
      avg.plane(0, c)[p] = sum.plane(0, c)[p] * inv;
      if (avg.plane(0, c)[p] > avg.plane(0, best)[p]) best = static_cast<int>(c);
    }
    arg[static_cast<std::size_t>(p)] = best;
  }
  return {std::move(avg), std::move(arg)};
}

Prediction infer_full_scene(TrainState& state, const Scene& raw, Index tile, Index stride, bool apply_da,
                            Domain domain) {
  raw.validate();
  if (tile < 32 || tile % 32 != 0) throw ArgumentError("inference tile must be a positive multiple of 32");
  const Scene scene = preprocess_scene(raw, state.pca);
  auto& model = *state.model;
  check_modalities(scene, model.config(), "input");
  const bool attention = apply_da && domain == Domain::Target && state.config.enable_feature_da;
  const auto tiles = tile_scene(scene, tile, stride, domain);

  Stitcher stitch(model.config().decoder.num_classes, scene.height, scene.width);
  constexpr std::size_t kChunk = 4;
  for (std::size_t start = 0; start < tiles.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(tiles.size(), start + kChunk); ++i) idx.push_back(i);
    ModalityInputs<Real> inputs;
    const Index plane = tile * tile;
    for (std::size_t m = 0; m < tiles[start].modalities.size(); ++m) {
      const auto& first = tiles[start].modalities[m];
      Tensor<Real> x(static_cast<Index>(idx.size()), first.bands, tile, tile);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        x.array().segment(static_cast<Index>(b) * first.bands * plane, first.bands * plane) =
            tiles[idx[b]].modalities[m].data;
      }
      inputs[first.modality_id] = std::move(x);
    }
    const Tensor<Real> probs = predict_probs(model.logits(inputs, attention));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      stitch.add(probs, static_cast<Index>(b), tiles[idx[b]].row, tiles[idx[b]].col);
    }
  }
  auto [avg, arg] = stitch.finish();
  Prediction pred;
  pred.labels = LabelMap(scene.height, scene.width);
  for (std::size_t p = 0; p < arg.size(); ++p) pred.labels.data[p] = static_cast<std::uint8_t>(state.indexer.to_label(arg[p]));
  pred.probs = std::move(avg);
  pred.coverage = stitch.coverage;
  pred.attention_applied = attention;
  return pred;
}

}  // namespace highdan
