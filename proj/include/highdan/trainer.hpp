#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "highdan/losses.hpp"
#include "highdan/model.hpp"
#include "highdan/nn/adam.hpp"
#include "highdan/raster_store.hpp"

namespace highdan {

using Real = float;

struct TrainConfig {
  std::string source_dir;
  std::string target_dir;
  Index tile_size = 128;
  Index stride = 128;
  Index batch_size = 16;
  double lr_segmenter = 1e-4;
  double lr_discriminator = 1e-4;
  Index epochs = 6000;
  LossWeights weights;
  Index pca_components = 30;
  bool enable_feature_da = true;
  bool enable_category_da = true;
  bool enable_dice = true;
  DiceMode dice_mode = DiceMode::Macro;
  std::uint64_t seed = 0;
  std::string out_dir = "run";
  /// Write checkpoint_<iter>.bin every this many iterations (0 = final only).
  Index checkpoint_every = 0;
  /// Architecture; modalities and class count are filled in from the data.
  ModelConfig model;

  bool any_da() const { return enable_feature_da || enable_category_da; }
  void validate() const;
  /// "seg", "dice", "feature_da", "category_da" for the enabled parts.
  std::vector<std::string> active_modules() const;
};

/// Keys are the TrainConfig field names, plus "weights": {"lambda", "mu"},
/// "dice_mode": "macro" | "global" and a "model" object of architecture
/// keys. Missing or malformed keys raise ConfigError naming the key.
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Min–max normalizes every band, then projects hsi with `pca` when given.
Scene preprocess_scene(const Scene& raw, const std::optional<PcaModel>& pca);

/// PCA for the hsi stream fit on a normalized scene; nullopt when the scene
/// has no hsi or k = 0.
std::optional<PcaModel> fit_hsi_pca(const Scene& normalized, Index k);

template <typename Scalar>
struct Batch {
  ModalityInputs<Scalar> inputs;
  ClassTargets targets;
  Index size = 0;
};

Batch<Real> make_batch(const std::vector<Tile>& tiles, const std::vector<std::size_t>& indices,
                       const ClassIndexer& indexer);

struct LossRecord {
  Index iter = 0;
  double seg = 0, mce = 0, dice = 0, g_feat = 0, g_cat = 0, d_feat = 0, d_cat = 0, total = 0;
};

inline constexpr const char* kTraceHeader = "iter,seg,mce,dice,g_feat,g_cat,d_feat,d_cat,total";
std::string trace_row(const LossRecord& r);

/// Model, optimizers and bookkeeping; everything a checkpoint holds.
struct TrainState {
  TrainConfig config;
  std::unique_ptr<Segmenter<Real>> model;
  nn::Adam<Real> seg_opt, disc_feat_opt, disc_cat_opt;
  Index iteration = 0;
  std::optional<PcaModel> pca;
  std::string source_name;
  std::vector<std::string> class_names;
  ClassIndexer indexer;
  Rng source_rng, target_rng;

  TrainState() = default;
  TrainState(TrainConfig cfg, const ModelConfig& model_cfg);
};

/// One alternating update: segmenter, then D_f, then D_c. `target` may be
/// null only when both adaptation switches are off.
LossRecord train_step(TrainState& state, const Batch<Real>& source, const Batch<Real>* target);

struct FitResult {
  TrainState state;
  std::vector<LossRecord> trace;
};

/// Runs the full training loop on in-memory scenes. When config.out_dir is
/// non-empty, writes trace.csv, periodic and final checkpoints, and
/// run_manifest.json there. `on_step` (optional) sees every record.
FitResult fit(const TrainConfig& config, const Scene& source, const Scene* target,
              const std::function<void(const LossRecord&)>& on_step = {});

/// Loads config.source_dir / config.target_dir and calls fit.
FitResult fit(const TrainConfig& config, const std::function<void(const LossRecord&)>& on_step = {});

/// Single-file container: "HIGHDAN\0", u32 version, u64 manifest length,
/// JSON manifest, then every array as little-endian f32/f64 in manifest order.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct Prediction {
  LabelMap labels;              // raw label values, never the ignore value
  Tensor<Real> probs;           // 1×C×H×W averaged softmax
  Eigen::ArrayXi coverage;      // tiles covering each pixel, row-major
  bool attention_applied = false;
};

/// Normalizes (and projects) `raw` like training did, runs every tile, and
/// averages softmax over overlaps. Argmax ties go to the lowest class.
Prediction infer_full_scene(TrainState& state, const Scene& raw, Index tile, Index stride, bool apply_da,
                            Domain domain);

/// Stitching core used by infer_full_scene: accumulates per-tile
/// probability maps (1×C×tile×tile each) placed at `origins`.
struct Stitcher {
  Tensor<Real> sum;
  Eigen::ArrayXi coverage;

  Stitcher(Index classes, Index height, Index width);
  void add(const Tensor<Real>& probs, Index item, Index row, Index col);
  /// Averaged probabilities and argmax class indices.
  std::pair<Tensor<Real>, std::vector<int>> finish() const;
};

}  // namespace highdan
