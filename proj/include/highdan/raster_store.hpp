#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "highdan/losses.hpp"

namespace highdan {

/// bands×height×width, band-major, 32-bit floats.
struct RasterStack {
  std::string modality_id;
  Index bands = 0, height = 0, width = 0;
  Eigen::ArrayXf data;

  RasterStack() = default;
  RasterStack(std::string id, Index bands, Index height, Index width)
      : modality_id(std::move(id)), bands(bands), height(height), width(width),
        data(Eigen::ArrayXf::Zero(bands * height * width)) {}

  Index pixels() const { return height * width; }
  auto band(Index b) { return data.segment(b * pixels(), pixels()); }
  auto band(Index b) const { return data.segment(b * pixels(), pixels()); }
  float& at(Index b, Index y, Index x) { return data[(b * height + y) * width + x]; }
  float at(Index b, Index y, Index x) const { return data[(b * height + y) * width + x]; }

  bool operator==(const RasterStack& o) const {
    return modality_id == o.modality_id && bands == o.bands && height == o.height && width == o.width &&
           data.size() == o.data.size() && (data == o.data).all();
  }
};

/// height×width unsigned 8-bit labels. Raw values; 0 is the ignore value by
/// default and classes are 1..num_classes.
struct LabelMap {
  Index height = 0, width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(Index height, Index width) : height(height), width(width), data(static_cast<std::size_t>(height * width), 0) {}

  std::uint8_t& at(Index y, Index x) { return data[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t at(Index y, Index x) const { return data[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const LabelMap&) const = default;
};

std::vector<std::string> default_class_names(int num_classes);

struct Scene {
  std::string name;
  Index height = 0, width = 0;
  std::vector<RasterStack> modalities;
  LabelMap labels;
  int num_classes = 13;
  int ignore_index = 0;
  std::vector<std::string> class_names;

  /// Throws IntegrityError / DataError when a Scene invariant is violated.
  void validate() const;
  const RasterStack* find(const std::string& id) const;
  ClassIndexer indexer() const { return {ignore_index, num_classes}; }
  bool operator==(const Scene&) const = default;
};

/// FNV-1a checksum of every array ("labels" and each modality id).
std::map<std::string, std::uint64_t> scene_checksums(const Scene& scene);

/// Writes manifest.json, <id>.f32 per modality and labels.u8 (little-endian,
/// row-major). Returns the checksums of the written arrays.
std::map<std::string, std::uint64_t> save_scene(const Scene& scene, const std::filesystem::path& dir);

/// Reads and validates a scene directory written by save_scene.
Scene load_scene(const std::filesystem::path& dir);

/// Per-band min–max scaling to [0, 1]; constant bands become zeros.
RasterStack band_normalize(const RasterStack& stack);

struct PcaModel {
  Eigen::VectorXd mean;                 // bands
  Eigen::MatrixXd components;           // bands × k, columns orthonormal
  Eigen::VectorXd explained_variance;   // k, non-increasing
  double total_variance = 0;

  Index bands() const { return mean.size(); }
  Index k() const { return components.cols(); }
  Eigen::VectorXd explained_variance_ratio() const {
    return total_variance > 0 ? Eigen::VectorXd(explained_variance / total_variance)
                              : Eigen::VectorXd::Zero(explained_variance.size());
  }
};

/// Fits k principal components of the pixel spectra (sample covariance,
/// components ordered by decreasing variance, sign fixed so each
/// component's largest-magnitude coefficient is positive).
PcaModel fit_pca(const RasterStack& stack, Index k);

/// Projects mean-centered spectra onto the model's components.
RasterStack apply_pca(const PcaModel& model, const RasterStack& stack);

/// Maps k component bands back to the original spectral space.
RasterStack pca_reconstruct(const PcaModel& model, const RasterStack& reduced, const std::string& modality_id);

struct PcaResult {
  RasterStack reduced;
  PcaModel model;
};
PcaResult pca_reduce(const RasterStack& stack, Index k);

enum class Domain { Source, Target };
std::string to_string(Domain d);

struct Tile {
  Index row = 0, col = 0;
  Index size = 0;
  std::vector<RasterStack> modalities;
  LabelMap labels;
  Domain domain = Domain::Source;
};

/// Window origins along one axis: multiples of stride, plus one window
/// clamped to the border when the last stride position misses the edge.
std::vector<Index> tile_origins(Index extent, Index tile, Index stride);

std::vector<Tile> tile_scene(const Scene& scene, Index tile, Index stride, Domain domain);

/// Target-domain perturbation for the synthetic generator.
struct ShiftSpec {
  double gain_min = 0.7, gain_max = 1.3;
  double offset_min = -0.2, offset_max = 0.2;
  double noise_std = 0.05;
  double class_skew = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  static ShiftSpec identity() { return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0}; }
};

struct SynthSpec {
  Index height = 256, width = 256;
  Index hsi_bands = 32, msi_bands = 4, sar_bands = 2;
  int num_classes = 13;
  int num_sites = 48;
  double pixel_noise = 0.02;
  double unlabeled_fraction = 0.0;
  /// Class signatures and the source layout.
  std::uint64_t seed = 0;
  /// Layout seed of the target scene; defaults to `seed`.
  std::optional<std::uint64_t> target_seed;

  void validate() const;
};

struct BandShift {
  double gain = 1, offset = 0;
};

struct ScenePair {
  Scene source, target;
  /// Realized per-band affine terms, keyed by modality id.
  std::map<std::string, std::vector<BandShift>> shifts;
};

/// Deterministic source/target scenes sharing class signatures. Layout:
/// Voronoi cells of seeded sites under a smooth coordinate warp; each cell
/// draws a class from the (possibly skewed) prior. Pixels = class signature
/// + Gaussian noise; the target applies gain·x + offset per band plus extra
/// noise.
ScenePair synth_scene_pair(const SynthSpec& spec, const ShiftSpec& shift);

}  // namespace highdan
