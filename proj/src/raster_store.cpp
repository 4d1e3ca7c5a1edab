#include "highdan/raster_store.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "highdan/rng.hpp"

namespace highdan {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> default_class_names(int num_classes) {
  static const std::vector<std::string> kNames = {"Surface water",
                                                  "Street network",
                                                  "Urban fabric",
                                                  "Industrial, commercial, and transport",
                                                  "Mine, dump, and construction sites",
                                                  "Artificial vegetated areas",
                                                  "Arable land",
                                                  "Permanent crops",
                                                  "Pastures",
                                                  "Forests",
                                                  "Shrub",
                                                  "Open spaces with no vegetation",
                                                  "Inland wetlands"};
  std::vector<std::string> names;
  for (int i = 0; i < num_classes; ++i) {
    names.push_back(i < static_cast<int>(kNames.size()) ? kNames[static_cast<std::size_t>(i)]
                                                        : "class_" + std::to_string(i + 1));
  }
  return names;
}

void Scene::validate() const {
  if (height < 1 || width < 1) throw IntegrityError("scene '" + name + "': empty extent");
  if (modalities.empty()) throw IntegrityError("scene '" + name + "': no modalities");
  if (num_classes < 1 || num_classes > 254) throw IntegrityError("scene '" + name + "': num_classes out of range");
  if (ignore_index < 0 || ignore_index > num_classes) {
    throw IntegrityError("scene '" + name + "': ignore_index must lie in [0, num_classes]");
  }
  if (static_cast<int>(class_names.size()) != num_classes) {
    throw IntegrityError("scene '" + name + "': class_names length differs from num_classes");
  }
  std::set<std::string> ids;
  for (const auto& m : modalities) {
    if (!ids.insert(m.modality_id).second) throw IntegrityError("scene '" + name + "': duplicate modality " + m.modality_id);
    if (m.bands < 1) throw IntegrityError("modality " + m.modality_id + ": bands must be >= 1");
    if (m.height != height || m.width != width) throw IntegrityError("modality " + m.modality_id + ": extent differs from scene");
    if (m.data.size() != m.bands * m.height * m.width) throw IntegrityError("modality " + m.modality_id + ": array size mismatch");
    if (!m.data.isFinite().all()) throw DataError("modality " + m.modality_id + ": non-finite values");
  }
  if (labels.height != height || labels.width != width ||
      static_cast<Index>(labels.data.size()) != height * width) {
    throw IntegrityError("scene '" + name + "': label map extent differs from scene");
  }
  for (auto v : labels.data) {
    if (v > num_classes) throw DataError("scene '" + name + "': label value " + std::to_string(v) + " > num_classes");
  }
}

const RasterStack* Scene::find(const std::string& id) const {
  for (const auto& m : modalities) {
    if (m.modality_id == id) return &m;
  }
  return nullptr;
}

namespace {

std::vector<char> float_bytes_le(const Eigen::ArrayXf& data) {
  std::vector<char> bytes(static_cast<std::size_t>(data.size()) * 4);
  for (Index i = 0; i < data.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i * 4 + b)] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  return bytes;
}

Eigen::ArrayXf floats_from_le(const std::vector<char>& bytes) {
  Eigen::ArrayXf out(static_cast<Index>(bytes.size() / 4));
  for (Index i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i * 4 + b)])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

std::uint64_t checksum_bytes(const std::vector<char>& bytes) {
  return fnv1a(std::string_view(bytes.data(), bytes.size()));
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing file " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<char> label_bytes(const LabelMap& labels) { return {labels.data.begin(), labels.data.end()}; }

template <typename T>
T require_key(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": key '" + key + "' has the wrong type");
  }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw FormatError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

std::map<std::string, std::uint64_t> scene_checksums(const Scene& scene) {
  std::map<std::string, std::uint64_t> sums;
  sums["labels"] = checksum_bytes(label_bytes(scene.labels));
  for (const auto& m : scene.modalities) sums[m.modality_id] = checksum_bytes(float_bytes_le(m.data));
  return sums;
}

std::map<std::string, std::uint64_t> save_scene(const Scene& scene, const fs::path& dir) {
  scene.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::map<std::string, std::uint64_t> sums;
  json modalities = json::array();
  for (const auto& m : scene.modalities) {
    const std::string file = m.modality_id + ".f32";
    const auto bytes = float_bytes_le(m.data);
    write_file(dir / file, bytes);
    sums[m.modality_id] = checksum_bytes(bytes);
    modalities.push_back({{"id", m.modality_id}, {"file", file}, {"bands", m.bands}, {"dtype", "f32"}});
  }
  const auto labels = label_bytes(scene.labels);
  write_file(dir / "labels.u8", labels);
  sums["labels"] = checksum_bytes(labels);

  const json manifest = {{"name", scene.name},
                         {"height", scene.height},
                         {"width", scene.width},
                         {"num_classes", scene.num_classes},
                         {"ignore_index", scene.ignore_index},
                         {"class_names", scene.class_names},
                         {"label_file", "labels.u8"},
                         {"modalities", modalities}};
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", std::vector<char>(text.begin(), text.end()));
  return sums;
}

Scene load_scene(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) throw FormatError("scene directory " + dir.string() + " has no manifest.json");
  json manifest;
  try {
    const auto bytes = read_file(manifest_path);
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_object()) throw FormatError("manifest.json must be an object");
  const std::string where = (dir / "manifest.json").string();
  reject_unknown_keys(manifest,
                      {"name", "height", "width", "num_classes", "ignore_index", "class_names", "label_file", "modalities"},
                      where);

  Scene scene;
  scene.name = require_key<std::string>(manifest, "name", where);
  scene.height = require_key<Index>(manifest, "height", where);
  scene.width = require_key<Index>(manifest, "width", where);
  scene.num_classes = require_key<int>(manifest, "num_classes", where);
  scene.ignore_index = require_key<int>(manifest, "ignore_index", where);
  scene.class_names = require_key<std::vector<std::string>>(manifest, "class_names", where);
  const auto label_file = require_key<std::string>(manifest, "label_file", where);
  if (!manifest.contains("modalities") || !manifest["modalities"].is_array()) {
    throw FormatError(where + ": 'modalities' must be a list");
  }
  if (scene.height < 1 || scene.width < 1) throw IntegrityError(where + ": non-positive extent");

  std::set<std::string> referenced{"manifest.json", label_file};
  for (const auto& entry : manifest["modalities"]) {
    if (!entry.is_object()) throw FormatError(where + ": modality entries must be objects");
    reject_unknown_keys(entry, {"id", "file", "bands", "dtype"}, where + " modality");
    RasterStack m;
    m.modality_id = require_key<std::string>(entry, "id", where);
    const auto file = require_key<std::string>(entry, "file", where);
    m.bands = require_key<Index>(entry, "bands", where);
    if (require_key<std::string>(entry, "dtype", where) != "f32") throw FormatError(where + ": only dtype f32 is supported");
    if (m.bands < 1) throw IntegrityError(where + ": modality " + m.modality_id + " declares no bands");
    m.height = scene.height;
    m.width = scene.width;
    const auto bytes = read_file(dir / file);
    const auto expected = static_cast<std::size_t>(m.bands * m.height * m.width) * 4;
    if (bytes.size() != expected) {
      throw IntegrityError(file + ": " + std::to_string(bytes.size()) + " bytes, manifest implies " + std::to_string(expected));
    }
    m.data = floats_from_le(bytes);
    if (!m.data.isFinite().all()) throw DataError(file + ": contains NaN or Inf");
    referenced.insert(file);
    scene.modalities.push_back(std::move(m));
  }

  const auto labels = read_file(dir / label_file);
  if (static_cast<Index>(labels.size()) != scene.height * scene.width) {
    throw IntegrityError(label_file + ": size does not match height×width");
  }
  scene.labels = LabelMap(scene.height, scene.width);
  std::transform(labels.begin(), labels.end(), scene.labels.data.begin(),
                 [](char c) { return static_cast<std::uint8_t>(c); });

  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto fname = entry.path().filename().string();
    if (!entry.is_regular_file() || fname.starts_with(".")) continue;
    if (!referenced.count(fname)) throw FormatError("unexpected file in scene directory: " + fname);
  }
  scene.validate();
  return scene;
}

RasterStack band_normalize(const RasterStack& stack) {
  if (!stack.data.isFinite().all()) throw DataError("band_normalize: non-finite input");
  RasterStack out = stack;
  for (Index b = 0; b < stack.bands; ++b) {
    const auto band = stack.band(b);
    const float lo = band.minCoeff(), hi = band.maxCoeff();
    if (hi > lo) {
      out.band(b) = (band - lo) / (hi - lo);
    } else {
      out.band(b).setZero();
    }
  }
  return out;
}

PcaModel fit_pca(const RasterStack& stack, Index k) {
  if (k < 1 || k > stack.bands) throw ArgumentError("pca: k must lie in [1, bands]");
  const Index n = stack.pixels();
  if (n < k) throw ArgumentError("pca: fewer pixels than components");
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(stack.data.data(),
                                                                                                   stack.bands, n);
  PcaModel model;
  const Eigen::MatrixXd xd = x.cast<double>();
  model.mean = xd.rowwise().mean();
  const Eigen::MatrixXd centered = xd.colwise() - model.mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(std::max<Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Index d = stack.bands;
  model.components.resize(d, k);
  model.explained_variance.resize(k);
  for (Index i = 0; i < k; ++i) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - i);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    model.components.col(i) = v;
    model.explained_variance[i] = std::max(0.0, solver.eigenvalues()[d - 1 - i]);
  }
  model.total_variance = cov.trace();
  return model;
}

RasterStack apply_pca(const PcaModel& model, const RasterStack& stack) {
  if (stack.bands != model.bands()) throw ConfigError("pca: band count does not match the fitted model");
  const Index n = stack.pixels();
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(stack.data.data(),
                                                                                                   stack.bands, n);
  RasterStack out(stack.modality_id, model.k(), stack.height, stack.width);
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> y(out.data.data(), model.k(), n);
  y = (model.components.transpose() * (x.cast<double>().colwise() - model.mean)).cast<float>();
  return out;
}

RasterStack pca_reconstruct(const PcaModel& model, const RasterStack& reduced, const std::string& modality_id) {
  if (reduced.bands != model.k()) throw ConfigError("pca_reconstruct: component count mismatch");
  const Index n = reduced.pixels();
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> z(reduced.data.data(),
                                                                                                   model.k(), n);
  RasterStack out(modality_id, model.bands(), reduced.height, reduced.width);
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(out.data.data(), model.bands(), n);
  x = ((model.components * z.cast<double>()).colwise() + model.mean).cast<float>();
  return out;
}

PcaResult pca_reduce(const RasterStack& stack, Index k) {
  PcaResult r;
  r.model = fit_pca(stack, k);
  r.reduced = apply_pca(r.model, stack);
  return r;
}

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

std::vector<Index> tile_origins(Index extent, Index tile, Index stride) {
  if (tile < 1 || stride < 1) throw ArgumentError("tiling: tile and stride must be positive");
  if (tile > extent) throw ArgumentError("tiling: tile larger than the scene");
  std::vector<Index> origins;
  for (Index o = 0; o + tile <= extent; o += stride) origins.push_back(o);
  if (origins.back() + tile < extent) origins.push_back(extent - tile);
  return origins;
}

std::vector<Tile> tile_scene(const Scene& scene, Index tile, Index stride, Domain domain) {
  if (tile > std::min(scene.height, scene.width)) throw ArgumentError("tile_scene: tile larger than scene");
  const auto rows = tile_origins(scene.height, tile, stride);
  const auto cols = tile_origins(scene.width, tile, stride);
  std::vector<Tile> tiles;
  tiles.reserve(rows.size() * cols.size());
  for (Index r : rows) {
    for (Index c : cols) {
      Tile t;
      t.row = r;
      t.col = c;
      t.size = tile;
      t.domain = domain;
      for (const auto& m : scene.modalities) {
        RasterStack crop(m.modality_id, m.bands, tile, tile);
        for (Index b = 0; b < m.bands; ++b) {
          for (Index y = 0; y < tile; ++y) {
            for (Index x = 0; x < tile; ++x) crop.at(b, y, x) = m.at(b, r + y, c + x);
          }
        }
        t.modalities.push_back(std::move(crop));
      }
      t.labels = LabelMap(tile, tile);
      for (Index y = 0; y < tile; ++y) {
        for (Index x = 0; x < tile; ++x) t.labels.at(y, x) = scene.labels.at(r + y, c + x);
      }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

void ShiftSpec::validate() const {
  if (!(gain_min > 0) || gain_max < gain_min) throw ArgumentError("shift: gain range must be positive and ordered");
  if (offset_max < offset_min) throw ArgumentError("shift: offset range must be ordered");
  if (!(noise_std >= 0)) throw ArgumentError("shift: noise std must be >= 0");
  if (!std::isfinite(class_skew)) throw ArgumentError("shift: class skew must be finite");
}

void SynthSpec::validate() const {
  if (height < 1 || width < 1) throw ArgumentError("synth: extent must be positive");
  if (hsi_bands < 0 || msi_bands < 0 || sar_bands < 0 || hsi_bands + msi_bands + sar_bands == 0) {
    throw ArgumentError("synth: band counts must be >= 0 with at least one modality");
  }
  if (num_classes < 2 || num_classes > 254) throw ArgumentError("synth: need 2..254 classes");
  if (num_sites < 1) throw ArgumentError("synth: need at least one site");
  if (!(pixel_noise >= 0)) throw ArgumentError("synth: pixel noise must be >= 0");
  if (!(unlabeled_fraction >= 0 && unlabeled_fraction < 1)) throw ArgumentError("synth: unlabeled fraction in [0, 1)");
}

namespace {

struct ModalityPlan {
  std::string id;
  Index bands;
  double noise_scale;
};

std::vector<ModalityPlan> modality_plan(const SynthSpec& spec) {
  std::vector<ModalityPlan> plan;
  if (spec.hsi_bands > 0) plan.push_back({"hsi", spec.hsi_bands, 1.0});
  if (spec.msi_bands > 0) plan.push_back({"msi", spec.msi_bands, 1.0});
  if (spec.sar_bands > 0) plan.push_back({"sar", spec.sar_bands, 2.0});
  return plan;
}

// signatures[modality][class] = per-band reflectance / backscatter.
using Signatures = std::vector<std::vector<Eigen::VectorXd>>;

Signatures make_signatures(const SynthSpec& spec, const std::vector<ModalityPlan>& plan) {
  Rng rng = make_stream(spec.seed, "synth.signatures");
  Signatures sig;
  for (const auto& m : plan) {
    std::vector<Eigen::VectorXd> per_class;
    for (int c = 0; c < spec.num_classes; ++c) {
      Eigen::VectorXd s(m.bands);
      if (m.id == "hsi") {
        // Smooth spectrum: base level plus a few Gaussian bumps along the band axis.
        const double base = uniform(rng, 0.15, 0.85);
        s.setConstant(base);
        for (int bump = 0; bump < 3; ++bump) {
          const double amp = uniform(rng, -0.3, 0.3);
          const double center = uniform(rng, 0.0, static_cast<double>(m.bands));
          const double width = uniform(rng, 2.0, static_cast<double>(m.bands) / 3.0 + 2.0);
          for (Index b = 0; b < m.bands; ++b) {
            const double d = (static_cast<double>(b) - center) / width;
            s[b] += amp * std::exp(-0.5 * d * d);
          }
        }
        s = s.cwiseMax(0.02).cwiseMin(0.98);
      } else {
        const double hi = m.id == "sar" ? 0.7 : 0.9;
        for (Index b = 0; b < m.bands; ++b) s[b] = uniform(rng, 0.1, hi);
      }
      per_class.push_back(std::move(s));
    }
    sig.push_back(std::move(per_class));
  }
  return sig;
}

// Per-pixel class index (−1 = unlabeled cell, still rendered with its class)
// plus the rendered class for signatures.
struct Layout {
  std::vector<int> klass;
  std::vector<bool> unlabeled;
};

Layout make_layout(const SynthSpec& spec, std::uint64_t layout_seed, double skew) {
  Rng rng = make_stream(layout_seed, "synth.layout");
  const Index h = spec.height, w = spec.width;
  const int sites = spec.num_sites;
  std::vector<double> sy(sites), sx(sites), su(sites), sl(sites);
  for (int i = 0; i < sites; ++i) {
    sy[i] = uniform(rng, 0.0, static_cast<double>(h));
    sx[i] = uniform(rng, 0.0, static_cast<double>(w));
    su[i] = uniform(rng, 0.0, 1.0);
    sl[i] = uniform(rng, 0.0, 1.0);
  }
  // Class prior ∝ exp(skew · c / (C − 1)); inverse-CDF sampling keeps each
  // cell's class monotone in the skew for fixed draws.
  const int classes = spec.num_classes;
  std::vector<double> cdf(static_cast<std::size_t>(classes));
  double acc = 0;
  for (int c = 0; c < classes; ++c) {
    acc += std::exp(skew * static_cast<double>(c) / static_cast<double>(classes - 1));
    cdf[static_cast<std::size_t>(c)] = acc;
  }
  for (auto& v : cdf) v /= acc;
  std::vector<int> site_class(sites);
  for (int i = 0; i < sites; ++i) {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), su[i]);
    site_class[i] = std::min(static_cast<int>(it - cdf.begin()), classes - 1);
  }
  // Smooth coordinate warp bends the straight Voronoi edges.
  const double scale = static_cast<double>(std::min(h, w));
  struct Wave {
    double amp, fy, fx, phase;
  };
  std::vector<Wave> wy, wx;
  for (int k = 0; k < 4; ++k) {
    wy.push_back({uniform(rng, 0.01, 0.04) * scale, uniform(rng, 1.0, 4.0) / scale, uniform(rng, 1.0, 4.0) / scale,
                  uniform(rng, 0.0, 6.283185307179586)});
    wx.push_back({uniform(rng, 0.01, 0.04) * scale, uniform(rng, 1.0, 4.0) / scale, uniform(rng, 1.0, 4.0) / scale,
                  uniform(rng, 0.0, 6.283185307179586)});
  }
  Layout layout;
  layout.klass.resize(static_cast<std::size_t>(h * w));
  layout.unlabeled.resize(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double py = static_cast<double>(y), px = static_cast<double>(x);
      double dy = 0, dx = 0;
      for (const auto& v : wy) dy += v.amp * std::sin(6.283185307179586 * (v.fy * py + v.fx * px) + v.phase);
      for (const auto& v : wx) dx += v.amp * std::sin(6.283185307179586 * (v.fy * py + v.fx * px) + v.phase);
      py += dy;
      px += dx;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < sites; ++i) {
        const double d = (py - sy[i]) * (py - sy[i]) + (px - sx[i]) * (px - sx[i]);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      const auto p = static_cast<std::size_t>(y * w + x);
      layout.klass[p] = site_class[best];
      layout.unlabeled[p] = sl[best] < spec.unlabeled_fraction;
    }
  }
  return layout;
}

Scene render_scene(const SynthSpec& spec, const std::vector<ModalityPlan>& plan, const Signatures& sig,
                   std::uint64_t layout_seed, double skew, const std::string& name) {
  const Layout layout = make_layout(spec, layout_seed, skew);
  Rng noise = make_stream(layout_seed, "synth.noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Scene scene;
  scene.name = name;
  scene.height = spec.height;
  scene.width = spec.width;
  scene.num_classes = spec.num_classes;
  scene.ignore_index = 0;
  scene.class_names = default_class_names(spec.num_classes);
  const Index n = spec.height * spec.width;
  for (std::size_t m = 0; m < plan.size(); ++m) {
    RasterStack stack(plan[m].id, plan[m].bands, spec.height, spec.width);
    const double sigma = spec.pixel_noise * plan[m].noise_scale;
    for (Index b = 0; b < plan[m].bands; ++b) {
      for (Index p = 0; p < n; ++p) {
        const double clean = sig[m][static_cast<std::size_t>(layout.klass[static_cast<std::size_t>(p)])][b];
        const double e = sigma > 0 ? sigma * gauss(noise) : 0.0;
        stack.data[b * n + p] = static_cast<float>(clean + e);
      }
    }
    scene.modalities.push_back(std::move(stack));
  }
  scene.labels = LabelMap(spec.height, spec.width);
  for (Index p = 0; p < n; ++p) {
    const auto i = static_cast<std::size_t>(p);
    scene.labels.data[i] = layout.unlabeled[i] ? 0 : static_cast<std::uint8_t>(layout.klass[i] + 1);
  }
  return scene;
}

}  // namespace

ScenePair synth_scene_pair(const SynthSpec& spec, const ShiftSpec& shift) {
  spec.validate();
  shift.validate();
  const auto plan = modality_plan(spec);
  const Signatures sig = make_signatures(spec, plan);
  const std::uint64_t target_seed = spec.target_seed.value_or(spec.seed);

  ScenePair pair;
  pair.source = render_scene(spec, plan, sig, spec.seed, 0.0, "synth_source_" + std::to_string(spec.seed));
  pair.target = render_scene(spec, plan, sig, target_seed, shift.class_skew, "synth_target_" + std::to_string(target_seed));

  Rng affine = make_stream(shift.seed, "synth.shift.affine");
  Rng extra = make_stream(shift.seed, "synth.shift.noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& stack : pair.target.modalities) {
    auto& shifts = pair.shifts[stack.modality_id];
    for (Index b = 0; b < stack.bands; ++b) {
      BandShift s{uniform(affine, shift.gain_min, shift.gain_max), uniform(affine, shift.offset_min, shift.offset_max)};
      shifts.push_back(s);
      auto band = stack.band(b);
      for (Index p = 0; p < band.size(); ++p) {
        double v = s.gain * static_cast<double>(band[p]) + s.offset;
        if (shift.noise_std > 0) v += shift.noise_std * gauss(extra);
        band[p] = static_cast<float>(v);
      }
    }
  }
  return pair;
}

}  // namespace highdan
