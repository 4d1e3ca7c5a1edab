#include <bit>
#include <cstring>
#include <fstream>

#include "highdan/trainer.hpp"
#include "highdan/version.hpp"

namespace highdan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'I', 'G', 'H', 'D', 'A', 'N', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t b = 0; b < sizeof(UInt); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

template <typename UInt>
UInt get_le(const char* p) {
  UInt v = 0;
  for (std::size_t b = 0; b < sizeof(UInt); ++b) v |= static_cast<UInt>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

class ArrayWriter {
 public:
  template <typename Scalar>
  void add(const std::string& name, const Scalar* data, Index count, const std::vector<Index>& shape) {
    static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
    index_.push_back({{"name", name},
                      {"dtype", std::is_same_v<Scalar, float> ? "f32" : "f64"},
                      {"shape", shape},
                      {"offset", blob_.size()},
                      {"count", count}});
    for (Index i = 0; i < count; ++i) {
      if constexpr (std::is_same_v<Scalar, float>) {
        put_le(blob_, std::bit_cast<std::uint32_t>(data[i]));
      } else {
        put_le(blob_, std::bit_cast<std::uint64_t>(data[i]));
      }
    }
  }
  template <typename Scalar>
  void add_tensor(const std::string& name, const Tensor<Scalar>& t) {
    add(name, t.data(), t.size(), {t.n(), t.c(), t.h(), t.w()});
  }

  const json& index() const { return index_; }
  const std::string& blob() const { return blob_; }

 private:
  json index_ = json::array();
  std::string blob_;
};

class ArrayReader {
 public:
  ArrayReader(const json& index, const char* blob, std::size_t size) : blob_(blob), size_(size) {
    for (const auto& e : index) entries_[e.at("name").get<std::string>()] = e;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  template <typename Scalar>
  std::vector<Scalar> read(const std::string& name, Index expected_count) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IntegrityError("checkpoint lacks array '" + name + "'");
    const auto& e = it->second;
    const std::string dtype = std::is_same_v<Scalar, float> ? "f32" : "f64";
    if (e.at("dtype").get<std::string>() != dtype) throw IntegrityError("checkpoint array '" + name + "' is not " + dtype);
    const auto count = e.at("count").get<Index>();
    if (expected_count >= 0 && count != expected_count) {
      throw IntegrityError("checkpoint array '" + name + "' has " + std::to_string(count) + " values, expected " +
                           std::to_string(expected_count));
    }
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(count) * sizeof(Scalar);
    if (offset + bytes > size_) throw IntegrityError("checkpoint array '" + name + "' runs past the end of the file");
    std::vector<Scalar> out(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
      const char* p = blob_ + offset + static_cast<std::size_t>(i) * sizeof(Scalar);
      if constexpr (std::is_same_v<Scalar, float>) {
        out[static_cast<std::size_t>(i)] = std::bit_cast<float>(get_le<std::uint32_t>(p));
      } else {
        out[static_cast<std::size_t>(i)] = std::bit_cast<double>(get_le<std::uint64_t>(p));
      }
    }
    return out;
  }

  template <typename Scalar>
  void read_into(const std::string& name, Tensor<Scalar>& t) const {
    const auto v = read<Scalar>(name, t.size());
    std::copy(v.begin(), v.end(), t.data());
  }

 private:
  const char* blob_;
  std::size_t size_;
  std::map<std::string, json> entries_;
};

json optimizer_json(const nn::Adam<Real>& opt) { return {{"steps", opt.steps()}, {"lr", opt.lr()}}; }

void write_moments(ArrayWriter& w, const std::string& group, const nn::Adam<Real>& opt) {
  for (const auto& [name, mom] : opt.moments()) {
    w.add_tensor("adam/" + group + "/m/" + name, mom.m);
    w.add_tensor("adam/" + group + "/v/" + name, mom.v);
  }
}

void read_moments(const ArrayReader& r, const std::string& group, nn::Adam<Real>& opt,
                  nn::ParameterStore<Real>& store, const json& meta) {
  opt.set_steps(meta.at("steps").get<long>());
  for (const auto& prefix : opt.prefixes()) {
    for (auto* p : store.learnable_with_prefix(prefix)) {
      const std::string m_name = "adam/" + group + "/m/" + p->name;
      if (!r.contains(m_name)) continue;
      auto& mom = opt.moments()[p->name];
      mom.m = Tensor<Real>(p->value.shape());
      mom.v = Tensor<Real>(p->value.shape());
      r.read_into(m_name, mom.m);
      r.read_into("adam/" + group + "/v/" + p->name, mom.v);
    }
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  ArrayWriter w;
  state.model->store().for_each([&](const nn::Param<Real>& p) { w.add_tensor("param/" + p.name, p.value); });
  write_moments(w, "segmenter", state.seg_opt);
  write_moments(w, "disc_feat", state.disc_feat_opt);
  write_moments(w, "disc_cat", state.disc_cat_opt);
  json pca = nullptr;
  if (state.pca) {
    const auto& m = *state.pca;
    pca = {{"bands", m.bands()}, {"k", m.k()}, {"total_variance", m.total_variance}};
    w.add("pca/mean", m.mean.data(), m.mean.size(), {m.bands()});
    // Column-major bands×k as stored by Eigen.
    w.add("pca/components", m.components.data(), m.components.size(), {m.bands(), m.k()});
    w.add("pca/explained_variance", m.explained_variance.data(), m.explained_variance.size(), {m.k()});
  }
  const json manifest = {{"format", "highdan-checkpoint"},
                         {"version", kVersion},
                         {"config", train_config_to_json(state.config)},
                         {"model", model_config_to_json(state.model->config())},
                         {"iteration", state.iteration},
                         {"source_name", state.source_name},
                         {"class_names", state.class_names},
                         {"ignore_index", state.indexer.ignore_index},
                         {"rng", {{"source", serialize_rng(state.source_rng)}, {"target", serialize_rng(state.target_rng)}}},
                         {"optimizers",
                          {{"segmenter", optimizer_json(state.seg_opt)},
                           {"disc_feat", optimizer_json(state.disc_feat_opt)},
                           {"disc_cat", optimizer_json(state.disc_cat_opt)}}},
                         {"pca", pca},
                         {"arrays", w.index()}};
  const std::string text = manifest.dump();
  std::string header(kMagic, sizeof(kMagic));
  put_le(header, kFormatVersion);
  put_le(header, static_cast<std::uint64_t>(text.size()));

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(w.blob().data(), static_cast<std::streamsize>(w.blob().size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kHeader = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a checkpoint file");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kFormatVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto json_size = get_le<std::uint64_t>(bytes.data() + 12);
  if (kHeader + json_size > bytes.size()) throw IntegrityError("checkpoint manifest runs past the end of the file");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + json_size));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  const char* blob = bytes.data() + kHeader + json_size;
  const std::size_t blob_size = bytes.size() - kHeader - json_size;

  try {
    const ModelConfig model_cfg = model_config_from_json(manifest.at("model"));
    TrainConfig cfg = train_config_from_json(manifest.at("config"));
    TrainState state(cfg, model_cfg);
    const ArrayReader r(manifest.at("arrays"), blob, blob_size);
    state.model->store().for_each([&](nn::Param<Real>& p) { r.read_into("param/" + p.name, p.value); });
    const auto& opts = manifest.at("optimizers");
    read_moments(r, "segmenter", state.seg_opt, state.model->store(), opts.at("segmenter"));
    read_moments(r, "disc_feat", state.disc_feat_opt, state.model->store(), opts.at("disc_feat"));
    read_moments(r, "disc_cat", state.disc_cat_opt, state.model->store(), opts.at("disc_cat"));
    state.iteration = manifest.at("iteration").get<Index>();
    state.source_name = manifest.at("source_name").get<std::string>();
    state.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    state.indexer.ignore_index = manifest.at("ignore_index").get<int>();
    state.source_rng = deserialize_rng(manifest.at("rng").at("source").get<std::string>());
    state.target_rng = deserialize_rng(manifest.at("rng").at("target").get<std::string>());
    const auto& pca = manifest.at("pca");
    if (!pca.is_null()) {
      const auto bands = pca.at("bands").get<Index>();
      const auto k = pca.at("k").get<Index>();
      PcaModel m;
      const auto mean = r.read<double>("pca/mean", bands);
      const auto comps = r.read<double>("pca/components", bands * k);
      const auto ev = r.read<double>("pca/explained_variance", k);
      m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), bands);
      m.components = Eigen::Map<const Eigen::MatrixXd>(comps.data(), bands, k);
      m.explained_variance = Eigen::Map<const Eigen::VectorXd>(ev.data(), k);
      m.total_variance = pca.at("total_variance").get<double>();
      state.pca = std::move(m);
    }
    return state;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest is malformed: " + std::string(e.what()));
  }
}

}  // namespace highdan
