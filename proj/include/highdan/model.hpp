#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "highdan/adaptation.hpp"
#include "highdan/decoder.hpp"
#include "highdan/encoder.hpp"

namespace highdan {

/// Everything needed to rebuild the network graph.
struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  DiscriminatorConfig discriminators;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (discriminators.feature_widths.empty() || discriminators.category_widths.empty()) {
      throw ConfigError("discriminators need at least one hidden layer");
    }
    if (!(discriminators.leaky_slope >= 0)) throw ConfigError("leaky_slope must be >= 0");
  }
};

/// Architecture keys of the "model" config object. Modalities and the class
/// count come from the data, not from this object.
nlohmann::json architecture_to_json(const ModelConfig& cfg);
/// Applies the keys present in `j` onto `cfg`; unknown keys raise ConfigError.
void architecture_from_json(const nlohmann::json& j, ModelConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Encoder, decoder and both discriminators over one parameter store.
/// Parameter prefixes: encoder.head.<modality>, encoder.hr, decoder,
/// disc_feat, disc_cat.
template <typename Scalar>
class Segmenter {
 public:
  explicit Segmenter(ModelConfig cfg)
      : cfg_(prepare(std::move(cfg))),
        encoder_(store_, cfg_.encoder, "encoder"),
        decoder_(store_, cfg_.encoder.fused_width(), cfg_.decoder, "decoder"),
        disc_feat_(store_, "disc_feat", DiscriminatorKind::Feature, cfg_.encoder.fused_width(), cfg_.discriminators),
        disc_cat_(store_, "disc_cat", DiscriminatorKind::Category, cfg_.decoder.num_classes, cfg_.discriminators) {}

  Segmenter(const Segmenter&) = delete;
  Segmenter& operator=(const Segmenter&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore<Scalar>& store() { return store_; }
  const nn::ParameterStore<Scalar>& store() const { return store_; }
  Encoder<Scalar>& encoder() { return encoder_; }
  Decoder<Scalar>& decoder() { return decoder_; }
  Discriminator<Scalar>& disc_feat() { return disc_feat_; }
  Discriminator<Scalar>& disc_cat() { return disc_cat_; }

  void initialize(std::uint64_t seed) {
    Rng rng = make_stream(seed, "init");
    store_.initialize(rng);
  }

  /// Inference path: fused features, optional attention correction, logits.
  Tensor<Scalar> logits(const ModalityInputs<Scalar>& inputs, bool attention) {
    Tensor<Scalar> v = encoder_.forward(inputs, Mode::Eval);
    if (attention) v = attention_correct(v, disc_feat_.forward(v)).aligned;
    return decoder_.forward(v, Mode::Eval);
  }

 private:
  static ModelConfig prepare(ModelConfig cfg) {
    sort_modalities(cfg.encoder.modalities);
    cfg.validate();
    return cfg;
  }

  ModelConfig cfg_;
  nn::ParameterStore<Scalar> store_;
  Encoder<Scalar> encoder_;
  Decoder<Scalar> decoder_;
  Discriminator<Scalar> disc_feat_;
  Discriminator<Scalar> disc_cat_;
};

/// Learnable scalar counts grouped by module.
struct ParamBreakdown {
  std::vector<std::pair<std::string, Index>> modules;  // in store name order
  Index segmenter = 0;       // encoder + decoder
  Index discriminators = 0;  // disc_feat + disc_cat
  Index total = 0;
};

inline std::string module_of(const std::string& name) {
  auto part = [&](std::size_t count) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
      pos = name.find('.', pos);
      if (pos == std::string::npos) return name;
      ++pos;
    }
    return name.substr(0, pos - 1);
  };
  if (name.starts_with("encoder.head.")) return part(3);
  if (name.starts_with("encoder.")) return part(2);
  return part(1);
}

template <typename Scalar>
ParamBreakdown count_params(const nn::ParameterStore<Scalar>& store) {
  ParamBreakdown r;
  store.for_each([&](const nn::Param<Scalar>& p) {
    if (!p.learnable) return;
    const std::string module = module_of(p.name);
    if (r.modules.empty() || r.modules.back().first != module) {
      bool found = false;
      for (auto& [name, count] : r.modules) {
        if (name == module) {
          count += p.value.size();
          found = true;
        }
      }
      if (!found) r.modules.emplace_back(module, p.value.size());
    } else {
      r.modules.back().second += p.value.size();
    }
    (module.starts_with("disc_") ? r.discriminators : r.segmenter) += p.value.size();
    r.total += p.value.size();
  });
  return r;
}

}  // namespace highdan
