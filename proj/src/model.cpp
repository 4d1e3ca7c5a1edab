#include "highdan/model.hpp"

#include <set>

namespace highdan {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace

json architecture_to_json(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  return {{"head_width", e.head_width},
          {"bottleneck_width", e.bottleneck_width},
          {"stream_widths", e.stream_widths},
          {"bottleneck_blocks", e.bottleneck_blocks},
          {"blocks_per_stage", e.blocks_per_stage},
          {"stages", e.stages},
          {"decoder_widths", cfg.decoder.widths},
          {"transposed_width", cfg.decoder.transposed_width},
          {"feature_disc_widths", cfg.discriminators.feature_widths},
          {"category_disc_widths", cfg.discriminators.category_widths},
          {"leaky_slope", cfg.discriminators.leaky_slope}};
}

void architecture_from_json(const json& j, ModelConfig& cfg) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  const std::string where = "model";
  for (const auto& [key, value] : j.items()) {
    if (key == "head_width") {
      cfg.encoder.head_width = get_as<Index>(j, key, where);
    } else if (key == "bottleneck_width") {
      cfg.encoder.bottleneck_width = get_as<Index>(j, key, where);
    } else if (key == "stream_widths") {
      cfg.encoder.stream_widths = get_as<std::vector<Index>>(j, key, where);
    } else if (key == "bottleneck_blocks") {
      cfg.encoder.bottleneck_blocks = get_as<Index>(j, key, where);
    } else if (key == "blocks_per_stage") {
      cfg.encoder.blocks_per_stage = get_as<Index>(j, key, where);
    } else if (key == "stages") {
      cfg.encoder.stages = get_as<Index>(j, key, where);
    } else if (key == "decoder_widths") {
      cfg.decoder.widths = get_as<std::vector<Index>>(j, key, where);
    } else if (key == "transposed_width") {
      cfg.decoder.transposed_width = get_as<Index>(j, key, where);
    } else if (key == "feature_disc_widths") {
      cfg.discriminators.feature_widths = get_as<std::vector<Index>>(j, key, where);
    } else if (key == "category_disc_widths") {
      cfg.discriminators.category_widths = get_as<std::vector<Index>>(j, key, where);
    } else if (key == "leaky_slope") {
      cfg.discriminators.leaky_slope = get_as<double>(j, key, where);
    } else {
      throw ConfigError("model: unknown key '" + key + "'");
    }
  }
}

json model_config_to_json(const ModelConfig& cfg) {
  json mods = json::array();
  for (const auto& m : cfg.encoder.modalities) mods.push_back({{"id", m.id}, {"channels", m.channels}});
  json j = architecture_to_json(cfg);
  j["modalities"] = mods;
  j["num_classes"] = cfg.decoder.num_classes;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  json arch = j;
  if (!j.contains("modalities") || !j.contains("num_classes")) throw FormatError("model config lacks modalities/num_classes");
  for (const auto& m : j.at("modalities")) {
    cfg.encoder.modalities.push_back({m.at("id").get<std::string>(), m.at("channels").get<Index>()});
  }
  cfg.decoder.num_classes = j.at("num_classes").get<Index>();
  arch.erase("modalities");
  arch.erase("num_classes");
  architecture_from_json(arch, cfg);
  cfg.validate();
  return cfg;
}

}  // namespace highdan
