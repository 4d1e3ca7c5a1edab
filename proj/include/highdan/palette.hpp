#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "highdan/raster_store.hpp"

namespace highdan {

using Rgb = std::array<std::uint8_t, 3>;

/// Colors of class indices 0..12 (labels 1..13 with the default schema).
inline constexpr std::array<Rgb, 13> kClassColors = {{{31, 120, 180},
                                                      {227, 26, 28},
                                                      {251, 154, 153},
                                                      {106, 61, 154},
                                                      {177, 89, 40},
                                                      {178, 223, 138},
                                                      {255, 255, 153},
                                                      {255, 127, 0},
                                                      {253, 191, 111},
                                                      {51, 160, 44},
                                                      {202, 178, 214},
                                                      {217, 217, 217},
                                                      {141, 211, 199}}};
inline constexpr Rgb kIgnoreColor = {64, 64, 64};

/// Color of a raw label value. Class indices past the fixed table get a
/// deterministic hashed color.
Rgb label_color(int label, const ClassIndexer& indexer);

/// Row-major RGB bytes for a label map.
std::vector<std::uint8_t> colorize(const LabelMap& labels, const ClassIndexer& indexer);

/// 8-bit RGB PNG via libpng.
void write_png(const std::filesystem::path& path, Index width, Index height, const std::vector<std::uint8_t>& rgb);

/// Decodes an 8-bit RGB PNG; returns {width, height, rgb}.
struct RgbImage {
  Index width = 0, height = 0;
  std::vector<std::uint8_t> rgb;
};
RgbImage read_png(const std::filesystem::path& path);

}  // namespace highdan
