#pragma once

#include <filesystem>
#include <string>

#include "whodet/feature_map.hpp"

namespace whodet {

/// "WFM1" feature-map file: little-endian u32 width, height, channels, cellW,
/// cellH, borderX, borderY, f32 scale, then width*height*channels f32 values
/// (y outermost, channel fastest).
std::string encode_feature_map(const FeatureMap& map);
FeatureMap decode_feature_map(std::string_view bytes, const std::string& source = "feature map");

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap load_feature_map(const std::filesystem::path& path);

}  // namespace whodet
