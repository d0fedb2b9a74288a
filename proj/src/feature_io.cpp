#include "whodet/feature_io.hpp"

#include <cmath>
#include <limits>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

namespace {
constexpr std::string_view kMagic = "WFM1";
}

std::string encode_feature_map(const FeatureMap& map) {
    ByteWriter w;
    w.raw(kMagic);
    w.u32(static_cast<std::uint32_t>(map.width()));
    w.u32(static_cast<std::uint32_t>(map.height()));
    w.u32(static_cast<std::uint32_t>(map.channels()));
    w.u32(static_cast<std::uint32_t>(map.geometry().cellWidth));
    w.u32(static_cast<std::uint32_t>(map.geometry().cellHeight));
    w.u32(static_cast<std::uint32_t>(map.geometry().borderX));
    w.u32(static_cast<std::uint32_t>(map.geometry().borderY));
    w.f32(static_cast<float>(map.scale()));
    w.raw(encode_f32(map.data()));
    return w.bytes();
}

FeatureMap decode_feature_map(std::string_view bytes, const std::string& source) {
    ByteReader r(bytes, source);
    if (r.take(std::min<std::size_t>(4, r.remaining()), "magic") != kMagic)
        throw FormatError(source + ": bad magic (expected WFM1)");
    constexpr auto kMaxDim = static_cast<std::uint32_t>(std::numeric_limits<int>::max());
    auto dim = [&](std::string_view field, std::uint32_t lo) {
        const std::uint32_t v = r.u32(field);
        if (v < lo || v > kMaxDim)
            throw FormatError(source + ": field " + std::string(field) + " out of range (" + std::to_string(v) + ")");
        return static_cast<int>(v);
    };
    const int width = dim("width", 0);
    const int height = dim("height", 0);
    const int channels = dim("channels", 1);
    CellGeometry g;
    g.cellWidth = dim("cellW", 1);
    g.cellHeight = dim("cellH", 1);
    g.borderX = dim("borderX", 0);
    g.borderY = dim("borderY", 0);
    const float scale = r.f32("scale");
    if (!std::isfinite(scale) || !(scale > 0))
        throw FormatError(source + ": field scale must be positive and finite");

    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    if (r.remaining() != count * 4)
        throw FormatError(source + ": payload holds " + std::to_string(r.remaining() / 4) + " values, header declares " +
                          std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(channels) +
                          " = " + std::to_string(count) + (r.remaining() < count * 4 ? " (truncated)" : " (trailing data)"));
    std::vector<float> data = decode_f32(r.take(count * 4, "payload"));
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw FormatError(source + ": payload value " + std::to_string(i) + " is not finite");
    return FeatureMap(width, height, channels, std::move(data), g, scale);
}

void save_feature_map(const FeatureMap& map, const std::filesystem::path& path) {
    write_file_atomic(path, encode_feature_map(map));
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
    return decode_feature_map(read_file(path), path.string());
}

}  // namespace whodet
