#include "whodet/feature_map.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "whodet/error.hpp"

namespace whodet {

void validate(const CellGeometry& g) {
    if (g.cellWidth < 1 || g.cellHeight < 1)
        throw ValidationError("cell size must be at least 1x1, got " + std::to_string(g.cellWidth) +
                              "x" + std::to_string(g.cellHeight));
    if (g.borderX < 0 || g.borderY < 0)
        throw ValidationError("cell border must be non-negative");
}

CellGeometry derive_geometry(std::span<const LayerParam> layers) {
    double offset = 0.0;
    long long jump = 1;
    for (const LayerParam& layer : layers) {
        if (layer.kernelSize < 1 || layer.stride < 1 || layer.pad < 0)
            throw ValidationError("layer parameters out of range (kernel >= 1, stride >= 1, pad >= 0)");
        offset += ((layer.kernelSize - 1) / 2.0 - layer.pad) * static_cast<double>(jump);
        jump *= layer.stride;
    }
    // Round half up; offsets can be fractional for even kernels.
    const int border = std::max(0, static_cast<int>(std::floor(offset + 0.5)));
    const int cell = static_cast<int>(jump);
    return {cell, cell, border, border};
}

FeatureMap::FeatureMap(int width, int height, int channels, CellGeometry geometry, double scale)
    : FeatureMap(width, height, channels,
                 std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) *
                                    std::max(height, 0) * std::max(channels, 0)),
                 geometry, scale) {}

FeatureMap::FeatureMap(int width, int height, int channels, std::vector<float> data,
                       CellGeometry geometry, double scale)
    : width_(width), height_(height), channels_(channels), geometry_(geometry), scale_(scale),
      data_(std::move(data)) {
    if (width < 0 || height < 0) throw ValidationError("feature map dimensions must be non-negative");
    if (channels < 1) throw ValidationError("feature map needs at least one channel");
    if (data_.size() != static_cast<std::size_t>(width) * height * channels)
        throw ValidationError("feature map data length " + std::to_string(data_.size()) +
                              " does not match " + std::to_string(width) + "x" +
                              std::to_string(height) + "x" + std::to_string(channels));
    validate(geometry_);
    setScale(scale);
}

void FeatureMap::setGeometry(const CellGeometry& g) {
    validate(g);
    geometry_ = g;
}

void FeatureMap::setScale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("feature map scale must be positive and finite");
    scale_ = s;
}

FeatureMap FeatureMap::crop(int x, int y, int w, int h) const {
    if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > width_ || y + h > height_)
        throw ValidationError("crop window outside the feature map");
    FeatureMap out(w, h, channels_, geometry_, scale_);
    for (int j = 0; j < h; ++j) {
        auto src = data_.begin() + (static_cast<std::ptrdiff_t>(y + j) * width_ + x) * channels_;
        std::copy(src, src + static_cast<std::ptrdiff_t>(w) * channels_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(j) * w * channels_);
    }
    return out;
}

void FeatureMap::checkFinite() const {
    for (std::size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            throw ValidationError("non-finite feature value at index " + std::to_string(i));
}

bool FeatureMap::operator==(const FeatureMap& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_ &&
           geometry_ == other.geometry_ && scale_ == other.scale_ && data_ == other.data_;
}

}  // namespace whodet
