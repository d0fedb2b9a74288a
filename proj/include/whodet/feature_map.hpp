#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace whodet {

/// Pixel geometry of one feature cell.
///
/// `borderX`/`borderY` are the pixels between the image origin and the first
/// cell, as produced by a stack of convolution/pooling layers.
struct CellGeometry {
    int cellWidth = 1;
    int cellHeight = 1;
    int borderX = 0;
    int borderY = 0;

    bool operator==(const CellGeometry&) const = default;
};

void validate(const CellGeometry& geometry);

enum class LayerKind { Convolution, Pooling };

struct LayerParam {
    LayerKind kind = LayerKind::Convolution;
    int kernelSize = 1;
    int stride = 1;
    int pad = 0;
};

/// Cell size and border of a convolution/pooling stack.
///
/// The cell size is the product of all strides. The border follows the
/// receptive-field recurrence jump_0 = 1, off_0 = 0,
/// off_l = off_{l-1} + ((k_l - 1) / 2 - p_l) * jump_{l-1}, jump_l = jump_{l-1} * s_l,
/// rounded half-up and clamped at zero.
CellGeometry derive_geometry(std::span<const LayerParam> layers);

/// Dense W x H x F grid of feature cells, stored row-major with the channel
/// index fastest: value(x, y, c) = data[(y * width + x) * channels + c].
///
/// Also used for model filters and positive-sample tensors, where the geometry
/// and scale carry no meaning.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int width, int height, int channels, CellGeometry geometry = {}, double scale = 1.0);
    FeatureMap(int width, int height, int channels, std::vector<float> data,
               CellGeometry geometry = {}, double scale = 1.0);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::size_t cells() const noexcept { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    const CellGeometry& geometry() const noexcept { return geometry_; }
    void setGeometry(const CellGeometry& g);
    double scale() const noexcept { return scale_; }
    void setScale(double s);

    float& operator()(int x, int y, int c) noexcept {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    float operator()(int x, int y, int c) const noexcept {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    std::span<float> cell(int x, int y) noexcept {
        return {data_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_,
                static_cast<std::size_t>(channels_)};
    }
    std::span<const float> cell(int x, int y) const noexcept {
        return {data_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_,
                static_cast<std::size_t>(channels_)};
    }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    /// Sub-grid of `w` x `h` cells starting at cell (x, y). Must lie inside the map.
    FeatureMap crop(int x, int y, int w, int h) const;

    /// Throws ValidationError if any value is NaN or infinite.
    void checkFinite() const;

    bool operator==(const FeatureMap& other) const;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 1;
    CellGeometry geometry_{};
    double scale_ = 1.0;
    std::vector<float> data_;
};

}  // namespace whodet
