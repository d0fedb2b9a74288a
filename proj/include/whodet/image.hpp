#pragma once

#include <filesystem>
#include <vector>

namespace whodet {

/// Interleaved RGB raster with float samples in [0, 255].
class Image {
public:
    Image() = default;
    Image(int width, int height);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    float& at(int x, int y, int c) noexcept { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    float at(int x, int y, int c) const noexcept { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

    /// Sample with coordinates clamped to the image (edge replication).
    float clamped(int x, int y, int c) const noexcept;

    void fill(float r, float g, float b);

    bool operator==(const Image&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> pixels_;
};

/// Bilinear resampling with pixel-centre alignment. Returns a copy when the size is unchanged.
Image resize_bilinear(const Image& image, int width, int height);

/// Bilinear resampling of the source window [x0, x0 + w) x [y0, y0 + h) (fractional,
/// may extend past the image; outside samples replicate the edge) onto a
/// `width` x `height` raster.
Image resample_region(const Image& image, double x0, double y0, double w, double h, int width,
                      int height);

/// Binary PPM (P6) or PGM (P5), 8-bit.
Image read_image(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace whodet
