#include "whodet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

Image::Image(int width, int height) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ValidationError("image dimensions must be non-negative");
    pixels_.assign(static_cast<std::size_t>(width) * height * 3, 0.0f);
}

float Image::clamped(int x, int y, int c) const noexcept {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return at(x, y, c);
}

void Image::fill(float r, float g, float b) {
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
        pixels_[i] = r;
        pixels_[i + 1] = g;
        pixels_[i + 2] = b;
    }
}

Image resample_region(const Image& image, double x0, double y0, double w, double h, int width,
                      int height) {
    if (image.empty()) throw ValidationError("cannot resample an empty image");
    if (width < 1 || height < 1 || !(w > 0) || !(h > 0))
        throw ValidationError("resample target must be non-empty");
    Image out(width, height);
    const double sx = w / width;
    const double sy = h / height;
    for (int y = 0; y < height; ++y) {
        const double fy = y0 + (y + 0.5) * sy - 0.5;
        const int iy = static_cast<int>(std::floor(fy));
        const float ay = static_cast<float>(fy - iy);
        for (int x = 0; x < width; ++x) {
            const double fx = x0 + (x + 0.5) * sx - 0.5;
            const int ix = static_cast<int>(std::floor(fx));
            const float ax = static_cast<float>(fx - ix);
            for (int c = 0; c < 3; ++c) {
                const float top = image.clamped(ix, iy, c) * (1 - ax) + image.clamped(ix + 1, iy, c) * ax;
                const float bottom =
                    image.clamped(ix, iy + 1, c) * (1 - ax) + image.clamped(ix + 1, iy + 1, c) * ax;
                out.at(x, y, c) = top * (1 - ay) + bottom * ay;
            }
        }
    }
    return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
    if (width == image.width() && height == image.height()) return image;
    return resample_region(image, 0.0, 0.0, image.width(), image.height(), width, height);
}

namespace {

std::string next_token(std::istream& in) {
    std::string token;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(ch);
    }
    return token;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P6" && magic != "P5")
        throw FormatError(path.string() + ": unsupported image format (expected binary PPM/PGM)");
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed image header");
    }
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        throw FormatError(path.string() + ": unsupported image header values");
    const int depth = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * depth);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw FormatError(path.string() + ": truncated pixel data");
    Image image(width, height);
    const float norm = 255.0f / maxval;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const std::size_t i = (static_cast<std::size_t>(y) * width + x) * depth + (depth == 3 ? c : 0);
                image.at(x, y, c) = raw[i] * norm;
            }
    return image;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(image.width()) * image.height() * 3);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                bytes.push_back(static_cast<char>(
                    static_cast<unsigned char>(std::lround(std::clamp(image.at(x, y, c), 0.0f, 255.0f)))));
    write_file_atomic(path, out.str() + bytes);
}

}  // namespace whodet
