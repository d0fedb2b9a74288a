#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace whodet {

/// Write `contents` to a sibling temp file and rename it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// Little-endian float arrays as used by the model file.
std::string encode_f32(std::span<const float> values);
std::vector<float> decode_f32(std::string_view bytes);
std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(std::string_view bytes);

/// Sequential little-endian writer/reader for the binary container formats.
class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v);
    void f64(double v);
    void raw(std::string_view bytes) { buffer_.append(bytes); }
    const std::string& bytes() const noexcept { return buffer_; }

private:
    void put(std::uint64_t v, int n);
    std::string buffer_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    std::uint32_t u32(std::string_view field) { return static_cast<std::uint32_t>(get(4, field)); }
    std::uint64_t u64(std::string_view field) { return get(8, field); }
    float f32(std::string_view field);
    double f64(std::string_view field);
    std::string_view take(std::size_t n, std::string_view field);
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::uint64_t get(int n, std::string_view field);
    std::string_view bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

/// One JSON object per non-blank line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace whodet
