#include "whodet/io_util.hpp"

#include <bit>
#include <limits>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "whodet/error.hpp"

namespace whodet {

static_assert(std::numeric_limits<float>::is_iec559 && std::numeric_limits<double>::is_iec559);

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    std::random_device rd;
    std::filesystem::path tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + path.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw Error("write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error("cannot write " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string base64_encode(std::string_view bytes) {
    using namespace boost::archive::iterators;
    using Encoder = base64_from_binary<transform_width<std::string_view::const_iterator, 6, 8>>;
    std::string out(Encoder(bytes.begin()), Encoder(bytes.end()));
    out.append((3 - bytes.size() % 3) % 3, '=');
    return out;
}

std::string base64_decode(std::string_view text) {
    using namespace boost::archive::iterators;
    using Decoder = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    std::string padded(text);
    if (padded.size() % 4 != 0) throw FormatError("base64 payload length is not a multiple of 4");
    std::size_t pad = 0;
    while (pad < 2 && !padded.empty() && padded[padded.size() - 1 - pad] == '=') ++pad;
    for (std::size_t i = padded.size() - pad; i < padded.size(); ++i) padded[i] = 'A';
    try {
        std::string out(Decoder(padded.cbegin()), Decoder(padded.cend()));
        out.resize(out.size() - pad);
        return out;
    } catch (const std::exception&) {
        throw FormatError("invalid base64 payload");
    }
}

namespace {

template <typename T>
std::string encode_array(std::span<const T> values) {
    std::string out(values.size() * sizeof(T), '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        ByteWriter w;
        if constexpr (sizeof(T) == 4) w.f32(values[i]);
        else w.f64(values[i]);
        std::memcpy(out.data() + i * sizeof(T), w.bytes().data(), sizeof(T));
    }
    return out;
}

template <typename T>
std::vector<T> decode_array(std::string_view bytes) {
    if (bytes.size() % sizeof(T) != 0) throw FormatError("binary array length is not a multiple of the element size");
    std::vector<T> out(bytes.size() / sizeof(T));
    ByteReader r(bytes, "array");
    for (auto& v : out) {
        if constexpr (sizeof(T) == 4) v = r.f32("element");
        else v = r.f64("element");
    }
    return out;
}

}  // namespace

std::string encode_f32(std::span<const float> values) { return encode_array(values); }
std::vector<float> decode_f32(std::string_view bytes) { return decode_array<float>(bytes); }
std::string encode_f64(std::span<const double> values) { return encode_array(values); }
std::vector<double> decode_f64(std::string_view bytes) { return decode_array<double>(bytes); }

void ByteWriter::put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
void ByteWriter::f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

std::uint64_t ByteReader::get(int n, std::string_view field) {
    if (remaining() < static_cast<std::size_t>(n))
        throw FormatError(source_ + ": truncated while reading " + std::string(field));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
}

float ByteReader::f32(std::string_view field) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, field))); }
double ByteReader::f64(std::string_view field) { return std::bit_cast<double>(get(8, field)); }

std::string_view ByteReader::take(std::size_t n, std::string_view field) {
    if (remaining() < n) throw FormatError(source_ + ": truncated while reading " + std::string(field));
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineNo) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace whodet
