#include <bit>
#include <cmath>
#include <limits>
#include <string>
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "whodet/error.hpp"
#include "whodet/feature_io.hpp"
#include "whodet/feature_map.hpp"
#include "whodet/hog.hpp"
#include "whodet/image.hpp"
#include "whodet/pyramid.hpp"

using namespace whodet;

namespace {

LayerParam conv(int k, int s, int p) { return {LayerKind::Convolution, k, s, p}; }
LayerParam pool(int k, int s) { return {LayerKind::Pooling, k, s, 0}; }

std::vector<LayerParam> caffenet_conv5() {
    return {conv(11, 4, 0), pool(3, 2), conv(5, 1, 2), pool(3, 2), conv(3, 1, 1), conv(3, 1, 1), conv(3, 1, 1)};
}

Image random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> dist(0.0, 255.0);
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(dist(rng));
    return img;
}

int positive_mod(int a, int m) { return ((a % m) + m) % m; }

}  // namespace

TEST_CASE("derive_geometry of a single strided convolution") {
    const std::vector<LayerParam> layers{conv(11, 4, 0)};
    const CellGeometry g = derive_geometry(layers);
    CHECK(g.cellWidth == 4);
    CHECK(g.cellHeight == 4);
    CHECK(g.borderX == 5);
    CHECK(g.borderY == 5);
}

TEST_CASE("derive_geometry of an empty stack is the identity") {
    const CellGeometry g = derive_geometry({});
    CHECK(g == CellGeometry{1, 1, 0, 0});
}

TEST_CASE("derive_geometry of the CaffeNet stacks") {
    auto layers = caffenet_conv5();
    const CellGeometry c5 = derive_geometry(layers);
    CHECK(c5.cellWidth == 16);
    CHECK(c5.cellHeight == 16);
    CHECK(c5.borderX == 17);
    layers.push_back(pool(3, 2));
    const CellGeometry p5 = derive_geometry(layers);
    CHECK(p5.cellWidth == 32);
    CHECK(p5.cellHeight == 32);
    CHECK(p5.borderX == 33);
}

TEST_CASE("derive_geometry matches the stride product and receptive-field recurrence on random stacks") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> count(0, 7), kernel(1, 7), stride(1, 3), pad(0, 3), kind(0, 1);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<LayerParam> layers;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            const int k = kernel(rng);
            layers.push_back({kind(rng) ? LayerKind::Pooling : LayerKind::Convolution, k, stride(rng),
                              std::min(pad(rng), k / 2)});
        }
        long product = 1;
        double jump = 1, off = 0;
        for (const auto& l : layers) {
            off += ((l.kernelSize - 1) / 2.0 - l.pad) * jump;
            jump *= l.stride;
            product *= l.stride;
        }
        const int border = std::max(0, static_cast<int>(std::floor(off + 0.5)));
        const CellGeometry g = derive_geometry(layers);
        REQUIRE(g.cellWidth == product);
        REQUIRE(g.cellHeight == product);
        REQUIRE(g.borderX == border);
        REQUIRE(g.borderY == border);
    }
}

TEST_CASE("HOG of a uniform image has no gradient energy") {
    Image img(64, 48);
    img.fill(128, 128, 128);
    const FeatureMap m = extract_hog(img);
    CHECK(m.width() == 8);
    CHECK(m.height() == 6);
    CHECK(m.channels() == 32);
    for (float v : m.data()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("HOG grid size and cell geometry") {
    Image img(64, 64);
    img.fill(10, 20, 30);
    const FeatureMap m = extract_hog(img);
    CHECK(m.width() == 8);
    CHECK(m.height() == 8);
    CHECK(m.geometry().cellWidth == 8);
    CHECK(m.geometry().cellHeight == 8);
    Image odd(71, 23);
    odd.fill(1, 1, 1);
    const FeatureMap o = extract_hog(odd);
    CHECK(o.width() == 8);
    CHECK(o.height() == 2);
}

TEST_CASE("HOG rejects images smaller than one cell") {
    Image img(7, 40);
    img.fill(0, 0, 0);
    CHECK_THROWS_AS(extract_hog(img), ValidationError);
}

TEST_CASE("HOG of a vertical step edge concentrates in horizontal-gradient bins") {
    Image img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = x < 32 ? 40.0f : 200.0f;
    const FeatureMap m = extract_hog(img);
    // Dark to bright along +x: the gradient points at 0 degrees.
    double total = 0, horizontal = 0;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            for (int o = 0; o < hog::kSensitiveBins; ++o) {
                total += m(x, y, o);
                if (o == 0) horizontal += m(x, y, o);
            }
    CHECK(total > 0);
    CHECK(horizontal / total > 0.99);
    CHECK(m(3, 4, 0) > 0);
    CHECK(m(0, 4, 0) == doctest::Approx(0.0));
}

TEST_CASE("HOG channels permute under 180-degree rotation and horizontal mirroring") {
    // 18 orientation bins of 20 degrees are closed under 180-degree rotation
    // and mirroring; a 90-degree turn would shift them by 4.5 bins.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 4; ++trial) {
        const int W = 8 * (3 + trial), H = 8 * (5 - trial / 2);
        const Image img = random_image(rng, W, H);
        Image rotated(W, H), mirrored(W, H);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) {
                    rotated.at(W - 1 - x, H - 1 - y, c) = img.at(x, y, c);
                    mirrored.at(W - 1 - x, y, c) = img.at(x, y, c);
                }
        const FeatureMap a = extract_hog(img), r = extract_hog(rotated), m = extract_hog(mirrored);
        const int cw = a.width(), ch = a.height();
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                for (int o = 0; o < hog::kSensitiveBins; ++o) {
                    REQUIRE(r(cw - 1 - x, ch - 1 - y, (o + 9) % 18) == doctest::Approx(a(x, y, o)).epsilon(1e-4));
                    REQUIRE(m(cw - 1 - x, y, positive_mod(9 - o, 18)) == doctest::Approx(a(x, y, o)).epsilon(1e-4));
                }
                for (int o = 0; o < hog::kInsensitiveBins; ++o) {
                    REQUIRE(r(cw - 1 - x, ch - 1 - y, 18 + o) == doctest::Approx(a(x, y, 18 + o)).epsilon(1e-4));
                    REQUIRE(m(cw - 1 - x, y, 18 + positive_mod(9 - o, 9)) ==
                            doctest::Approx(a(x, y, 18 + o)).epsilon(1e-4));
                }
                const int rotatedTexture[4] = {3, 2, 1, 0};
                const int mirroredTexture[4] = {2, 3, 0, 1};
                for (int k = 0; k < 4; ++k) {
                    REQUIRE(r(cw - 1 - x, ch - 1 - y, 27 + rotatedTexture[k]) ==
                            doctest::Approx(a(x, y, 27 + k)).epsilon(1e-4));
                    REQUIRE(m(cw - 1 - x, y, 27 + mirroredTexture[k]) == doctest::Approx(a(x, y, 27 + k)).epsilon(1e-4));
                }
                REQUIRE(a(x, y, 31) == 0.0f);
            }
    }
}

TEST_CASE("HOG values are finite and bounded") {
    std::mt19937_64 rng(9);
    const FeatureMap m = extract_hog(random_image(rng, 48, 40));
    for (float v : m.data()) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 4.0f);
    }
}

TEST_CASE("feature map file roundtrip is bit-exact") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> dist(-1e3f, 1e3f);
    FeatureMap m(5, 3, 7, CellGeometry{16, 16, 17, 17}, 0.5);
    for (auto& v : m.data()) v = dist(rng);
    const auto path = std::filesystem::temp_directory_path() / "whodet_test_roundtrip.wfm";
    save_feature_map(m, path);
    const FeatureMap back = load_feature_map(path);
    std::filesystem::remove(path);
    CHECK(back == m);
    CHECK(back.geometry() == m.geometry());
    CHECK(back.scale() == 0.5);
    for (std::size_t i = 0; i < m.data().size(); ++i) REQUIRE(std::bit_cast<std::uint32_t>(back.data()[i]) ==
                                                              std::bit_cast<std::uint32_t>(m.data()[i]));
}

TEST_CASE("feature map decoding rejects truncated payloads, bad magic and non-finite values") {
    FeatureMap m(2, 2, 3);
    std::string bytes = encode_feature_map(m);
    CHECK_THROWS_AS(decode_feature_map(bytes.substr(0, bytes.size() - 4)), FormatError);
    CHECK_THROWS_WITH_AS(decode_feature_map(bytes.substr(0, bytes.size() - 4)),
                         doctest::Contains("payload holds 11 values"), FormatError);
    std::string wrong = bytes;
    wrong[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_feature_map(wrong), doctest::Contains("magic"), FormatError);
    FeatureMap bad(1, 1, 1);
    bad.data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(decode_feature_map(encode_feature_map(bad)), FormatError);
}

TEST_CASE("pyramid downscales oversized images first") {
    Image img(2048, 1024);
    img.fill(100, 100, 100);
    HogExtractor hog;
    FeatureExtractorConfig cfg;
    const FeaturePyramid p = build_pyramid(img, hog, cfg, 5, 4);
    REQUIRE(!p.levels.empty());
    CHECK(p.levels[0].width() == 128);
    CHECK(p.levels[0].height() == 64);
    CHECK(p.levels[0].scale() == doctest::Approx(0.5));
    CHECK(p.imageWidth == 2048);
}

TEST_CASE("pyramid with one interval per octave halves every level") {
    Image img(256, 256);
    img.fill(50, 60, 70);
    HogExtractor hog;
    const FeaturePyramid p = build_pyramid(img, hog, FeatureExtractorConfig{}, 1, 4);
    REQUIRE(p.levels.size() == 4);
    const int expected[4] = {32, 16, 8, 4};
    for (int i = 0; i < 4; ++i) {
        CHECK(p.levels[i].width() == expected[i]);
        CHECK(p.levels[i].height() == expected[i]);
        CHECK(p.levels[i].scale() == std::ldexp(1.0, -i));
    }
}

TEST_CASE("pyramid levels one octave apart differ by exactly a factor two") {
    std::mt19937_64 rng(1);
    const Image img = random_image(rng, 320, 240);
    HogExtractor hog;
    for (int intervals : {1, 3, 5, 10}) {
        const FeaturePyramid p = build_pyramid(img, hog, FeatureExtractorConfig{}, intervals, 3);
        REQUIRE(p.levels.size() > static_cast<std::size_t>(intervals));
        for (std::size_t i = 0; i + intervals < p.levels.size(); ++i) {
            REQUIRE(p.levels[i + intervals].scale() == p.levels[i].scale() / 2);
            REQUIRE(p.levels[i].channels() == 32);
        }
        for (int i = 0; i < 20; ++i) REQUIRE(pyramid_scale(1.0, i + intervals, intervals) == pyramid_scale(1.0, i, intervals) / 2);
    }
}

TEST_CASE("precomputed manifests are validated against the scale schedule") {
    const auto dir = std::filesystem::temp_directory_path() / "whodet_test_manifest";
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(2);
    PyramidManifest man;
    man.image = "img";
    for (int i = 0; i < 3; ++i) {
        const double s = pyramid_scale(1.0, i, 2);
        FeatureMap m(12 - 3 * i, 10 - 3 * i, 6, CellGeometry{16, 16, 17, 17}, s);
        for (auto& v : m.data()) v = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
        const auto file = dir / ("l" + std::to_string(i) + ".wfm");
        save_feature_map(m, file);
        man.levels.push_back({s, {file}});
    }
    const FeaturePyramid p = build_pyramid(man, 2, 1);
    CHECK(p.levels.size() == 3);
    CHECK(p.source == ExtractorKind::Precomputed);
    CHECK(p.channels() == 6);

    PyramidManifest wrongScale = man;
    wrongScale.levels[1].scale *= 1.001;
    CHECK_THROWS_AS(build_pyramid(wrongScale, 2, 1), ValidationError);

    FeatureMap narrow(6, 4, 5, CellGeometry{16, 16, 17, 17}, pyramid_scale(1.0, 2, 2));
    save_feature_map(narrow, dir / "narrow.wfm");
    PyramidManifest wrongChannels = man;
    wrongChannels.levels[2].files = {dir / "narrow.wfm"};
    CHECK_THROWS_AS(build_pyramid(wrongChannels, 2, 1), ValidationError);
    std::filesystem::remove_all(dir);
}
