#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "whodet/detector.hpp"
#include "whodet/error.hpp"
#include "whodet/learner.hpp"
#include "whodet/modelstore.hpp"
#include "whodet/synth.hpp"

using namespace whodet;

namespace {

constexpr int kIntervals = 5;
constexpr int kMinCells = 3;

ModelComponent component_of(FeatureMap filter, double bias = 0) {
    ModelComponent c;
    c.filter = std::move(filter);
    c.bias = bias;
    return c;
}

/// Single-component HOG model of the synthetic pattern.
const DetectorModel& pattern_model() {
    static const DetectorModel model = [] {
        std::mt19937_64 rng(77);
        FeaturePipeline pipeline;
        std::vector<FeaturePyramid> background;
        for (int i = 0; i < 8; ++i) background.push_back(pipeline.rawPyramid(render_background(200, 160, rng), kIntervals, kMinCells));
        const BackgroundStats stats = learn_stats(background, 5);
        std::vector<FeatureMap> positives;
        std::uniform_real_distribution<double> scale(1.0, 2.0), pos(0.0, 1.0);
        for (int i = 0; i < 12; ++i) {
            Image img = render_background(200, 160, rng);
            const double s = scale(rng);
            const Box box{std::floor(pos(rng) * (200 - 40 * s)), std::floor(pos(rng) * (160 - 32 * s)), 40 * s, 32 * s};
            plant_pattern(img, box);
            positives.push_back(extract_positive(img, box, {5, 4, 32}, pipeline));
        }
        DetectorModel m;
        m.className = kPatternClass;
        m.pipeline = pipeline;
        m.intervalsPerOctave = kIntervals;
        m.components.push_back(learn_exemplar_lda(positives, stats).component);
        return m;
    }();
    return model;
}

Detection det(double x, double y, double w, double h, double score, std::string image = "a") {
    Detection d;
    d.image = std::move(image);
    d.box = {x, y, w, h};
    d.score = score;
    return d;
}

void require_inside(const std::vector<Detection>& dets, int width, int height) {
    for (const auto& d : dets) {
        REQUIRE(d.box.x >= 0);
        REQUIRE(d.box.y >= 0);
        REQUIRE(d.box.x + d.box.w <= width + 1e-9);
        REQUIRE(d.box.y + d.box.h <= height + 1e-9);
        REQUIRE(d.box.area() > 0);
    }
}

}  // namespace

TEST_CASE("a delta filter reads out one channel") {
    std::mt19937_64 rng(1);
    const FeatureMap level = oracle::random_map(rng, 7, 5, 4);
    FeatureMap filter(1, 1, 4);
    filter(0, 0, 2) = 1.0f;
    const ScoreMap s = convolve_score(level, component_of(filter));
    REQUIRE(s.width == 7);
    REQUIRE(s.height == 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) REQUIRE(s(x, y) == doctest::Approx(level(x, y, 2)).epsilon(1e-9));
}

TEST_CASE("a zero filter scores minus the bias everywhere") {
    std::mt19937_64 rng(2);
    const FeatureMap level = oracle::random_map(rng, 9, 6, 3);
    const ScoreMap s = convolve_score(level, component_of(FeatureMap(3, 2, 3), 1.25));
    REQUIRE(s.width == 7);
    REQUIRE(s.height == 5);
    for (double v : s.values) CHECK(v == doctest::Approx(-1.25).epsilon(1e-12));
}

TEST_CASE("frequency-domain scores match the sliding-window sum") {
    std::mt19937_64 rng(3);
    const FeatureMap level = oracle::random_map(rng, 9, 7, 16);
    const FeatureMap filter = oracle::random_map(rng, 3, 2, 16);
    const ScoreMap s = convolve_score(level, component_of(filter, 0.3));
    int w = 0, h = 0;
    const auto ref = oracle::naive_correlation(level, filter, 0.3, w, h);
    REQUIRE(s.width == w);
    REQUIRE(s.height == h);
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(s.values[i] - ref[i]) <= 1e-5 * std::max(1.0, std::abs(ref[i])));
    const ScoreMap direct = naive_score(level, component_of(filter, 0.3));
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(direct.values[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("frequency-domain scores agree with the naive oracle across sizes") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> side(1, 32), ch(1, 8);
    for (int trial = 0; trial < 40; ++trial) {
        const int W = side(rng), H = side(rng), F = ch(rng);
        const int M = std::uniform_int_distribution<int>(1, W)(rng), N = std::uniform_int_distribution<int>(1, H)(rng);
        const FeatureMap level = oracle::random_map(rng, W, H, F);
        const FeatureMap filter = oracle::random_map(rng, M, N, F);
        const LevelSpectrum spectrum(level);
        const ScoreMap s = convolve_score(spectrum, component_of(filter));
        int w = 0, h = 0;
        const auto ref = oracle::naive_correlation(level, filter, 0, w, h);
        REQUIRE(s.width == w);
        double scale = 1e-30;
        for (double r : ref) scale = std::max(scale, std::abs(r));
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(s.values[i] - ref[i]) <= 1e-5 * scale);
    }
}

TEST_CASE("a filter larger than the level yields an empty score map") {
    const ScoreMap s = convolve_score(FeatureMap(3, 3, 2), component_of(FeatureMap(4, 2, 2)));
    CHECK(s.empty());
    CHECK_THROWS_AS(convolve_score(FeatureMap(3, 3, 2), component_of(FeatureMap(1, 1, 3))), ValidationError);
}

TEST_CASE("placement boxes map cells to pixels") {
    const Box b = placement_box(3, 2, 5, 4, {8, 8, 0, 0}, 0.5);
    CHECK(b == Box{48, 32, 80, 64});
    const Box c = placement_box(1, 0, 2, 2, {16, 16, 17, 17}, 1.0);
    CHECK(c == Box{33, 17, 32, 32});
}

TEST_CASE("single detection survives NMS") {
    const std::vector<Detection> one{det(1, 2, 3, 4, 0.5)};
    CHECK(nms(one) == one);
}

TEST_CASE("identical boxes keep only the higher score") {
    const auto kept = nms({det(0, 0, 10, 10, 0.8), det(0, 0, 10, 10, 0.9)});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}

TEST_CASE("nested small box survives plain NMS but not the containment rule") {
    const std::vector<Detection> dets{det(0, 0, 100, 100, 0.9), det(10, 10, 10, 10, 0.5)};
    CHECK(nms(dets, {0.4, std::nullopt}).size() == 2);
    const auto kept = nms(dets, {0.4, 0.9});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}

TEST_CASE("NMS only suppresses within one image") {
    const auto kept = nms({det(0, 0, 10, 10, 0.9, "a"), det(0, 0, 10, 10, 0.8, "b")});
    CHECK(kept.size() == 2);
}

TEST_CASE("NMS matches the exhaustive reference and ignores input order") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> pos(0, 100), size(5, 40);
    std::uniform_int_distribution<int> score(0, 30);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Detection> dets;
        for (int i = 0; i < 50; ++i) dets.push_back(det(pos(rng), pos(rng), size(rng), size(rng), score(rng) / 10.0));
        for (double t : {0.4, 0.5}) {
            const auto ref = oracle::brute_nms(dets, t);
            REQUIRE(nms(dets, {t, std::nullopt}) == ref);
            auto shuffled = dets;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            REQUIRE(nms(shuffled, {t, std::nullopt}) == ref);
        }
        REQUIRE(nms(dets, {0.4, 0.7}) == oracle::brute_nms(dets, 0.4, 0.7));
    }
}

TEST_CASE("NMS configuration is validated") {
    CHECK_THROWS_AS(nms({}, {0.0, std::nullopt}), ValidationError);
    CHECK_THROWS_AS(nms({}, {0.4, 1.5}), ValidationError);
}

TEST_CASE("planted pattern is found with a tight box") {
    const DetectorModel& model = pattern_model();
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 3; ++trial) {
        Image img = render_background(200, 160, rng);
        const Box truth{23.0 + 40 * trial, 41, 60, 48};
        plant_pattern(img, truth);
        const FeaturePyramid raw = model.pipeline.rawPyramid(img, kIntervals, kMinCells);
        const double all = -std::numeric_limits<double>::infinity();
        const auto dets = detect(raw, model, std::vector<double>{all}, "img");
        REQUIRE(!dets.empty());
        require_inside(dets, 200, 160);
        CHECK(std::is_sorted(dets.begin(), dets.end(), detection_before));
        CHECK(dets.front().image == "img");
        CHECK(iou(dets.front().box, truth) >= 0.7);
    }
}

TEST_CASE("the same scene at twice the resolution is matched one octave deeper with a doubled box") {
    const DetectorModel& model = pattern_model();
    std::mt19937_64 rng(7);
    Image small = render_background(200, 160, rng);
    plant_pattern(small, {40, 48, 40, 32});
    const Image large = resize_bilinear(small, 400, 320);
    const std::vector<double> all{-std::numeric_limits<double>::infinity()};
    const auto a = detect(model.pipeline.rawPyramid(small, kIntervals, kMinCells), model, all);
    const auto b = detect(model.pipeline.rawPyramid(large, kIntervals, kMinCells), model, all);
    REQUIRE(!a.empty());
    REQUIRE(!b.empty());
    CHECK(b.front().level == a.front().level + kIntervals);
    CHECK(b.front().box.w == doctest::Approx(2 * a.front().box.w));
    CHECK(b.front().box.h == doctest::Approx(2 * a.front().box.h));
    CHECK(iou(b.front().box, {80, 96, 80, 64}) >= 0.7);
}

TEST_CASE("raising the threshold never adds detections") {
    const DetectorModel& model = pattern_model();
    std::mt19937_64 rng(8);
    Image img = render_background(200, 160, rng);
    plant_pattern(img, {100, 30, 50, 40});
    const FeaturePyramid raw = model.pipeline.rawPyramid(img, kIntervals, kMinCells);
    const auto base = detect(raw, model, std::vector<double>{-std::numeric_limits<double>::infinity()});
    REQUIRE(base.size() > 10);
    std::size_t previous = base.size();
    for (std::size_t k : {base.size() / 2, base.size() / 4, std::size_t{1}}) {
        const double t = base[k].score;
        const auto subset = detect(raw, model, std::vector<double>{t});
        CHECK(subset.size() <= previous);
        for (const auto& d : subset) REQUIRE(d.score >= t);
        for (const auto& d : subset) REQUIRE(std::find(base.begin(), base.end(), d) != base.end());
        previous = subset.size();
    }
    CHECK(detect(raw, model, std::vector<double>{std::numeric_limits<double>::infinity()}).empty());
}

TEST_CASE("detect rejects pyramids from a different extractor") {
    const DetectorModel& model = pattern_model();
    FeaturePyramid precomputed;
    precomputed.source = ExtractorKind::Precomputed;
    precomputed.levels.push_back(FeatureMap(10, 10, 32));
    CHECK_THROWS_AS(detect(precomputed, model), ConfigMismatchError);
    CHECK_THROWS_AS(detect(FeaturePyramid{}, model, std::vector<double>{0.0, 1.0}), ValidationError);
}

TEST_CASE("detections file roundtrip") {
    std::vector<Detection> dets{det(1.5, 2.25, 30, 40.125, 3.5, "x"), det(0, 0, 1, 1, -0.75, "y")};
    dets[1].component = 2;
    const auto path = std::filesystem::temp_directory_path() / "whodet_test_dets.jsonl";
    write_detections(dets, path);
    const auto back = read_detections(path);
    std::filesystem::remove(path);
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i) {
        CHECK(back[i].image == dets[i].image);
        CHECK(back[i].box == dets[i].box);
        CHECK(back[i].score == dets[i].score);
        CHECK(back[i].component == dets[i].component);
    }
}
