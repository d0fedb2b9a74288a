#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "whodet/error.hpp"
#include "whodet/evalkit.hpp"

using namespace whodet;

namespace {

using ML = MatchLabel;

Detection det(const std::string& image, Box box, double score) {
    Detection d;
    d.image = image;
    d.box = box;
    d.score = score;
    return d;
}

GroundTruth gt(const std::string& image, const std::string& label, Box box, bool difficult = false) {
    return {image, label, box, difficult};
}

const SimilarityMap kAnimals{{"cow", {"sheep", "horse", "dog"}}};

/// Cow detections over two images with one FP of every type.
struct Scene {
    std::vector<GroundTruth> gts{
        gt("i1", "cow", {0, 0, 100, 100}),  gt("i1", "sheep", {200, 0, 100, 100}), gt("i1", "car", {0, 200, 100, 100}),
        gt("i2", "cow", {0, 0, 50, 50}),    gt("i2", "cow", {100, 100, 50, 50}),
    };
    std::vector<Detection> dets{
        det("i1", {0, 0, 100, 100}, 0.95),   // TP
        det("i1", {210, 5, 100, 100}, 0.9),  // similar (sheep)
        det("i2", {0, 0, 50, 50}, 0.85),     // TP
        det("i1", {50, 50, 100, 100}, 0.8),  // localization, IoU 1/7
        det("i1", {5, 210, 100, 100}, 0.7),  // other (car)
        det("i2", {300, 300, 20, 20}, 0.6),  // background
        det("i2", {105, 100, 50, 50}, 0.5),  // TP
    };
};

}  // namespace

TEST_CASE("intersection over union") {
    const Box a{0, 0, 10, 10};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, {20, 20, 5, 5}) == 0.0);
    CHECK(iou(a, {5, 0, 10, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou(a, {0, 0, 0, 10}) == 0.0);
}

TEST_CASE("AP of the TP, FP, TP sequence is five sixths") {
    const std::vector<ML> labels{ML::TruePositive, ML::FalsePositive, ML::TruePositive};
    const EvalReport r = compute_pr_ap(labels, 2);
    CHECK(std::abs(r.ap - 5.0 / 6.0) < 1e-12);
    CHECK(r.truePositives == 2);
    CHECK(r.falsePositives == 1);
    CHECK(r.falseNegatives == 0);
    REQUIRE(r.prPoints.size() == 3);
    CHECK(r.prPoints[1].precision == 0.5);
}

TEST_CASE("AP extremes") {
    const std::vector<ML> allTp(4, ML::TruePositive);
    CHECK(compute_pr_ap(allTp, 4).ap == 1.0);
    const std::vector<ML> noTp(4, ML::FalsePositive);
    CHECK(compute_pr_ap(noTp, 4).ap == 0.0);
    const EvalReport none = compute_pr_ap(noTp, 0);
    CHECK(none.ap == 0.0);
    CHECK(none.noGroundTruth);
    CHECK_THROWS_AS(compute_pr_ap(allTp, 3), ValidationError);
}

TEST_CASE("AP matches a brute-force envelope integrator") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = std::uniform_int_distribution<int>(0, 40)(rng);
        std::vector<ML> labels;
        std::vector<bool> tp;
        int tps = 0;
        for (int i = 0; i < n; ++i) {
            const bool t = std::bernoulli_distribution(0.4)(rng);
            tps += t;
            tp.push_back(t);
            labels.push_back(t ? ML::TruePositive : ML::FalsePositive);
        }
        const int totalGt = tps + std::uniform_int_distribution<int>(0, 5)(rng);
        if (totalGt == 0) continue;
        REQUIRE(std::abs(compute_pr_ap(labels, totalGt).ap - oracle::brute_ap(tp, totalGt)) < 1e-12);
    }
}

TEST_CASE("truncating detections below the lowest TP never lowers AP") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<ML> labels;
        for (int i = 0; i < 30; ++i) labels.push_back(std::bernoulli_distribution(0.5)(rng) ? ML::TruePositive : ML::FalsePositive);
        const auto lastTp = std::find(labels.rbegin(), labels.rend(), ML::TruePositive);
        if (lastTp == labels.rend()) continue;
        const std::vector<ML> truncated(labels.begin(), lastTp.base());
        REQUIRE(compute_pr_ap(truncated, 35).ap >= compute_pr_ap(labels, 35).ap);
    }
}

TEST_CASE("best F1 and threshold") {
    const std::vector<ML> labels{ML::TruePositive, ML::TruePositive, ML::FalsePositive, ML::FalsePositive};
    const std::vector<double> scores{4, 3, 2, 1};
    const EvalReport r = compute_pr_ap(labels, 3, scores);
    CHECK(r.bestF1 == doctest::Approx(0.8));
    REQUIRE(r.bestThreshold);
    CHECK(*r.bestThreshold == 3);
}

TEST_CASE("matching basics") {
    const std::vector<GroundTruth> gts{gt("a", "cow", {0, 0, 10, 10})};
    const std::vector<Detection> one{det("a", {0, 0, 10, 10}, 1)};
    CHECK(match_detections(one, gts, "cow").labels == std::vector<ML>{ML::TruePositive});
    const std::vector<Detection> two{det("a", {0, 0, 10, 10}, 1), det("a", {1, 0, 10, 10}, 0.5)};
    const MatchResult m = match_detections(two, gts, "cow");
    CHECK(m.labels == std::vector<ML>{ML::TruePositive, ML::FalsePositive});
    CHECK(m.matchedGt == std::vector<int>{0, -1});
    const std::vector<Detection> unsorted{det("a", {0, 0, 10, 10}, 0.5), det("a", {1, 0, 10, 10}, 1)};
    CHECK_THROWS_AS(match_detections(unsorted, gts, "cow"), ValidationError);
}

TEST_CASE("difficult objects are neither required nor penalised") {
    const std::vector<GroundTruth> gts{gt("a", "cow", {0, 0, 10, 10}, true), gt("a", "cow", {50, 50, 10, 10})};
    const std::vector<Detection> dets{det("a", {0, 0, 10, 10}, 1), det("a", {50, 50, 10, 10}, 0.5)};
    const MatchResult m = match_detections(dets, gts, "cow");
    CHECK(m.labels == std::vector<ML>{ML::Ignored, ML::TruePositive});
    CHECK(count_ground_truth(gts, "cow") == 1);
    CHECK(evaluate(dets, gts, "cow").ap == 1.0);
}

TEST_CASE("matcher agrees with the exhaustive reference on random scenes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(0, 60), size(10, 40);
    const std::vector<std::string> images{"p", "q"}, labels{"cow", "cow", "sheep"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<GroundTruth> gts;
        for (int i = 0; i < 10; ++i)
            gts.push_back(gt(images[i % 2], labels[rng() % 3], {pos(rng), pos(rng), size(rng), size(rng)},
                             std::bernoulli_distribution(0.15)(rng)));
        std::vector<Detection> dets;
        for (int i = 0; i < 20; ++i) {
            Detection d = det(images[rng() % 2], {pos(rng), pos(rng), size(rng), size(rng)}, 0);
            if (i % 2 == 0) {
                d.box = gts[rng() % gts.size()].box;
                d.box.x += std::uniform_real_distribution<double>(-3, 3)(rng);
            }
            d.score = std::uniform_int_distribution<int>(0, 15)(rng);
            dets.push_back(d);
        }
        std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
        const MatchResult m = match_detections(dets, gts, "cow");
        const auto ref = oracle::brute_match(dets, gts, "cow", 0.5);
        std::set<int> used;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            const int mine = m.labels[i] == ML::TruePositive ? 1 : m.labels[i] == ML::FalsePositive ? 0 : -1;
            REQUIRE(mine == ref[i]);
            if (m.matchedGt[i] >= 0) REQUIRE(used.insert(m.matchedGt[i]).second);
        }
    }
}

TEST_CASE("false positives are typed by relaxed overlap") {
    const Scene s;
    std::vector<std::string> warnings;
    CHECK(classify_fp(det("i1", {0, 0, 100, 100}, 0), "cow", s.gts, kAnimals) == FpType::Localization);
    // Same-class IoU of about 0.3.
    CHECK(classify_fp(det("i1", {0, 0, 100, 46}, 0), "cow", s.gts, kAnimals) == FpType::Localization);
    CHECK(classify_fp(det("i1", {210, 5, 100, 100}, 0), "cow", s.gts, kAnimals) == FpType::SimilarCategory);
    CHECK(classify_fp(det("i1", {5, 210, 100, 100}, 0), "cow", s.gts, kAnimals) == FpType::OtherCategory);
    CHECK(classify_fp(det("i1", {500, 500, 10, 10}, 0), "cow", s.gts, kAnimals) == FpType::Background);
    CHECK(classify_fp(det("i1", {210, 5, 100, 100}, 0), "sheep", s.gts, kAnimals) == FpType::Localization);
    CHECK(classify_fp(det("i1", {5, 210, 100, 100}, 0), "horse", s.gts, kAnimals, &warnings) == FpType::OtherCategory);
    CHECK(warnings.size() == 1);
}

TEST_CASE("class analysis labels the constructed scene by hand") {
    const Scene s;
    const ClassAnalysis a = analyze_class(s.dets, s.gts, "cow", kAnimals);
    CHECK(a.totalGt == 3);
    REQUIRE(a.detections.size() == 7);
    const std::vector<ML> labels{ML::TruePositive,  ML::FalsePositive, ML::TruePositive, ML::FalsePositive,
                                 ML::FalsePositive, ML::FalsePositive, ML::TruePositive};
    CHECK(a.labels == labels);
    const std::vector<std::optional<FpType>> types{std::nullopt,         FpType::SimilarCategory, std::nullopt,
                                                   FpType::Localization, FpType::OtherCategory,   FpType::Background,
                                                   std::nullopt};
    CHECK(a.fpTypes == types);
}

TEST_CASE("FP distribution at N* = 1 matches a hand tally and always sums to one") {
    const Scene s;
    const ClassAnalysis a = analyze_class(s.dets, s.gts, "cow", kAnimals);
    const auto dist = fp_distribution(a, s.gts);
    REQUIRE(dist);
    for (const auto& p : dist->points) {
        double sum = 0;
        for (double f : p.fraction) sum += f;
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
    }
    const std::vector<double> one{1.0};
    const auto at1 = fp_distribution(a, s.gts, one);
    // Top three: TP, similar, TP.
    REQUIRE(at1->points.size() == 1);
    CHECK(at1->points[0].count == 3);
    CHECK(at1->points[0].fraction[0] == doctest::Approx(2.0 / 3));
    CHECK(at1->points[0].fraction[2] == doctest::Approx(1.0 / 3));
    CHECK(at1->points[0].recallStrict == doctest::Approx(2.0 / 3));
    const std::vector<double> all{7.0 / 3};
    const auto atAll = fp_distribution(a, s.gts, all);
    CHECK(atAll->points[0].count == 7);
    CHECK(atAll->points[0].recallStrict == 1.0);
    CHECK(atAll->points[0].recallRelaxed == 1.0);
}

TEST_CASE("FP distribution of a perfect detector and of background-only errors") {
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 8; ++i) {
        gts.push_back(gt("img", "cow", {i * 100.0, 0, 50, 50}));
        dets.push_back(det("img", {i * 100.0, 0, 50, 50}, 10 - i));
    }
    for (int i = 0; i < 30; ++i) dets.push_back(det("img", {i * 40.0, 500, 20, 20}, -i));
    const ClassAnalysis a = analyze_class(dets, gts, "cow", kAnimals);
    const auto d = fp_distribution(a, gts);
    REQUIRE(d);
    CHECK(d->points.size() == 25);
    CHECK(d->points.front().nStar == doctest::Approx(0.125));
    CHECK(d->points.back().nStar == doctest::Approx(8.0));
    for (const auto& p : d->points) {
        if (p.nStar <= 1.0) CHECK(p.fraction[0] == 1.0);
        CHECK(p.fraction[4] == doctest::Approx(1.0 - p.fraction[0]).epsilon(1e-12));
    }
    std::vector<std::string> warnings;
    const std::vector<GroundTruth> noCows{gt("img", "dog", {0, 0, 5, 5})};
    CHECK_FALSE(fp_distribution(analyze_class(dets, noCows, "cow", kAnimals), noCows, {}, &warnings));
    CHECK(warnings.size() == 1);
}

TEST_CASE("impact of removing or correcting false positives") {
    const Scene s;
    const ClassAnalysis a = analyze_class(s.dets, s.gts, "cow", kAnimals);
    const ImpactReport r = impact_analysis(a, s.gts);
    CHECK(r.baselineAp == doctest::Approx(evaluate(s.dets, s.gts, "cow").ap).epsilon(1e-12));
    REQUIRE(r.entries.size() == 4);
    for (const auto& e : r.entries) {
        CHECK(e.removedDelta >= 0);
        CHECK(e.removedAp == doctest::Approx(r.baselineAp + e.removedDelta));
    }
    const ImpactEntry& loc = r.entries[0];
    REQUIRE(loc.correctedDelta);
    CHECK(*loc.correctedDelta >= loc.removedDelta);
    CHECK(*loc.correctedAp >= loc.removedAp);
    CHECK(loc.removedAp >= r.baselineAp);
}

TEST_CASE("impact with no FPs of a type is zero and full correction reaches AP one") {
    // Every cow is only hit loosely, so all FPs are localization errors.
    std::vector<GroundTruth> gts;
    std::vector<Detection> dets;
    for (int i = 0; i < 4; ++i) {
        gts.push_back(gt("img", "cow", {i * 100.0, 0, 60, 60}));
        dets.push_back(det("img", {i * 100.0 + 30, 0, 60, 60}, 4 - i));
    }
    const ClassAnalysis a = analyze_class(dets, gts, "cow", kAnimals);
    const ImpactReport r = impact_analysis(a, gts);
    CHECK(r.baselineAp == 0.0);
    CHECK(*r.entries[0].correctedAp == 1.0);
    for (int t = 1; t < 4; ++t) CHECK(r.entries[t].removedDelta == 0.0);
}

TEST_CASE("ground truth and similarity files") {
    const auto dir = std::filesystem::temp_directory_path() / "whodet_test_evalkit";
    std::filesystem::create_directories(dir);
    const Scene s;
    write_ground_truth(s.gts, dir / "gt.jsonl");
    const auto back = read_ground_truth(dir / "gt.jsonl");
    REQUIRE(back.size() == s.gts.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].image == s.gts[i].image);
        CHECK(back[i].label == s.gts[i].label);
        CHECK(back[i].box == s.gts[i].box);
    }
    {
        std::ofstream f(dir / "sim.json");
        f << R"({"cow": ["sheep", "horse"]})";
    }
    const SimilarityMap sim = read_similarity(dir / "sim.json");
    CHECK(sim.at("cow") == std::vector<std::string>{"sheep", "horse"});
    std::filesystem::remove_all(dir);
}
