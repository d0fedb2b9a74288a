#include "whodet/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

using nlohmann::json;

namespace {

std::unordered_map<std::string, std::vector<int>> index_by_image(std::span<const GroundTruth> gts) {
    std::unordered_map<std::string, std::vector<int>> idx;
    for (std::size_t i = 0; i < gts.size(); ++i) idx[gts[i].image].push_back(static_cast<int>(i));
    return idx;
}

const std::vector<int>& lookup(const std::unordered_map<std::string, std::vector<int>>& idx, const std::string& key) {
    static const std::vector<int> none;
    const auto it = idx.find(key);
    return it == idx.end() ? none : it->second;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_sorted(std::span<const Detection> detections) {
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].score > detections[i - 1].score)
            throw ValidationError("detections must be sorted by descending score");
}

/// AP of a ranked TP/FP sequence via the precision envelope.
double envelope_ap(std::span<const char> isTp, int totalGt) {
    if (totalGt <= 0) return 0.0;
    const std::size_t n = isTp.size();
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tp += isTp[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / totalGt;
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0, prevRecall = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!isTp[i]) continue;
        ap += (recall[i] - prevRecall) * precision[i];
        prevRecall = recall[i];
    }
    return ap;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path) {
    std::vector<GroundTruth> out;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(path)) {
        ++line;
        const std::string where = path.string() + ": record " + std::to_string(line);
        try {
            GroundTruth g;
            g.image = j.at("image").get<std::string>();
            g.label = j.at("class").get<std::string>();
            const auto& b = j.at("box");
            if (!b.is_array() || b.size() != 4) throw FormatError(where + ": box must be [x, y, w, h]");
            g.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            g.difficult = j.value("difficult", false);
            if (!(g.box.w > 0 && g.box.h > 0 && std::isfinite(g.box.x) && std::isfinite(g.box.y) &&
                  std::isfinite(g.box.w) && std::isfinite(g.box.h)))
                throw FormatError(where + ": ground-truth box must have positive finite dimensions");
            out.push_back(std::move(g));
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

void write_ground_truth(const std::vector<GroundTruth>& gts, const std::filesystem::path& path) {
    std::string text;
    for (const auto& g : gts)
        text += json{{"image", g.image},
                     {"class", g.label},
                     {"box", {g.box.x, g.box.y, g.box.w, g.box.h}},
                     {"difficult", g.difficult}}
                    .dump() +
                "\n";
    write_file_atomic(path, text);
}

int count_ground_truth(std::span<const GroundTruth> gts, const std::string& label) {
    return static_cast<int>(
        std::count_if(gts.begin(), gts.end(), [&](const GroundTruth& g) { return g.label == label && !g.difficult; }));
}

MatchResult match_detections(std::span<const Detection> detections, std::span<const GroundTruth> gts,
                             const std::string& label, double iouThreshold) {
    check_sorted(detections);
    const auto byImage = index_by_image(gts);
    std::vector<char> used(gts.size(), 0);
    MatchResult r;
    r.labels.reserve(detections.size());
    r.matchedGt.reserve(detections.size());
    for (const auto& d : detections) {
        int best = -1;
        double bestIou = -1;
        bool difficultHit = false;
        for (int gi : lookup(byImage, d.image)) {
            const GroundTruth& g = gts[static_cast<std::size_t>(gi)];
            if (g.label != label) continue;
            const double o = iou(d.box, g.box);
            if (g.difficult) {
                difficultHit = difficultHit || o >= iouThreshold;
                continue;
            }
            if (used[static_cast<std::size_t>(gi)]) continue;
            if (o > bestIou) {
                bestIou = o;
                best = gi;
            }
        }
        if (best >= 0 && bestIou >= iouThreshold) {
            used[static_cast<std::size_t>(best)] = 1;
            r.labels.push_back(MatchLabel::TruePositive);
            r.matchedGt.push_back(best);
        } else {
            r.labels.push_back(difficultHit ? MatchLabel::Ignored : MatchLabel::FalsePositive);
            r.matchedGt.push_back(-1);
        }
    }
    return r;
}

EvalReport compute_pr_ap(std::span<const MatchLabel> labels, int totalGt, std::span<const double> scores) {
    if (totalGt < 0) throw ValidationError("ground-truth count must be non-negative");
    if (!scores.empty() && scores.size() != labels.size())
        throw ValidationError("scores and labels differ in length");
    EvalReport rep;
    std::vector<char> isTp;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == MatchLabel::Ignored) continue;
        const bool tp = labels[i] == MatchLabel::TruePositive;
        isTp.push_back(tp ? 1 : 0);
        (tp ? rep.truePositives : rep.falsePositives) += 1;
        PrPoint p;
        p.score = scores.empty() ? 0.0 : scores[i];
        p.precision = static_cast<double>(rep.truePositives) / static_cast<double>(isTp.size());
        p.recall = totalGt > 0 ? static_cast<double>(rep.truePositives) / totalGt : 0.0;
        if (rep.truePositives > 0) {
            const double f1 = 2 * p.precision * p.recall / (p.precision + p.recall);
            if (f1 > rep.bestF1) {
                rep.bestF1 = f1;
                rep.bestThreshold = p.score;
            }
        }
        rep.prPoints.push_back(p);
    }
    if (rep.truePositives > totalGt)
        throw ValidationError("more true positives than ground-truth objects");
    rep.falseNegatives = totalGt - rep.truePositives;
    rep.noGroundTruth = totalGt == 0;
    if (scores.empty()) rep.bestThreshold.reset();
    rep.ap = envelope_ap(isTp, totalGt);
    return rep;
}

EvalReport evaluate(std::span<const Detection> detections, std::span<const GroundTruth> gts, const std::string& label,
                    double iouThreshold) {
    const MatchResult m = match_detections(detections, gts, label, iouThreshold);
    std::vector<double> scores;
    for (const auto& d : detections) scores.push_back(d.score);
    return compute_pr_ap(m.labels, count_ground_truth(gts, label), scores);
}

std::vector<std::optional<double>> best_component_thresholds(std::span<const Detection> detections,
                                                             std::span<const GroundTruth> gts,
                                                             const std::string& label, int components,
                                                             double iouThreshold) {
    std::vector<std::optional<double>> out(static_cast<std::size_t>(std::max(components, 0)));
    for (int c = 0; c < components; ++c) {
        std::vector<Detection> own;
        for (const auto& d : detections)
            if (d.component == c) own.push_back(d);
        std::stable_sort(own.begin(), own.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
        if (own.empty()) continue;
        out[static_cast<std::size_t>(c)] = evaluate(own, gts, label, iouThreshold).bestThreshold;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(FpType type) {
    switch (type) {
        case FpType::Localization: return "localization";
        case FpType::SimilarCategory: return "similar";
        case FpType::OtherCategory: return "other";
        case FpType::Background: return "background";
    }
    return "unknown";
}

SimilarityMap read_similarity(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw FormatError(path.string() + ": expected an object mapping class to similar classes");
    SimilarityMap out;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_array()) throw FormatError(path.string() + ": entry '" + key + "' must be an array of class names");
        for (const auto& v : value) {
            if (!v.is_string()) throw FormatError(path.string() + ": entry '" + key + "' must hold strings");
            out[key].push_back(v.get<std::string>());
        }
        out.try_emplace(key);
    }
    return out;
}

FpType classify_fp(const Detection& fp, const std::string& label, std::span<const GroundTruth> gts,
                   const SimilarityMap& similarity, std::vector<std::string>* warnings) {
    double sameClass = 0, similar = 0, other = 0;
    const auto sim = similarity.find(label);
    bool warned = false;
    for (const auto& g : gts) {
        if (g.image != fp.image) continue;
        const double o = iou(fp.box, g.box);
        if (g.label == label) {
            sameClass = std::max(sameClass, o);
        } else {
            if (sim == similarity.end()) {
                if (!warned && warnings && o >= kRelaxedOverlap)
                    warnings->push_back("class '" + label + "' has no similarity entry; treating '" + g.label +
                                        "' as non-similar");
                warned = warned || o >= kRelaxedOverlap;
            }
            const bool isSimilar = sim != similarity.end() &&
                                   std::find(sim->second.begin(), sim->second.end(), g.label) != sim->second.end();
            (isSimilar ? similar : other) = std::max(isSimilar ? similar : other, o);
        }
    }
    if (sameClass >= kRelaxedOverlap) return FpType::Localization;
    if (similar >= kRelaxedOverlap) return FpType::SimilarCategory;
    if (other >= kRelaxedOverlap) return FpType::OtherCategory;
    return FpType::Background;
}

ClassAnalysis analyze_class(std::span<const Detection> detections, std::span<const GroundTruth> gts,
                            const std::string& label, const SimilarityMap& similarity, double iouThreshold,
                            std::vector<std::string>* warnings) {
    const MatchResult m = match_detections(detections, gts, label, iouThreshold);
    ClassAnalysis a;
    a.label = label;
    a.totalGt = count_ground_truth(gts, label);
    const auto byImage = index_by_image(gts);
    std::set<std::string> warned;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (m.labels[i] == MatchLabel::Ignored) continue;
        a.detections.push_back(detections[i]);
        a.labels.push_back(m.labels[i]);
        a.matchedGt.push_back(m.matchedGt[i]);
        if (m.labels[i] == MatchLabel::TruePositive) {
            a.fpTypes.emplace_back();
            continue;
        }
        std::vector<GroundTruth> local;
        for (int gi : lookup(byImage, detections[i].image)) local.push_back(gts[static_cast<std::size_t>(gi)]);
        std::vector<std::string> w;
        a.fpTypes.emplace_back(classify_fp(detections[i], label, local, similarity, &w));
        if (warnings)
            for (auto& s : w)
                if (warned.insert(s).second) warnings->push_back(std::move(s));
    }
    return a;
}

std::vector<double> default_nstar_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 24; ++i) grid.push_back(std::exp2(-3.0 + 6.0 * i / 24.0));
    return grid;
}

std::optional<FpDistribution> fp_distribution(const ClassAnalysis& analysis, std::span<const GroundTruth> gts,
                                              std::span<const double> grid, std::vector<std::string>* warnings) {
    if (analysis.totalGt == 0) {
        if (warnings) warnings->push_back("class '" + analysis.label + "' has no ground truth; skipped");
        return std::nullopt;
    }
    if (analysis.detections.empty()) {
        if (warnings) warnings->push_back("class '" + analysis.label + "' has no detections; skipped");
        return std::nullopt;
    }
    const std::vector<double> defaults = default_nstar_grid();
    if (grid.empty()) grid = defaults;

    const MatchResult relaxed = match_detections(analysis.detections, gts, analysis.label, kRelaxedOverlap);
    const std::size_t n = analysis.detections.size();
    // Cumulative counts: 0 = TP, 1..4 = FP types, 5 = relaxed TP.
    std::vector<std::array<int, 6>> cum(n + 1, std::array<int, 6>{});
    for (std::size_t i = 0; i < n; ++i) {
        cum[i + 1] = cum[i];
        if (analysis.labels[i] == MatchLabel::TruePositive) ++cum[i + 1][0];
        else ++cum[i + 1][1 + static_cast<int>(analysis.fpTypes[i].value_or(FpType::Background))];
        if (relaxed.labels[i] == MatchLabel::TruePositive) ++cum[i + 1][5];
    }

    FpDistribution dist;
    dist.label = analysis.label;
    dist.totalGt = analysis.totalGt;
    for (double nStar : grid) {
        FpDistributionPoint p;
        p.nStar = nStar;
        const long long want = std::max<long long>(1, std::llround(nStar * analysis.totalGt));
        p.count = static_cast<int>(std::min<long long>(want, static_cast<long long>(n)));
        const auto& c = cum[static_cast<std::size_t>(p.count)];
        for (int t = 0; t < 5; ++t) p.fraction[static_cast<std::size_t>(t)] = static_cast<double>(c[static_cast<std::size_t>(t)]) / p.count;
        p.recallStrict = static_cast<double>(c[0]) / analysis.totalGt;
        p.recallRelaxed = static_cast<double>(c[5]) / analysis.totalGt;
        dist.points.push_back(p);
    }
    return dist;
}

ImpactReport impact_analysis(const ClassAnalysis& analysis, std::span<const GroundTruth> gts) {
    const std::size_t n = analysis.detections.size();
    ImpactReport rep;
    rep.label = analysis.label;
    std::vector<char> base(n);
    for (std::size_t i = 0; i < n; ++i) base[i] = analysis.labels[i] == MatchLabel::TruePositive;
    rep.baselineAp = envelope_ap(base, analysis.totalGt);

    std::set<int> baselineMatched;
    for (int g : analysis.matchedGt)
        if (g >= 0) baselineMatched.insert(g);

    for (FpType type : kFpTypes) {
        ImpactEntry e;
        e.type = type;
        std::vector<char> removed;
        for (std::size_t i = 0; i < n; ++i)
            if (base[i] || analysis.fpTypes[i] != type) removed.push_back(base[i]);
        e.removedAp = envelope_ap(removed, analysis.totalGt);
        e.removedDelta = e.removedAp - rep.baselineAp;

        if (type == FpType::Localization) {
            std::set<int> credited;
            std::vector<char> corrected;
            for (std::size_t i = 0; i < n; ++i) {
                if (base[i] || analysis.fpTypes[i] != type) {
                    corrected.push_back(base[i]);
                    continue;
                }
                int best = -1;
                double bestIou = 0;
                for (std::size_t g = 0; g < gts.size(); ++g) {
                    const GroundTruth& gt = gts[g];
                    if (gt.difficult || gt.label != analysis.label || gt.image != analysis.detections[i].image) continue;
                    const int gi = static_cast<int>(g);
                    if (baselineMatched.count(gi) || credited.count(gi)) continue;
                    const double o = iou(analysis.detections[i].box, gt.box);
                    if (o >= kRelaxedOverlap && o > bestIou) {
                        bestIou = o;
                        best = gi;
                    }
                }
                if (best >= 0) {
                    credited.insert(best);
                    corrected.push_back(1);
                }
            }
            e.correctedAp = envelope_ap(corrected, analysis.totalGt);
            e.correctedDelta = *e.correctedAp - rep.baselineAp;
        }
        rep.entries.push_back(e);
    }
    return rep;
}

// ---------------------------------------------------------------------------

json report_to_json(const EvalReport& report, const std::string& label) {
    json j = {{"class", label},
              {"ap", report.ap},
              {"bestF1", report.bestF1},
              {"bestThreshold", report.bestThreshold ? json(*report.bestThreshold) : json(nullptr)},
              {"truePositives", report.truePositives},
              {"falsePositives", report.falsePositives},
              {"falseNegatives", report.falseNegatives},
              {"noGroundTruth", report.noGroundTruth},
              {"detections", report.prPoints.size()}};
    return j;
}

void write_report_json(const EvalReport& report, const std::string& label, const std::filesystem::path& path) {
    write_file_atomic(path, report_to_json(report, label).dump(2) + "\n");
}

void write_pr_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::string text = "rank,score,recall,precision\n";
    for (std::size_t i = 0; i < report.prPoints.size(); ++i) {
        const auto& p = report.prPoints[i];
        text += std::to_string(i + 1) + "," + fmt(p.score) + "," + fmt(p.recall) + "," + fmt(p.precision) + "\n";
    }
    write_file_atomic(path, text);
}

void write_fp_distribution_csv(std::span<const FpDistribution> dists, const std::filesystem::path& path) {
    std::string text = "class,nstar,count,tp,localization,similar,other,background,recall_0.5,recall_0.1\n";
    for (const auto& d : dists)
        for (const auto& p : d.points) {
            text += d.label + "," + fmt(p.nStar) + "," + std::to_string(p.count);
            for (double f : p.fraction) text += "," + fmt(f);
            text += "," + fmt(p.recallStrict) + "," + fmt(p.recallRelaxed) + "\n";
        }
    write_file_atomic(path, text);
}

void write_impact_csv(std::span<const ImpactReport> reports, const std::filesystem::path& path) {
    std::string text = "class,type,baseline_ap,removed_ap,removed_delta,corrected_ap,corrected_delta\n";
    for (const auto& r : reports)
        for (const auto& e : r.entries) {
            text += r.label + "," + to_string(e.type) + "," + fmt(r.baselineAp) + "," + fmt(e.removedAp) + "," +
                    fmt(e.removedDelta) + "," + (e.correctedAp ? fmt(*e.correctedAp) : "") + "," +
                    (e.correctedDelta ? fmt(*e.correctedDelta) : "") + "\n";
        }
    write_file_atomic(path, text);
}

}  // namespace whodet
