#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "whodet/box.hpp"
#include "whodet/detector.hpp"

namespace whodet {

struct GroundTruth {
    std::string image;
    std::string label;
    Box box;
    bool difficult = false;
};

/// JSON lines {"image", "class", "box": [x, y, w, h], "difficult"}.
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);
void write_ground_truth(const std::vector<GroundTruth>& gts, const std::filesystem::path& path);

/// Non-difficult ground truths of `label`.
int count_ground_truth(std::span<const GroundTruth> gts, const std::string& label);

enum class MatchLabel { TruePositive, FalsePositive, Ignored };

struct MatchResult {
    std::vector<MatchLabel> labels;  // one per detection
    std::vector<int> matchedGt;      // index into gts for true positives, else -1
};

/// Greedy VOC matching of detections of class `label`, in the given order
/// (which must be descending score). A detection is a true positive if the
/// unmatched, non-difficult ground truth of its class and image with the
/// highest IoU reaches `iouThreshold`; that ground truth is then consumed.
/// Detections that reach the threshold only on difficult ground truths are
/// Ignored.
MatchResult match_detections(std::span<const Detection> detections, std::span<const GroundTruth> gts,
                             const std::string& label, double iouThreshold = 0.5);

struct PrPoint {
    double recall = 0;
    double precision = 0;
    double score = 0;
};

struct EvalReport {
    std::vector<PrPoint> prPoints;  // one per ranked (non-ignored) detection
    double ap = 0;
    double bestF1 = 0;
    /// Score at the rank with the best F1; empty when there is no true positive.
    std::optional<double> bestThreshold;
    int truePositives = 0;
    int falsePositives = 0;
    int falseNegatives = 0;
    /// Set when totalGt is 0 and AP is reported as 0 by convention.
    bool noGroundTruth = false;
};

/// Precision/recall at every rank and AP as the area under the
/// non-increasing precision envelope (all-points interpolation). Ignored
/// labels are skipped. `scores` may be empty; otherwise it parallels labels.
EvalReport compute_pr_ap(std::span<const MatchLabel> labels, int totalGt, std::span<const double> scores = {});

/// Convenience: match and score in one step.
EvalReport evaluate(std::span<const Detection> detections, std::span<const GroundTruth> gts, const std::string& label,
                    double iouThreshold = 0.5);

/// F1-optimal threshold per component, evaluated on each component's own
/// detections. Components without a true positive get no value.
std::vector<std::optional<double>> best_component_thresholds(std::span<const Detection> detections,
                                                             std::span<const GroundTruth> gts,
                                                             const std::string& label, int components,
                                                             double iouThreshold = 0.5);

// ---------------------------------------------------------------------------
// False-positive analysis

enum class FpType { Localization, SimilarCategory, OtherCategory, Background };
inline constexpr std::array<FpType, 4> kFpTypes{FpType::Localization, FpType::SimilarCategory, FpType::OtherCategory,
                                                FpType::Background};

std::string to_string(FpType type);

/// class -> classes considered similar to it.
using SimilarityMap = std::map<std::string, std::vector<std::string>>;

/// {"cow": ["sheep", "horse", "dog"], ...}
SimilarityMap read_similarity(const std::filesystem::path& path);

inline constexpr double kRelaxedOverlap = 0.1;

/// Type of a false positive of a `label` detector, using IoU >= 0.1 against
/// ground truths of the same image: same class -> Localization (this covers
/// duplicates of matched objects), a similar class -> SimilarCategory, any
/// other class -> OtherCategory, nothing -> Background. A label missing from
/// `similarity` is treated as having no similar classes and adds a warning.
FpType classify_fp(const Detection& fp, const std::string& label, std::span<const GroundTruth> gts,
                   const SimilarityMap& similarity, std::vector<std::string>* warnings = nullptr);

/// Ranked detections of one class with their labels and false-positive types.
struct ClassAnalysis {
    std::string label;
    std::vector<Detection> detections;  // sorted, ignored detections removed
    std::vector<MatchLabel> labels;     // TruePositive or FalsePositive
    std::vector<int> matchedGt;
    std::vector<std::optional<FpType>> fpTypes;
    int totalGt = 0;
};

ClassAnalysis analyze_class(std::span<const Detection> detections, std::span<const GroundTruth> gts,
                            const std::string& label, const SimilarityMap& similarity, double iouThreshold = 0.5,
                            std::vector<std::string>* warnings = nullptr);

/// 25 log-spaced values from 1/8 to 8.
std::vector<double> default_nstar_grid();

struct FpDistributionPoint {
    double nStar = 0;
    int count = 0;                  // top detections considered
    std::array<double, 5> fraction{};  // true positive, then kFpTypes order
    double recallStrict = 0;        // recall at IoU 0.5
    double recallRelaxed = 0;       // recall at IoU 0.1
};

struct FpDistribution {
    std::string label;
    int totalGt = 0;
    std::vector<FpDistributionPoint> points;
};

/// Composition of the top max(1, round(N* x N_j)) detections (capped at the
/// available count) at every grid point. Classes without ground truth or
/// without detections are skipped with a warning.
std::optional<FpDistribution> fp_distribution(const ClassAnalysis& analysis, std::span<const GroundTruth> gts,
                                              std::span<const double> grid = {},
                                              std::vector<std::string>* warnings = nullptr);

struct ImpactEntry {
    FpType type = FpType::Background;
    double removedAp = 0;
    double removedDelta = 0;
    std::optional<double> correctedAp;  // Localization only
    std::optional<double> correctedDelta;
};

struct ImpactReport {
    std::string label;
    double baselineAp = 0;
    std::vector<ImpactEntry> entries;  // kFpTypes order
};

/// AP after deleting each false-positive type, and for Localization also
/// after turning those detections into true positives: in rank order each
/// one claims the best-overlapping (IoU >= 0.1) same-class ground truth that
/// was neither matched in the baseline nor claimed before; without one it is
/// deleted.
ImpactReport impact_analysis(const ClassAnalysis& analysis, std::span<const GroundTruth> gts);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json report_to_json(const EvalReport& report, const std::string& label);
void write_report_json(const EvalReport& report, const std::string& label, const std::filesystem::path& path);
/// rank,score,recall,precision
void write_pr_csv(const EvalReport& report, const std::filesystem::path& path);
/// class,nstar,count,tp,localization,similar,other,background,recall_0.5,recall_0.1
void write_fp_distribution_csv(std::span<const FpDistribution> dists, const std::filesystem::path& path);
/// class,type,baseline_ap,removed_ap,removed_delta,corrected_ap,corrected_delta
void write_impact_csv(std::span<const ImpactReport> reports, const std::filesystem::path& path);

}  // namespace whodet
