#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "whodet/exact_sum.hpp"
#include "whodet/feature_map.hpp"
#include "whodet/pyramid.hpp"

namespace whodet {

inline constexpr int kDefaultStatsRadius = 19;

/// Offsets (u, v) stored explicitly: u = 0 with v in [0, R], then u in [1, R]
/// with v in [-R, R]. The remaining offsets follow from
/// gamma(-u, -v) = gamma(u, v)^T.
std::vector<std::pair<int, int>> stored_offsets(int radius);

/// Stationary background model: mean feature cell and spatial
/// autocorrelation gamma(u, v) = E[(x_p - mu)(x_{p + (u, v)} - mu)^T], with u
/// the horizontal and v the vertical cell offset.
class BackgroundStats {
public:
    BackgroundStats() = default;
    BackgroundStats(int channels, int radius, Eigen::VectorXd mean, std::vector<Eigen::MatrixXd> gammas,
                    std::uint64_t cellCount, std::vector<std::uint64_t> pairCounts = {});

    int channels() const noexcept { return channels_; }
    int radius() const noexcept { return radius_; }
    const Eigen::VectorXd& mean() const noexcept { return mean_; }
    std::uint64_t cellCount() const noexcept { return cellCount_; }

    /// gamma(u, v) for |u|, |v| <= radius.
    Eigen::MatrixXd gamma(int u, int v) const;

    /// Stored matrix and whether it must be transposed to obtain gamma(u, v).
    std::pair<const Eigen::MatrixXd*, bool> gammaRef(int u, int v) const;

    /// Contributing cell pairs per stored offset (empty for stats loaded from disk).
    std::span<const std::uint64_t> pairCounts() const noexcept { return pairCounts_; }
    std::span<const Eigen::MatrixXd> storedGammas() const noexcept { return gammas_; }

private:
    int channels_ = 0;
    int radius_ = 0;
    Eigen::VectorXd mean_;
    std::vector<Eigen::MatrixXd> gammas_;
    std::uint64_t cellCount_ = 0;
    std::vector<std::uint64_t> pairCounts_;
};

/// Mergeable accumulator for BackgroundStats.
///
/// Holds exact fixed-point sums of cells, and per offset the raw products
/// sum x_p x_q^T plus the first and second element sums of each pair. The
/// global mean is applied only in finalize(), so partial accumulators over
/// disjoint corpora merge into exactly the single-pass result.
class BackgroundStatsAccumulator {
public:
    BackgroundStatsAccumulator(int channels, int radius);

    int channels() const noexcept { return channels_; }
    int radius() const noexcept { return radius_; }
    std::uint64_t cellCount() const noexcept { return cellCount_; }

    void add(const FeatureMap& level);
    /// Every level contributes.
    void add(const FeaturePyramid& pyramid);
    void merge(const BackgroundStatsAccumulator& other);

    BackgroundStats finalize() const;

    bool operator==(const BackgroundStatsAccumulator&) const = default;

private:
    int channels_;
    int radius_;
    std::vector<std::pair<int, int>> offsets_;
    std::uint64_t cellCount_ = 0;
    std::vector<ExactSum> cellSum_;                 // F
    std::vector<std::uint64_t> pairCount_;          // per offset
    std::vector<std::vector<ExactSum>> products_;   // per offset, F*F row-major
    std::vector<std::vector<ExactSum>> firstSum_;   // per offset, F
    std::vector<std::vector<ExactSum>> secondSum_;  // per offset, F
};

BackgroundStats learn_stats(std::span<const FeaturePyramid> pyramids, int radius = kDefaultStatsRadius);

BackgroundStatsAccumulator merge_stats(const BackgroundStatsAccumulator& a, const BackgroundStatsAccumulator& b);

/// "WBG1" binary: u32 F, u32 R, u64 cellCount, F f64 mean, then each stored
/// offset's F x F f64 matrix in row-major order.
void save_stats(const BackgroundStats& stats, const std::filesystem::path& path);
BackgroundStats load_stats(const std::filesystem::path& path);

}  // namespace whodet
