#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "whodet/exact_sum.hpp"
#include "whodet/feature_map.hpp"

namespace whodet {

// ---------------------------------------------------------------------------
// Per-channel max scaling

/// Per-channel divisor mapping features to roughly [-1, 1].
struct ChannelScaler {
    std::vector<double> maxAbs;

    int channels() const { return static_cast<int>(maxAbs.size()); }
};

void validate(const ChannelScaler& scaler);

/// Running per-channel maximum of |value|; merge() is exact.
class ChannelMaximaAccumulator {
public:
    void add(const FeatureMap& map);
    void merge(const ChannelMaximaAccumulator& other);
    bool empty() const noexcept { return maps_ == 0; }
    std::uint64_t maps() const noexcept { return maps_; }

    /// Channels that never exceeded zero get maxAbs = 1.
    ChannelScaler finalize() const;

private:
    std::vector<double> max_;
    std::uint64_t maps_ = 0;
};

ChannelScaler learn_channel_maxima(std::span<const FeatureMap> maps);

/// Divides every value by its channel's maxAbs. Values of unseen data may leave [-1, 1].
FeatureMap apply_scaler(const FeatureMap& map, const ChannelScaler& scaler);

/// One decimal number per line, one line per channel.
void save_scaler(const ChannelScaler& scaler, const std::filesystem::path& path);
ChannelScaler load_scaler(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// PCA

/// x_hat = basis * (x - mean); basis rows are orthonormal principal axes in
/// order of decreasing variance.
struct PcaTransform {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;        // k x F
    Eigen::VectorXd eigenvalues;  // variance along each row of basis

    int inputDim() const { return static_cast<int>(basis.cols()); }
    int outputDim() const { return static_cast<int>(basis.rows()); }
};

void validate(const PcaTransform& pca);

/// Streaming sample count, sum and sum of outer products. Mergeable; merged
/// results are bit-identical to a single pass over the union.
class CovarianceAccumulator {
public:
    explicit CovarianceAccumulator(int dim = 0);

    int dim() const noexcept { return dim_; }
    std::uint64_t count() const noexcept { return count_; }

    void add(std::span<const double> sample);
    /// Every cell of the map is one sample.
    void add(const FeatureMap& map);
    void merge(const CovarianceAccumulator& other);

    Eigen::VectorXd mean() const;
    /// Unbiased sample covariance (divides by n - 1).
    Eigen::MatrixXd covariance() const;

private:
    void addBlock(const Eigen::MatrixXd& samples);  // rows are samples

    int dim_ = 0;
    std::uint64_t count_ = 0;
    std::vector<ExactSum> sum_;
    std::vector<ExactSum> outer_;  // upper triangle, row-major
};

/// Top-k eigenvectors of the sample covariance. Each basis row is signed so
/// that its largest-magnitude coefficient is positive.
PcaTransform learn_pca(const CovarianceAccumulator& acc, int k);
PcaTransform learn_pca(std::span<const std::vector<double>> cells, int k);

FeatureMap apply_pca(const FeatureMap& map, const PcaTransform& pca);

/// {"k": k, "F": F, "mean": [...], "basis": [[...], ...], "eigenvalues": [...]}
void save_pca(const PcaTransform& pca, const std::filesystem::path& path);
PcaTransform load_pca(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Multi-layer fusion

/// Concatenates maps of the same image at different cell sizes on the finest
/// grid. Coarser maps are upsampled by nearest neighbour: fine cell (x, y)
/// reads coarse cell (x * fine / coarse, y * fine / coarse), clamped to the
/// coarse map's bounds. Channel order follows input order.
FeatureMap combine_layers(std::span<const FeatureMap> maps);

}  // namespace whodet
