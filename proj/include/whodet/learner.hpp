#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "whodet/bgstats.hpp"
#include "whodet/box.hpp"
#include "whodet/feature_map.hpp"
#include "whodet/image.hpp"
#include "whodet/pipeline.hpp"

namespace whodet {

/// Model extent: width x height cells of `channels` features.
struct ModelShape {
    int width = 1;
    int height = 1;
    int channels = 1;

    std::int64_t dim() const noexcept { return std::int64_t{width} * height * channels; }
    bool operator==(const ModelShape&) const = default;
};

/// One linear template. score(window) = <filter, window> - bias; windows
/// scoring at or above `threshold` are reported as detections.
struct ModelComponent {
    FeatureMap filter;
    double bias = 0.0;
    double threshold = 0.0;
    FeatureMap positiveMean;  // empty when not retained

    ModelShape shape() const { return {filter.width(), filter.height(), filter.channels()}; }
};

inline constexpr std::uint64_t kDefaultCovarianceMemoryLimit = std::uint64_t{1} << 30;

struct LearnerConfig {
    /// Initial ridge as a fraction of the mean diagonal of the covariance.
    double relativeRegularizer = 1e-7;
    /// Absolute initial ridge; overrides relativeRegularizer when set.
    std::optional<double> regularizer;
    double escalationFactor = 10.0;
    int maxEscalations = 8;
    /// Refuse covariances whose estimate_covariance_bytes exceeds this.
    std::uint64_t memoryLimitBytes = kDefaultCovarianceMemoryLimit;
};

void validate(const LearnerConfig& config);

/// (M * N * F)^2 * 4 bytes. Throws ValidationError if the product overflows.
std::uint64_t estimate_covariance_bytes(const ModelShape& shape);

/// Covariance of an M x N x F window under the stationary background model.
/// Cells are enumerated row-major (index y * M + x) with channels fastest, the
/// same order as FeatureMap data; block (c, c') equals gamma(x' - x, y' - y).
Eigen::MatrixXd reconstruct_covariance(const BackgroundStats& stats, const ModelShape& shape,
                                       std::uint64_t memoryLimitBytes = kDefaultCovarianceMemoryLimit);

/// Tiled background mean of an M x N window, in FeatureMap order.
Eigen::VectorXd tiled_mean(const BackgroundStats& stats, const ModelShape& shape);

/// Cholesky factor of the regularized covariance S + lambda * I for one
/// window shape. lambda starts at the configured value and is multiplied by
/// the escalation factor until the factorization succeeds.
class Whitener {
public:
    Whitener(const BackgroundStats& stats, const ModelShape& shape, const LearnerConfig& config = {});

    const ModelShape& shape() const noexcept { return shape_; }
    double lambda() const noexcept { return lambda_; }
    int escalations() const noexcept { return escalations_; }
    const Eigen::VectorXd& mean() const noexcept { return mean_; }

    /// (S + lambda I)^-1 * rhs.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    /// (S + lambda I)^-1 * (x - tiled mean); the sample must have this shape.
    Eigen::VectorXd whiten(const FeatureMap& sample) const;

private:
    ModelShape shape_;
    Eigen::VectorXd mean_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double lambda_ = 0;
    int escalations_ = 0;
};

struct LdaResult {
    ModelComponent component;
    double lambda = 0;
    int escalations = 0;
};

/// w = (S + lambda I)^-1 (mean positive - tiled background mean), bias 0. The
/// threshold is initialised halfway between the mean positive and the mean
/// background score.
LdaResult learn_exemplar_lda(std::span<const FeatureMap> positives, const BackgroundStats& stats,
                             const LearnerConfig& config = {});

// ---------------------------------------------------------------------------
// Clustering

inline constexpr std::uint64_t kDefaultClusterSeed = 0x5eed;

/// Deterministic k-means (k-means++ seeding, Lloyd iterations) on the rows of
/// `points`. Rows are processed in lexicographic order, so the result does
/// not depend on the input order; labels are numbered by their first member
/// in that order and are compact (fewer than k when points coincide).
std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed = kDefaultClusterSeed);

/// k-means on log(height / width).
std::vector<int> cluster_by_aspect(std::span<const double> aspectRatios, int k,
                                   std::uint64_t seed = kDefaultClusterSeed);

/// k-means on feature vectors of equal length.
std::vector<int> cluster_by_features(std::span<const Eigen::VectorXd> features, int k,
                                     std::uint64_t seed = kDefaultClusterSeed);

struct ClusterSample {
    double aspectRatio = 1.0;  // height / width
    Eigen::VectorXd features;
};

/// Two-level clustering: aspect groups, then feature groups within each.
/// Returns a component index per sample, compact and ordered by aspect group.
std::vector<int> cluster_samples(std::span<const ClusterSample> samples, int nAspect, int nFeature,
                                 std::uint64_t seed = kDefaultClusterSeed);

// ---------------------------------------------------------------------------
// Positive samples

/// Model size in cells from the median aspect ratio of the sample boxes,
/// aiming for about 100 * (8 / cellWidth) * (8 / cellHeight) cells and
/// clamped to [1, min(radius + 1, 20)] per side.
std::pair<int, int> choose_model_size(std::span<const Box> boxes, const CellGeometry& geometry,
                                      int radius = kDefaultStatsRadius);

/// Feature tensor of `box` at the model's shape. The box is widened by
/// `contextCells` model cells on every side, resampled to
/// (M + 2c) * cellWidth + 2 * borderX by (N + 2c) * cellHeight + 2 * borderY
/// pixels, run through the pipeline, and the central M x N cells are kept.
FeatureMap extract_positive(const Image& image, const Box& box, const ModelShape& shape,
                            const FeaturePipeline& pipeline, int contextCells = 1);

/// Positive tensor from an already processed pyramid: the level whose scale
/// best maps the box onto M x N cells is cropped at the box position.
FeatureMap extract_positive_from_pyramid(const FeaturePyramid& pyramid, const Box& box, const ModelShape& shape);

}  // namespace whodet
