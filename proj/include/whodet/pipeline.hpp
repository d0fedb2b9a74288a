#pragma once

#include <optional>

#include "whodet/feature_map.hpp"
#include "whodet/image.hpp"
#include "whodet/pyramid.hpp"
#include "whodet/transform.hpp"

namespace whodet {

/// Everything needed to reproduce a model's features: the raw extractor and
/// the post-processing chain raw -> scale -> PCA. Stored inside model files.
struct FeaturePipeline {
    FeatureExtractorConfig extractor;
    std::optional<ChannelScaler> scaler;
    std::optional<PcaTransform> pca;

    /// Channels the extractor delivers before post-processing.
    int rawChannels() const;
    /// Channels after the whole chain.
    int outputChannels() const;
    CellGeometry geometry() const;

    /// Throws ValidationError if the stages disagree on channel counts.
    void validate() const;

    FeatureMap process(const FeatureMap& raw) const;
    FeaturePyramid process(const FeaturePyramid& raw) const;

    /// Raw pyramid for an image; throws ConfigMismatchError for precomputed pipelines.
    FeaturePyramid rawPyramid(const Image& image, int intervalsPerOctave, int minLevelCells) const;

    /// Throws ConfigMismatchError unless `raw` was produced by this pipeline's extractor.
    void checkCompatible(const FeaturePyramid& raw) const;
};

}  // namespace whodet
