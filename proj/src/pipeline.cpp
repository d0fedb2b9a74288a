#include "whodet/pipeline.hpp"

#include "whodet/error.hpp"
#include "whodet/hog.hpp"

namespace whodet {

int FeaturePipeline::rawChannels() const {
    return extractor.kind == ExtractorKind::Hog ? hog::kChannels : extractor.rawChannels;
}

int FeaturePipeline::outputChannels() const {
    return pca ? pca->outputDim() : rawChannels();
}

CellGeometry FeaturePipeline::geometry() const {
    if (extractor.kind == ExtractorKind::Hog) return {extractor.hogCellSize, extractor.hogCellSize, 0, 0};
    return extractor.geometry;
}

void FeaturePipeline::validate() const {
    whodet::validate(extractor);
    if (scaler) {
        whodet::validate(*scaler);
        if (scaler->channels() != rawChannels())
            throw ValidationError("scaler has " + std::to_string(scaler->channels()) + " channels, extractor delivers " +
                                  std::to_string(rawChannels()));
    }
    if (pca) {
        whodet::validate(*pca);
        if (pca->inputDim() != rawChannels())
            throw ValidationError("PCA expects " + std::to_string(pca->inputDim()) + " channels, extractor delivers " +
                                  std::to_string(rawChannels()));
    }
}

FeatureMap FeaturePipeline::process(const FeatureMap& raw) const {
    if (raw.channels() != rawChannels())
        throw ConfigMismatchError("feature map has " + std::to_string(raw.channels()) +
                                  " channels, the pipeline expects " + std::to_string(rawChannels()));
    if (!scaler && !pca) return raw;
    FeatureMap out = scaler ? apply_scaler(raw, *scaler) : raw;
    if (pca) out = apply_pca(out, *pca);
    return out;
}

FeaturePyramid FeaturePipeline::process(const FeaturePyramid& raw) const {
    checkCompatible(raw);
    FeaturePyramid out = raw;
    for (auto& level : out.levels) level = process(level);
    return out;
}

FeaturePyramid FeaturePipeline::rawPyramid(const Image& image, int intervalsPerOctave, int minLevelCells) const {
    const auto ex = make_extractor(extractor);
    return build_pyramid(image, *ex, extractor, intervalsPerOctave, minLevelCells);
}

void FeaturePipeline::checkCompatible(const FeaturePyramid& raw) const {
    if (raw.source != extractor.kind)
        throw ConfigMismatchError("pyramid was built with '" + to_string(raw.source) + "' features, the model uses '" +
                                  to_string(extractor.kind) + "' features");
    if (raw.levels.empty()) return;
    const FeatureMap& first = raw.levels.front();
    if (first.channels() != rawChannels())
        throw ConfigMismatchError("pyramid has " + std::to_string(first.channels()) + " raw channels, the model expects " +
                                  std::to_string(rawChannels()));
    if (!(first.geometry() == geometry()))
        throw ConfigMismatchError("pyramid cell geometry differs from the model's feature geometry");
}

}  // namespace whodet
