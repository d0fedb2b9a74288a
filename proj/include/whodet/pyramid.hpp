#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "whodet/feature_map.hpp"
#include "whodet/image.hpp"

namespace whodet {

enum class ExtractorKind { Hog, Precomputed };

std::string to_string(ExtractorKind kind);
ExtractorKind extractor_kind_from_string(const std::string& name);

/// Which features a pipeline consumes. For precomputed features the raw
/// channel count, cell geometry and number of fused layers are recorded so a
/// model can reject feature files that were produced differently.
struct FeatureExtractorConfig {
    ExtractorKind kind = ExtractorKind::Hog;
    int hogCellSize = 8;
    std::filesystem::path manifest;  // informational only
    int maxImageDimension = 1024;
    int rawChannels = 0;             // precomputed only
    CellGeometry geometry{};         // precomputed only
    int layers = 1;                  // precomputed only

    bool operator==(const FeatureExtractorConfig& other) const;
};

void validate(const FeatureExtractorConfig& config);

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual FeatureMap extract(const Image& image) const = 0;
    virtual CellGeometry geometry() const = 0;
    virtual int channels() const = 0;
    virtual ExtractorKind kind() const = 0;
};

class HogExtractor final : public FeatureExtractor {
public:
    FeatureMap extract(const Image& image) const override;
    CellGeometry geometry() const override;
    int channels() const override;
    ExtractorKind kind() const override { return ExtractorKind::Hog; }
};

/// Image-based extractor for `config`. Precomputed configs have none and throw
/// ConfigMismatchError, since their features come from manifests.
std::unique_ptr<FeatureExtractor> make_extractor(const FeatureExtractorConfig& config);

/// Feature maps of one image at geometrically spaced scales, largest first.
/// Level scales are relative to the original image.
struct FeaturePyramid {
    std::vector<FeatureMap> levels;
    int intervalsPerOctave = 5;
    ExtractorKind source = ExtractorKind::Hog;
    int imageWidth = 0;
    int imageHeight = 0;

    int channels() const { return levels.empty() ? 0 : levels.front().channels(); }
};

/// Scale of level `index` relative to `base`: base * 2^(-index / intervals),
/// computed so that levels one octave apart differ by exactly a factor 2.
double pyramid_scale(double base, int index, int intervalsPerOctave);

/// Image pyramid: downscale so the larger side is at most maxImageDimension,
/// then extract levels at 2^(-i/intervals) until either side of a level has
/// fewer than `minLevelCells` cells.
FeaturePyramid build_pyramid(const Image& image, const FeatureExtractor& extractor,
                             const FeatureExtractorConfig& config, int intervalsPerOctave,
                             int minLevelCells);

struct ManifestLevel {
    double scale = 1.0;
    std::vector<std::filesystem::path> files;  // several files are fused with combine_layers
};

/// {"image": path, "levels": [{"scale": s, "file": path} | {"scale": s, "files": [...]}, ...]}
/// with optional "imageWidth"/"imageHeight". Relative paths resolve against the manifest directory.
struct PyramidManifest {
    std::string image;
    int imageWidth = 0;
    int imageHeight = 0;
    std::vector<ManifestLevel> levels;
};

PyramidManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const PyramidManifest& manifest, const std::filesystem::path& path);

/// Precomputed pyramid: levels are read from the manifest and checked against
/// the 2^(-1/intervals) scale schedule (1e-6 relative) and for consistent
/// channels and geometry. Levels below `minLevelCells` are dropped.
FeaturePyramid build_pyramid(const PyramidManifest& manifest, int intervalsPerOctave, int minLevelCells);

}  // namespace whodet
