#pragma once

#include <complex>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "whodet/box.hpp"
#include "whodet/feature_map.hpp"
#include "whodet/learner.hpp"
#include "whodet/modelstore.hpp"
#include "whodet/pyramid.hpp"

namespace whodet {

/// Scores of every placement that lies fully inside a level.
struct ScoreMap {
    int width = 0;   // level width - M + 1, or 0
    int height = 0;  // level height - N + 1, or 0
    double levelScale = 1.0;
    std::vector<double> values;  // row-major

    double operator()(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const noexcept { return width == 0 || height == 0; }
};

/// Per-plane real-to-complex transforms of one feature level. Computed once
/// and shared by all components scored on the level.
class LevelSpectrum {
public:
    explicit LevelSpectrum(const FeatureMap& level);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    double scale() const noexcept { return scale_; }
    std::size_t planeSize() const noexcept { return planeSize_; }
    const std::complex<double>* plane(int c) const { return spectra_.data() + planeSize_ * c; }

private:
    int width_, height_, channels_;
    double scale_;
    std::size_t planeSize_;
    std::vector<std::complex<double>> spectra_;
};

/// score(x, y) = sum over filter cells and channels of filter * level window at (x, y), minus bias,
/// computed as a frequency-domain cross-correlation. A filter larger than the level gives an empty map.
ScoreMap convolve_score(const LevelSpectrum& spectrum, const ModelComponent& component);
ScoreMap convolve_score(const FeatureMap& level, const ModelComponent& component);

/// Direct sliding-window evaluation of the same sum.
ScoreMap naive_score(const FeatureMap& level, const ModelComponent& component);

struct Detection {
    std::string image;
    Box box;
    double score = 0;
    int component = 0;
    int level = 0;

    bool operator==(const Detection&) const = default;
};

/// Total order used for sorting and NMS: score descending, then area
/// ascending, x, y, w, h, component, level, image.
bool detection_before(const Detection& a, const Detection& b);

/// Pixel box of placement (x, y) on a level with the given geometry and scale.
Box placement_box(int x, int y, int M, int N, const CellGeometry& geometry, double levelScale);

/// Runs `model` on a raw pyramid. The model's pipeline is applied to every
/// level after checking that the pyramid comes from the same extractor.
/// `thresholds` overrides the per-component thresholds (one value per
/// component). Boxes are clamped to the image and results sorted by
/// detection_before.
std::vector<Detection> detect(const FeaturePyramid& rawPyramid, const DetectorModel& model,
                              std::span<const double> thresholds = {}, const std::string& image = {});

struct NmsConfig {
    double overlapThreshold = 0.4;
    /// Also drop a box whose intersection with a kept box covers more than
    /// this fraction of the smaller of the two.
    std::optional<double> nestedContainmentThreshold;
};

void validate(const NmsConfig& config);

/// Greedy suppression in detection_before order. Only detections of the same
/// image suppress each other.
std::vector<Detection> nms(std::vector<Detection> detections, const NmsConfig& config = {});

/// JSON lines {"image", "component", "score", "box": [x, y, w, h]}.
void write_detections(const std::vector<Detection>& detections, const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace whodet
