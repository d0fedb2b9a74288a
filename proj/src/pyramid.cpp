#include "whodet/pyramid.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "whodet/error.hpp"
#include "whodet/feature_io.hpp"
#include "whodet/hog.hpp"
#include "whodet/io_util.hpp"
#include "whodet/transform.hpp"

namespace whodet {

std::string to_string(ExtractorKind kind) {
    return kind == ExtractorKind::Hog ? "hog" : "precomputed";
}

ExtractorKind extractor_kind_from_string(const std::string& name) {
    if (name == "hog") return ExtractorKind::Hog;
    if (name == "precomputed") return ExtractorKind::Precomputed;
    throw ValidationError("unknown feature extractor '" + name + "' (expected hog or precomputed)");
}

bool FeatureExtractorConfig::operator==(const FeatureExtractorConfig& o) const {
    if (kind != o.kind || maxImageDimension != o.maxImageDimension) return false;
    if (kind == ExtractorKind::Hog) return hogCellSize == o.hogCellSize;
    return rawChannels == o.rawChannels && geometry == o.geometry && layers == o.layers;
}

void validate(const FeatureExtractorConfig& config) {
    if (config.maxImageDimension < 1) throw ValidationError("maxImageDimension must be at least 1");
    if (config.kind == ExtractorKind::Hog) {
        if (config.hogCellSize != hog::kCellSize)
            throw ValidationError("the built-in HOG extractor uses 8x8 cells, got " + std::to_string(config.hogCellSize));
    } else {
        if (config.rawChannels < 1) throw ValidationError("precomputed extractor needs rawChannels >= 1");
        if (config.layers < 1) throw ValidationError("precomputed extractor needs layers >= 1");
        validate(config.geometry);
    }
}

FeatureMap HogExtractor::extract(const Image& image) const { return extract_hog(image); }
CellGeometry HogExtractor::geometry() const { return {hog::kCellSize, hog::kCellSize, 0, 0}; }
int HogExtractor::channels() const { return hog::kChannels; }

std::unique_ptr<FeatureExtractor> make_extractor(const FeatureExtractorConfig& config) {
    validate(config);
    if (config.kind == ExtractorKind::Hog) return std::make_unique<HogExtractor>();
    throw ConfigMismatchError("the feature pipeline expects precomputed feature maps (a pyramid manifest), "
                              "not a raw image");
}

double pyramid_scale(double base, int index, int intervalsPerOctave) {
    const int octave = index / intervalsPerOctave;
    const int step = index % intervalsPerOctave;
    return std::ldexp(base * std::exp2(-static_cast<double>(step) / intervalsPerOctave), -octave);
}

FeaturePyramid build_pyramid(const Image& image, const FeatureExtractor& extractor,
                             const FeatureExtractorConfig& config, int intervalsPerOctave,
                             int minLevelCells) {
    if (intervalsPerOctave < 1) throw ValidationError("intervalsPerOctave must be at least 1");
    if (image.empty()) throw ValidationError("cannot build a pyramid from an empty image");
    validate(config);
    minLevelCells = std::max(minLevelCells, 1);

    const int largest = std::max(image.width(), image.height());
    double baseScale = 1.0;
    Image base = image;
    if (largest > config.maxImageDimension) {
        baseScale = static_cast<double>(config.maxImageDimension) / largest;
        const int w = std::max(1, static_cast<int>(std::lround(image.width() * baseScale)));
        const int h = std::max(1, static_cast<int>(std::lround(image.height() * baseScale)));
        base = resize_bilinear(image, w, h);
    }

    const CellGeometry g = extractor.geometry();
    FeaturePyramid pyramid;
    pyramid.intervalsPerOctave = intervalsPerOctave;
    pyramid.source = extractor.kind();
    pyramid.imageWidth = image.width();
    pyramid.imageHeight = image.height();
    for (int i = 0;; ++i) {
        const double scale = pyramid_scale(baseScale, i, intervalsPerOctave);
        const double rel = scale / baseScale;
        const int w = static_cast<int>(std::lround(base.width() * rel));
        const int h = static_cast<int>(std::lround(base.height() * rel));
        if ((w - 2 * g.borderX) / g.cellWidth < minLevelCells || (h - 2 * g.borderY) / g.cellHeight < minLevelCells)
            break;
        FeatureMap level = extractor.extract(resize_bilinear(base, w, h));
        if (level.width() < minLevelCells || level.height() < minLevelCells) break;
        level.setScale(scale);
        pyramid.levels.push_back(std::move(level));
    }
    return pyramid;
}

PyramidManifest read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const auto dir = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : dir / fp;
    };
    PyramidManifest m;
    try {
        m.image = j.value("image", std::string{});
        m.imageWidth = j.value("imageWidth", 0);
        m.imageHeight = j.value("imageHeight", 0);
        for (const auto& lv : j.at("levels")) {
            ManifestLevel level;
            level.scale = lv.at("scale").get<double>();
            if (lv.contains("files")) {
                for (const auto& f : lv.at("files")) level.files.push_back(resolve(f.get<std::string>()));
            } else {
                level.files.push_back(resolve(lv.at("file").get<std::string>()));
            }
            if (level.files.empty()) throw FormatError(path.string() + ": manifest level without files");
            m.levels.push_back(std::move(level));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid manifest: " + e.what());
    }
    return m;
}

void write_manifest(const PyramidManifest& manifest, const std::filesystem::path& path) {
    nlohmann::json j;
    j["image"] = manifest.image;
    if (manifest.imageWidth > 0) j["imageWidth"] = manifest.imageWidth;
    if (manifest.imageHeight > 0) j["imageHeight"] = manifest.imageHeight;
    j["levels"] = nlohmann::json::array();
    for (const auto& level : manifest.levels) {
        nlohmann::json lv;
        lv["scale"] = level.scale;
        if (level.files.size() == 1) {
            lv["file"] = level.files.front().string();
        } else {
            lv["files"] = nlohmann::json::array();
            for (const auto& f : level.files) lv["files"].push_back(f.string());
        }
        j["levels"].push_back(std::move(lv));
    }
    write_file_atomic(path, j.dump(2) + "\n");
}

FeaturePyramid build_pyramid(const PyramidManifest& manifest, int intervalsPerOctave, int minLevelCells) {
    if (intervalsPerOctave < 1) throw ValidationError("intervalsPerOctave must be at least 1");
    if (manifest.levels.empty()) throw ValidationError("manifest for '" + manifest.image + "' lists no levels");
    constexpr double kScaleTolerance = 1e-6;

    FeaturePyramid pyramid;
    pyramid.intervalsPerOctave = intervalsPerOctave;
    pyramid.source = ExtractorKind::Precomputed;
    const double base = manifest.levels.front().scale;
    for (std::size_t i = 0; i < manifest.levels.size(); ++i) {
        const ManifestLevel& lv = manifest.levels[i];
        const double expected = pyramid_scale(base, static_cast<int>(i), intervalsPerOctave);
        if (!(lv.scale > 0) || std::abs(lv.scale - expected) > kScaleTolerance * expected)
            throw ValidationError("manifest level " + std::to_string(i) + " has scale " + std::to_string(lv.scale) +
                                  ", expected " + std::to_string(expected) + " for " +
                                  std::to_string(intervalsPerOctave) + " intervals per octave");
        std::vector<FeatureMap> layers;
        for (const auto& file : lv.files) layers.push_back(load_feature_map(file));
        FeatureMap level = layers.size() == 1 ? std::move(layers.front()) : combine_layers(layers);
        if (std::abs(level.scale() - lv.scale) > kScaleTolerance * lv.scale)
            throw ValidationError("manifest level " + std::to_string(i) + ": file scale " +
                                  std::to_string(level.scale()) + " disagrees with manifest scale " +
                                  std::to_string(lv.scale));
        level.setScale(lv.scale);
        if (!pyramid.levels.empty()) {
            const FeatureMap& first = pyramid.levels.front();
            if (level.channels() != first.channels())
                throw ValidationError("manifest level " + std::to_string(i) + " has " + std::to_string(level.channels()) +
                                      " channels, level 0 has " + std::to_string(first.channels()));
            if (!(level.geometry() == first.geometry()))
                throw ValidationError("manifest level " + std::to_string(i) + " has a different cell geometry");
        }
        pyramid.levels.push_back(std::move(level));
    }

    const FeatureMap& first = pyramid.levels.front();
    pyramid.imageWidth = manifest.imageWidth > 0
                             ? manifest.imageWidth
                             : static_cast<int>(std::lround((first.width() * first.geometry().cellWidth +
                                                             2 * first.geometry().borderX) / first.scale()));
    pyramid.imageHeight = manifest.imageHeight > 0
                              ? manifest.imageHeight
                              : static_cast<int>(std::lround((first.height() * first.geometry().cellHeight +
                                                              2 * first.geometry().borderY) / first.scale()));
    std::erase_if(pyramid.levels, [&](const FeatureMap& m) {
        return m.width() < minLevelCells || m.height() < minLevelCells;
    });
    return pyramid;
}

}  // namespace whodet
