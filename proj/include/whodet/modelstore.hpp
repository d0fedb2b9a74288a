#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "whodet/learner.hpp"
#include "whodet/pipeline.hpp"

namespace whodet {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelMagic = "whodet-model";

/// A mixture of linear templates together with the feature pipeline they were
/// trained on. See docs/model-format.md for the file layout.
struct DetectorModel {
    int formatVersion = kModelFormatVersion;
    std::string className;
    FeaturePipeline pipeline;
    int intervalsPerOctave = 5;
    std::vector<ModelComponent> components;
};

/// Throws ValidationError unless every component matches the pipeline's
/// output channels and all values are finite.
void validate(const DetectorModel& model);

nlohmann::json model_to_json(const DetectorModel& model);
/// `source` prefixes error messages. Throws VersionError, SchemaError or NonFiniteError.
DetectorModel model_from_json(const nlohmann::json& j, const std::string& source = "model");

/// Validates before writing; the file is replaced atomically.
void save_model(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_model(const std::filesystem::path& path);

}  // namespace whodet
