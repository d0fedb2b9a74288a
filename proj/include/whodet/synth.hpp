#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "whodet/box.hpp"
#include "whodet/evalkit.hpp"
#include "whodet/image.hpp"

namespace whodet {

/// Native size of the planted pattern: 5 x 4 HOG cells.
inline constexpr int kPatternWidth = 40;
inline constexpr int kPatternHeight = 32;
inline constexpr const char* kPatternClass = "pattern";

/// Smooth random shading, pixel noise and a few random rectangles and discs.
Image render_background(int width, int height, std::mt19937_64& rng);

/// Draws the fixed test pattern (dark frame around a light field crossed by
/// two dark diagonals) into `box`, antialiased by 4 x 4 supersampling.
void plant_pattern(Image& image, const Box& box);

struct SynthConfig {
    int trainImages = 50;
    int testImages = 50;
    int backgroundImages = 30;
    int width = 200;
    int height = 160;
    double minScale = 1.0;
    double maxScale = 2.0;
    std::uint64_t seed = 1;
};

struct SynthCorpus {
    std::vector<GroundTruth> train;
    std::vector<GroundTruth> test;
};

/// Writes bg/, train/ and test/ PPM images plus train.jsonl and test.jsonl
/// under `dir`. Each train and test image holds one pattern at a random
/// position and a scale drawn from [minScale, maxScale]. Image ids are file
/// stems. Output depends only on the config.
SynthCorpus write_synth_corpus(const std::filesystem::path& dir, const SynthConfig& config);

}  // namespace whodet
