#include "whodet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "whodet/error.hpp"

namespace whodet {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Pattern intensity at normalized coordinates (u, v) in [0, 1)^2.
float pattern_value(double u, double v) {
    if (u < 0.12 || u > 0.88 || v < 0.15 || v > 0.85) return 25.0f;
    if (std::abs(u - v) < 0.07 || std::abs(u + v - 1.0) < 0.07) return 40.0f;
    return 235.0f;
}

std::string numbered(const std::string& prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix.c_str(), i);
    return buf;
}

}  // namespace

Image render_background(int width, int height, std::mt19937_64& rng) {
    Image img(width, height);
    const double base = uniform(rng, 90, 170);
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i)
        waves.push_back({uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, 0, 2 * std::numbers::pi),
                         uniform(rng, 5, 20)});
    std::normal_distribution<double> noise(0.0, 6.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double v = base;
            for (const auto& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
            const double n = noise(rng);
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(std::clamp(v + n + 6 * c - 6, 0.0, 255.0));
        }

    const int clutter = std::uniform_int_distribution<int>(3, 7)(rng);
    for (int k = 0; k < clutter; ++k) {
        const double cx = uniform(rng, 0, width), cy = uniform(rng, 0, height);
        const double rx = uniform(rng, 4, 30), ry = uniform(rng, 4, 30);
        const float level = static_cast<float>(uniform(rng, 20, 235));
        const bool disc = uniform(rng, 0, 1) < 0.5;
        for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(height, static_cast<int>(cy + ry) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(cx - rx)); x < std::min(width, static_cast<int>(cx + rx) + 1); ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (disc && dx * dx + dy * dy > 1) continue;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = level;
            }
    }
    return img;
}

void plant_pattern(Image& image, const Box& box) {
    if (!(box.w > 0 && box.h > 0)) throw ValidationError("pattern box must have positive size");
    constexpr int kSub = 4;
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
    const int x1 = std::min(image.width(), static_cast<int>(std::ceil(box.x + box.w)));
    const int y1 = std::min(image.height(), static_cast<int>(std::ceil(box.y + box.h)));
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            double sum = 0;
            int inside = 0;
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = x + (sx + 0.5) / kSub, py = y + (sy + 0.5) / kSub;
                    const double u = (px - box.x) / box.w, v = (py - box.y) / box.h;
                    if (u < 0 || u >= 1 || v < 0 || v >= 1) continue;
                    sum += pattern_value(u, v);
                    ++inside;
                }
            if (inside == 0) continue;
            const double alpha = static_cast<double>(inside) / (kSub * kSub);
            const double value = sum / inside;
            for (int c = 0; c < 3; ++c)
                image.at(x, y, c) = static_cast<float>(alpha * value + (1 - alpha) * image.at(x, y, c));
        }
}

SynthCorpus write_synth_corpus(const std::filesystem::path& dir, const SynthConfig& config) {
    if (config.trainImages < 0 || config.testImages < 0 || config.backgroundImages < 0)
        throw ValidationError("image counts must be non-negative");
    if (!(config.minScale > 0 && config.maxScale >= config.minScale))
        throw ValidationError("pattern scales must satisfy 0 < min <= max");
    if (config.width < kPatternWidth * config.maxScale || config.height < kPatternHeight * config.maxScale)
        throw ValidationError("images are too small for the largest pattern");

    std::filesystem::create_directories(dir / "bg");
    std::filesystem::create_directories(dir / "train");
    std::filesystem::create_directories(dir / "test");
    std::mt19937_64 rng(config.seed);

    for (int i = 0; i < config.backgroundImages; ++i)
        write_ppm(render_background(config.width, config.height, rng), dir / "bg" / (numbered("bg", i) + ".ppm"));

    SynthCorpus corpus;
    const auto make_split = [&](const std::string& name, int count, std::vector<GroundTruth>& gts) {
        for (int i = 0; i < count; ++i) {
            Image img = render_background(config.width, config.height, rng);
            const double s = uniform(rng, config.minScale, config.maxScale);
            const double w = kPatternWidth * s, h = kPatternHeight * s;
            const Box box{std::floor(uniform(rng, 0, config.width - w)), std::floor(uniform(rng, 0, config.height - h)),
                          w, h};
            plant_pattern(img, box);
            const std::string id = numbered(name, i);
            write_ppm(img, dir / name / (id + ".ppm"));
            gts.push_back({id, kPatternClass, box, false});
        }
        write_ground_truth(gts, dir / (name + ".jsonl"));
    };
    make_split("train", config.trainImages, corpus.train);
    make_split("test", config.testImages, corpus.test);
    return corpus;
}

}  // namespace whodet
