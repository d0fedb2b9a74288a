#include "whodet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

#include <fftw3.h>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

namespace {

struct PlanPair {
    fftw_plan forward;
    fftw_plan inverse;
};

/// FFTW planning is not thread-safe; plans are created once per size and
/// executed through the thread-safe new-array interface.
const PlanPair& plans_for(int height, int width) {
    static std::mutex mutex;
    static std::map<std::pair<int, int>, PlanPair> cache;
    const std::lock_guard lock(mutex);
    const auto key = std::make_pair(height, width);
    if (const auto it = cache.find(key); it != cache.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(height) * width;
    const std::size_t nc = static_cast<std::size_t>(height) * (width / 2 + 1);
    double* real = fftw_alloc_real(n);
    fftw_complex* spec = fftw_alloc_complex(nc);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    PlanPair p{fftw_plan_dft_r2c_2d(height, width, real, spec, flags),
               fftw_plan_dft_c2r_2d(height, width, spec, real, flags)};
    fftw_free(real);
    fftw_free(spec);
    if (!p.forward || !p.inverse) throw Error("FFT planning failed");
    return cache.emplace(key, p).first->second;
}

fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }

void check_component(const ModelComponent& component, int channels) {
    if (component.filter.empty()) throw ValidationError("component filter is empty");
    if (component.filter.channels() != channels)
        throw ValidationError("filter has " + std::to_string(component.filter.channels()) +
                              " channels, level has " + std::to_string(channels));
}

}  // namespace

LevelSpectrum::LevelSpectrum(const FeatureMap& level)
    : width_(level.width()), height_(level.height()), channels_(level.channels()), scale_(level.scale()),
      planeSize_(static_cast<std::size_t>(level.height()) * (level.width() / 2 + 1)) {
    if (level.empty()) throw ValidationError("cannot transform an empty feature level");
    const PlanPair& plans = plans_for(height_, width_);
    spectra_.resize(planeSize_ * channels_);
    std::vector<double> plane(level.cells());
    const auto data = level.data();
    for (int c = 0; c < channels_; ++c) {
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = data[i * channels_ + c];
        fftw_execute_dft_r2c(plans.forward, plane.data(), as_fftw(spectra_.data() + planeSize_ * c));
    }
}

ScoreMap convolve_score(const LevelSpectrum& spectrum, const ModelComponent& component) {
    check_component(component, spectrum.channels());
    const FeatureMap& f = component.filter;
    ScoreMap out;
    out.levelScale = spectrum.scale();
    if (f.width() > spectrum.width() || f.height() > spectrum.height()) return out;

    const int W = spectrum.width();
    const int H = spectrum.height();
    const PlanPair& plans = plans_for(H, W);
    const std::size_t n = static_cast<std::size_t>(W) * H;
    const std::size_t nc = spectrum.planeSize();
    std::vector<double> padded(n);
    std::vector<std::complex<double>> filterSpec(nc);
    std::vector<std::complex<double>> acc(nc, 0.0);
    for (int c = 0; c < f.channels(); ++c) {
        std::fill(padded.begin(), padded.end(), 0.0);
        for (int y = 0; y < f.height(); ++y)
            for (int x = 0; x < f.width(); ++x) padded[static_cast<std::size_t>(y) * W + x] = f(x, y, c);
        fftw_execute_dft_r2c(plans.forward, padded.data(), as_fftw(filterSpec.data()));
        const std::complex<double>* level = spectrum.plane(c);
        for (std::size_t k = 0; k < nc; ++k) acc[k] += std::conj(filterSpec[k]) * level[k];
    }
    std::vector<double> corr(n);
    fftw_execute_dft_c2r(plans.inverse, as_fftw(acc.data()), corr.data());

    out.width = W - f.width() + 1;
    out.height = H - f.height() + 1;
    out.values.resize(static_cast<std::size_t>(out.width) * out.height);
    const double norm = 1.0 / static_cast<double>(n);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.values[static_cast<std::size_t>(y) * out.width + x] =
                corr[static_cast<std::size_t>(y) * W + x] * norm - component.bias;
    return out;
}

ScoreMap convolve_score(const FeatureMap& level, const ModelComponent& component) {
    check_component(component, level.channels());
    if (component.filter.width() > level.width() || component.filter.height() > level.height()) {
        ScoreMap out;
        out.levelScale = level.scale();
        return out;
    }
    return convolve_score(LevelSpectrum(level), component);
}

ScoreMap naive_score(const FeatureMap& level, const ModelComponent& component) {
    check_component(component, level.channels());
    const FeatureMap& f = component.filter;
    ScoreMap out;
    out.levelScale = level.scale();
    if (f.width() > level.width() || f.height() > level.height()) return out;
    out.width = level.width() - f.width() + 1;
    out.height = level.height() - f.height() + 1;
    out.values.resize(static_cast<std::size_t>(out.width) * out.height);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double s = 0;
            for (int j = 0; j < f.height(); ++j)
                for (int i = 0; i < f.width(); ++i) {
                    const auto a = f.cell(i, j);
                    const auto b = level.cell(x + i, y + j);
                    for (std::size_t c = 0; c < a.size(); ++c) s += static_cast<double>(a[c]) * b[c];
                }
            out.values[static_cast<std::size_t>(y) * out.width + x] = s - component.bias;
        }
    return out;
}

bool detection_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    const double areaA = a.box.area(), areaB = b.box.area();
    return std::tie(areaA, a.box.x, a.box.y, a.box.w, a.box.h, a.component, a.level, a.image) <
           std::tie(areaB, b.box.x, b.box.y, b.box.w, b.box.h, b.component, b.level, b.image);
}

Box placement_box(int x, int y, int M, int N, const CellGeometry& g, double levelScale) {
    return {(x * g.cellWidth + g.borderX) / levelScale, (y * g.cellHeight + g.borderY) / levelScale,
            M * g.cellWidth / levelScale, N * g.cellHeight / levelScale};
}

namespace {

bool clamp_box(Box& b, int imageWidth, int imageHeight) {
    if (imageWidth <= 0 || imageHeight <= 0) return b.w > 0 && b.h > 0;
    const double x0 = std::clamp(b.x, 0.0, static_cast<double>(imageWidth));
    const double y0 = std::clamp(b.y, 0.0, static_cast<double>(imageHeight));
    const double x1 = std::clamp(b.x + b.w, 0.0, static_cast<double>(imageWidth));
    const double y1 = std::clamp(b.y + b.h, 0.0, static_cast<double>(imageHeight));
    b = {x0, y0, x1 - x0, y1 - y0};
    return b.w > 0 && b.h > 0;
}

}  // namespace

std::vector<Detection> detect(const FeaturePyramid& rawPyramid, const DetectorModel& model,
                              std::span<const double> thresholds, const std::string& image) {
    if (!thresholds.empty() && thresholds.size() != model.components.size())
        throw ValidationError("got " + std::to_string(thresholds.size()) + " thresholds for " +
                              std::to_string(model.components.size()) + " components");
    model.pipeline.checkCompatible(rawPyramid);

    std::vector<Detection> out;
    for (std::size_t li = 0; li < rawPyramid.levels.size(); ++li) {
        const FeatureMap level = model.pipeline.process(rawPyramid.levels[li]);
        std::optional<LevelSpectrum> spectrum;
        for (std::size_t ci = 0; ci < model.components.size(); ++ci) {
            const ModelComponent& comp = model.components[ci];
            if (comp.filter.width() > level.width() || comp.filter.height() > level.height()) continue;
            if (!spectrum) spectrum.emplace(level);
            const double threshold = thresholds.empty() ? comp.threshold : thresholds[ci];
            const ScoreMap scores = convolve_score(*spectrum, comp);
            for (int y = 0; y < scores.height; ++y)
                for (int x = 0; x < scores.width; ++x) {
                    const double s = scores(x, y);
                    if (!(s >= threshold)) continue;
                    Detection d;
                    d.image = image;
                    d.score = s;
                    d.component = static_cast<int>(ci);
                    d.level = static_cast<int>(li);
                    d.box = placement_box(x, y, comp.filter.width(), comp.filter.height(), level.geometry(),
                                          level.scale());
                    if (clamp_box(d.box, rawPyramid.imageWidth, rawPyramid.imageHeight)) out.push_back(std::move(d));
                }
        }
    }
    std::sort(out.begin(), out.end(), detection_before);
    return out;
}

void validate(const NmsConfig& config) {
    if (!(config.overlapThreshold > 0 && config.overlapThreshold <= 1))
        throw ValidationError("NMS overlap threshold must be in (0, 1]");
    if (config.nestedContainmentThreshold &&
        !(*config.nestedContainmentThreshold > 0 && *config.nestedContainmentThreshold <= 1))
        throw ValidationError("nested containment threshold must be in (0, 1]");
}

std::vector<Detection> nms(std::vector<Detection> detections, const NmsConfig& config) {
    validate(config);
    std::sort(detections.begin(), detections.end(), detection_before);
    std::vector<Detection> kept;
    for (auto& d : detections) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.image != d.image) continue;
            if (iou(k.box, d.box) > config.overlapThreshold) {
                suppressed = true;
                break;
            }
            if (config.nestedContainmentThreshold) {
                const double smaller = std::min(k.box.area(), d.box.area());
                if (smaller > 0 && intersection_area(k.box, d.box) / smaller > *config.nestedContainmentThreshold) {
                    suppressed = true;
                    break;
                }
            }
        }
        if (!suppressed) kept.push_back(std::move(d));
    }
    return kept;
}

void write_detections(const std::vector<Detection>& detections, const std::filesystem::path& path) {
    std::string text;
    for (const auto& d : detections) {
        const nlohmann::json j = {{"image", d.image},
                                  {"component", d.component},
                                  {"score", d.score},
                                  {"box", {d.box.x, d.box.y, d.box.w, d.box.h}}};
        text += j.dump() + "\n";
    }
    write_file_atomic(path, text);
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::vector<Detection> out;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(path)) {
        ++line;
        const std::string where = path.string() + ": record " + std::to_string(line);
        try {
            Detection d;
            d.image = j.at("image").get<std::string>();
            d.component = j.at("component").get<int>();
            d.score = j.at("score").get<double>();
            const auto& b = j.at("box");
            if (!b.is_array() || b.size() != 4) throw FormatError(where + ": box must be [x, y, w, h]");
            d.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            if (!std::isfinite(d.score) || !(d.box.w > 0) || !(d.box.h > 0))
                throw FormatError(where + ": score must be finite and the box non-empty");
            out.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return out;
}

}  // namespace whodet
