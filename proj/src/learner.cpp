#include "whodet/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "whodet/error.hpp"

namespace whodet {

namespace {

std::string shape_string(int w, int h, int c) {
    return std::to_string(w) + "x" + std::to_string(h) + "x" + std::to_string(c);
}

void check_shape(const ModelShape& shape) {
    if (shape.width < 1 || shape.height < 1 || shape.channels < 1)
        throw ValidationError("model shape " + shape_string(shape.width, shape.height, shape.channels) +
                              " must be at least 1x1x1");
}

Eigen::VectorXd to_vector(const FeatureMap& map) {
    const auto d = map.data();
    Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i) v[static_cast<Eigen::Index>(i)] = d[i];
    return v;
}

FeatureMap to_map(const Eigen::VectorXd& v, const ModelShape& shape) {
    FeatureMap out(shape.width, shape.height, shape.channels);
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(v[static_cast<Eigen::Index>(i)]);
    return out;
}

}  // namespace

void validate(const LearnerConfig& config) {
    if (config.regularizer && !(*config.regularizer > 0 && std::isfinite(*config.regularizer)))
        throw ValidationError("regularizer must be positive and finite");
    if (!(config.relativeRegularizer > 0 && std::isfinite(config.relativeRegularizer)))
        throw ValidationError("relative regularizer must be positive and finite");
    if (!(config.escalationFactor > 1 && std::isfinite(config.escalationFactor)))
        throw ValidationError("regularizer escalation factor must exceed 1");
    if (config.maxEscalations < 0) throw ValidationError("maximum escalations must be non-negative");
}

std::uint64_t estimate_covariance_bytes(const ModelShape& shape) {
    check_shape(shape);
    std::uint64_t dim = 0, sq = 0, bytes = 0;
    if (__builtin_mul_overflow(static_cast<std::uint64_t>(shape.width), static_cast<std::uint64_t>(shape.height), &dim) ||
        __builtin_mul_overflow(dim, static_cast<std::uint64_t>(shape.channels), &dim) ||
        __builtin_mul_overflow(dim, dim, &sq) || __builtin_mul_overflow(sq, std::uint64_t{4}, &bytes))
        throw ValidationError("covariance size for " + shape_string(shape.width, shape.height, shape.channels) +
                              " overflows 64 bits");
    return bytes;
}

Eigen::MatrixXd reconstruct_covariance(const BackgroundStats& stats, const ModelShape& shape,
                                       std::uint64_t memoryLimitBytes) {
    check_shape(shape);
    if (shape.channels != stats.channels())
        throw ValidationError("model has " + std::to_string(shape.channels) + " channels, statistics have " +
                              std::to_string(stats.channels()));
    if (shape.width - 1 > stats.radius() || shape.height - 1 > stats.radius())
        throw RadiusError("model of " + std::to_string(shape.width) + "x" + std::to_string(shape.height) +
                          " cells needs statistics radius " + std::to_string(std::max(shape.width, shape.height) - 1) +
                          ", statistics have radius " + std::to_string(stats.radius()));
    const std::uint64_t bytes = estimate_covariance_bytes(shape);
    if (bytes > memoryLimitBytes)
        throw MemoryLimitError("covariance for " + shape_string(shape.width, shape.height, shape.channels) + " needs " +
                                   std::to_string(bytes) + " bytes, limit is " + std::to_string(memoryLimitBytes),
                               bytes);

    const int M = shape.width;
    const int N = shape.height;
    const int F = shape.channels;
    const int cells = M * N;
    const Eigen::Index D = static_cast<Eigen::Index>(cells) * F;
    Eigen::MatrixXd S(D, D);
    const Eigen::MatrixXd diag = 0.5 * (stats.gamma(0, 0) + stats.gamma(0, 0).transpose());
    for (int a = 0; a < cells; ++a) {
        const int xa = a % M, ya = a / M;
        S.block(Eigen::Index{a} * F, Eigen::Index{a} * F, F, F) = diag;
        for (int b = a + 1; b < cells; ++b) {
            const int xb = b % M, yb = b / M;
            const auto [g, transposed] = stats.gammaRef(xb - xa, yb - ya);
            auto upper = S.block(Eigen::Index{a} * F, Eigen::Index{b} * F, F, F);
            auto lower = S.block(Eigen::Index{b} * F, Eigen::Index{a} * F, F, F);
            if (transposed) {
                upper = g->transpose();
                lower = *g;
            } else {
                upper = *g;
                lower = g->transpose();
            }
        }
    }
    return S;
}

Eigen::VectorXd tiled_mean(const BackgroundStats& stats, const ModelShape& shape) {
    check_shape(shape);
    if (shape.channels != stats.channels())
        throw ValidationError("model has " + std::to_string(shape.channels) + " channels, statistics have " +
                              std::to_string(stats.channels()));
    return stats.mean().replicate(shape.width * shape.height, 1);
}

// ---------------------------------------------------------------------------

Whitener::Whitener(const BackgroundStats& stats, const ModelShape& shape, const LearnerConfig& config)
    : shape_(shape) {
    validate(config);
    Eigen::MatrixXd S = reconstruct_covariance(stats, shape, config.memoryLimitBytes);
    mean_ = tiled_mean(stats, shape);

    double lambda = config.regularizer ? *config.regularizer : config.relativeRegularizer * S.diagonal().mean();
    if (!(lambda > 0)) lambda = config.relativeRegularizer;
    const Eigen::VectorXd original = S.diagonal();
    for (int attempt = 0; attempt <= config.maxEscalations; ++attempt) {
        S.diagonal() = original.array() + lambda;
        llt_.compute(S);
        if (llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().allFinite()) {
            lambda_ = lambda;
            escalations_ = attempt;
            return;
        }
        lambda *= config.escalationFactor;
    }
    throw NumericalError("Cholesky factorization failed for " +
                         shape_string(shape.width, shape.height, shape.channels) + " after " +
                         std::to_string(config.maxEscalations) + " regularizer escalations (last lambda " +
                         std::to_string(lambda / config.escalationFactor) + ")");
}

Eigen::VectorXd Whitener::solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != mean_.size())
        throw ValidationError("right-hand side has " + std::to_string(rhs.size()) + " entries, expected " +
                              std::to_string(mean_.size()));
    return llt_.solve(rhs);
}

Eigen::VectorXd Whitener::whiten(const FeatureMap& sample) const {
    if (sample.width() != shape_.width || sample.height() != shape_.height || sample.channels() != shape_.channels)
        throw ValidationError("sample is " + shape_string(sample.width(), sample.height(), sample.channels()) +
                              ", whitener expects " + shape_string(shape_.width, shape_.height, shape_.channels));
    return solve(to_vector(sample) - mean_);
}

LdaResult learn_exemplar_lda(std::span<const FeatureMap> positives, const BackgroundStats& stats,
                             const LearnerConfig& config) {
    if (positives.empty()) throw ValidationError("exemplar LDA needs at least one positive sample");
    const FeatureMap& first = positives.front();
    const ModelShape shape{first.width(), first.height(), first.channels()};
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(shape.dim());
    for (std::size_t i = 0; i < positives.size(); ++i) {
        const FeatureMap& p = positives[i];
        if (p.width() != shape.width || p.height() != shape.height || p.channels() != shape.channels)
            throw ValidationError("positive " + std::to_string(i) + " is " +
                                  shape_string(p.width(), p.height(), p.channels()) + ", expected " +
                                  shape_string(shape.width, shape.height, shape.channels));
        p.checkFinite();
        sum += to_vector(p);
    }
    const Eigen::VectorXd positiveMean = sum / static_cast<double>(positives.size());

    const Whitener whitener(stats, shape, config);
    const Eigen::VectorXd w = whitener.solve(positiveMean - whitener.mean());
    if (!w.allFinite()) throw NumericalError("exemplar LDA produced non-finite filter values");

    LdaResult result;
    result.component.filter = to_map(w, shape);
    result.component.positiveMean = to_map(positiveMean, shape);
    result.component.bias = 0.0;
    result.component.threshold = 0.5 * (w.dot(positiveMean) + w.dot(whitener.mean()));
    result.lambda = whitener.lambda();
    result.escalations = whitener.escalations();
    return result;
}

// ---------------------------------------------------------------------------

std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
    const Eigen::Index n = points.rows();
    if (k < 1) throw ValidationError("cluster count must be at least 1");
    if (n < k)
        throw ValidationError("cannot form " + std::to_string(k) + " clusters from " + std::to_string(n) + " samples");
    if (!points.allFinite()) throw ValidationError("clustering input contains non-finite values");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < points.cols(); ++c)
            if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
        return false;
    });
    Eigen::MatrixXd P(n, points.cols());
    for (Eigen::Index i = 0; i < n; ++i) P.row(i) = points.row(order[static_cast<std::size_t>(i)]);

    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> seeds{std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)};
    Eigen::VectorXd dist2 = (P.rowwise() - P.row(seeds[0])).rowwise().squaredNorm();
    while (static_cast<int>(seeds.size()) < k) {
        const double total = dist2.sum();
        if (!(total > 0)) break;
        const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0;
        Eigen::Index pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += dist2[i];
            if (acc > r && dist2[i] > 0) {
                pick = i;
                break;
            }
        }
        while (dist2[pick] == 0 && pick > 0) --pick;
        seeds.push_back(pick);
        dist2 = dist2.cwiseMin((P.rowwise() - P.row(pick)).rowwise().squaredNorm());
    }

    const int K = static_cast<int>(seeds.size());
    Eigen::MatrixXd centers(K, P.cols());
    for (int c = 0; c < K; ++c) centers.row(c) = P.row(seeds[static_cast<std::size_t>(c)]);

    std::vector<int> label(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double bestD = std::numeric_limits<double>::infinity();
            for (int c = 0; c < K; ++c) {
                const double d = (P.row(i) - centers.row(c)).squaredNorm();
                if (d < bestD) {
                    bestD = d;
                    best = c;
                }
            }
            if (label[static_cast<std::size_t>(i)] != best) {
                label[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, P.cols());
        std::vector<int> counts(static_cast<std::size_t>(K), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(label[static_cast<std::size_t>(i)]) += P.row(i);
            ++counts[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < K; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }

    std::vector<int> remap(static_cast<std::size_t>(K), -1);
    int next = 0;
    std::vector<int> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        int& r = remap[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
        if (r < 0) r = next++;
        out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = r;
    }
    return out;
}

std::vector<int> cluster_by_aspect(std::span<const double> aspectRatios, int k, std::uint64_t seed) {
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(aspectRatios.size()), 1);
    for (std::size_t i = 0; i < aspectRatios.size(); ++i) {
        if (!(aspectRatios[i] > 0 && std::isfinite(aspectRatios[i])))
            throw ValidationError("aspect ratio of sample " + std::to_string(i) + " must be positive and finite");
        pts(static_cast<Eigen::Index>(i), 0) = std::log(aspectRatios[i]);
    }
    return kmeans(pts, k, seed);
}

std::vector<int> cluster_by_features(std::span<const Eigen::VectorXd> features, int k, std::uint64_t seed) {
    if (features.empty()) return kmeans(Eigen::MatrixXd(0, 0), k, seed);
    const Eigen::Index d = features.front().size();
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(features.size()), d);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d)
            throw ValidationError("feature vector " + std::to_string(i) + " has length " +
                                  std::to_string(features[i].size()) + ", expected " + std::to_string(d));
        pts.row(static_cast<Eigen::Index>(i)) = features[i].transpose();
    }
    return kmeans(pts, k, seed);
}

std::vector<int> cluster_samples(std::span<const ClusterSample> samples, int nAspect, int nFeature,
                                 std::uint64_t seed) {
    if (nAspect < 1 || nFeature < 1) throw ValidationError("cluster counts must be at least 1");
    if (samples.size() < static_cast<std::size_t>(nAspect) * nFeature)
        throw ValidationError("cannot form " + std::to_string(nAspect) + "x" + std::to_string(nFeature) +
                              " clusters from " + std::to_string(samples.size()) + " samples");
    std::vector<double> aspects;
    for (const auto& s : samples) aspects.push_back(s.aspectRatio);
    const std::vector<int> groups = cluster_by_aspect(aspects, nAspect, seed);
    const int nGroups = *std::max_element(groups.begin(), groups.end()) + 1;

    std::vector<int> out(samples.size());
    int offset = 0;
    for (int g = 0; g < nGroups; ++g) {
        std::vector<std::size_t> members;
        std::vector<Eigen::VectorXd> feats;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (groups[i] == g) {
                members.push_back(i);
                feats.push_back(samples[i].features);
            }
        const int k = std::min<int>(nFeature, static_cast<int>(members.size()));
        const std::vector<int> sub = cluster_by_features(feats, k, seed);
        int used = 0;
        for (std::size_t j = 0; j < members.size(); ++j) {
            out[members[j]] = offset + sub[j];
            used = std::max(used, sub[j] + 1);
        }
        offset += used;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::pair<int, int> choose_model_size(std::span<const Box> boxes, const CellGeometry& geometry, int radius) {
    validate(geometry);
    if (boxes.empty()) throw ValidationError("model size selection needs at least one sample box");
    if (radius < 0) throw ValidationError("statistics radius must be non-negative");
    std::vector<double> aspects;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        if (!(boxes[i].w > 0 && boxes[i].h > 0 && std::isfinite(boxes[i].w) && std::isfinite(boxes[i].h)))
            throw ValidationError("sample box " + std::to_string(i) + " has a zero or invalid dimension");
        aspects.push_back(boxes[i].h / boxes[i].w);
    }
    std::sort(aspects.begin(), aspects.end());
    const std::size_t mid = aspects.size() / 2;
    const double aspect = aspects.size() % 2 ? aspects[mid] : 0.5 * (aspects[mid - 1] + aspects[mid]);
    const double target = 100.0 * (8.0 / geometry.cellWidth) * (8.0 / geometry.cellHeight);
    const int limit = std::min(radius + 1, 20);
    const double m = std::round(std::sqrt(target / aspect));
    const double n = std::round(m * aspect);
    const int M = static_cast<int>(std::clamp(m, 1.0, static_cast<double>(limit)));
    const int N = static_cast<int>(std::clamp(n, 1.0, static_cast<double>(limit)));
    return {M, N};
}

FeatureMap extract_positive(const Image& image, const Box& box, const ModelShape& shape,
                            const FeaturePipeline& pipeline, int contextCells) {
    check_shape(shape);
    if (contextCells < 0) throw ValidationError("context must be non-negative");
    if (!(box.w > 0 && box.h > 0)) throw ValidationError("positive box has a zero dimension");
    constexpr double kSlack = 1e-6;
    if (box.x < -kSlack || box.y < -kSlack || box.x + box.w > image.width() + kSlack ||
        box.y + box.h > image.height() + kSlack)
        throw ValidationError("positive box lies outside the image");
    if (pipeline.outputChannels() != shape.channels)
        throw ValidationError("pipeline delivers " + std::to_string(pipeline.outputChannels()) +
                              " channels, model shape has " + std::to_string(shape.channels));

    const CellGeometry g = pipeline.geometry();
    const double pxPerCellX = box.w / shape.width;
    const double pxPerCellY = box.h / shape.height;
    const double borderSrcX = g.borderX * pxPerCellX / g.cellWidth;
    const double borderSrcY = g.borderY * pxPerCellY / g.cellHeight;
    const double x0 = box.x - contextCells * pxPerCellX - borderSrcX;
    const double y0 = box.y - contextCells * pxPerCellY - borderSrcY;
    const double w = box.w + 2 * (contextCells * pxPerCellX + borderSrcX);
    const double h = box.h + 2 * (contextCells * pxPerCellY + borderSrcY);
    const int outW = (shape.width + 2 * contextCells) * g.cellWidth + 2 * g.borderX;
    const int outH = (shape.height + 2 * contextCells) * g.cellHeight + 2 * g.borderY;

    const Image patch = resample_region(image, x0, y0, w, h, outW, outH);
    const auto extractor = make_extractor(pipeline.extractor);
    const FeatureMap features = pipeline.process(extractor->extract(patch));
    const int wantW = shape.width + 2 * contextCells;
    const int wantH = shape.height + 2 * contextCells;
    if (features.width() != wantW || features.height() != wantH || features.channels() != shape.channels)
        throw ValidationError("positive features are " +
                              shape_string(features.width(), features.height(), features.channels()) +
                              ", expected " + shape_string(wantW, wantH, shape.channels));
    if (contextCells == 0) return features;
    return features.crop(contextCells, contextCells, shape.width, shape.height);
}

FeatureMap extract_positive_from_pyramid(const FeaturePyramid& pyramid, const Box& box, const ModelShape& shape) {
    check_shape(shape);
    if (!(box.w > 0 && box.h > 0)) throw ValidationError("positive box has a zero dimension");
    const FeatureMap* best = nullptr;
    double bestCost = std::numeric_limits<double>::infinity();
    for (const auto& level : pyramid.levels) {
        if (level.width() < shape.width || level.height() < shape.height) continue;
        if (level.channels() != shape.channels)
            throw ValidationError("pyramid has " + std::to_string(level.channels()) + " channels, model shape has " +
                                  std::to_string(shape.channels));
        const CellGeometry& g = level.geometry();
        const double wc = box.w * level.scale() / g.cellWidth;
        const double hc = box.h * level.scale() / g.cellHeight;
        const double cost = std::abs(std::log(wc / shape.width)) + std::abs(std::log(hc / shape.height));
        if (cost < bestCost) {
            bestCost = cost;
            best = &level;
        }
    }
    if (!best)
        throw ValidationError("no pyramid level holds a " + std::to_string(shape.width) + "x" +
                              std::to_string(shape.height) + " window");
    const CellGeometry& g = best->geometry();
    const int x = static_cast<int>(std::lround((box.x * best->scale() - g.borderX) / g.cellWidth));
    const int y = static_cast<int>(std::lround((box.y * best->scale() - g.borderY) / g.cellHeight));
    return best->crop(std::clamp(x, 0, best->width() - shape.width), std::clamp(y, 0, best->height() - shape.height),
                      shape.width, shape.height);
}

}  // namespace whodet
