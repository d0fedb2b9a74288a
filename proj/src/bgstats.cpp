#include "whodet/bgstats.hpp"

#include <cmath>

#include "whodet/error.hpp"
#include "whodet/io_util.hpp"

namespace whodet {

std::vector<std::pair<int, int>> stored_offsets(int radius) {
    std::vector<std::pair<int, int>> out;
    for (int v = 0; v <= radius; ++v) out.emplace_back(0, v);
    for (int u = 1; u <= radius; ++u)
        for (int v = -radius; v <= radius; ++v) out.emplace_back(u, v);
    return out;
}

namespace {

std::size_t offset_index(int u, int v, int radius) {
    if (u == 0) return static_cast<std::size_t>(v);
    return static_cast<std::size_t>(radius + 1) + static_cast<std::size_t>(u - 1) * (2 * radius + 1) +
           static_cast<std::size_t>(v + radius);
}

}  // namespace

BackgroundStats::BackgroundStats(int channels, int radius, Eigen::VectorXd mean, std::vector<Eigen::MatrixXd> gammas,
                                 std::uint64_t cellCount, std::vector<std::uint64_t> pairCounts)
    : channels_(channels), radius_(radius), mean_(std::move(mean)), gammas_(std::move(gammas)),
      cellCount_(cellCount), pairCounts_(std::move(pairCounts)) {
    if (channels < 1) throw ValidationError("background statistics need at least one channel");
    if (radius < 0) throw ValidationError("background statistics radius must be non-negative");
    if (mean_.size() != channels) throw ValidationError("background mean length differs from channel count");
    if (gammas_.size() != stored_offsets(radius).size())
        throw ValidationError("background statistics hold " + std::to_string(gammas_.size()) +
                              " autocorrelation blocks, radius " + std::to_string(radius) + " needs " +
                              std::to_string(stored_offsets(radius).size()));
    for (const auto& g : gammas_)
        if (g.rows() != channels || g.cols() != channels)
            throw ValidationError("autocorrelation block has the wrong size");
}

std::pair<const Eigen::MatrixXd*, bool> BackgroundStats::gammaRef(int u, int v) const {
    if (std::abs(u) > radius_ || std::abs(v) > radius_)
        throw RadiusError("offset (" + std::to_string(u) + ", " + std::to_string(v) +
                          ") exceeds the statistics radius " + std::to_string(radius_));
    const bool stored = u > 0 || (u == 0 && v >= 0);
    const std::size_t idx = stored ? offset_index(u, v, radius_) : offset_index(-u, -v, radius_);
    return {&gammas_[idx], !stored};
}

Eigen::MatrixXd BackgroundStats::gamma(int u, int v) const {
    const auto [m, transposed] = gammaRef(u, v);
    return transposed ? Eigen::MatrixXd(m->transpose()) : *m;
}

// ---------------------------------------------------------------------------

BackgroundStatsAccumulator::BackgroundStatsAccumulator(int channels, int radius)
    : channels_(channels), radius_(radius) {
    if (channels < 1) throw ValidationError("background statistics need at least one channel");
    if (radius < 0) throw ValidationError("background statistics radius must be non-negative");
    offsets_ = stored_offsets(radius);
    const std::size_t F = static_cast<std::size_t>(channels);
    cellSum_.resize(F);
    pairCount_.assign(offsets_.size(), 0);
    products_.assign(offsets_.size(), std::vector<ExactSum>(F * F));
    firstSum_.assign(offsets_.size(), std::vector<ExactSum>(F));
    secondSum_.assign(offsets_.size(), std::vector<ExactSum>(F));
}

void BackgroundStatsAccumulator::add(const FeatureMap& level) {
    if (level.channels() != channels_)
        throw ValidationError("feature map has " + std::to_string(level.channels()) +
                              " channels, statistics accumulate " + std::to_string(channels_));
    if (level.empty()) throw ValidationError("feature map smaller than one cell");

    const int W = level.width();
    const int H = level.height();
    const int F = channels_;
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::MatrixXd cells =
        Eigen::Map<const RowMajor>(level.data().data(), static_cast<Eigen::Index>(level.cells()), F).cast<double>();

    const Eigen::VectorXd total = cells.colwise().sum().transpose();
    for (int c = 0; c < F; ++c) cellSum_[c].add(total[c]);
    cellCount_ += level.cells();

    Eigen::MatrixXd first, second;
    for (std::size_t k = 0; k < offsets_.size(); ++k) {
        const auto [u, v] = offsets_[k];
        const int x0 = 0, x1 = W - u;  // first cell x range, u >= 0
        const int y0 = std::max(0, -v), y1 = std::min(H, H - v);
        if (x1 <= x0 || y1 <= y0) continue;
        const int rowLen = x1 - x0;
        const int rows = y1 - y0;
        const Eigen::Index n = static_cast<Eigen::Index>(rowLen) * rows;
        first.resize(n, F);
        second.resize(n, F);
        for (int y = y0; y < y1; ++y) {
            const Eigen::Index dst = static_cast<Eigen::Index>(y - y0) * rowLen;
            first.middleRows(dst, rowLen) = cells.middleRows(static_cast<Eigen::Index>(y) * W + x0, rowLen);
            second.middleRows(dst, rowLen) = cells.middleRows(static_cast<Eigen::Index>(y + v) * W + x0 + u, rowLen);
        }
        const Eigen::MatrixXd gram = first.transpose() * second;
        const Eigen::VectorXd s1 = first.colwise().sum().transpose();
        const Eigen::VectorXd s2 = second.colwise().sum().transpose();
        auto& prod = products_[k];
        for (int a = 0; a < F; ++a)
            for (int b = 0; b < F; ++b) prod[static_cast<std::size_t>(a) * F + b].add(gram(a, b));
        for (int a = 0; a < F; ++a) {
            firstSum_[k][a].add(s1[a]);
            secondSum_[k][a].add(s2[a]);
        }
        pairCount_[k] += static_cast<std::uint64_t>(n);
    }
}

void BackgroundStatsAccumulator::add(const FeaturePyramid& pyramid) {
    for (const auto& level : pyramid.levels) add(level);
}

void BackgroundStatsAccumulator::merge(const BackgroundStatsAccumulator& other) {
    if (other.channels_ != channels_ || other.radius_ != radius_)
        throw ValidationError("cannot merge statistics accumulators with different channels or radius");
    cellCount_ += other.cellCount_;
    for (std::size_t c = 0; c < cellSum_.size(); ++c) cellSum_[c] += other.cellSum_[c];
    for (std::size_t k = 0; k < offsets_.size(); ++k) {
        pairCount_[k] += other.pairCount_[k];
        for (std::size_t i = 0; i < products_[k].size(); ++i) products_[k][i] += other.products_[k][i];
        for (std::size_t i = 0; i < firstSum_[k].size(); ++i) {
            firstSum_[k][i] += other.firstSum_[k][i];
            secondSum_[k][i] += other.secondSum_[k][i];
        }
    }
}

BackgroundStats BackgroundStatsAccumulator::finalize() const {
    if (cellCount_ == 0) throw ValidationError("cannot learn background statistics from an empty corpus");
    const int F = channels_;
    std::vector<long double> mu(F);
    Eigen::VectorXd mean(F);
    for (int c = 0; c < F; ++c) {
        mu[c] = cellSum_[c].longValue() / static_cast<long double>(cellCount_);
        mean[c] = static_cast<double>(mu[c]);
    }

    std::vector<Eigen::MatrixXd> gammas(offsets_.size(), Eigen::MatrixXd::Zero(F, F));
    for (std::size_t k = 0; k < offsets_.size(); ++k) {
        const std::uint64_t pairs = pairCount_[k];
        if (pairs == 0) continue;
        const long double n = static_cast<long double>(pairs);
        for (int a = 0; a < F; ++a) {
            const long double s1 = firstSum_[k][a].longValue();
            for (int b = 0; b < F; ++b) {
                const long double s2 = secondSum_[k][b].longValue();
                const long double centered =
                    products_[k][static_cast<std::size_t>(a) * F + b].longValue() - s1 * mu[b] - mu[a] * s2 + n * mu[a] * mu[b];
                gammas[k](a, b) = static_cast<double>(centered / n);
            }
        }
    }
    // gamma(0, 0) is a covariance; remove the asymmetric rounding residue.
    gammas[0] = (0.5 * (gammas[0] + gammas[0].transpose())).eval();
    return BackgroundStats(F, radius_, std::move(mean), std::move(gammas), cellCount_, pairCount_);
}

BackgroundStats learn_stats(std::span<const FeaturePyramid> pyramids, int radius) {
    if (pyramids.empty()) throw ValidationError("cannot learn background statistics from an empty corpus");
    int channels = 0;
    for (const auto& p : pyramids)
        if (!p.levels.empty()) {
            channels = p.channels();
            break;
        }
    if (channels == 0) throw ValidationError("background corpus contains no feature maps");
    BackgroundStatsAccumulator acc(channels, radius);
    for (const auto& p : pyramids) acc.add(p);
    return acc.finalize();
}

BackgroundStatsAccumulator merge_stats(const BackgroundStatsAccumulator& a, const BackgroundStatsAccumulator& b) {
    BackgroundStatsAccumulator out = a;
    out.merge(b);
    return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kStatsMagic = "WBG1";
}

void save_stats(const BackgroundStats& stats, const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(kStatsMagic);
    w.u32(static_cast<std::uint32_t>(stats.channels()));
    w.u32(static_cast<std::uint32_t>(stats.radius()));
    w.u64(stats.cellCount());
    for (int c = 0; c < stats.channels(); ++c) w.f64(stats.mean()[c]);
    for (const auto& g : stats.storedGammas())
        for (int a = 0; a < stats.channels(); ++a)
            for (int b = 0; b < stats.channels(); ++b) w.f64(g(a, b));
    write_file_atomic(path, w.bytes());
}

BackgroundStats load_stats(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const std::string source = path.string();
    ByteReader r(bytes, source);
    if (r.take(std::min<std::size_t>(4, r.remaining()), "magic") != kStatsMagic)
        throw FormatError(source + ": bad magic (expected WBG1)");
    const std::uint32_t F = r.u32("F");
    const std::uint32_t R = r.u32("R");
    if (F < 1 || F > 65536) throw FormatError(source + ": field F out of range");
    if (R > 4096) throw FormatError(source + ": field R out of range");
    const std::uint64_t cellCount = r.u64("cellCount");
    const std::size_t blocks = stored_offsets(static_cast<int>(R)).size();
    const std::size_t expected = (F + blocks * static_cast<std::size_t>(F) * F) * 8;
    if (r.remaining() != expected)
        throw FormatError(source + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(expected) + " for F=" + std::to_string(F) + ", R=" + std::to_string(R));
    Eigen::VectorXd mean(F);
    for (std::uint32_t c = 0; c < F; ++c) mean[c] = r.f64("mean");
    if (!mean.allFinite()) throw FormatError(source + ": mean contains non-finite values");
    std::vector<Eigen::MatrixXd> gammas(blocks, Eigen::MatrixXd(F, F));
    for (auto& g : gammas) {
        for (std::uint32_t a = 0; a < F; ++a)
            for (std::uint32_t b = 0; b < F; ++b) g(a, b) = r.f64("autocorrelation");
        if (!g.allFinite()) throw FormatError(source + ": autocorrelation contains non-finite values");
    }
    return BackgroundStats(static_cast<int>(F), static_cast<int>(R), std::move(mean), std::move(gammas), cellCount);
}

}  // namespace whodet
