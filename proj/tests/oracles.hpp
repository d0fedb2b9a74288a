#pragma once

// Independent reference implementations used to check the library. They
// favour obviousness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "whodet/bgstats.hpp"
#include "whodet/detector.hpp"
#include "whodet/evalkit.hpp"
#include "whodet/feature_map.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, std::vector<double>(c, 0.0)); }

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching eigenvectors as columns.
inline std::pair<std::vector<double>, Matrix> jacobi_eigen(Matrix a) {
    const std::size_t n = a.size();
    Matrix v = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
    std::vector<double> values;
    Matrix vectors = zeros(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        values.push_back(a[order[j]][order[j]]);
        for (std::size_t i = 0; i < n; ++i) vectors[i][j] = v[i][order[j]];
    }
    return {values, vectors};
}

/// Gaussian elimination with partial pivoting in long double.
inline std::vector<double> gauss_solve(const Matrix& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    std::vector<std::vector<long double>> m(n, std::vector<long double>(n + 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) m[i][j] = a[i][j];
        m[i][n] = b[i];
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(m[r][col]) > std::fabs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const long double f = m[r][col] / m[col][col];
            for (std::size_t c = col; c <= n; ++c) m[r][c] -= f * m[col][c];
        }
    }
    std::vector<long double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        long double s = m[i][n];
        for (std::size_t j = i + 1; j < n; ++j) s -= m[i][j] * x[j];
        x[i] = s / m[i][i];
    }
    return {x.begin(), x.end()};
}

/// Direct sliding-window correlation over raw data indices.
inline std::vector<double> naive_correlation(const whodet::FeatureMap& level, const whodet::FeatureMap& filter,
                                             double bias, int& outW, int& outH) {
    const int W = level.width(), H = level.height(), F = level.channels();
    const int M = filter.width(), N = filter.height();
    outW = std::max(0, W - M + 1);
    outH = std::max(0, H - N + 1);
    if (outW == 0 || outH == 0) outW = outH = 0;
    std::vector<double> out(static_cast<std::size_t>(outW) * outH);
    const auto L = level.data();
    const auto K = filter.data();
    for (int y = 0; y < outH; ++y)
        for (int x = 0; x < outW; ++x) {
            long double s = 0;
            for (int j = 0; j < N; ++j)
                for (int i = 0; i < M; ++i)
                    for (int c = 0; c < F; ++c)
                        s += static_cast<long double>(K[(static_cast<std::size_t>(j) * M + i) * F + c]) *
                             L[(static_cast<std::size_t>(y + j) * W + (x + i)) * F + c];
            out[static_cast<std::size_t>(y) * outW + x] = static_cast<double>(s) - bias;
        }
    return out;
}

inline double box_iou(const whodet::Box& a, const whodet::Box& b) {
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

inline bool ranks_before(const whodet::Detection& a, const whodet::Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.w * a.box.h != b.box.w * b.box.h) return a.box.w * a.box.h < b.box.w * b.box.h;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    if (a.box.y != b.box.y) return a.box.y < b.box.y;
    if (a.box.w != b.box.w) return a.box.w < b.box.w;
    if (a.box.h != b.box.h) return a.box.h < b.box.h;
    if (a.component != b.component) return a.component < b.component;
    if (a.level != b.level) return a.level < b.level;
    return a.image < b.image;
}

/// Exhaustive NMS: repeatedly pick the best remaining detection and strike
/// every remaining detection it suppresses.
inline std::vector<whodet::Detection> brute_nms(std::vector<whodet::Detection> remaining, double overlap,
                                                double nested = -1) {
    std::vector<whodet::Detection> kept;
    while (!remaining.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < remaining.size(); ++i)
            if (ranks_before(remaining[i], remaining[best])) best = i;
        const whodet::Detection top = remaining[best];
        kept.push_back(top);
        std::vector<whodet::Detection> next;
        for (std::size_t i = 0; i < remaining.size(); ++i) {
            if (i == best) continue;
            const auto& d = remaining[i];
            bool drop = false;
            if (d.image == top.image) {
                drop = box_iou(d.box, top.box) > overlap;
                if (nested > 0) {
                    const double ix = std::max(0.0, std::min(d.box.x + d.box.w, top.box.x + top.box.w) -
                                                        std::max(d.box.x, top.box.x));
                    const double iy = std::max(0.0, std::min(d.box.y + d.box.h, top.box.y + top.box.h) -
                                                        std::max(d.box.y, top.box.y));
                    const double smaller = std::min(d.box.w * d.box.h, top.box.w * top.box.h);
                    drop = drop || (smaller > 0 && ix * iy / smaller > nested);
                }
            }
            if (!drop) next.push_back(d);
        }
        remaining = std::move(next);
    }
    return kept;
}

/// VOC devkit style AP: pad recall/precision with sentinels, take the
/// running maximum from the right and sum rectangles where recall changes.
inline double brute_ap(const std::vector<bool>& isTp, int totalGt) {
    if (totalGt <= 0) return 0.0;
    std::vector<double> mrec{0.0}, mpre{0.0};
    int tp = 0, fp = 0;
    for (bool t : isTp) {
        (t ? tp : fp) += 1;
        mrec.push_back(static_cast<double>(tp) / totalGt);
        mpre.push_back(static_cast<double>(tp) / (tp + fp));
    }
    mrec.push_back(1.0);
    mpre.push_back(0.0);
    for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
    double ap = 0;
    for (std::size_t i = 1; i < mrec.size(); ++i)
        if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
    return ap;
}

/// Reference matcher: labels 1 = TP, 0 = FP, -1 = ignored.
inline std::vector<int> brute_match(const std::vector<whodet::Detection>& dets,
                                    const std::vector<whodet::GroundTruth>& gts, const std::string& label,
                                    double threshold) {
    std::vector<bool> taken(gts.size(), false);
    std::vector<int> out;
    for (const auto& d : dets) {
        double best = -1;
        long chosen = -1;
        bool difficult = false;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].image != d.image || gts[g].label != label) continue;
            const double o = box_iou(d.box, gts[g].box);
            if (gts[g].difficult) {
                if (o >= threshold) difficult = true;
            } else if (!taken[g] && o > best) {
                best = o;
                chosen = static_cast<long>(g);
            }
        }
        if (chosen >= 0 && best >= threshold) {
            taken[static_cast<std::size_t>(chosen)] = true;
            out.push_back(1);
        } else {
            out.push_back(difficult ? -1 : 0);
        }
    }
    return out;
}

/// Covariance entry by entry from the autocorrelation, cells row-major.
inline Matrix brute_covariance(const whodet::BackgroundStats& stats, int M, int N) {
    const int F = stats.channels();
    const std::size_t D = static_cast<std::size_t>(M) * N * F;
    Matrix s = zeros(D, D);
    for (int y1 = 0; y1 < N; ++y1)
        for (int x1 = 0; x1 < M; ++x1)
            for (int y2 = 0; y2 < N; ++y2)
                for (int x2 = 0; x2 < M; ++x2) {
                    const int u = x2 - x1, v = y2 - y1;
                    const bool stored = u > 0 || (u == 0 && v >= 0);
                    const Eigen::MatrixXd g = stored ? stats.gamma(u, v) : stats.gamma(-u, -v);
                    for (int a = 0; a < F; ++a)
                        for (int b = 0; b < F; ++b) {
                            const std::size_t r = (static_cast<std::size_t>(y1) * M + x1) * F + a;
                            const std::size_t c = (static_cast<std::size_t>(y2) * M + x2) * F + b;
                            double value = stored ? g(a, b) : g(b, a);
                            if (u == 0 && v == 0) value = 0.5 * (g(a, b) + g(b, a));
                            s[r][c] = value;
                        }
                }
    return s;
}

/// Two-pass autocorrelation of a corpus at one offset, in long double.
inline Matrix brute_autocorrelation(const std::vector<whodet::FeatureMap>& maps, int u, int v,
                                    std::vector<double>* meanOut = nullptr) {
    const int F = maps.front().channels();
    std::vector<long double> mean(F, 0.0L);
    long double cells = 0;
    for (const auto& m : maps)
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) {
                for (int c = 0; c < F; ++c) mean[c] += m(x, y, c);
                cells += 1;
            }
    for (auto& m : mean) m /= cells;
    if (meanOut) meanOut->assign(mean.begin(), mean.end());
    std::vector<std::vector<long double>> acc(F, std::vector<long double>(F, 0.0L));
    long double pairs = 0;
    for (const auto& m : maps)
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) {
                const int x2 = x + u, y2 = y + v;
                if (x2 < 0 || y2 < 0 || x2 >= m.width() || y2 >= m.height()) continue;
                for (int a = 0; a < F; ++a)
                    for (int b = 0; b < F; ++b) acc[a][b] += (m(x, y, a) - mean[a]) * (m(x2, y2, b) - mean[b]);
                pairs += 1;
            }
    Matrix out = zeros(F, F);
    for (int a = 0; a < F; ++a)
        for (int b = 0; b < F; ++b) out[a][b] = pairs > 0 ? static_cast<double>(acc[a][b] / pairs) : 0.0;
    return out;
}

inline whodet::FeatureMap random_map(std::mt19937_64& rng, int w, int h, int f, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    whodet::FeatureMap m(w, h, f);
    for (auto& v : m.data()) v = static_cast<float>(dist(rng));
    return m;
}

}  // namespace oracle
