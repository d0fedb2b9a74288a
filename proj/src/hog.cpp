#include "whodet/hog.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "whodet/error.hpp"

namespace whodet {

namespace {

constexpr double kEps = 0.0001;
constexpr double kClip = 0.2;
constexpr double kTextureWeight = 0.2357;

// Unit vectors of the nine half-plane orientations. Entries 5..8 mirror 1..4
// exactly so that flipped images land in exactly mirrored bins.
struct OrientationTable {
    std::array<double, 9> u{};
    std::array<double, 9> v{};
    OrientationTable() {
        for (int o = 0; o <= 4; ++o) {
            u[o] = std::cos(o * std::numbers::pi / 9.0);
            v[o] = std::sin(o * std::numbers::pi / 9.0);
        }
        for (int o = 5; o < 9; ++o) {
            u[o] = -u[9 - o];
            v[o] = v[9 - o];
        }
    }
};

const OrientationTable& orientations() {
    static const OrientationTable table;
    return table;
}

}  // namespace

FeatureMap extract_hog(const Image& image) {
    using namespace hog;
    const int cellsX = image.width() / kCellSize;
    const int cellsY = image.height() / kCellSize;
    if (cellsX < 1 || cellsY < 1)
        throw ValidationError("image of " + std::to_string(image.width()) + "x" +
                              std::to_string(image.height()) +
                              " pixels is smaller than one HOG cell; feature map would be empty");

    const auto& table = orientations();
    const int visibleX = cellsX * kCellSize;
    const int visibleY = cellsY * kCellSize;
    std::vector<double> hist(static_cast<std::size_t>(cellsX) * cellsY * kSensitiveBins, 0.0);

    for (int y = 0; y < visibleY; ++y) {
        for (int x = 0; x < visibleX; ++x) {
            // Strongest color channel.
            double dx = 0, dy = 0, mag2 = -1;
            for (int c = 0; c < 3; ++c) {
                const double gx = image.clamped(x + 1, y, c) - image.clamped(x - 1, y, c);
                const double gy = image.clamped(x, y + 1, c) - image.clamped(x, y - 1, c);
                const double m = gx * gx + gy * gy;
                if (m > mag2) {
                    mag2 = m;
                    dx = gx;
                    dy = gy;
                }
            }
            if (mag2 <= 0) continue;

            double bestDot = 0;
            int bestO = 0;
            for (int o = 0; o < 9; ++o) {
                const double dot = table.u[o] * dx + table.v[o] * dy;
                if (dot > bestDot) {
                    bestDot = dot;
                    bestO = o;
                } else if (-dot > bestDot) {
                    bestDot = -dot;
                    bestO = o + 9;
                }
            }

            const double mag = std::sqrt(mag2);
            const double xp = (x + 0.5) / kCellSize - 0.5;
            const double yp = (y + 0.5) / kCellSize - 0.5;
            const int ixp = static_cast<int>(std::floor(xp));
            const int iyp = static_cast<int>(std::floor(yp));
            const double vx0 = xp - ixp, vy0 = yp - iyp;
            const double vx1 = 1.0 - vx0, vy1 = 1.0 - vy0;
            auto vote = [&](int cx, int cy, double w) {
                if (cx < 0 || cy < 0 || cx >= cellsX || cy >= cellsY) return;
                hist[(static_cast<std::size_t>(cy) * cellsX + cx) * kSensitiveBins + bestO] += w * mag;
            };
            vote(ixp, iyp, vx1 * vy1);
            vote(ixp + 1, iyp, vx0 * vy1);
            vote(ixp, iyp + 1, vx1 * vy0);
            vote(ixp + 1, iyp + 1, vx0 * vy0);
        }
    }

    // Energy of the contrast-insensitive histogram per cell.
    std::vector<double> energy(static_cast<std::size_t>(cellsX) * cellsY, 0.0);
    for (std::size_t i = 0; i < energy.size(); ++i) {
        const double* h = &hist[i * kSensitiveBins];
        double e = 0;
        for (int o = 0; o < kInsensitiveBins; ++o) e += (h[o] + h[o + 9]) * (h[o] + h[o + 9]);
        energy[i] = e;
    }
    auto cellEnergy = [&](int cx, int cy) {
        cx = std::clamp(cx, 0, cellsX - 1);
        cy = std::clamp(cy, 0, cellsY - 1);
        return energy[static_cast<std::size_t>(cy) * cellsX + cx];
    };
    // 2x2 block whose top-left cell is (bx, by).
    auto blockNorm = [&](int bx, int by) {
        const double e = cellEnergy(bx, by) + cellEnergy(bx + 1, by) + cellEnergy(bx, by + 1) +
                         cellEnergy(bx + 1, by + 1);
        return 1.0 / std::sqrt(e + kEps);
    };

    FeatureMap out(cellsX, cellsY, kChannels, CellGeometry{kCellSize, kCellSize, 0, 0}, 1.0);
    for (int cy = 0; cy < cellsY; ++cy) {
        for (int cx = 0; cx < cellsX; ++cx) {
            const std::array<double, 4> norms = {blockNorm(cx, cy), blockNorm(cx, cy - 1),
                                                 blockNorm(cx - 1, cy), blockNorm(cx - 1, cy - 1)};
            const double* h = &hist[(static_cast<std::size_t>(cy) * cellsX + cx) * kSensitiveBins];
            auto cell = out.cell(cx, cy);
            std::array<double, 4> texture{};
            for (int o = 0; o < kSensitiveBins; ++o) {
                double sum = 0;
                for (int k = 0; k < 4; ++k) {
                    const double clipped = std::min(h[o] * norms[k], kClip);
                    sum += clipped;
                    texture[k] += clipped;
                }
                cell[o] = static_cast<float>(0.5 * sum);
            }
            for (int o = 0; o < kInsensitiveBins; ++o) {
                const double folded = h[o] + h[o + 9];
                double sum = 0;
                for (int k = 0; k < 4; ++k) sum += std::min(folded * norms[k], kClip);
                cell[kSensitiveBins + o] = static_cast<float>(0.5 * sum);
            }
            for (int k = 0; k < 4; ++k) cell[kTextureOffset + k] = static_cast<float>(kTextureWeight * texture[k]);
            cell[kTruncationChannel] = 0.0f;
        }
    }
    return out;
}

}  // namespace whodet
