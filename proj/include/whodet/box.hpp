#pragma once

#include <algorithm>

namespace whodet {

/// Axis-aligned pixel rectangle [x, x + w) x [y, y + h).
struct Box {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double area() const noexcept { return w > 0 && h > 0 ? w * h : 0.0; }
    bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) noexcept {
    const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

/// Intersection over union; 0 when either box has zero area.
inline double iou(const Box& a, const Box& b) noexcept {
    const double areaA = a.area();
    const double areaB = b.area();
    if (areaA <= 0 || areaB <= 0) return 0.0;
    const double inter = intersection_area(a, b);
    return inter / (areaA + areaB - inter);
}

}  // namespace whodet
