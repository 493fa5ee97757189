#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace cmdse {

// Center-size box in normalized image coordinates.
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    bool operator==(const Box&) const = default;
    std::array<double, 4> corners() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
    static Box from_corners(double x0, double y0, double x1, double y1) {
        return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
    }
    bool inside_unit_square(double tol = 1e-12) const {
        const auto c = corners();
        return c[0] >= -tol && c[1] >= -tol && c[2] <= 1 + tol && c[3] <= 1 + tol && w >= 0 && h >= 0;
    }
};

inline double center_distance(const Box& a, const Box& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

// Measured from the corners so that a box intersected with itself gives
// exactly its own area.
inline double box_area(const Box& b) {
    const auto c = b.corners();
    return std::max(c[2] - c[0], 0.0) * std::max(c[3] - c[1], 0.0);
}

inline double intersection_area(const Box& a, const Box& b) {
    const auto p = a.corners(), q = b.corners();
    const double iw = std::max(0.0, std::min(p[2], q[2]) - std::max(p[0], q[0]));
    const double ih = std::max(0.0, std::min(p[3], q[3]) - std::max(p[1], q[1]));
    return iw * ih;
}

// A zero-area union gives IoU 0.
inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = box_area(a) + box_area(b) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double giou(const Box& a, const Box& b) {
    const auto p = a.corners(), q = b.corners();
    const double inter = intersection_area(a, b);
    const double uni = box_area(a) + box_area(b) - inter;
    const double enclosing = (std::max(p[2], q[2]) - std::min(p[0], q[0])) * (std::max(p[3], q[3]) - std::min(p[1], q[1]));
    const double iou_term = uni > 0.0 ? inter / uni : 0.0;
    if (enclosing <= 0.0) return iou_term;
    return iou_term - (enclosing - uni) / enclosing;
}

inline double giou_loss(const Box& a, const Box& b) { return 1.0 - giou(a, b); }

inline double l1_box_loss(const Box& a, const Box& b) {
    return (std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) + std::fabs(a.h - b.h)) / 4.0;
}

}  // namespace cmdse
