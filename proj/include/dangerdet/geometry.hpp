#pragma once

#include <algorithm>
#include <array>

namespace dangerdet {

/// Axis-aligned box in pixel coordinates, (x_min, y_min, x_max, y_max).
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool valid() const { return x_min < x_max && y_min < y_max; }

    friend bool operator==(const Box&, const Box&) = default;
};

struct ImageSize {
    int width = 0;
    int height = 0;

    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

inline double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline Box clip_box(const Box& b, ImageSize size) {
    const auto w = static_cast<double>(size.width);
    const auto h = static_cast<double>(size.height);
    return {std::clamp(b.x_min, 0.0, w), std::clamp(b.y_min, 0.0, h),
            std::clamp(b.x_max, 0.0, w), std::clamp(b.y_max, 0.0, h)};
}

}  // namespace dangerdet
