#pragma once

#include <array>
#include <limits>
#include <span>
#include <vector>

#include "dangerdet/annotation.hpp"
#include "dangerdet/geometry.hpp"

namespace dangerdet {

inline constexpr int kCoarsestStride = 128;

/// One pyramid level: stride 2^level and the half-open regression range
/// (range_lo, range_hi] on max(l*, t*, r*, b*).
struct LevelSpec {
    int level = 3;
    int stride = 8;
    double range_lo = 0.0;
    double range_hi = std::numeric_limits<double>::infinity();
};

/// P3..P7 with ranges (0,64], (64,128], (128,256], (256,512], (512,inf),
/// every bound multiplied by `range_scale`.
std::vector<LevelSpec> default_levels(double range_scale = 1.0);

struct LocationGrid {
    int rows = 0;
    int cols = 0;
    std::vector<std::array<double, 2>> xy;  // row-major, (x, y) in input pixels

    const std::array<double, 2>& at(int row, int col) const {
        return xy[static_cast<std::size_t>(row) * cols + col];
    }
};

/// Maps every cell of a level to the input-pixel location (s/2 + x*s, s/2 + y*s).
LocationGrid location_grid(const LevelSpec& level, ImageSize input);

inline constexpr int kBackground = -1;

struct LevelTargets {
    LevelSpec spec;
    int rows = 0;
    int cols = 0;
    std::vector<int> class_map;  // rows*cols, kBackground or class id
    std::vector<double> reg;     // rows*cols*4, (l, t, r, b); zero at background
    std::vector<double> ctr;     // rows*cols; zero at background

    std::size_t size() const { return class_map.size(); }
    int positives() const;
};

struct TargetMaps {
    ImageSize input;
    std::vector<LevelTargets> levels;

    int positives() const;
};

/// Center-ness sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)).
double center_ness(double l, double t, double r, double b);

/// Dense per-level targets. A cell is positive for a box when its location lies
/// strictly inside the box and the largest side distance falls in the level's
/// range; overlapping boxes resolve to the smaller area, then lower index.
TargetMaps assign_targets(std::span<const BoxAnnotation> boxes, std::span<const LevelSpec> levels,
                          ImageSize input);

}  // namespace dangerdet
