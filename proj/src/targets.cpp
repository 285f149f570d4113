#include "dangerdet/targets.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dangerdet/error.hpp"

namespace dangerdet {

namespace {

constexpr const char* kModule = "target_assignment";

void require_divisible(ImageSize input) {
    if (input.width <= 0 || input.height <= 0 || input.width % kCoarsestStride != 0 ||
        input.height % kCoarsestStride != 0)
        throw Error(kModule, "IndivisibleInput",
                    "input " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                        " is not divisible by " + std::to_string(kCoarsestStride));
}

// First and one-past-last cell index whose location lies strictly inside (lo, hi).
std::pair<int, int> inside_cells(double lo, double hi, int stride, int count) {
    const double s = stride;
    int first = std::max(0, static_cast<int>(std::floor((lo - s / 2) / s)));
    while (first < count && s / 2 + first * s <= lo) ++first;
    int last = std::min(count, static_cast<int>(std::ceil((hi - s / 2) / s)) + 1);
    while (last > first && s / 2 + (last - 1) * s >= hi) --last;
    return {first, std::max(first, last)};
}

}  // namespace

std::vector<LevelSpec> default_levels(double range_scale) {
    const double inf = std::numeric_limits<double>::infinity();
    const double bounds[] = {0.0, 64.0, 128.0, 256.0, 512.0, inf};
    std::vector<LevelSpec> levels;
    for (int i = 0; i < 5; ++i) {
        LevelSpec spec;
        spec.level = 3 + i;
        spec.stride = 1 << spec.level;
        spec.range_lo = bounds[i] * range_scale;
        spec.range_hi = bounds[i + 1] * range_scale;
        levels.push_back(spec);
    }
    return levels;
}

LocationGrid location_grid(const LevelSpec& level, ImageSize input) {
    require_divisible(input);
    LocationGrid grid;
    grid.rows = input.height / level.stride;
    grid.cols = input.width / level.stride;
    grid.xy.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
    const double s = level.stride;
    for (int y = 0; y < grid.rows; ++y)
        for (int x = 0; x < grid.cols; ++x) grid.xy.push_back({s / 2 + x * s, s / 2 + y * s});
    return grid;
}

int LevelTargets::positives() const {
    return static_cast<int>(std::count_if(class_map.begin(), class_map.end(),
                                          [](int c) { return c != kBackground; }));
}

int TargetMaps::positives() const {
    int n = 0;
    for (const auto& l : levels) n += l.positives();
    return n;
}

double center_ness(double l, double t, double r, double b) {
    if (!(l > 0.0 && t > 0.0 && r > 0.0 && b > 0.0))
        throw Error(kModule, "NonPositiveTarget", "center-ness requires four positive distances");
    const double lr = std::min(l, r) / std::max(l, r);
    const double tb = std::min(t, b) / std::max(t, b);
    return std::sqrt(lr * tb);
}

TargetMaps assign_targets(std::span<const BoxAnnotation> boxes, std::span<const LevelSpec> levels,
                          ImageSize input) {
    require_divisible(input);
    TargetMaps maps;
    maps.input = input;
    maps.levels.reserve(levels.size());

    for (const auto& spec : levels) {
        LevelTargets lt;
        lt.spec = spec;
        lt.rows = input.height / spec.stride;
        lt.cols = input.width / spec.stride;
        const auto n = static_cast<std::size_t>(lt.rows) * lt.cols;
        lt.class_map.assign(n, kBackground);
        lt.reg.assign(n * 4, 0.0);
        lt.ctr.assign(n, 0.0);
        std::vector<double> owner_area(n, std::numeric_limits<double>::infinity());

        const double s = spec.stride;
        for (const auto& ann : boxes) {
            const Box& b = ann.box;
            const double area = b.area();
            const auto [c0, c1] = inside_cells(b.x_min, b.x_max, spec.stride, lt.cols);
            const auto [r0, r1] = inside_cells(b.y_min, b.y_max, spec.stride, lt.rows);
            for (int row = r0; row < r1; ++row) {
                const double y = s / 2 + row * s;
                for (int col = c0; col < c1; ++col) {
                    const double x = s / 2 + col * s;
                    const double d[4] = {x - b.x_min, y - b.y_min, b.x_max - x, b.y_max - y};
                    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0 || d[3] <= 0) continue;
                    const double m = std::max(std::max(d[0], d[1]), std::max(d[2], d[3]));
                    if (!(m > spec.range_lo && m <= spec.range_hi)) continue;
                    const auto idx = static_cast<std::size_t>(row) * lt.cols + col;
                    // strict comparison keeps the lower box index on equal areas
                    if (!(area < owner_area[idx])) continue;
                    owner_area[idx] = area;
                    lt.class_map[idx] = ann.class_id;
                    std::copy(d, d + 4, lt.reg.begin() + static_cast<std::ptrdiff_t>(idx * 4));
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (lt.class_map[i] == kBackground) continue;
            const double* d = &lt.reg[i * 4];
            lt.ctr[i] = center_ness(d[0], d[1], d[2], d[3]);
        }
        maps.levels.push_back(std::move(lt));
    }
    return maps;
}

}  // namespace dangerdet
