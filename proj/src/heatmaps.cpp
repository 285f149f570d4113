#include "dangerdet/heatmaps.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dangerdet/error.hpp"

namespace dangerdet {

KeypointHeatmapStack render_heatmaps(std::span<const KeypointSet> keypoints, ImageSize input,
                                     double sigma, int num_keypoints) {
    if (input.width % kHeatmapStride != 0 || input.height % kHeatmapStride != 0)
        throw Error("pose_supervision", "IndivisibleInput",
                    "input size must be divisible by " + std::to_string(kHeatmapStride));
    KeypointHeatmapStack stack;
    stack.channels = num_keypoints;
    stack.rows = input.height / kHeatmapStride;
    stack.cols = input.width / kHeatmapStride;
    stack.sigma = sigma;
    stack.maps.assign(static_cast<std::size_t>(num_keypoints) * stack.rows * stack.cols, 0.0f);

    const double inv = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> gx(static_cast<std::size_t>(stack.cols));
    std::vector<double> gy(static_cast<std::size_t>(stack.rows));
    for (const auto& person : keypoints) {
        const int n = std::min<int>(num_keypoints, static_cast<int>(person.points.size()));
        for (int k = 0; k < n; ++k) {
            const auto& p = person.points[static_cast<std::size_t>(k)];
            if (!p.present) continue;
            const double cx = p.x / kHeatmapStride;
            const double cy = p.y / kHeatmapStride;
            // separable: exp(-(dx^2 + dy^2) c) = exp(-dx^2 c) * exp(-dy^2 c)
            for (int c = 0; c < stack.cols; ++c) gx[c] = std::exp(-(c - cx) * (c - cx) * inv);
            for (int r = 0; r < stack.rows; ++r) gy[r] = std::exp(-(r - cy) * (r - cy) * inv);
            float* channel = stack.maps.data() + static_cast<std::size_t>(k) * stack.rows * stack.cols;
            for (int r = 0; r < stack.rows; ++r) {
                if (gy[r] == 0.0) continue;
                float* row = channel + static_cast<std::size_t>(r) * stack.cols;
                for (int c = 0; c < stack.cols; ++c)
                    row[c] = std::max(row[c], static_cast<float>(gy[r] * gx[c]));
            }
        }
    }
    return stack;
}

bool has_present_keypoint(std::span<const KeypointSet> keypoints) {
    return std::any_of(keypoints.begin(), keypoints.end(),
                       [](const KeypointSet& s) { return s.present_count() > 0; });
}

bool mask_for_missing(const ImageSample& sample) { return has_present_keypoint(sample.keypoints); }

std::vector<KeypointSet> flip_keypoints_horizontal(std::span<const KeypointSet> keypoints, int width) {
    std::vector<KeypointSet> out(keypoints.begin(), keypoints.end());
    for (auto& person : out) {
        for (auto& p : person.points) p.x = width - p.x;
        if (person.points.size() != static_cast<std::size_t>(kCocoKeypoints)) continue;
        for (const auto& [a, b] : kCocoFlipPairs)
            std::swap(person.points[static_cast<std::size_t>(a)], person.points[static_cast<std::size_t>(b)]);
    }
    return out;
}

}  // namespace dangerdet
