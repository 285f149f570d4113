#pragma once

#include <span>
#include <vector>

#include "dangerdet/annotation.hpp"

namespace dangerdet {

inline constexpr int kHeatmapStride = 8;
inline constexpr double kDefaultHeatmapSigma = 2.0;

/// K x rows x cols Gaussian keypoint targets at stride 8.
struct KeypointHeatmapStack {
    int channels = 0;
    int rows = 0;
    int cols = 0;
    double sigma = kDefaultHeatmapSigma;
    std::vector<float> maps;  // channel-major, then row-major

    float at(int k, int row, int col) const {
        return maps[(static_cast<std::size_t>(k) * rows + row) * cols + col];
    }
};

/// Channel k is the pixel-wise maximum, over every present keypoint of type k,
/// of exp(-((col - x/8)^2 + (row - y/8)^2) / (2 sigma^2)).
KeypointHeatmapStack render_heatmaps(std::span<const KeypointSet> keypoints, ImageSize input,
                                     double sigma = kDefaultHeatmapSigma,
                                     int num_keypoints = kCocoKeypoints);

/// True when the sample carries at least one present keypoint; samples without
/// one are masked out of the keypoint loss.
bool mask_for_missing(const ImageSample& sample);
bool has_present_keypoint(std::span<const KeypointSet> keypoints);

/// Mirrors keypoints about the vertical axis of an image of `width` pixels and
/// swaps left/right joint indices.
std::vector<KeypointSet> flip_keypoints_horizontal(std::span<const KeypointSet> keypoints, int width);

}  // namespace dangerdet
