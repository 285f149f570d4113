#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dangerdet/heatmaps.hpp"
#include "dangerdet/network.hpp"
#include "dangerdet/targets.hpp"

namespace dangerdet {

inline constexpr double kFocalAlpha = 0.25;
inline constexpr double kFocalGamma = 2.0;

/// Dense targets for a batch, flattened over levels P3..P7 (row-major per level).
struct BatchTargets {
    torch::Tensor class_map;     // N x M int64, kBackground where negative
    torch::Tensor reg;           // N x M x 4
    torch::Tensor ctr;           // N x M
    torch::Tensor heatmaps;      // N x K x H_3 x W_3, undefined when no sample has keypoints
    torch::Tensor keypoint_mask; // N, 1 where the sample carries at least one present keypoint
};

/// Stacks per-image targets. `heatmaps` may be empty (no pose supervision) or
/// hold one stack per image; `mask` gives the per-image keypoint flag.
BatchTargets collate_targets(std::span<const TargetMaps> targets, std::span<const KeypointHeatmapStack> heatmaps,
                             std::span<const bool> mask, torch::ScalarType dtype = torch::kFloat32);

/// Level maps N x D x H_i x W_i concatenated to N x M x D.
torch::Tensor flatten_levels(const std::vector<torch::Tensor>& maps);

/// Sum over locations and classes of -a_t (1 - p_t)^g log p_t, divided by max(n_pos, 1).
torch::Tensor focal_loss(const torch::Tensor& cls_logits, const torch::Tensor& class_map, std::int64_t n_pos);

/// Sum of -ln IoU over the given rows (P x 4 each), divided by max(n_pos, 1).
torch::Tensor iou_loss(const torch::Tensor& pred, const torch::Tensor& target, std::int64_t n_pos);

/// Sum of sigmoid BCE over the given positives, divided by max(n_pos, 1).
torch::Tensor centerness_loss(const torch::Tensor& logits, const torch::Tensor& target, std::int64_t n_pos);

/// Sum over stages of the per-sample mean squared error, masked, averaged over the batch.
torch::Tensor keypoint_loss(const std::vector<torch::Tensor>& stages, const torch::Tensor& target,
                            const torch::Tensor& mask);

struct LossTerms {
    torch::Tensor l_cls, l_reg, l_cen, l_kpt, total;
    std::int64_t n_pos = 0;
};

struct LossBreakdown {
    double l_cls = 0.0, l_reg = 0.0, l_cen = 0.0, l_kpt = 0.0, total = 0.0;
    std::int64_t n_pos = 0;
};

/// total = l_cls + lambda * l_reg + l_cen + l_kpt.
LossTerms composite_loss(const NetworkOutputs& outputs, const BatchTargets& targets, double lambda_reg = 1.0);

LossBreakdown breakdown(const LossTerms& terms);
nlohmann::json breakdown_to_json(const LossBreakdown& b);

}  // namespace dangerdet
