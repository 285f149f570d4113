#include "dangerdet/losses.hpp"

#include <string>

#include "dangerdet/error.hpp"

namespace dangerdet {

namespace {

constexpr const char* kModule = "losses";

std::string shape_string(const torch::Tensor& t) {
    std::string s = "[";
    for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
    return s + "]";
}

}  // namespace

BatchTargets collate_targets(std::span<const TargetMaps> targets, std::span<const KeypointHeatmapStack> heatmaps,
                             std::span<const bool> mask, torch::ScalarType dtype) {
    if (targets.empty()) throw Error(kModule, "ShapeMismatch", "empty batch");
    if (!heatmaps.empty() && (heatmaps.size() != targets.size() || mask.size() != targets.size()))
        throw Error(kModule, "ShapeMismatch", "heatmap and target batch sizes differ");

    const auto n = static_cast<int64_t>(targets.size());
    int64_t m = 0;
    for (const auto& l : targets[0].levels) m += static_cast<int64_t>(l.size());

    auto cls = torch::empty({n, m}, torch::kInt64);
    auto reg = torch::empty({n, m, 4}, torch::kFloat64);
    auto ctr = torch::empty({n, m}, torch::kFloat64);
    auto* pc = cls.data_ptr<int64_t>();
    auto* pr = reg.data_ptr<double>();
    auto* pt = ctr.data_ptr<double>();
    for (int64_t b = 0; b < n; ++b) {
        int64_t filled = 0;
        for (const auto& l : targets[static_cast<std::size_t>(b)].levels) {
            for (std::size_t i = 0; i < l.size(); ++i) {
                const int64_t at = b * m + filled + static_cast<int64_t>(i);
                pc[at] = l.class_map[i];
                for (int k = 0; k < 4; ++k) pr[at * 4 + k] = l.reg[i * 4 + static_cast<std::size_t>(k)];
                pt[at] = l.ctr[i];
            }
            filled += static_cast<int64_t>(l.size());
        }
        if (filled != m) throw Error(kModule, "ShapeMismatch", "images in a batch differ in size");
    }

    BatchTargets out;
    out.class_map = cls;
    out.reg = reg.to(dtype);
    out.ctr = ctr.to(dtype);
    if (!heatmaps.empty()) {
        const auto& h0 = heatmaps[0];
        auto hm = torch::empty({n, h0.channels, h0.rows, h0.cols}, torch::kFloat32);
        auto mk = torch::empty({n}, torch::kFloat32);
        for (int64_t b = 0; b < n; ++b) {
            const auto& h = heatmaps[static_cast<std::size_t>(b)];
            if (h.channels != h0.channels || h.rows != h0.rows || h.cols != h0.cols)
                throw Error(kModule, "ShapeMismatch", "heatmap stacks differ in shape");
            std::copy(h.maps.begin(), h.maps.end(), hm[b].data_ptr<float>());
            mk[b] = mask[static_cast<std::size_t>(b)] ? 1.0f : 0.0f;
        }
        out.heatmaps = hm.to(dtype);
        out.keypoint_mask = mk.to(dtype);
    }
    return out;
}

torch::Tensor flatten_levels(const std::vector<torch::Tensor>& maps) {
    std::vector<torch::Tensor> parts;
    parts.reserve(maps.size());
    for (const auto& t : maps) parts.push_back(t.flatten(2).transpose(1, 2));
    return torch::cat(parts, 1);
}

torch::Tensor focal_loss(const torch::Tensor& cls_logits, const torch::Tensor& class_map, std::int64_t n_pos) {
    if (!torch::isfinite(cls_logits).all().item<bool>())
        throw Error(kModule, "NonFiniteLogit", "classification logits contain inf or nan");
    auto pos = class_map.ge(0).unsqueeze(-1);
    auto onehot = (torch::one_hot(class_map.clamp_min(0), cls_logits.size(-1)) * pos).to(cls_logits.scalar_type());
    auto p = torch::sigmoid(cls_logits);
    auto ce = torch::binary_cross_entropy_with_logits(cls_logits, onehot, {}, {}, at::Reduction::None);
    auto p_t = p * onehot + (1 - p) * (1 - onehot);
    auto alpha_t = kFocalAlpha * onehot + (1 - kFocalAlpha) * (1 - onehot);
    auto loss = alpha_t * torch::pow(1 - p_t, kFocalGamma) * ce;
    return loss.sum() / static_cast<double>(std::max<std::int64_t>(n_pos, 1));
}

torch::Tensor iou_loss(const torch::Tensor& pred, const torch::Tensor& target, std::int64_t n_pos) {
    if (pred.sizes() != target.sizes())
        throw Error(kModule, "ShapeMismatch", "prediction " + shape_string(pred) + " vs target " + shape_string(target));
    if (pred.size(0) == 0) return pred.sum() * 0;
    if (!(pred.gt(0).all().item<bool>() && target.gt(0).all().item<bool>()))
        throw Error(kModule, "NonPositiveDistance", "regression distances must be positive");
    auto pl = pred.select(1, 0), pt = pred.select(1, 1), pr = pred.select(1, 2), pb = pred.select(1, 3);
    auto tl = target.select(1, 0), tt = target.select(1, 1), tr = target.select(1, 2), tb = target.select(1, 3);
    auto pred_area = (pl + pr) * (pt + pb);
    auto target_area = (tl + tr) * (tt + tb);
    auto w = torch::min(pl, tl) + torch::min(pr, tr);
    auto h = torch::min(pt, tt) + torch::min(pb, tb);
    auto inter = w * h;
    auto uni = pred_area + target_area - inter;
    return -torch::log(inter / uni).sum() / static_cast<double>(std::max<std::int64_t>(n_pos, 1));
}

torch::Tensor centerness_loss(const torch::Tensor& logits, const torch::Tensor& target, std::int64_t n_pos) {
    if (logits.sizes() != target.sizes())
        throw Error(kModule, "ShapeMismatch", "logits " + shape_string(logits) + " vs target " + shape_string(target));
    if (logits.numel() == 0) return logits.sum() * 0;
    auto bce = torch::binary_cross_entropy_with_logits(logits, target, {}, {}, at::Reduction::Sum);
    return bce / static_cast<double>(std::max<std::int64_t>(n_pos, 1));
}

torch::Tensor keypoint_loss(const std::vector<torch::Tensor>& stages, const torch::Tensor& target,
                            const torch::Tensor& mask) {
    if (stages.empty()) return torch::zeros({}, target.defined() ? target.options() : torch::TensorOptions());
    auto total = torch::zeros({}, stages[0].options());
    for (const auto& s : stages) {
        if (s.sizes() != target.sizes())
            throw Error(kModule, "ShapeMismatch",
                        "stage " + shape_string(s) + " vs target " + shape_string(target));
        auto per_sample = (s - target).pow(2).flatten(1).mean(1);
        total = total + (per_sample * mask).mean();
    }
    return total;
}

LossTerms composite_loss(const NetworkOutputs& outputs, const BatchTargets& targets, double lambda_reg) {
    auto cls = flatten_levels(outputs.cls_logits);
    auto reg = flatten_levels(outputs.reg);
    auto ctr = flatten_levels(outputs.ctr_logits).squeeze(-1);
    if (cls.size(0) != targets.class_map.size(0) || cls.size(1) != targets.class_map.size(1))
        throw Error(kModule, "ShapeMismatch",
                    "outputs " + shape_string(cls) + " vs targets " + shape_string(targets.class_map));

    LossTerms t;
    auto pos = targets.class_map.ge(0);
    t.n_pos = pos.sum().item<int64_t>();
    t.l_cls = focal_loss(cls, targets.class_map, t.n_pos);
    t.l_reg = iou_loss(reg.index({pos}), targets.reg.index({pos}), t.n_pos);
    t.l_cen = centerness_loss(ctr.index({pos}), targets.ctr.index({pos}), t.n_pos);
    if (!outputs.kpt_heatmaps.empty() && targets.heatmaps.defined())
        t.l_kpt = keypoint_loss(outputs.kpt_heatmaps, targets.heatmaps, targets.keypoint_mask);
    else
        t.l_kpt = torch::zeros({}, cls.options());
    t.total = t.l_cls + lambda_reg * t.l_reg + t.l_cen + t.l_kpt;
    return t;
}

LossBreakdown breakdown(const LossTerms& t) {
    LossBreakdown b;
    b.l_cls = t.l_cls.item<double>();
    b.l_reg = t.l_reg.item<double>();
    b.l_cen = t.l_cen.item<double>();
    b.l_kpt = t.l_kpt.item<double>();
    b.total = t.total.item<double>();
    b.n_pos = t.n_pos;
    return b;
}

nlohmann::json breakdown_to_json(const LossBreakdown& b) {
    return {{"l_cls", b.l_cls}, {"l_reg", b.l_reg}, {"l_cen", b.l_cen},
            {"l_kpt", b.l_kpt}, {"total", b.total}, {"n_pos", b.n_pos}};
}

}  // namespace dangerdet
