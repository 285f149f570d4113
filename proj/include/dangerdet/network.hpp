#pragma once

#include <array>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "dangerdet/config.hpp"
#include "dangerdet/geometry.hpp"

namespace dangerdet {

inline constexpr int kNumLevels = 5;  // P3..P7

/// All tensors are NCHW. Level vectors hold P3..P7 in order; stage vectors
/// hold one entry per hourglass and are empty when T = 0.
struct NetworkOutputs {
    std::vector<torch::Tensor> cls_logits;  // N x C x H_i x W_i
    std::vector<torch::Tensor> reg_raw;     // N x 4 x H_i x W_i, before exp(s_i x)
    std::vector<torch::Tensor> reg;         // N x 4 x H_i x W_i, strictly positive
    std::vector<torch::Tensor> ctr_logits;  // N x 1 x H_i x W_i
    std::vector<torch::Tensor> kpt_heatmaps;   // N x K x H_3 x W_3
    std::vector<torch::Tensor> pose_features;  // N x F_p x H_3 x W_3
};

/// Conv -> GroupNorm -> optional ReLU.
struct ConvNormImpl : torch::nn::Module {
    ConvNormImpl(int in, int out, int kernel, int stride, int groups, bool relu = true);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
    bool relu;
};
TORCH_MODULE(ConvNorm);

struct BasicBlockImpl : torch::nn::Module {
    BasicBlockImpl(int in, int out, int stride, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    ConvNorm a{nullptr}, b{nullptr}, shortcut{nullptr};
};
TORCH_MODULE(BasicBlock);

struct BottleneckImpl : torch::nn::Module {
    BottleneckImpl(int in, int width, int stride, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    ConvNorm a{nullptr}, b{nullptr}, c{nullptr}, shortcut{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Produces C3, C4, C5 (strides 8, 16, 32).
struct BackboneImpl : torch::nn::Module {
    explicit BackboneImpl(const BackboneConfig& config);
    std::array<torch::Tensor, 3> forward(const torch::Tensor& x);

    std::array<int, 3> out_channels{};
    torch::nn::Sequential stem{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr}, c5{nullptr};
};
TORCH_MODULE(Backbone);

struct PyramidImpl : torch::nn::Module {
    PyramidImpl(std::array<int, 3> in_channels, int channels);
    std::vector<torch::Tensor> forward(const std::array<torch::Tensor, 3>& c);

    torch::nn::Conv2d lat3{nullptr}, lat4{nullptr}, lat5{nullptr};
    torch::nn::Conv2d out3{nullptr}, out4{nullptr}, out5{nullptr};
    torch::nn::Conv2d p6{nullptr}, p7{nullptr};
};
TORCH_MODULE(Pyramid);

/// Pre-activation bottleneck residual with identity skip.
struct HourglassResidualImpl : torch::nn::Module {
    HourglassResidualImpl(int channels, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm n1{nullptr}, n2{nullptr}, n3{nullptr};
    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
};
TORCH_MODULE(HourglassResidual);

struct HourglassImpl : torch::nn::Module {
    HourglassImpl(int depth, int channels, int groups);
    torch::Tensor forward(const torch::Tensor& x);

    HourglassResidual up1{nullptr}, low1{nullptr}, low3{nullptr}, bottom{nullptr};
    std::shared_ptr<HourglassImpl> inner;
};
TORCH_MODULE(Hourglass);

struct PoseStackOutputs {
    std::vector<torch::Tensor> heatmaps;
    std::vector<torch::Tensor> features;
};

/// T hourglasses in series on C3, each emitting a K-channel heatmap and the
/// feature map that is re-injected into the next stage.
struct PoseStackImpl : torch::nn::Module {
    PoseStackImpl(int in_channels, const BackboneConfig& config);
    PoseStackOutputs forward(const torch::Tensor& c3);

    ConvNorm pre{nullptr};
    torch::nn::ModuleList hourglasses, residuals, features, heads, merge_features, merge_heatmaps;
};
TORCH_MODULE(PoseStack);

/// Shared prediction towers. Regression and center-ness share one trunk.
struct HeadImpl : torch::nn::Module {
    HeadImpl(int channels, int num_classes, int pose_channels, int groups);

    torch::nn::Sequential cls_tower{nullptr}, box_tower{nullptr};
    torch::nn::Conv2d cls_out{nullptr}, reg_out{nullptr}, ctr_out{nullptr};
    torch::nn::Conv2d align{nullptr};  // present when pose_channels > 0
    std::vector<torch::Tensor> scales;  // s_3..s_7
};
TORCH_MODULE(Head);

struct DangerDetImpl : torch::nn::Module {
    explicit DangerDetImpl(const BackboneConfig& config);

    /// `pixels` is N x 3 x H x W, normalized. H and W must be divisible by 128.
    NetworkOutputs forward(const torch::Tensor& pixels);

    /// Concatenate stage features, align channels, pool to level `level`.
    torch::Tensor aggregate_pose(const std::vector<torch::Tensor>& pose_features, int level);

    const BackboneConfig& config() const { return config_; }
    std::int64_t parameter_count() const;

    Backbone backbone{nullptr};
    Pyramid pyramid{nullptr};
    PoseStack pose{nullptr};
    Head head{nullptr};

private:
    BackboneConfig config_;
};
TORCH_MODULE(DangerDet);

/// Per-channel statistics in BGR order on the 0..255 scale.
struct NormStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// 3 x H x W float tensor of (pixel - mean) / std from an 8-bit BGR image.
torch::Tensor image_to_tensor(const cv::Mat& bgr, const NormStats& stats);

/// Sets the intra-op thread count to 1 and enables deterministic algorithms.
void configure_determinism();

}  // namespace dangerdet
