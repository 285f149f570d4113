#include "dangerdet/network.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "dangerdet/error.hpp"
#include "dangerdet/targets.hpp"

namespace dangerdet {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kModule = "network";
constexpr double kPriorProbability = 0.01;
constexpr int kTowerDepth = 4;
constexpr double kMaxExponent = 20.0;

int groups_for(int channels, int groups) { return std::gcd(channels, groups); }

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1, bool bias = true) {
    return torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias));
}

torch::nn::GroupNorm group_norm(int channels, int groups) {
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups_for(channels, groups), channels));
}

void init_head_conv(const torch::nn::Conv2d& c, double bias = 0.0) {
    torch::NoGradGuard guard;
    torch::nn::init::normal_(c->weight, 0.0, 0.01);
    torch::nn::init::constant_(c->bias, bias);
}

torch::nn::Sequential tower(int channels, int groups) {
    torch::nn::Sequential seq;
    for (int i = 0; i < kTowerDepth; ++i) {
        auto c = conv(channels, channels, 3);
        init_head_conv(c);
        seq->push_back(c);
        seq->push_back(group_norm(channels, groups));
        seq->push_back(torch::nn::ReLU());
    }
    return seq;
}

}  // namespace

ConvNormImpl::ConvNormImpl(int in, int out, int kernel, int stride, int groups, bool relu_after)
    : relu(relu_after) {
    conv = register_module("conv", dangerdet::conv(in, out, kernel, stride, false));
    norm = register_module("norm", group_norm(out, groups));
}

torch::Tensor ConvNormImpl::forward(const torch::Tensor& x) {
    auto y = norm(conv(x));
    return relu ? torch::relu(y) : y;
}

BasicBlockImpl::BasicBlockImpl(int in, int out, int stride, int groups) {
    a = register_module("a", ConvNorm(in, out, 3, stride, groups));
    b = register_module("b", ConvNorm(out, out, 3, 1, groups, false));
    if (stride != 1 || in != out) shortcut = register_module("shortcut", ConvNorm(in, out, 1, stride, groups, false));
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
    auto skip = shortcut ? shortcut(x) : x;
    return torch::relu(b(a(x)) + skip);
}

BottleneckImpl::BottleneckImpl(int in, int width, int stride, int groups) {
    const int out = width * 4;
    a = register_module("a", ConvNorm(in, width, 1, 1, groups));
    b = register_module("b", ConvNorm(width, width, 3, stride, groups));
    c = register_module("c", ConvNorm(width, out, 1, 1, groups, false));
    if (stride != 1 || in != out) shortcut = register_module("shortcut", ConvNorm(in, out, 1, stride, groups, false));
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto skip = shortcut ? shortcut(x) : x;
    return torch::relu(c(b(a(x))) + skip);
}

BackboneImpl::BackboneImpl(const BackboneConfig& config) {
    const int g = config.norm_groups;
    if (config.variant == BackboneVariant::kTiny) {
        stem = torch::nn::Sequential(ConvNorm(3, 16, 3, 2, g));
        c2 = torch::nn::Sequential(BasicBlock(16, 16, 2, g));
        c3 = torch::nn::Sequential(BasicBlock(16, 32, 2, g));
        c4 = torch::nn::Sequential(BasicBlock(32, 64, 2, g));
        c5 = torch::nn::Sequential(BasicBlock(64, 128, 2, g));
        out_channels = {32, 64, 128};
    } else {
        const std::array<int, 4> blocks = config.variant == BackboneVariant::kResNet50
                                              ? std::array<int, 4>{3, 4, 6, 3}
                                              : std::array<int, 4>{3, 4, 23, 3};
        stem = torch::nn::Sequential(ConvNorm(3, 64, 7, 2, g),
                                     torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1)));
        int in = 64;
        auto stage = [&](int width, int count, int stride) {
            torch::nn::Sequential seq;
            for (int i = 0; i < count; ++i) {
                seq->push_back(Bottleneck(in, width, i == 0 ? stride : 1, g));
                in = width * 4;
            }
            return seq;
        };
        c2 = stage(64, blocks[0], 1);
        c3 = stage(128, blocks[1], 2);
        c4 = stage(256, blocks[2], 2);
        c5 = stage(512, blocks[3], 2);
        out_channels = {512, 1024, 2048};
    }
    register_module("stem", stem);
    register_module("c2", c2);
    register_module("c3", c3);
    register_module("c4", c4);
    register_module("c5", c5);
}

std::array<torch::Tensor, 3> BackboneImpl::forward(const torch::Tensor& x) {
    auto f3 = c3->forward(c2->forward(stem->forward(x)));
    auto f4 = c4->forward(f3);
    auto f5 = c5->forward(f4);
    return {f3, f4, f5};
}

PyramidImpl::PyramidImpl(std::array<int, 3> in, int ch) {
    lat3 = register_module("lat3", conv(in[0], ch, 1));
    lat4 = register_module("lat4", conv(in[1], ch, 1));
    lat5 = register_module("lat5", conv(in[2], ch, 1));
    out3 = register_module("out3", conv(ch, ch, 3));
    out4 = register_module("out4", conv(ch, ch, 3));
    out5 = register_module("out5", conv(ch, ch, 3));
    p6 = register_module("p6", conv(ch, ch, 3, 2));
    p7 = register_module("p7", conv(ch, ch, 3, 2));
}

std::vector<torch::Tensor> PyramidImpl::forward(const std::array<torch::Tensor, 3>& c) {
    auto up = [](const torch::Tensor& x, const torch::Tensor& like) {
        return F::interpolate(x, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                     .mode(torch::kNearest));
    };
    auto m5 = lat5(c[2]);
    auto m4 = lat4(c[1]) + up(m5, c[1]);
    auto m3 = lat3(c[0]) + up(m4, c[0]);
    auto p5 = out5(m5);
    auto q6 = p6(p5);
    auto q7 = p7(torch::relu(q6));
    return {out3(m3), out4(m4), p5, q6, q7};
}

HourglassResidualImpl::HourglassResidualImpl(int channels, int groups) {
    const int half = channels / 2;
    n1 = register_module("n1", group_norm(channels, groups));
    c1 = register_module("c1", conv(channels, half, 1));
    n2 = register_module("n2", group_norm(half, groups));
    c2 = register_module("c2", conv(half, half, 3));
    n3 = register_module("n3", group_norm(half, groups));
    c3 = register_module("c3", conv(half, channels, 1));
}

torch::Tensor HourglassResidualImpl::forward(const torch::Tensor& x) {
    auto y = c1(torch::relu(n1(x)));
    y = c2(torch::relu(n2(y)));
    y = c3(torch::relu(n3(y)));
    return x + y;
}

HourglassImpl::HourglassImpl(int depth, int channels, int groups) {
    up1 = register_module("up1", HourglassResidual(channels, groups));
    low1 = register_module("low1", HourglassResidual(channels, groups));
    if (depth > 1)
        inner = register_module("inner", std::make_shared<HourglassImpl>(depth - 1, channels, groups));
    else
        bottom = register_module("bottom", HourglassResidual(channels, groups));
    low3 = register_module("low3", HourglassResidual(channels, groups));
}

torch::Tensor HourglassImpl::forward(const torch::Tensor& x) {
    auto skip = up1(x);
    auto y = low1(torch::max_pool2d(x, 2, 2));
    y = inner ? inner->forward(y) : bottom(y);
    y = low3(y);
    y = F::interpolate(y, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{x.size(2), x.size(3)})
                              .mode(torch::kNearest));
    return skip + y;
}

PoseStackImpl::PoseStackImpl(int in_channels, const BackboneConfig& config) {
    const int ch = config.hourglass_channels;
    const int g = config.norm_groups;
    const int t = config.hourglass_count;
    pre = register_module("pre", ConvNorm(in_channels, ch, 1, 1, g));
    for (int i = 0; i < t; ++i) {
        hourglasses->push_back(Hourglass(config.hourglass_depth, ch, g));
        residuals->push_back(HourglassResidual(ch, g));
        features->push_back(ConvNorm(ch, ch, 1, 1, g));
        heads->push_back(conv(ch, config.num_keypoints, 1));
        if (i + 1 < t) {
            merge_features->push_back(conv(ch, ch, 1));
            merge_heatmaps->push_back(conv(config.num_keypoints, ch, 1));
        }
    }
    register_module("hourglasses", hourglasses);
    register_module("residuals", residuals);
    register_module("features", features);
    register_module("heads", heads);
    register_module("merge_features", merge_features);
    register_module("merge_heatmaps", merge_heatmaps);
}

PoseStackOutputs PoseStackImpl::forward(const torch::Tensor& c3) {
    PoseStackOutputs out;
    auto x = pre(c3);
    const auto t = hourglasses->size();
    for (std::size_t i = 0; i < t; ++i) {
        auto y = hourglasses[i]->as<HourglassImpl>()->forward(x);
        y = residuals[i]->as<HourglassResidualImpl>()->forward(y);
        auto feat = features[i]->as<ConvNormImpl>()->forward(y);
        auto heat = heads[i]->as<torch::nn::Conv2dImpl>()->forward(feat);
        if (i + 1 < t)
            x = x + merge_features[i]->as<torch::nn::Conv2dImpl>()->forward(feat) +
                merge_heatmaps[i]->as<torch::nn::Conv2dImpl>()->forward(heat);
        out.heatmaps.push_back(heat);
        out.features.push_back(feat);
    }
    return out;
}

HeadImpl::HeadImpl(int channels, int num_classes, int pose_channels, int groups) {
    cls_tower = register_module("cls_tower", tower(channels, groups));
    box_tower = register_module("box_tower", tower(channels, groups));
    cls_out = register_module("cls_out", conv(channels, num_classes, 3));
    reg_out = register_module("reg_out", conv(channels, 4, 3));
    ctr_out = register_module("ctr_out", conv(channels, 1, 3));
    init_head_conv(cls_out, -std::log((1.0 - kPriorProbability) / kPriorProbability));
    init_head_conv(reg_out);
    init_head_conv(ctr_out);
    if (pose_channels > 0) {
        align = register_module("align", conv(pose_channels, channels, 1));
        torch::NoGradGuard guard;
        align->weight.zero_();
        align->bias.zero_();
    }
    for (int level = 3; level <= 7; ++level)
        scales.push_back(register_parameter("scale_" + std::to_string(level), torch::ones({1})));
}

DangerDetImpl::DangerDetImpl(const BackboneConfig& config) : config_(config) {
    if (config.hourglass_count < 0)
        throw Error(kModule, "ConfigMismatch", "hourglass_count must be nonnegative");
    backbone = register_module("backbone", Backbone(config));
    pyramid = register_module("pyramid", Pyramid(backbone->out_channels, config.pyramid_channels));
    if (config.hourglass_count > 0)
        pose = register_module("pose", PoseStack(backbone->out_channels[0], config));
    head = register_module("head", Head(config.pyramid_channels, config.num_classes,
                                        config.hourglass_count * config.hourglass_channels, config.norm_groups));
}

torch::Tensor DangerDetImpl::aggregate_pose(const std::vector<torch::Tensor>& pose_features, int level) {
    auto aligned = head->align(torch::cat(pose_features, 1));
    const int factor = 1 << (level - 3);
    return factor == 1 ? aligned : torch::avg_pool2d(aligned, factor, factor);
}

NetworkOutputs DangerDetImpl::forward(const torch::Tensor& pixels) {
    if (pixels.dim() != 4 || pixels.size(1) != 3)
        throw Error(kModule, "ConfigMismatch", "expected an N x 3 x H x W input");
    const auto h = pixels.size(2), w = pixels.size(3);
    if (h <= 0 || w <= 0 || h % kCoarsestStride != 0 || w % kCoarsestStride != 0)
        throw Error(kModule, "IndivisibleInput",
                    "input " + std::to_string(w) + "x" + std::to_string(h) + " is not divisible by " +
                        std::to_string(kCoarsestStride));

    NetworkOutputs out;
    const auto c = backbone->forward(pixels);
    const auto levels = pyramid->forward(c);

    torch::Tensor aligned;
    if (pose) {
        auto stack = pose->forward(c[0]);
        out.kpt_heatmaps = std::move(stack.heatmaps);
        out.pose_features = std::move(stack.features);
        aligned = head->align(torch::cat(out.pose_features, 1));
    }

    for (int i = 0; i < kNumLevels; ++i) {
        auto p = levels[static_cast<std::size_t>(i)];
        auto cls_in = p;
        if (aligned.defined()) {
            const int factor = 1 << i;
            cls_in = p + (factor == 1 ? aligned : torch::avg_pool2d(aligned, factor, factor));
        }
        out.cls_logits.push_back(head->cls_out(head->cls_tower->forward(cls_in)));
        auto trunk = head->box_tower->forward(p);
        auto raw = head->reg_out(trunk);
        out.reg.push_back(torch::exp(torch::clamp(head->scales[static_cast<std::size_t>(i)] * raw,
                                                  -kMaxExponent, kMaxExponent)));
        out.reg_raw.push_back(raw);
        out.ctr_logits.push_back(head->ctr_out(trunk));
    }
    return out;
}

std::int64_t DangerDetImpl::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

torch::Tensor image_to_tensor(const cv::Mat& bgr, const NormStats& stats) {
    cv::Mat f;
    bgr.convertTo(f, CV_32FC3);
    auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).permute({2, 0, 1}).clone();
    auto mean = torch::tensor({stats.mean[0], stats.mean[1], stats.mean[2]}, torch::kFloat32).view({3, 1, 1});
    auto std = torch::tensor({stats.std[0], stats.std[1], stats.std[2]}, torch::kFloat32).view({3, 1, 1});
    return (t - mean) / std;
}

void configure_determinism() {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
}

}  // namespace dangerdet
