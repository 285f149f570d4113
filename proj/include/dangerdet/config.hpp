#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dangerdet/geometry.hpp"
#include "dangerdet/postprocess.hpp"

namespace dangerdet {

inline constexpr int kConfigVersion = 1;

enum class BackboneVariant { kTiny, kResNet50, kResNet101 };

std::string_view variant_name(BackboneVariant v);
BackboneVariant variant_from_name(std::string_view name);

struct BackboneConfig {
    BackboneVariant variant = BackboneVariant::kTiny;
    int pyramid_channels = 64;
    int hourglass_count = 1;  // T; 0 disables the pose branch
    int hourglass_channels = 64;
    int hourglass_depth = 2;
    int num_keypoints = 17;
    int num_classes = 3;
    int norm_groups = 8;

    /// Widths and depths belonging to a backbone variant.
    static BackboneConfig for_variant(BackboneVariant variant, int hourglass_count);

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct TrainConfig {
    BackboneConfig model;
    ImageSize input{256, 128};
    int batch_size = 4;
    double base_lr = 0.01;
    int warmup_steps = 100;
    double warmup_factor = 1.0 / 3.0;
    std::vector<int> milestones;
    double lr_gamma = 0.1;
    int max_steps = 1000;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double clip_norm = 10.0;
    double lambda_reg = 1.0;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;  // 0: final checkpoint only
    bool flip = true;
    bool deterministic = true;
    double heatmap_sigma = 2.0;
    double keypoint_threshold = 0.1;
    DecodeOptions decode;
};

/// Flat `key = value` settings; '#' starts a comment.
using Settings = std::map<std::string, std::string>;

Settings parse_settings(std::string_view text);
Settings parse_override(std::string_view key_equals_value, Settings into = {});

/// Applies settings on top of `base` (defaults < file < overrides is achieved
/// by applying in that order). Unknown keys raise ConfigError.
TrainConfig apply_settings(TrainConfig base, const Settings& settings);

std::string format_settings(const TrainConfig& config);

nlohmann::json backbone_to_json(const BackboneConfig& c);
BackboneConfig backbone_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace dangerdet
