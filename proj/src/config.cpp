#include "dangerdet/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "dangerdet/error.hpp"
#include "dangerdet/io.hpp"

namespace dangerdet {

using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error("cli", "ConfigError", message); }

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) config_error("invalid value '" + value + "' for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    config_error("invalid boolean '" + value + "' for " + key);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number<int>(key, item));
    }
    return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"config_version",
         [](TrainConfig&, const std::string& k, const std::string& v) {
             if (parse_number<int>(k, v) != kConfigVersion) config_error("unsupported config_version " + v);
         }},
        {"backbone",
         [](TrainConfig& c, const std::string&, const std::string& v) {
             c.model = BackboneConfig::for_variant(variant_from_name(v), c.model.hourglass_count);
         }},
        {"hourglass_count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.hourglass_count = parse_number<int>(k, v); }},
        {"hourglass_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.hourglass_channels = parse_number<int>(k, v); }},
        {"hourglass_depth", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.hourglass_depth = parse_number<int>(k, v); }},
        {"pyramid_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.pyramid_channels = parse_number<int>(k, v); }},
        {"num_keypoints", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.num_keypoints = parse_number<int>(k, v); }},
        {"norm_groups", [](TrainConfig& c, const std::string& k, const std::string& v) { c.model.norm_groups = parse_number<int>(k, v); }},
        {"input_width", [](TrainConfig& c, const std::string& k, const std::string& v) { c.input.width = parse_number<int>(k, v); }},
        {"input_height", [](TrainConfig& c, const std::string& k, const std::string& v) { c.input.height = parse_number<int>(k, v); }},
        {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_number<int>(k, v); }},
        {"base_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.base_lr = parse_number<double>(k, v); }},
        {"warmup_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_steps = parse_number<int>(k, v); }},
        {"warmup_factor", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_factor = parse_number<double>(k, v); }},
        {"milestones", [](TrainConfig& c, const std::string& k, const std::string& v) { c.milestones = parse_int_list(k, v); }},
        {"lr_gamma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr_gamma = parse_number<double>(k, v); }},
        {"max_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_steps = parse_number<int>(k, v); }},
        {"momentum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_number<double>(k, v); }},
        {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_number<double>(k, v); }},
        {"clip_norm", [](TrainConfig& c, const std::string& k, const std::string& v) { c.clip_norm = parse_number<double>(k, v); }},
        {"lambda_reg", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lambda_reg = parse_number<double>(k, v); }},
        {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
        {"checkpoint_interval", [](TrainConfig& c, const std::string& k, const std::string& v) { c.checkpoint_interval = parse_number<int>(k, v); }},
        {"flip", [](TrainConfig& c, const std::string& k, const std::string& v) { c.flip = parse_bool(k, v); }},
        {"deterministic", [](TrainConfig& c, const std::string& k, const std::string& v) { c.deterministic = parse_bool(k, v); }},
        {"heatmap_sigma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.heatmap_sigma = parse_number<double>(k, v); }},
        {"keypoint_threshold", [](TrainConfig& c, const std::string& k, const std::string& v) { c.keypoint_threshold = parse_number<double>(k, v); }},
        {"score_thresh", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decode.score_thresh = parse_number<double>(k, v); }},
        {"topk", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decode.topk = parse_number<int>(k, v); }},
        {"nms_iou", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decode.nms_iou = parse_number<double>(k, v); }},
        {"max_detections", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decode.max_detections = parse_number<int>(k, v); }},
    };
    return table;
}

void validate(const TrainConfig& c) {
    const int t = c.model.hourglass_count;
    if (t != 0 && t != 1 && t != 2 && t != 4) config_error("hourglass_count must be one of 0, 1, 2, 4");
    if (c.lambda_reg <= 0) config_error("lambda_reg must be positive");
    if (c.batch_size <= 0) config_error("batch_size must be positive");
    if (c.input.width % 128 != 0 || c.input.height % 128 != 0 || c.input.width <= 0 || c.input.height <= 0)
        config_error("input size must be a positive multiple of 128");
    if (c.model.num_keypoints <= 0) config_error("num_keypoints must be positive");
}

}  // namespace

std::string_view variant_name(BackboneVariant v) {
    switch (v) {
        case BackboneVariant::kTiny: return "tiny";
        case BackboneVariant::kResNet50: return "resnet50";
        case BackboneVariant::kResNet101: return "resnet101";
    }
    return "tiny";
}

BackboneVariant variant_from_name(std::string_view name) {
    if (name == "tiny") return BackboneVariant::kTiny;
    if (name == "resnet50") return BackboneVariant::kResNet50;
    if (name == "resnet101") return BackboneVariant::kResNet101;
    config_error("unknown backbone '" + std::string(name) + "'");
}

BackboneConfig BackboneConfig::for_variant(BackboneVariant variant, int hourglass_count) {
    BackboneConfig c;
    c.variant = variant;
    c.hourglass_count = hourglass_count;
    if (variant != BackboneVariant::kTiny) {
        c.pyramid_channels = 256;
        c.hourglass_channels = 256;
        c.hourglass_depth = 4;
        c.norm_groups = 32;
    }
    return c;
}

Settings parse_settings(std::string_view text) {
    Settings out;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) config_error("line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) config_error("line " + std::to_string(line_no) + ": empty key");
        out[key] = trim(std::string_view(line).substr(eq + 1));
    }
    return out;
}

Settings parse_override(std::string_view kv, Settings into) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) config_error("override '" + std::string(kv) + "' is not key=value");
    into[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
    return into;
}

TrainConfig apply_settings(TrainConfig base, const Settings& settings) {
    const auto& table = setters();
    // the backbone resets variant-dependent widths, so it goes first
    if (auto it = settings.find("backbone"); it != settings.end()) table.at("backbone")(base, it->first, it->second);
    for (const auto& [key, value] : settings) {
        if (key == "backbone") continue;
        auto it = table.find(key);
        if (it == table.end()) config_error("unknown config key '" + key + "'");
        it->second(base, key, value);
    }
    validate(base);
    return base;
}

std::string format_settings(const TrainConfig& c) {
    std::ostringstream out;
    std::string milestones;
    for (std::size_t i = 0; i < c.milestones.size(); ++i)
        milestones += (i ? "," : "") + std::to_string(c.milestones[i]);
    out << "config_version = " << kConfigVersion << '\n'
        << "backbone = " << variant_name(c.model.variant) << '\n'
        << "hourglass_count = " << c.model.hourglass_count << '\n'
        << "hourglass_channels = " << c.model.hourglass_channels << '\n'
        << "hourglass_depth = " << c.model.hourglass_depth << '\n'
        << "pyramid_channels = " << c.model.pyramid_channels << '\n'
        << "num_keypoints = " << c.model.num_keypoints << '\n'
        << "norm_groups = " << c.model.norm_groups << '\n'
        << "input_width = " << c.input.width << '\n'
        << "input_height = " << c.input.height << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "base_lr = " << format_double(c.base_lr) << '\n'
        << "warmup_steps = " << c.warmup_steps << '\n'
        << "warmup_factor = " << format_double(c.warmup_factor) << '\n'
        << "milestones = " << milestones << '\n'
        << "lr_gamma = " << format_double(c.lr_gamma) << '\n'
        << "max_steps = " << c.max_steps << '\n'
        << "momentum = " << format_double(c.momentum) << '\n'
        << "weight_decay = " << format_double(c.weight_decay) << '\n'
        << "clip_norm = " << format_double(c.clip_norm) << '\n'
        << "lambda_reg = " << format_double(c.lambda_reg) << '\n'
        << "seed = " << c.seed << '\n'
        << "checkpoint_interval = " << c.checkpoint_interval << '\n'
        << "flip = " << (c.flip ? "true" : "false") << '\n'
        << "deterministic = " << (c.deterministic ? "true" : "false") << '\n'
        << "heatmap_sigma = " << format_double(c.heatmap_sigma) << '\n'
        << "keypoint_threshold = " << format_double(c.keypoint_threshold) << '\n'
        << "score_thresh = " << format_double(c.decode.score_thresh) << '\n'
        << "topk = " << c.decode.topk << '\n'
        << "nms_iou = " << format_double(c.decode.nms_iou) << '\n'
        << "max_detections = " << c.decode.max_detections << '\n';
    return out.str();
}

json backbone_to_json(const BackboneConfig& c) {
    return {{"variant", std::string(variant_name(c.variant))},
            {"pyramid_channels", c.pyramid_channels},
            {"hourglass_count", c.hourglass_count},
            {"hourglass_channels", c.hourglass_channels},
            {"hourglass_depth", c.hourglass_depth},
            {"num_keypoints", c.num_keypoints},
            {"num_classes", c.num_classes},
            {"norm_groups", c.norm_groups}};
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.pyramid_channels = j.at("pyramid_channels").get<int>();
    c.hourglass_count = j.at("hourglass_count").get<int>();
    c.hourglass_channels = j.at("hourglass_channels").get<int>();
    c.hourglass_depth = j.at("hourglass_depth").get<int>();
    c.num_keypoints = j.at("num_keypoints").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    json out = json::object();
    for (const auto& [k, v] : parse_settings(format_settings(c))) out[k] = v;
    return out;
}

TrainConfig train_config_from_json(const json& j) {
    Settings s;
    for (const auto& [k, v] : j.items()) s[k] = v.get<std::string>();
    return apply_settings(TrainConfig{}, s);
}

}  // namespace dangerdet
