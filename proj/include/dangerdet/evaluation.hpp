#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dangerdet/annotation.hpp"
#include "dangerdet/postprocess.hpp"

namespace dangerdet {

/// IoU match thresholds 0.50, 0.55, ..., 0.95.
inline constexpr int kNumIouThresholds = 10;
std::array<double, kNumIouThresholds> iou_thresholds();

/// TP flag per detection of one image, aligned with the input order.
/// Detections are visited by descending score (stable); each takes the
/// unmatched same-class ground truth of highest IoU >= iou_thresh.
std::vector<bool> match_image(std::span<const Detection> detections, std::span<const BoxAnnotation> gts,
                              double iou_thresh);

std::vector<std::vector<bool>> match_detections(std::span<const std::vector<Detection>> detections,
                                                std::span<const std::vector<BoxAnnotation>> gts,
                                                double iou_thresh);

struct ScoredFlag {
    double score = 0.0;
    bool tp = false;
};

inline constexpr int kRecallPoints = 101;

/// 101-point interpolated precision at recall 0, 0.01, ..., 1.
std::vector<double> interpolated_precision(std::vector<ScoredFlag> flags, int n_gt);

/// Mean of the 101-point interpolated precision; NaN when n_gt == 0.
double average_precision(std::vector<ScoredFlag> flags, int n_gt);

struct ClassReport {
    std::string name;
    int labels = 0;
    std::array<double, kNumIouThresholds> ap{};
    double ap50 = 0.0;
    double ap75 = 0.0;
    double map = 0.0;
    std::array<std::vector<double>, kNumIouThresholds> precision;  // 101 points each
};

struct EvalReport {
    std::vector<ClassReport> classes;
    std::array<double, kNumIouThresholds> ap{};
    double ap50 = 0.0;
    double ap75 = 0.0;
    double map = 0.0;
    int images = 0;
};

/// Per-class and overall AP over all thresholds. Classes without labels report
/// NaN and are left out of the class mean.
EvalReport evaluate(std::span<const std::vector<Detection>> detections,
                    std::span<const std::vector<BoxAnnotation>> gts, int num_classes = kNumClasses);

nlohmann::json report_to_json(const EvalReport& report);

/// Per-behavior table with "Labels" and "mAP" rows, values in percent.
std::string format_class_table(const EvalReport& report);

/// Deterministic 8:2 split: true for the validation share, keyed on a 64-bit
/// FNV-1a hash of the image id.
bool in_validation_split(std::string_view image_id);

}  // namespace dangerdet
