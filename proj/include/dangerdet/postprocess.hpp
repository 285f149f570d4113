#pragma once

#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "dangerdet/geometry.hpp"
#include "dangerdet/targets.hpp"

namespace dangerdet {

struct Detection {
    int class_id = 0;
    double score = 0.0;
    Box box;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Total order used everywhere detections are ranked: score descending, then
/// x_min, y_min, x_max, y_max, class ascending.
bool ranks_before(const Detection& a, const Detection& b);

/// Dense head outputs for one level of one image. `reg` already holds the
/// positive distances exp(s_i * x).
struct LevelPrediction {
    LevelSpec spec;
    int rows = 0;
    int cols = 0;
    int num_classes = 0;
    std::vector<float> cls_logits;  // rows*cols*num_classes
    std::vector<float> ctr_logits;  // rows*cols
    std::vector<float> reg;         // rows*cols*4
};

struct DecodeOptions {
    double score_thresh = 0.05;
    int topk = 1000;
    double nms_iou = 0.6;
    int max_detections = 100;
};

std::vector<Detection> decode_level(const LevelPrediction& pred, ImageSize image, double score_thresh,
                                    int topk);

/// Class-wise greedy suppression: a detection is dropped when its IoU with an
/// already kept detection of the same class exceeds `iou_thresh`.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh);

/// decode every level, merge, suppress, cap.
std::vector<Detection> postprocess(std::span<const LevelPrediction> levels, ImageSize image,
                                   const DecodeOptions& options = {});

std::string detections_to_jsonl(const std::string& image_id, std::span<const Detection> detections);

struct ImageDetections {
    std::string image_id;
    std::vector<Detection> detections;
};

/// Parses JSON-lines records {image_id, class, score, box}; grouped by image in
/// first-seen order.
std::vector<ImageDetections> parse_detections_jsonl(const std::string& text);

/// Draws class-colored boxes and labels for detections scoring at least `min_score`.
cv::Mat render_overlay(const cv::Mat& image, std::span<const Detection> detections, double min_score = 0.0);

}  // namespace dangerdet
