#include "dangerdet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "dangerdet/annotation.hpp"
#include "dangerdet/error.hpp"

namespace dangerdet {

using json = nlohmann::json;

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

bool ranks_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max, a.class_id) <
           std::tie(b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max, b.class_id);
}

std::vector<Detection> decode_level(const LevelPrediction& pred, ImageSize image, double score_thresh,
                                    int topk) {
    std::vector<Detection> out;
    const double s = pred.spec.stride;
    for (int row = 0; row < pred.rows; ++row) {
        for (int col = 0; col < pred.cols; ++col) {
            const auto idx = static_cast<std::size_t>(row) * pred.cols + col;
            const double centered = sigmoid(pred.ctr_logits[idx]);
            const float* d = &pred.reg[idx * 4];
            const double x = s / 2 + col * s;
            const double y = s / 2 + row * s;
            for (int c = 0; c < pred.num_classes; ++c) {
                const double score = sigmoid(pred.cls_logits[idx * pred.num_classes + c]) * centered;
                if (!(score > score_thresh)) continue;
                Detection det{c, score, clip_box({x - d[0], y - d[1], x + d[2], y + d[3]}, image)};
                if (det.box.valid()) out.push_back(det);
            }
        }
    }
    if (topk >= 0 && out.size() > static_cast<std::size_t>(topk)) {
        std::partial_sort(out.begin(), out.begin() + topk, out.end(), ranks_before);
        out.resize(static_cast<std::size_t>(topk));
    } else {
        std::sort(out.begin(), out.end(), ranks_before);
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh) {
    std::sort(detections.begin(), detections.end(), ranks_before);
    std::vector<char> suppressed(detections.size(), 0);
    std::vector<Detection> kept;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (suppressed[i]) continue;
        const auto& keep = detections[i];
        kept.push_back(keep);
        for (std::size_t j = i + 1; j < detections.size(); ++j) {
            if (suppressed[j] || detections[j].class_id != keep.class_id) continue;
            if (iou(keep.box, detections[j].box) > iou_thresh) suppressed[j] = 1;
        }
    }
    return kept;
}

std::vector<Detection> postprocess(std::span<const LevelPrediction> levels, ImageSize image,
                                   const DecodeOptions& options) {
    std::vector<Detection> all;
    for (const auto& level : levels) {
        auto dets = decode_level(level, image, options.score_thresh, options.topk);
        all.insert(all.end(), dets.begin(), dets.end());
    }
    auto kept = nms(std::move(all), options.nms_iou);
    if (options.max_detections >= 0 && kept.size() > static_cast<std::size_t>(options.max_detections))
        kept.resize(static_cast<std::size_t>(options.max_detections));
    return kept;
}

std::string detections_to_jsonl(const std::string& image_id, std::span<const Detection> detections) {
    std::string text;
    for (const auto& d : detections) {
        json rec = {{"image_id", image_id},
                    {"class", std::string(class_name(d.class_id))},
                    {"score", d.score},
                    {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}};
        text += rec.dump();
        text += '\n';
    }
    return text;
}

std::vector<ImageDetections> parse_detections_jsonl(const std::string& text) {
    std::vector<ImageDetections> out;
    std::map<std::string, std::size_t> index;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto rec = json::parse(line);
            const auto id = rec.at("image_id").get<std::string>();
            const auto& b = rec.at("box");
            Detection d;
            d.class_id = class_id_from_name(rec.at("class").get<std::string>());
            d.score = rec.at("score").get<double>();
            d.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
            auto [it, inserted] = index.try_emplace(id, out.size());
            if (inserted) out.push_back({id, {}});
            out[it->second].detections.push_back(d);
        } catch (const json::exception& e) {
            throw Error("postprocess", "MalformedDetections",
                        "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

cv::Mat render_overlay(const cv::Mat& image, std::span<const Detection> detections, double min_score) {
    static const cv::Scalar kColors[] = {{40, 40, 230}, {0, 160, 255}, {230, 120, 30}};
    cv::Mat canvas = image.clone();
    const int thickness = std::max(1, canvas.cols / 400);
    for (const auto& d : detections) {
        if (d.score < min_score) continue;
        const auto& color = kColors[d.class_id % 3];
        const cv::Point p0(static_cast<int>(std::lround(d.box.x_min)), static_cast<int>(std::lround(d.box.y_min)));
        const cv::Point p1(static_cast<int>(std::lround(d.box.x_max)), static_cast<int>(std::lround(d.box.y_max)));
        cv::rectangle(canvas, p0, p1, color, thickness);
        std::ostringstream label;
        label << class_name(d.class_id) << ' ' << std::fixed;
        label.precision(2);
        label << d.score;
        cv::putText(canvas, label.str(), {p0.x, std::max(10, p0.y - 3)}, cv::FONT_HERSHEY_SIMPLEX,
                    0.35 * thickness, color, 1);
    }
    return canvas;
}

}  // namespace dangerdet
