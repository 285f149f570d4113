#include "dangerdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "dangerdet/error.hpp"

namespace dangerdet {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> score_order(std::span<const Detection> detections) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
    return order;
}

double mean_ignoring_nan(std::span<const double> values) {
    double sum = 0.0;
    int n = 0;
    for (double v : values) {
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    return n > 0 ? sum / n : kNaN;
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

std::array<double, kNumIouThresholds> iou_thresholds() {
    std::array<double, kNumIouThresholds> t{};
    for (int i = 0; i < kNumIouThresholds; ++i) t[i] = 0.5 + 0.05 * i;
    return t;
}

std::vector<bool> match_image(std::span<const Detection> detections, std::span<const BoxAnnotation> gts,
                              double iou_thresh) {
    std::vector<bool> tp(detections.size(), false);
    std::vector<char> taken(gts.size(), 0);
    for (std::size_t d : score_order(detections)) {
        const auto& det = detections[d];
        double best = -1.0;
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != det.class_id) continue;
            const double o = iou(det.box, gts[g].box);
            if (o >= iou_thresh && o > best) {
                best = o;
                best_gt = g;
            }
        }
        if (best_gt < gts.size()) {
            taken[best_gt] = 1;
            tp[d] = true;
        }
    }
    return tp;
}

std::vector<std::vector<bool>> match_detections(std::span<const std::vector<Detection>> detections,
                                                std::span<const std::vector<BoxAnnotation>> gts,
                                                double iou_thresh) {
    if (detections.size() != gts.size())
        throw Error("evaluation", "SizeMismatch", "detections and ground truth cover different image counts");
    std::vector<std::vector<bool>> flags;
    flags.reserve(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i)
        flags.push_back(match_image(detections[i], gts[i], iou_thresh));
    return flags;
}

std::vector<double> interpolated_precision(std::vector<ScoredFlag> flags, int n_gt) {
    std::vector<double> out(kRecallPoints, 0.0);
    if (n_gt <= 0) return out;
    std::stable_sort(flags.begin(), flags.end(),
                     [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
    std::vector<double> precision(flags.size());
    std::vector<double> recall(flags.size());
    int tp = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i].tp ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / n_gt;
    }
    // monotone envelope from the right
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    for (int r = 0; r < kRecallPoints; ++r) {
        const double level = r / static_cast<double>(kRecallPoints - 1);
        auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) out[static_cast<std::size_t>(r)] = precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return out;
}

double average_precision(std::vector<ScoredFlag> flags, int n_gt) {
    if (n_gt <= 0) return kNaN;
    const auto p = interpolated_precision(std::move(flags), n_gt);
    return std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
}

EvalReport evaluate(std::span<const std::vector<Detection>> detections,
                    std::span<const std::vector<BoxAnnotation>> gts, int num_classes) {
    if (detections.size() != gts.size())
        throw Error("evaluation", "SizeMismatch", "detections and ground truth cover different image counts");
    EvalReport report;
    report.images = static_cast<int>(gts.size());
    report.classes.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        auto& cr = report.classes[static_cast<std::size_t>(c)];
        cr.name = c < kNumClasses ? std::string(class_name(c)) : "class" + std::to_string(c);
        for (const auto& image : gts)
            cr.labels += static_cast<int>(std::count_if(image.begin(), image.end(),
                                                        [c](const BoxAnnotation& b) { return b.class_id == c; }));
    }

    const auto thresholds = iou_thresholds();
    for (int t = 0; t < kNumIouThresholds; ++t) {
        const auto flags = match_detections(detections, gts, thresholds[t]);
        std::vector<std::vector<ScoredFlag>> per_class(static_cast<std::size_t>(num_classes));
        for (std::size_t i = 0; i < detections.size(); ++i)
            for (std::size_t d = 0; d < detections[i].size(); ++d) {
                const auto& det = detections[i][d];
                if (det.class_id < 0 || det.class_id >= num_classes) continue;
                per_class[static_cast<std::size_t>(det.class_id)].push_back({det.score, flags[i][d]});
            }
        for (int c = 0; c < num_classes; ++c) {
            auto& cr = report.classes[static_cast<std::size_t>(c)];
            auto& pc = per_class[static_cast<std::size_t>(c)];
            cr.precision[t] = interpolated_precision(pc, cr.labels);
            cr.ap[t] = cr.labels > 0 ? std::accumulate(cr.precision[t].begin(), cr.precision[t].end(), 0.0) /
                                           kRecallPoints
                                     : kNaN;
        }
    }

    std::vector<double> class_maps;
    for (auto& cr : report.classes) {
        cr.ap50 = cr.ap[0];
        cr.ap75 = cr.ap[5];
        cr.map = cr.labels > 0 ? std::accumulate(cr.ap.begin(), cr.ap.end(), 0.0) / kNumIouThresholds : kNaN;
        class_maps.push_back(cr.map);
    }
    for (int t = 0; t < kNumIouThresholds; ++t) {
        std::vector<double> at_t;
        for (const auto& cr : report.classes) at_t.push_back(cr.ap[t]);
        report.ap[t] = mean_ignoring_nan(at_t);
    }
    report.ap50 = report.ap[0];
    report.ap75 = report.ap[5];
    report.map = mean_ignoring_nan(class_maps);
    return report;
}

json report_to_json(const EvalReport& report) {
    json classes = json::array();
    for (const auto& cr : report.classes) {
        json ap = json::array();
        for (double v : cr.ap) ap.push_back(number_or_null(v));
        json curves = json::array();
        for (const auto& p : cr.precision) curves.push_back(p);
        classes.push_back({{"name", cr.name},
                           {"labels", cr.labels},
                           {"ap", ap},
                           {"ap50", number_or_null(cr.ap50)},
                           {"ap75", number_or_null(cr.ap75)},
                           {"map", number_or_null(cr.map)},
                           {"precision_at_recall", curves}});
    }
    json ap = json::array();
    for (double v : report.ap) ap.push_back(number_or_null(v));
    json thresholds = json::array();
    for (double t : iou_thresholds()) thresholds.push_back(t);
    return {{"images", report.images},
            {"iou_thresholds", thresholds},
            {"ap", ap},
            {"ap50", number_or_null(report.ap50)},
            {"ap75", number_or_null(report.ap75)},
            {"map", number_or_null(report.map)},
            {"classes", classes}};
}

std::string format_class_table(const EvalReport& report) {
    auto pct = [](double v) {
        if (std::isnan(v)) return std::string("-");
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << 100.0 * v;
        return s.str();
    };
    std::ostringstream out;
    out << std::left << std::setw(10) << "Behavior";
    for (const auto& cr : report.classes) out << std::right << std::setw(9) << cr.name;
    out << '\n' << std::left << std::setw(10) << "Labels";
    for (const auto& cr : report.classes) out << std::right << std::setw(9) << cr.labels;
    out << '\n' << std::left << std::setw(10) << "mAP";
    for (const auto& cr : report.classes) out << std::right << std::setw(9) << pct(cr.map);
    out << '\n';
    return out.str();
}

bool in_validation_split(std::string_view image_id) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : image_id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h % 10 >= 8;
}

}  // namespace dangerdet
