#include "dangerdet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "dangerdet/error.hpp"
#include "dangerdet/io.hpp"

namespace dangerdet {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kShift = 4;  // sub-pixel bits used for drawing
constexpr double kSubpixel = 1 << kShift;

// COCO joint indices
enum Joint {
    kNose, kLEye, kREye, kLEar, kREar, kLShoulder, kRShoulder, kLElbow, kRElbow,
    kLWrist, kRWrist, kLHip, kRHip, kLKnee, kRKnee, kLAnkle, kRAnkle
};

using Pose = std::array<cv::Point2d, kCocoKeypoints>;

constexpr std::pair<int, int> kLimbs[] = {
    {kLShoulder, kRShoulder}, {kLShoulder, kLElbow}, {kLElbow, kLWrist}, {kRShoulder, kRElbow},
    {kRElbow, kRWrist},       {kLHip, kRHip},        {kLHip, kLKnee},    {kLKnee, kLAnkle},
    {kRHip, kRKnee},          {kRKnee, kRAnkle}};

struct Figure {
    Pose joints;         // pixel coordinates
    cv::Point2d head;    // head circle center
    double head_radius;
    int thickness;
};

// Pose in units of actor height; x to the image right, y down, head top at 0.
Pose base_pose() {
    Pose p{};
    p[kNose] = {0.0, 0.085};
    p[kLEye] = {0.022, 0.062};
    p[kREye] = {-0.022, 0.062};
    p[kLEar] = {0.045, 0.072};
    p[kREar] = {-0.045, 0.072};
    p[kLShoulder] = {0.11, 0.19};
    p[kRShoulder] = {-0.11, 0.19};
    p[kLHip] = {0.07, 0.52};
    p[kRHip] = {-0.07, 0.52};
    p[kLKnee] = {0.085, 0.74};
    p[kRKnee] = {-0.085, 0.74};
    p[kLAnkle] = {0.095, 0.97};
    p[kRAnkle] = {-0.095, 0.97};
    p[kLElbow] = {0.16, 0.34};
    p[kRElbow] = {-0.16, 0.34};
    p[kLWrist] = {0.2, 0.47};
    p[kRWrist] = {-0.2, 0.47};
    return p;
}

Pose fighter_pose(double dir) {
    Pose p = base_pose();
    p[kNose].x = 0.02 * dir;
    for (int s : {kLShoulder, kRShoulder}) {
        const int e = s + 2;
        const int w = s + 4;
        p[e] = {p[s].x + 0.16 * dir, p[s].y + 0.03};
        p[w] = {p[e].x + 0.15 * dir, p[e].y - 0.04};
    }
    p[kLKnee].x = 0.12;
    p[kRKnee].x = -0.12;
    p[kLAnkle].x = 0.16;
    p[kRAnkle].x = -0.16;
    return p;
}

Pose squat_pose() {
    Pose p = base_pose();
    p[kLHip] = {0.08, 0.47};
    p[kRHip] = {-0.08, 0.47};
    p[kLKnee] = {0.16, 0.39};
    p[kRKnee] = {-0.16, 0.39};
    p[kLAnkle] = {0.11, 0.6};
    p[kRAnkle] = {-0.11, 0.6};
    p[kLElbow] = {0.15, 0.33};
    p[kRElbow] = {-0.15, 0.33};
    p[kLWrist] = {0.09, 0.43};
    p[kRWrist] = {-0.09, 0.43};
    return p;
}

Pose jitter(Pose p, SceneRng& rng, double amount) {
    for (auto& j : p) {
        j.x += rng.uniform(-amount, amount);
        j.y += rng.uniform(-amount, amount);
    }
    return p;
}

Pose mirror(Pose p) {
    for (auto& j : p) j.x = -j.x;
    for (const auto& [a, b] : kCocoFlipPairs) std::swap(p[static_cast<std::size_t>(a)], p[static_cast<std::size_t>(b)]);
    return p;
}

Pose rotate(Pose p, double angle, cv::Point2d center) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (auto& j : p) {
        const cv::Point2d d = j - center;
        j = {center.x + c * d.x - s * d.y, center.y + s * d.x + c * d.y};
    }
    return p;
}

double quantize(double v) { return std::round(v * kSubpixel) / kSubpixel; }

Figure make_figure(const Pose& unit, double height, cv::Point2d origin) {
    Figure f;
    for (std::size_t k = 0; k < unit.size(); ++k)
        f.joints[k] = {quantize(origin.x + unit[k].x * height), quantize(origin.y + unit[k].y * height)};
    // head sits between the ears
    const cv::Point2d ears = (unit[kLEar] + unit[kREar]) * 0.5;
    f.head = {quantize(origin.x + ears.x * height), quantize(origin.y + ears.y * height)};
    f.head_radius = 0.065 * height;
    f.thickness = std::max(2, static_cast<int>(std::lround(0.035 * height)));
    return f;
}

cv::Point fixed_point(cv::Point2d p) {
    return {static_cast<int>(std::lround(p.x * kSubpixel)), static_cast<int>(std::lround(p.y * kSubpixel))};
}

void draw_figure(cv::Mat& canvas, const Figure& f, const cv::Scalar& color) {
    const cv::Point2d neck = (f.joints[kLShoulder] + f.joints[kRShoulder]) * 0.5;
    const cv::Point2d pelvis = (f.joints[kLHip] + f.joints[kRHip]) * 0.5;
    for (const auto& [a, b] : kLimbs)
        cv::line(canvas, fixed_point(f.joints[static_cast<std::size_t>(a)]),
                 fixed_point(f.joints[static_cast<std::size_t>(b)]), color, f.thickness, cv::LINE_8, kShift);
    cv::line(canvas, fixed_point(neck), fixed_point(pelvis), color, f.thickness, cv::LINE_8, kShift);
    cv::line(canvas, fixed_point(neck), fixed_point(f.head), color, f.thickness, cv::LINE_8, kShift);
    cv::circle(canvas, fixed_point(f.head), static_cast<int>(std::lround(f.head_radius * kSubpixel)), color,
               cv::FILLED, cv::LINE_8, kShift);
}

struct Actor {
    int class_id = 0;
    std::vector<Figure> figures;
};

// Unit-height poses (one or two people) for a behavior, before placement.
std::vector<std::pair<Pose, double>> compose_actor(int class_id, SceneRng& rng) {
    std::vector<std::pair<Pose, double>> people;  // pose and relative height
    const double wiggle = 0.015;
    switch (class_id) {
        case 0: {  // fight: two people facing each other with arms reaching across
            const double gap = rng.uniform(0.42, 0.52);
            Pose left = jitter(fighter_pose(+1.0), rng, wiggle);
            Pose right = jitter(fighter_pose(-1.0), rng, wiggle);
            const double rel = rng.uniform(0.9, 1.08);
            for (auto& j : right) {
                j.x = j.x * rel + gap;
                j.y = j.y * rel + (1.0 - rel);
            }
            people.emplace_back(left, 1.0);
            people.emplace_back(right, 1.0);
            break;
        }
        case 1: {  // tumble: a lying body
            Pose p = jitter(base_pose(), rng, wiggle);
            const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
            const double angle = side * (std::numbers::pi / 2 + rng.uniform(-0.2, 0.2));
            people.emplace_back(rotate(p, angle, {0.0, 0.5}), 1.0);
            break;
        }
        default: {  // squat: compressed legs
            Pose p = jitter(squat_pose(), rng, wiggle);
            if (rng.uniform() < 0.5) p = mirror(p);
            people.emplace_back(p, 1.0);
            break;
        }
    }
    return people;
}

int sample_class(const std::array<double, 3>& dist, SceneRng& rng) {
    const double total = dist[0] + dist[1] + dist[2];
    double u = rng.uniform(0.0, total);
    for (int c = 0; c < 3; ++c) {
        if (u < dist[static_cast<std::size_t>(c)]) return c;
        u -= dist[static_cast<std::size_t>(c)];
    }
    return 2;
}

cv::Rect figure_hull(const std::vector<Figure>& figures, ImageSize size) {
    cv::Mat mask = cv::Mat::zeros(size.height, size.width, CV_8UC1);
    for (const auto& f : figures) draw_figure(mask, f, cv::Scalar(255));
    return cv::boundingRect(mask);
}

}  // namespace

// splitmix64
std::uint64_t SceneRng::next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SceneRng::uniform(double lo, double hi) {
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

double SceneRng::normal() {
    const double u1 = uniform(0x1.0p-53, 1.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int SceneRng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(next() % span);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    SceneRng rng(seed ^ (index * 0xD1B54A32D192ED03ULL));
    rng.next();
    return rng.next();
}

json scene_spec_to_json(const SceneSpec& spec) {
    return {{"seed", spec.seed},
            {"width", spec.image_size.width},
            {"height", spec.image_size.height},
            {"actors_min", spec.actors_min},
            {"actors_max", spec.actors_max},
            {"class_distribution", spec.class_distribution},
            {"scale_min", spec.scale_min},
            {"scale_max", spec.scale_max},
            {"occlusion_rate", spec.occlusion_rate},
            {"keypoint_noise", spec.keypoint_noise},
            {"keypoint_dropout", spec.keypoint_dropout}};
}

ImageSample render_scene(const SceneSpec& spec, int index) {
    const ImageSize size = spec.image_size;
    if (size.width % 128 != 0 || size.height % 128 != 0)
        throw Error("synthetic_scenes", "InvalidSpec", "image size must be divisible by 128");
    SceneRng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));

    ImageSample sample;
    char id[64];
    std::snprintf(id, sizeof(id), "s%llu_%05d", static_cast<unsigned long long>(spec.seed), index);
    sample.image_id = id;
    sample.source_size = size;
    const double gray = rng.uniform(30.0, 100.0);
    const cv::Scalar background(gray, gray + rng.uniform(-10.0, 10.0), gray + rng.uniform(-10.0, 10.0));
    sample.pixels = cv::Mat(size.height, size.width, CV_8UC3, background);

    const int n_actors = rng.uniform_int(spec.actors_min, std::max(spec.actors_min, spec.actors_max));
    std::vector<Actor> actors;
    std::vector<cv::Rect> placed;
    const double max_height = 0.9 * size.height;
    for (int a = 0; a < n_actors; ++a) {
        const int cls = sample_class(spec.class_distribution, rng);
        const auto people = compose_actor(cls, rng);
        const double height = std::min(max_height, rng.uniform(spec.scale_min, spec.scale_max));
        const bool may_overlap = rng.uniform() < spec.occlusion_rate;

        // extent of the unit pose set, used to keep the actor inside the frame
        double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
        for (const auto& [pose, rel] : people)
            for (const auto& j : pose) {
                x0 = std::min(x0, j.x);
                y0 = std::min(y0, j.y);
                x1 = std::max(x1, j.x);
                y1 = std::max(y1, j.y);
            }
        const double margin = 0.1 * height + 2.0;
        const double ox_lo = margin - x0 * height;
        const double ox_hi = size.width - margin - x1 * height;
        const double oy_lo = margin - y0 * height;
        const double oy_hi = size.height - margin - y1 * height;
        if (ox_lo > ox_hi || oy_lo > oy_hi) continue;

        bool ok = false;
        Actor actor;
        cv::Rect hull;
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            const cv::Point2d origin(rng.uniform(ox_lo, ox_hi), rng.uniform(oy_lo, oy_hi));
            actor.class_id = cls;
            actor.figures.clear();
            for (const auto& [pose, rel] : people) actor.figures.push_back(make_figure(pose, height * rel, origin));
            hull = figure_hull(actor.figures, size);
            if (hull.area() == 0) continue;
            ok = may_overlap || std::none_of(placed.begin(), placed.end(), [&](const cv::Rect& r) {
                     const cv::Rect padded(r.x - 3, r.y - 3, r.width + 6, r.height + 6);
                     return (padded & hull).area() > 0;
                 });
        }
        if (!ok) continue;
        placed.push_back(hull);
        actors.push_back(std::move(actor));
        sample.boxes.push_back({cls, Box{static_cast<double>(hull.x), static_cast<double>(hull.y),
                                         static_cast<double>(hull.x + hull.width),
                                         static_cast<double>(hull.y + hull.height)}});
    }

    int person = 0;
    for (const auto& actor : actors) {
        const cv::Scalar color(rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0), rng.uniform(150.0, 255.0));
        for (const auto& f : actor.figures) {
            draw_figure(sample.pixels, f, color);
            KeypointSet set;
            set.person_index = person++;
            for (const auto& j : f.joints) {
                Keypoint k{j.x, j.y, 1.0, true};
                if (spec.keypoint_noise > 0.0) {
                    k.x += spec.keypoint_noise * rng.normal();
                    k.y += spec.keypoint_noise * rng.normal();
                }
                if (spec.keypoint_dropout > 0.0 && rng.uniform() < spec.keypoint_dropout) {
                    k.confidence = 0.0;
                    k.present = false;
                }
                set.points.push_back(k);
            }
            sample.keypoints.push_back(std::move(set));
        }
    }
    return sample;
}

Corpus generate_corpus(const SceneSpec& spec, int n_images, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error("synthetic_scenes", "IoError", "cannot create " + out_dir.string());
    Corpus corpus;
    corpus.manifest = out_dir / "manifest.jsonl";
    for (int i = 0; i < n_images; ++i) corpus.entries.push_back(save_sample(render_scene(spec, i), out_dir));
    json meta = {{"generator", "dangerdet-synthetic"},
                 {"version", 1},
                 {"images", n_images},
                 {"spec", scene_spec_to_json(spec)}};
    write_file_atomic(out_dir / "metadata.json", meta.dump(2) + "\n", "synthetic_scenes");
    write_manifest(corpus.manifest, corpus.entries);
    return corpus;
}

}  // namespace dangerdet
