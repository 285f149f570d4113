#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <opencv2/core.hpp>

#include "dangerdet/annotation.hpp"
#include "dangerdet/checkpoint.hpp"
#include "dangerdet/config.hpp"
#include "dangerdet/error.hpp"
#include "dangerdet/evaluation.hpp"
#include "dangerdet/heatmaps.hpp"
#include "dangerdet/inference.hpp"
#include "dangerdet/postprocess.hpp"
#include "dangerdet/synthetic.hpp"
#include "dangerdet/targets.hpp"
#include "dangerdet/trainer.hpp"

namespace py = pybind11;
using namespace dangerdet;

namespace {

// Python-side shapes: box annotation (class_id, x_min, y_min, x_max, y_max),
// detection (class_id, score, x_min, y_min, x_max, y_max), keypoint
// (x, y, confidence, present).
using PyBox = std::tuple<int, double, double, double, double>;
using PyDetection = std::tuple<int, double, double, double, double, double>;
using PyKeypoint = std::tuple<double, double, double, bool>;

BoxAnnotation to_box(const PyBox& b) {
    return {std::get<0>(b), {std::get<1>(b), std::get<2>(b), std::get<3>(b), std::get<4>(b)}};
}
PyBox from_box(const BoxAnnotation& b) { return {b.class_id, b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max}; }

Detection to_detection(const PyDetection& d) {
    return {std::get<0>(d), std::get<1>(d), {std::get<2>(d), std::get<3>(d), std::get<4>(d), std::get<5>(d)}};
}
PyDetection from_detection(const Detection& d) {
    return {d.class_id, d.score, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max};
}

template <typename Out, typename In, typename F>
std::vector<Out> map_all(const std::vector<In>& in, F f) {
    std::vector<Out> out;
    out.reserve(in.size());
    for (const auto& x : in) out.push_back(f(x));
    return out;
}

std::vector<KeypointSet> to_keypoints(const std::vector<std::vector<PyKeypoint>>& persons) {
    std::vector<KeypointSet> out;
    for (std::size_t i = 0; i < persons.size(); ++i) {
        KeypointSet s;
        s.person_index = static_cast<int>(i);
        for (const auto& [x, y, c, present] : persons[i]) s.points.push_back({x, y, c, present});
        out.push_back(std::move(s));
    }
    return out;
}
std::vector<std::vector<PyKeypoint>> from_keypoints(const std::vector<KeypointSet>& persons) {
    std::vector<std::vector<PyKeypoint>> out;
    for (const auto& s : persons) {
        auto& row = out.emplace_back();
        for (const auto& p : s.points) row.emplace_back(p.x, p.y, p.confidence, p.present);
    }
    return out;
}

py::array_t<std::uint8_t> mat_to_array(const cv::Mat& m) {
    const cv::Mat c = m.isContinuous() ? m : m.clone();
    py::array_t<std::uint8_t> a({c.rows, c.cols, 3});
    std::memcpy(a.mutable_data(), c.data, c.total() * c.elemSize());
    return a;
}

cv::Mat array_to_mat(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw Error("cli", "ConfigError", "image must be an H x W x 3 uint8 BGR array");
    cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC3);
    std::memcpy(m.data, a.data(), m.total() * m.elemSize());
    return m;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TrainConfig config_from(const std::map<std::string, std::string>& settings) {
    return apply_settings(TrainConfig{}, settings);
}

py::dict sample_to_dict(const ImageSample& s) {
    py::dict d;
    d["image_id"] = s.image_id;
    d["image"] = mat_to_array(s.pixels);
    d["boxes"] = map_all<PyBox>(s.boxes, from_box);
    d["keypoints"] = from_keypoints(s.keypoints);
    return d;
}

SceneSpec scene_spec(std::uint64_t seed, int width, int height, int actors_max, double occlusion, double noise,
                     double dropout) {
    SceneSpec spec;
    spec.seed = seed;
    spec.image_size = {width, height};
    spec.actors_max = actors_max;
    spec.occlusion_rate = occlusion;
    spec.keypoint_noise = noise;
    spec.keypoint_dropout = dropout;
    return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    static py::exception<Error> error(m, "DangerDetError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(error, (e.qualified_name() + ": " + e.what()).c_str());
        }
    });

    m.attr("CLASS_NAMES") = std::vector<std::string>(kClassNames.begin(), kClassNames.end());
    m.attr("IOU_THRESHOLDS") = std::vector<double>(iou_thresholds().begin(), iou_thresholds().end());

    m.def("parse_box_xml", [](const std::string& xml) { return map_all<PyBox>(parse_box_xml(xml), from_box); });
    m.def(
        "parse_keypoint_json",
        [](const std::string& json, int num_keypoints, double threshold) {
            return from_keypoints(parse_keypoint_json(json, {num_keypoints, threshold}));
        },
        py::arg("json"), py::arg("num_keypoints") = kCocoKeypoints, py::arg("threshold") = kDefaultKeypointThreshold);

    m.def("center_ness", &center_ness, py::arg("l"), py::arg("t"), py::arg("r"), py::arg("b"));
    m.def(
        "assign_targets",
        [](const std::vector<PyBox>& boxes, int width, int height, double range_scale) {
            const auto anns = map_all<BoxAnnotation>(boxes, to_box);
            const auto tm = assign_targets(anns, default_levels(range_scale), {width, height});
            py::list levels;
            for (const auto& l : tm.levels) {
                py::array_t<int> cls({l.rows, l.cols});
                py::array_t<double> reg({l.rows, l.cols, 4});
                py::array_t<double> ctr({l.rows, l.cols});
                std::copy(l.class_map.begin(), l.class_map.end(), cls.mutable_data());
                std::copy(l.reg.begin(), l.reg.end(), reg.mutable_data());
                std::copy(l.ctr.begin(), l.ctr.end(), ctr.mutable_data());
                py::dict d;
                d["level"] = l.spec.level;
                d["stride"] = l.spec.stride;
                d["class_map"] = cls;
                d["reg"] = reg;
                d["ctr"] = ctr;
                levels.append(d);
            }
            return levels;
        },
        py::arg("boxes"), py::arg("width"), py::arg("height"), py::arg("range_scale") = 1.0);

    m.def(
        "render_heatmaps",
        [](const std::vector<std::vector<PyKeypoint>>& persons, int width, int height, double sigma,
           int num_keypoints) {
            const auto kps = to_keypoints(persons);
            const auto hs = render_heatmaps(kps, {width, height}, sigma, num_keypoints);
            py::array_t<float> out({hs.channels, hs.rows, hs.cols});
            std::copy(hs.maps.begin(), hs.maps.end(), out.mutable_data());
            return out;
        },
        py::arg("keypoints"), py::arg("width"), py::arg("height"), py::arg("sigma") = kDefaultHeatmapSigma,
        py::arg("num_keypoints") = kCocoKeypoints);

    m.def(
        "render_scene",
        [](std::uint64_t seed, int index, int width, int height, int actors_max, double occlusion, double noise,
           double dropout) {
            return sample_to_dict(render_scene(scene_spec(seed, width, height, actors_max, occlusion, noise, dropout),
                                               index));
        },
        py::arg("seed"), py::arg("index"), py::arg("width") = 256, py::arg("height") = 128,
        py::arg("actors_max") = 2, py::arg("occlusion") = 0.0, py::arg("keypoint_noise") = 0.0,
        py::arg("keypoint_dropout") = 0.0);
    m.def(
        "generate_corpus",
        [](const std::filesystem::path& out_dir, int n, std::uint64_t seed, int width, int height, int actors_max,
           double occlusion, double noise, double dropout) {
            return generate_corpus(scene_spec(seed, width, height, actors_max, occlusion, noise, dropout), n, out_dir)
                .manifest;
        },
        py::arg("out_dir"), py::arg("n"), py::arg("seed") = 0, py::arg("width") = 256, py::arg("height") = 128,
        py::arg("actors_max") = 2, py::arg("occlusion") = 0.0, py::arg("keypoint_noise") = 0.0,
        py::arg("keypoint_dropout") = 0.0);

    m.def(
        "nms",
        [](const std::vector<PyDetection>& dets, double iou_thresh) {
            return map_all<PyDetection>(nms(map_all<Detection>(dets, to_detection), iou_thresh), from_detection);
        },
        py::arg("detections"), py::arg("iou_thresh"));
    m.def(
        "evaluate",
        [](const std::vector<std::vector<PyDetection>>& dets, const std::vector<std::vector<PyBox>>& gts) {
            std::vector<std::vector<Detection>> d;
            std::vector<std::vector<BoxAnnotation>> g;
            for (const auto& x : dets) d.push_back(map_all<Detection>(x, to_detection));
            for (const auto& x : gts) g.push_back(map_all<BoxAnnotation>(x, to_box));
            return to_python(report_to_json(evaluate(d, g)));
        },
        py::arg("detections"), py::arg("ground_truth"));

    m.def(
        "train",
        [](const std::filesystem::path& manifest, const std::filesystem::path& out_dir,
           const std::map<std::string, std::string>& settings) {
            const auto config = config_from(settings);
            TrainResult result;
            {
                py::gil_scoped_release release;
                auto samples = load_corpus(manifest, config.input, {config.model.num_keypoints, config.keypoint_threshold});
                const auto norm = compute_norm_stats(samples);
                result = train(config, prepare_training_set(samples, config, norm), out_dir);
            }
            std::vector<double> losses;
            for (const auto& r : result.log) losses.push_back(r.loss.total);
            py::dict d;
            d["checkpoint"] = result.final_checkpoint;
            d["losses"] = losses;
            return d;
        },
        py::arg("manifest"), py::arg("out_dir"), py::arg("settings") = std::map<std::string, std::string>{});

    py::class_<InferenceEngine>(m, "Detector")
        .def(py::init([](const std::filesystem::path& checkpoint) {
                 return std::make_unique<InferenceEngine>(load_checkpoint(checkpoint));
             }),
             py::arg("checkpoint"))
        .def(
            "detect",
            [](InferenceEngine& e, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& bgr) {
                const auto img = array_to_mat(bgr);
                std::vector<Detection> dets;
                {
                    py::gil_scoped_release release;
                    dets = e.detect(img);
                }
                return map_all<PyDetection>(dets, from_detection);
            },
            py::arg("image"))
        .def_property_readonly("input_size",
                               [](const InferenceEngine& e) { return std::make_pair(e.config().input.width,
                                                                                     e.config().input.height); })
        .def_property_readonly("hourglass_count",
                               [](const InferenceEngine& e) { return e.config().model.hourglass_count; });
}
