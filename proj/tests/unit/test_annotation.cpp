#include <doctest.h>

#include <fstream>
#include <random>

#include "dangerdet/annotation.hpp"
#include "dangerdet/error.hpp"
#include "test_support.hpp"

using namespace dangerdet;

namespace {

std::string voc_object(const std::string& name, double x0, double y0, double x1, double y1) {
    return "<object><name>" + name + "</name><bndbox><xmin>" + std::to_string(x0) + "</xmin><ymin>" +
           std::to_string(y0) + "</ymin><xmax>" + std::to_string(x1) + "</xmax><ymax>" + std::to_string(y1) +
           "</ymax></bndbox></object>";
}

std::string voc(const std::string& objects) {
    return "<annotation><filename>a.png</filename><size><width>2400</width><height>1600</height>"
           "<depth>3</depth></size>" +
           objects + "</annotation>";
}

std::string error_kind(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return "none";
}

std::string person_json(int k, double conf, int absent_index = -1, int length = -1) {
    std::string s = "{\"keypoints\":[";
    const int n = length >= 0 ? length : 3 * k;
    for (int i = 0; i < n; ++i) {
        if (i) s += ",";
        const bool is_conf = i % 3 == 2;
        const double v = is_conf ? ((i / 3 == absent_index) ? 0.0 : conf) : 10.0 + i;
        s += std::to_string(v);
    }
    return s + "],\"score\":0.8}";
}

}  // namespace

TEST_CASE("parse_box_xml maps class names and coordinates") {
    const auto boxes = parse_box_xml(voc(voc_object("fight", 10, 20, 110, 220)));
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].class_id == 0);
    CHECK(boxes[0].box == Box{10, 20, 110, 220});

    const auto three = parse_box_xml(voc(voc_object("squat", 1, 2, 3, 4) + voc_object("tumble", 5, 6, 7, 8)));
    REQUIRE(three.size() == 2);
    CHECK(three[0].class_id == 2);
    CHECK(three[1].class_id == 1);
}

TEST_CASE("parse_box_xml normalizes swapped corners") {
    const auto boxes = parse_box_xml(voc(voc_object("tumble", 110, 20, 10, 220)));
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].box == Box{10, 20, 110, 220});
}

TEST_CASE("parse_box_xml error cases") {
    CHECK(error_kind([] { parse_box_xml(voc(voc_object("sleep", 0, 0, 5, 5))); }) == "UnknownClass");
    CHECK(error_kind([] { parse_box_xml(voc(voc_object("fight", 5, 0, 5, 9))); }) == "DegenerateBox");
    CHECK(error_kind([] { parse_box_xml("<annotation><object><name>fight"); }) == "MalformedAnnotation");
    CHECK(error_kind([] { parse_box_xml("<annotation><object><name>fight</name></object></annotation>"); }) ==
          "MalformedAnnotation");
    CHECK(error_kind([] {
              parse_box_xml(voc("<object><name>fight</name><bndbox><xmin>a</xmin><ymin>0</ymin><xmax>3</xmax>"
                                "<ymax>3</ymax></bndbox></object>"));
          }) == "MalformedAnnotation");
    CHECK(error_kind([] { parse_box_file("/nonexistent/file.xml"); }) == "IoError");
}

TEST_CASE("parse_keypoint_json presence and arity") {
    const auto all = parse_keypoint_json("[" + person_json(17, 0.9) + "]");
    REQUIRE(all.size() == 1);
    CHECK(all[0].points.size() == 17);
    CHECK(all[0].present_count() == 17);

    const auto one_absent = parse_keypoint_json("[" + person_json(17, 0.9, 5) + "]");
    CHECK_FALSE(one_absent[0].points[5].present);
    CHECK(one_absent[0].points[5].x == doctest::Approx(25.0));  // coordinates kept, only flagged
    CHECK(one_absent[0].present_count() == 16);

    CHECK(error_kind([] { parse_keypoint_json("[" + person_json(17, 0.9, -1, 50) + "]"); }) == "ArityMismatch");
    CHECK(error_kind([] { parse_keypoint_json("{\"keypoints\": []}"); }) == "MalformedAnnotation");
    CHECK(error_kind([] { parse_keypoint_json("[{\"kp\": []}]"); }) == "MalformedAnnotation");
    CHECK(error_kind([] { parse_keypoint_json("[1,2"); }) == "MalformedAnnotation");
}

TEST_CASE("keypoint threshold is inclusive") {
    const auto sets = parse_keypoint_json("[" + person_json(17, 0.1) + "]");
    CHECK(sets[0].present_count() == 0);
    KeypointOptions loose{17, 0.05};
    CHECK(parse_keypoint_json("[" + person_json(17, 0.1) + "]", loose)[0].present_count() == 17);
}

TEST_CASE("standardize_sample scales 2400x1600 frames") {
    ImageSample s;
    s.image_id = "a";
    s.pixels = cv::Mat(1600, 2400, CV_8UC3, cv::Scalar(10, 20, 30));
    s.boxes = {{1, {0, 0, 2400, 1600}}};
    s.keypoints = {{0, {{1200, 800, 0.9, true}}}};
    const auto out = standardize_sample(s, {1152, 768});
    CHECK(out.size() == ImageSize{1152, 768});
    CHECK(out.boxes[0].box == Box{0, 0, 1152, 768});
    CHECK(out.keypoints[0].points[0].x == doctest::Approx(576.0));
    CHECK(out.keypoints[0].points[0].y == doctest::Approx(384.0));
    CHECK(out.source_size == ImageSize{2400, 1600});
}

TEST_CASE("standardize_sample is the identity at the target size") {
    ImageSample s;
    s.image_id = "b";
    s.pixels = cv::Mat(768, 1152, CV_8UC3);
    cv::randu(s.pixels, 0, 255);
    s.boxes = {{2, {3.5, 4.25, 100, 200}}};
    s.keypoints = {{0, {{7.5, 9.25, 0.7, true}, {1, 2, 0.0, false}}}};
    const auto out = standardize_sample(s, {1152, 768});
    CHECK(cv::norm(out.pixels, s.pixels, cv::NORM_INF) == 0.0);
    CHECK(out.boxes == s.boxes);
    CHECK(out.keypoints == s.keypoints);
}

TEST_CASE("non 3:2 sources are padded bottom/right before resizing") {
    ImageSample s;
    s.image_id = "c";
    s.pixels = cv::Mat(1600, 1600, CV_8UC3, cv::Scalar(255, 255, 255));
    s.boxes = {{0, {0, 0, 1600, 1600}}};
    const auto t = standardize_transform({1600, 1600}, {1152, 768});
    CHECK(t.padded == ImageSize{2400, 1600});
    const auto out = standardize_sample(s, {1152, 768});
    CHECK(out.boxes[0].box.x_max == doctest::Approx(768.0));
    CHECK(out.boxes[0].box.y_max == doctest::Approx(768.0));
    // right side is black padding, top-left keeps content
    CHECK(out.pixels.at<cv::Vec3b>(10, 1100) == cv::Vec3b(0, 0, 0));
    CHECK(out.pixels.at<cv::Vec3b>(10, 10) == cv::Vec3b(255, 255, 255));
}

TEST_CASE("boxes outside the frame are rejected, partial boxes clipped") {
    ImageSample s;
    s.image_id = "d";
    s.pixels = cv::Mat(1600, 2400, CV_8UC3, cv::Scalar(0, 0, 0));
    s.boxes = {{0, {2300, 1500, 2600, 1700}}};
    const auto out = standardize_sample(s, {1152, 768});
    CHECK(out.boxes[0].box.x_max == doctest::Approx(1152.0));
    CHECK(out.boxes[0].box.y_max == doctest::Approx(768.0));

    s.boxes = {{0, {2500, 100, 2600, 200}}};
    CHECK(error_kind([&] { standardize_sample(s, {1152, 768}); }) == "EmptyAfterClip");
}

TEST_CASE("property: random annotation files round-trip and always yield valid boxes") {
    std::mt19937 rng(1234);
    std::uniform_real_distribution<double> coord(0.0, 2400.0);
    std::uniform_int_distribution<int> cls(0, 2), count(0, 6);
    testing_support::TempDir dir("ann");
    for (int trial = 0; trial < 100; ++trial) {
        ImageSample s;
        s.image_id = "r" + std::to_string(trial);
        s.pixels = cv::Mat(16, 24, CV_8UC3, cv::Scalar(trial, 2 * trial, 3));
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            double a = coord(rng), b = coord(rng), c = coord(rng), d = coord(rng);
            if (a == b || c == d) continue;
            // unordered corners, as an annotator may drag them
            const std::string xml = voc(voc_object(std::string(kClassNames[static_cast<std::size_t>(cls(rng))]), a, c, b, d));
            for (const auto& parsed : parse_box_xml(xml)) {
                CHECK(parsed.box.x_min < parsed.box.x_max);
                CHECK(parsed.box.y_min < parsed.box.y_max);
                s.boxes.push_back(parsed);
            }
        }
        for (int p = 0; p < n; ++p) {
            KeypointSet set{p, {}};
            for (int k = 0; k < kCocoKeypoints; ++k) {
                const double conf = (k + p) % 4 == 0 ? 0.0 : coord(rng) / 2400.0 * 0.89 + 0.11;
                set.points.push_back({coord(rng), coord(rng), conf, conf > kDefaultKeypointThreshold});
            }
            s.keypoints.push_back(set);
        }
        const auto entry = save_sample(s, dir.path());
        const auto back = load_sample(entry, dir.path());
        CHECK(back.image_id == s.image_id);
        CHECK(back.boxes == s.boxes);
        CHECK(back.keypoints == s.keypoints);
        CHECK(cv::norm(back.pixels, s.pixels, cv::NORM_INF) == 0.0);
    }
}

TEST_CASE("property: standardize then inverse-scale preserves boxes") {
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> side(200, 3000);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const ImageSize src{side(rng), side(rng)};
        const auto t = standardize_transform(src, {1152, 768});
        double x0 = unit(rng) * src.width, x1 = unit(rng) * src.width;
        double y0 = unit(rng) * src.height, y1 = unit(rng) * src.height;
        if (std::abs(x1 - x0) < 1 || std::abs(y1 - y0) < 1) continue;
        const Box b{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
        const Box round_trip = t.invert(clip_box(t.apply(b), {1152, 768}));
        CHECK(iou(b, round_trip) >= 0.999);
    }
}

TEST_CASE("manifest records round-trip") {
    testing_support::TempDir dir("manifest");
    std::vector<ManifestEntry> entries = {{"a", "images/a.png", "annotations/a.xml", "keypoints/a.json", {256, 128}},
                                          {"b", "images/b.png", "annotations/b.xml", "", {1152, 768}}};
    write_manifest(dir.path() / "m.jsonl", entries);
    CHECK(read_manifest(dir.path() / "m.jsonl") == entries);
}
