#include "dangerdet/annotation.hpp"

#include <cmath>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dangerdet/error.hpp"
#include "dangerdet/io.hpp"

namespace dangerdet {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::json;

namespace {

constexpr std::string_view kModule = "annotation_ingest";

[[noreturn]] void fail(const char* kind, const std::string& message) {
    throw Error(std::string(kModule), kind, message);
}

double parse_coordinate(const pt::ptree& bndbox, const char* key) {
    auto node = bndbox.get_optional<std::string>(key);
    if (!node) fail("MalformedAnnotation", std::string("bndbox is missing <") + key + ">");
    try {
        std::size_t used = 0;
        const double v = std::stod(*node, &used);
        while (used < node->size() && std::isspace(static_cast<unsigned char>((*node)[used]))) ++used;
        if (used != node->size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail("MalformedAnnotation", std::string("bad <") + key + "> value '" + *node + "'");
    }
}

}  // namespace

int class_id_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<int>(i);
    fail("UnknownClass", "unknown behavior class '" + std::string(name) + "'");
}

std::string_view class_name(int class_id) {
    if (class_id < 0 || class_id >= kNumClasses)
        fail("UnknownClass", "class id out of range: " + std::to_string(class_id));
    return kClassNames[static_cast<std::size_t>(class_id)];
}

int KeypointSet::present_count() const {
    int n = 0;
    for (const auto& p : points) n += p.present ? 1 : 0;
    return n;
}

// ---------------------------------------------------------------------------
// Box XML

std::vector<BoxAnnotation> parse_box_xml(const std::string& xml) {
    pt::ptree tree;
    try {
        std::istringstream in(xml);
        pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
    } catch (const pt::xml_parser_error& e) {
        fail("MalformedAnnotation", std::string("XML parse failure: ") + e.what());
    }
    auto root = tree.get_child_optional("annotation");
    if (!root) fail("MalformedAnnotation", "missing <annotation> root");

    std::vector<BoxAnnotation> boxes;
    for (const auto& [tag, object] : *root) {
        if (tag != "object") continue;
        auto name = object.get_optional<std::string>("name");
        if (!name) fail("MalformedAnnotation", "object without <name>");
        auto bndbox = object.get_child_optional("bndbox");
        if (!bndbox) fail("MalformedAnnotation", "object '" + *name + "' without <bndbox>");

        BoxAnnotation ann;
        ann.class_id = class_id_from_name(*name);
        const double x0 = parse_coordinate(*bndbox, "xmin");
        const double y0 = parse_coordinate(*bndbox, "ymin");
        const double x1 = parse_coordinate(*bndbox, "xmax");
        const double y1 = parse_coordinate(*bndbox, "ymax");
        ann.box = {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
        if (!ann.box.valid())
            fail("DegenerateBox", "zero-area box for object '" + *name + "'");
        boxes.push_back(ann);
    }
    return boxes;
}

std::vector<BoxAnnotation> parse_box_file(const fs::path& path) {
    return parse_box_xml(read_text_file(path, kModule));
}

std::string format_box_xml(const std::string& filename, ImageSize size,
                           const std::vector<BoxAnnotation>& boxes) {
    std::ostringstream out;
    out << "<annotation>\n"
        << "\t<folder>images</folder>\n"
        << "\t<filename>" << filename << "</filename>\n"
        << "\t<size>\n"
        << "\t\t<width>" << size.width << "</width>\n"
        << "\t\t<height>" << size.height << "</height>\n"
        << "\t\t<depth>3</depth>\n"
        << "\t</size>\n"
        << "\t<segmented>0</segmented>\n";
    for (const auto& b : boxes) {
        out << "\t<object>\n"
            << "\t\t<name>" << class_name(b.class_id) << "</name>\n"
            << "\t\t<pose>Unspecified</pose>\n"
            << "\t\t<truncated>0</truncated>\n"
            << "\t\t<difficult>0</difficult>\n"
            << "\t\t<bndbox>\n"
            << "\t\t\t<xmin>" << format_double(b.box.x_min) << "</xmin>\n"
            << "\t\t\t<ymin>" << format_double(b.box.y_min) << "</ymin>\n"
            << "\t\t\t<xmax>" << format_double(b.box.x_max) << "</xmax>\n"
            << "\t\t\t<ymax>" << format_double(b.box.y_max) << "</ymax>\n"
            << "\t\t</bndbox>\n"
            << "\t</object>\n";
    }
    out << "</annotation>\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Keypoint JSON

std::vector<KeypointSet> parse_keypoint_json(const std::string& text, const KeypointOptions& options) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail("MalformedAnnotation", std::string("JSON parse failure: ") + e.what());
    }
    if (!doc.is_array()) fail("MalformedAnnotation", "keypoint file must be a JSON array of persons");

    const auto expected = static_cast<std::size_t>(3 * options.num_keypoints);
    std::vector<KeypointSet> persons;
    persons.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("keypoints") || !entry["keypoints"].is_array())
            fail("MalformedAnnotation", "person " + std::to_string(i) + " has no keypoints array");
        const auto& values = entry["keypoints"];
        if (values.size() != expected)
            fail("ArityMismatch", "person " + std::to_string(i) + " has " + std::to_string(values.size()) +
                                      " values, expected " + std::to_string(expected));
        KeypointSet set;
        set.person_index = static_cast<int>(i);
        set.points.reserve(static_cast<std::size_t>(options.num_keypoints));
        for (std::size_t k = 0; k < expected; k += 3) {
            if (!values[k].is_number() || !values[k + 1].is_number() || !values[k + 2].is_number())
                fail("MalformedAnnotation", "non-numeric keypoint value in person " + std::to_string(i));
            Keypoint p;
            p.x = values[k].get<double>();
            p.y = values[k + 1].get<double>();
            p.confidence = values[k + 2].get<double>();
            p.present = p.confidence > options.absent_threshold;
            set.points.push_back(p);
        }
        persons.push_back(std::move(set));
    }
    return persons;
}

std::vector<KeypointSet> parse_keypoint_file(const fs::path& path, const KeypointOptions& options) {
    return parse_keypoint_json(read_text_file(path, kModule), options);
}

std::string format_keypoint_json(const std::vector<KeypointSet>& persons) {
    json doc = json::array();
    for (const auto& person : persons) {
        json values = json::array();
        double score = 0.0;
        double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
        bool any = false;
        for (const auto& p : person.points) {
            values.push_back(p.x);
            values.push_back(p.y);
            values.push_back(p.confidence);
            score += p.confidence;
            if (!p.present) continue;
            if (!any) {
                x0 = x1 = p.x;
                y0 = y1 = p.y;
                any = true;
            }
            x0 = std::min(x0, p.x);
            y0 = std::min(y0, p.y);
            x1 = std::max(x1, p.x);
            y1 = std::max(y1, p.y);
        }
        if (!person.points.empty()) score /= static_cast<double>(person.points.size());
        doc.push_back({{"keypoints", values},
                       {"bbox", {x0, y0, x1 - x0, y1 - y0}},
                       {"score", score},
                       {"category_id", 1}});
    }
    return doc.dump() + "\n";
}

// ---------------------------------------------------------------------------
// Standardization

Box StandardizeTransform::apply(const Box& b) const {
    return {b.x_min * scale_x, b.y_min * scale_y, b.x_max * scale_x, b.y_max * scale_y};
}

Box StandardizeTransform::invert(const Box& b) const {
    return {b.x_min / scale_x, b.y_min / scale_y, b.x_max / scale_x, b.y_max / scale_y};
}

Keypoint StandardizeTransform::apply(const Keypoint& k) const {
    Keypoint out = k;
    out.x = k.x * scale_x;
    out.y = k.y * scale_y;
    return out;
}

StandardizeTransform standardize_transform(ImageSize source, ImageSize target) {
    if (source.width <= 0 || source.height <= 0 || target.width <= 0 || target.height <= 0)
        fail("MalformedAnnotation", "image sizes must be positive");
    StandardizeTransform t;
    t.padded = source;
    const auto src_w = static_cast<long long>(source.width);
    const auto src_h = static_cast<long long>(source.height);
    if (src_w * target.height > src_h * target.width) {
        // too wide: extend the bottom
        t.padded.height = static_cast<int>((src_w * target.height + target.width - 1) / target.width);
    } else if (src_w * target.height < src_h * target.width) {
        t.padded.width = static_cast<int>((src_h * target.width + target.height - 1) / target.height);
    }
    t.scale_x = static_cast<double>(target.width) / t.padded.width;
    t.scale_y = static_cast<double>(target.height) / t.padded.height;
    return t;
}

ImageSample standardize_sample(const ImageSample& sample, ImageSize target) {
    ImageSize source = sample.pixels.empty() ? sample.source_size : sample.size();
    const auto t = standardize_transform(source, target);

    ImageSample out;
    out.image_id = sample.image_id;
    out.source_size = sample.source_size.width > 0 ? sample.source_size : source;

    if (!sample.pixels.empty()) {
        cv::Mat padded;
        cv::copyMakeBorder(sample.pixels, padded, 0, t.padded.height - source.height, 0,
                           t.padded.width - source.width, cv::BORDER_CONSTANT, cv::Scalar(0, 0, 0));
        if (t.padded == target) {
            out.pixels = padded.clone();
        } else {
            const bool shrink = t.padded.width > target.width;
            cv::resize(padded, out.pixels, cv::Size(target.width, target.height), 0, 0,
                       shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
        }
    }

    for (const auto& b : sample.boxes) {
        BoxAnnotation scaled{b.class_id, clip_box(t.apply(b.box), target)};
        if (!scaled.box.valid())
            fail("EmptyAfterClip", "sample '" + sample.image_id + "': box of class " +
                                       std::string(class_name(b.class_id)) + " lies outside the frame");
        out.boxes.push_back(scaled);
    }
    for (const auto& person : sample.keypoints) {
        KeypointSet scaled;
        scaled.person_index = person.person_index;
        for (const auto& p : person.points) scaled.points.push_back(t.apply(p));
        out.keypoints.push_back(std::move(scaled));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    const std::string text = read_text_file(path, kModule);
    std::vector<ManifestEntry> entries;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto rec = json::parse(line);
            ManifestEntry e;
            e.image_id = rec.at("image_id").get<std::string>();
            e.image = rec.at("image").get<std::string>();
            e.boxes = rec.at("boxes").get<std::string>();
            e.keypoints = rec.value("keypoints", std::string());
            e.size = {rec.at("width").get<int>(), rec.at("height").get<int>()};
            entries.push_back(std::move(e));
        } catch (const json::exception& e) {
            fail("MalformedAnnotation",
                 path.string() + ":" + std::to_string(line_no) + ": bad manifest record: " + e.what());
        }
    }
    return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::string text;
    for (const auto& e : entries) {
        json rec = {{"image_id", e.image_id},
                    {"image", e.image},
                    {"boxes", e.boxes},
                    {"keypoints", e.keypoints},
                    {"width", e.size.width},
                    {"height", e.size.height}};
        text += rec.dump();
        text += '\n';
    }
    write_file_atomic(path, text, kModule);
}

ImageSample load_sample(const ManifestEntry& entry, const fs::path& manifest_dir,
                        const KeypointOptions& options) {
    ImageSample s;
    s.image_id = entry.image_id;
    const auto image_path = manifest_dir / entry.image;
    s.pixels = cv::imread(image_path.string(), cv::IMREAD_COLOR);
    if (s.pixels.empty()) throw Error(std::string(kModule), "IoError", "cannot read image " + image_path.string());
    s.source_size = s.size();
    s.boxes = parse_box_file(manifest_dir / entry.boxes);
    if (!entry.keypoints.empty()) s.keypoints = parse_keypoint_file(manifest_dir / entry.keypoints, options);
    return s;
}

ManifestEntry save_sample(const ImageSample& sample, const fs::path& root) {
    ManifestEntry e;
    e.image_id = sample.image_id;
    e.image = "images/" + sample.image_id + ".png";
    e.boxes = "annotations/" + sample.image_id + ".xml";
    e.keypoints = "keypoints/" + sample.image_id + ".json";
    e.size = sample.size();
    write_png_atomic(root / e.image, sample.pixels, kModule);
    write_file_atomic(root / e.boxes, format_box_xml(sample.image_id + ".png", e.size, sample.boxes), kModule);
    write_file_atomic(root / e.keypoints, format_keypoint_json(sample.keypoints), kModule);
    return e;
}

}  // namespace dangerdet
