#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "dangerdet/geometry.hpp"

namespace dangerdet {

// Behavior classes in their fixed id order.
inline constexpr std::array<std::string_view, 3> kClassNames = {"fight", "tumble", "squat"};
inline constexpr int kNumClasses = static_cast<int>(kClassNames.size());

inline constexpr int kCocoKeypoints = 17;
inline constexpr double kDefaultKeypointThreshold = 0.1;

/// Left/right keypoint index pairs of the 17-point COCO skeleton.
inline constexpr std::array<std::pair<int, int>, 8> kCocoFlipPairs = {
    {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}}};

/// Returns the class id for a behavior name, throws UnknownClass otherwise.
int class_id_from_name(std::string_view name);
std::string_view class_name(int class_id);

struct BoxAnnotation {
    int class_id = 0;
    Box box;

    friend bool operator==(const BoxAnnotation&, const BoxAnnotation&) = default;
};

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
    bool present = false;

    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSet {
    int person_index = 0;
    std::vector<Keypoint> points;

    int present_count() const;
    friend bool operator==(const KeypointSet&, const KeypointSet&) = default;
};

struct ImageSample {
    std::string image_id;
    cv::Mat pixels;  // CV_8UC3, BGR
    std::vector<BoxAnnotation> boxes;
    std::vector<KeypointSet> keypoints;
    ImageSize source_size;

    ImageSize size() const { return {pixels.cols, pixels.rows}; }
};

struct KeypointOptions {
    int num_keypoints = kCocoKeypoints;
    double absent_threshold = kDefaultKeypointThreshold;
};

// ---- box files (Pascal-VOC-style XML) ----

std::vector<BoxAnnotation> parse_box_file(const std::filesystem::path& path);
std::vector<BoxAnnotation> parse_box_xml(const std::string& xml);

std::string format_box_xml(const std::string& filename, ImageSize size,
                           const std::vector<BoxAnnotation>& boxes);

// ---- keypoint files (pose-estimator JSON: list of persons with K*3 numbers) ----

std::vector<KeypointSet> parse_keypoint_file(const std::filesystem::path& path,
                                             const KeypointOptions& options = {});
std::vector<KeypointSet> parse_keypoint_json(const std::string& json,
                                             const KeypointOptions& options = {});

std::string format_keypoint_json(const std::vector<KeypointSet>& persons);

// ---- geometry standardization ----

/// Scale applied to annotation coordinates by standardize_sample: the source is
/// first padded bottom/right to the target aspect, then resized.
struct StandardizeTransform {
    ImageSize padded;
    double scale_x = 1.0;
    double scale_y = 1.0;

    Box apply(const Box& b) const;
    Box invert(const Box& b) const;
    Keypoint apply(const Keypoint& k) const;
};

StandardizeTransform standardize_transform(ImageSize source, ImageSize target);

/// Pads to the target aspect with black, resizes pixels, rescales and clips
/// annotations. Throws EmptyAfterClip when a box leaves the frame entirely.
ImageSample standardize_sample(const ImageSample& sample, ImageSize target);

// ---- corpus manifest (JSON lines) ----

struct ManifestEntry {
    std::string image_id;
    std::string image;      // relative to the manifest directory
    std::string boxes;      // relative path to the XML file
    std::string keypoints;  // relative path to the JSON file, may be empty
    ImageSize size;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads pixels and annotations for one manifest record.
ImageSample load_sample(const ManifestEntry& entry, const std::filesystem::path& manifest_dir,
                        const KeypointOptions& options = {});

/// Writes image + XML + JSON for a sample under `root` and returns its manifest record.
ManifestEntry save_sample(const ImageSample& sample, const std::filesystem::path& root);

}  // namespace dangerdet
