#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "dangerdet/annotation.hpp"

namespace dangerdet {

/// Procedural stick-figure scenes. Same seed and spec give a bit-identical corpus.
struct SceneSpec {
    std::uint64_t seed = 0;
    ImageSize image_size{256, 128};
    int actors_min = 1;
    int actors_max = 2;
    std::array<double, 3> class_distribution{1.0 / 3, 1.0 / 3, 1.0 / 3};
    double scale_min = 48.0;  // standing actor height, px
    double scale_max = 88.0;
    double occlusion_rate = 0.0;
    double keypoint_noise = 0.0;    // Gaussian std on emitted keypoints, px
    double keypoint_dropout = 0.0;  // probability an emitted keypoint is absent
};

nlohmann::json scene_spec_to_json(const SceneSpec& spec);

/// Small deterministic generator with a fixed, library-independent stream.
class SceneRng {
public:
    explicit SceneRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();
    double uniform(double lo = 0.0, double hi = 1.0);
    double normal();
    int uniform_int(int lo, int hi);  // inclusive

private:
    std::uint64_t state_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Renders image `index` of the corpus described by `spec`. Boxes are the
/// tight pixel hulls of each labelled actor; keypoints are the joints drawn.
ImageSample render_scene(const SceneSpec& spec, int index);

struct Corpus {
    std::filesystem::path manifest;
    std::vector<ManifestEntry> entries;
};

/// Writes images/, annotations/, keypoints/, manifest.jsonl and metadata.json
/// under `out_dir`.
Corpus generate_corpus(const SceneSpec& spec, int n_images, const std::filesystem::path& out_dir);

}  // namespace dangerdet
