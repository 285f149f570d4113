#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dangerdet/annotation.hpp"
#include "dangerdet/checkpoint.hpp"
#include "dangerdet/config.hpp"
#include "dangerdet/evaluation.hpp"
#include "dangerdet/heatmaps.hpp"
#include "dangerdet/losses.hpp"
#include "dangerdet/network.hpp"
#include "dangerdet/targets.hpp"

namespace dangerdet {

/// One standardized image with targets precomputed for the plain ([0]) and
/// horizontally flipped ([1]) variant.
struct TrainingExample {
    std::string image_id;
    torch::Tensor pixels;  // 3 x H x W, normalized, unflipped
    std::vector<BoxAnnotation> boxes;
    std::array<TargetMaps, 2> targets;
    std::array<KeypointHeatmapStack, 2> heatmaps;
    bool has_keypoints = false;
};

struct TrainingSet {
    ImageSize input;
    NormStats norm;
    std::vector<TrainingExample> examples;

    std::vector<torch::Tensor> pixels() const;
    std::vector<std::vector<BoxAnnotation>> boxes() const;
};

/// Loads every manifest record and standardizes it to `input`.
std::vector<ImageSample> load_corpus(const std::filesystem::path& manifest, ImageSize input,
                                     const KeypointOptions& options = {});

/// Per-channel mean and standard deviation over all pixels of `samples`.
NormStats compute_norm_stats(std::span<const ImageSample> samples);

/// `samples` must already be standardized to `config.input`.
TrainingSet prepare_training_set(std::span<const ImageSample> samples, const TrainConfig& config,
                                 const NormStats& norm);

/// Splits samples on `in_validation_split`; returns {train, validation}.
std::pair<std::vector<ImageSample>, std::vector<ImageSample>> split_samples(std::vector<ImageSample> samples);

/// Linear warmup from base_lr * warmup_factor, then step decay at milestones.
double learning_rate(const TrainConfig& config, int step);

struct BatchItem {
    std::size_t index = 0;
    bool flip = false;
};

/// Deterministic batch for `step`: a per-epoch permutation of the corpus and a
/// per-position flip coin, both derived from the seed alone.
std::vector<BatchItem> batch_for_step(const TrainConfig& config, std::size_t corpus_size, int step);

struct StepRecord {
    int step = 0;  // 1-based index of the completed step
    double lr = 0.0;
    LossBreakdown loss;
    double seconds = 0.0;
};

nlohmann::json step_record_to_json(const StepRecord& r);

class Trainer {
public:
    /// Fresh parameters seeded from config.seed.
    Trainer(TrainConfig config, const TrainingSet& data);

    /// Continues from a checkpoint written by `checkpoint()`.
    Trainer(const Checkpoint& checkpoint, const TrainingSet& data);

    StepRecord step();
    int steps_done() const { return step_; }
    Checkpoint checkpoint() const;

    DangerDet& model() { return model_; }
    const TrainConfig& config() const { return config_; }

private:
    BatchTargets collate(const std::vector<BatchItem>& batch, torch::Tensor& pixels) const;

    TrainConfig config_;
    const TrainingSet& data_;
    DangerDet model_{nullptr};
    std::map<std::string, torch::Tensor> momentum_;
    int step_ = 0;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::filesystem::path final_checkpoint;
};

/// Runs until config.max_steps, appending to <out_dir>/train_log.jsonl and
/// writing <out_dir>/checkpoint_<step>.ddet every checkpoint_interval steps and
/// <out_dir>/final.ddet at the end. `resume` continues an earlier run.
TrainResult train(const TrainConfig& config, const TrainingSet& data, const std::filesystem::path& out_dir,
                  const std::optional<Checkpoint>& resume = std::nullopt,
                  const std::function<void(const StepRecord&)>& on_step = {});

struct AblationRow {
    std::string method;
    std::string resnet;
    bool pose = false;
    int hourglass_count = 0;
    EvalReport report;
};

/// Row label in the comparison-table convention: the plain detector for T = 0,
/// the pose-augmented one otherwise, with T appended unless it is 4 and a star
/// for the deeper backbone.
std::string method_label(const BackboneConfig& model);

/// The six backbone/T rows of the comparison table, in table order, built on `base`.
std::vector<TrainConfig> comparison_grid(const TrainConfig& base);

/// Trains every config on `train` and evaluates on `validation`.
std::vector<AblationRow> ablation_grid(std::span<const TrainConfig> grid, const TrainingSet& train,
                                       const TrainingSet& validation, const std::filesystem::path& out_dir,
                                       const std::function<void(const std::string&)>& progress = {});

/// Method | resnet | pose | T | AP50 | AP75 | mAP, values in percent.
std::string format_ablation_table(std::span<const AblationRow> rows);

}  // namespace dangerdet
