#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "dangerdet/annotation.hpp"
#include "dangerdet/checkpoint.hpp"
#include "dangerdet/config.hpp"
#include "dangerdet/evaluation.hpp"
#include "dangerdet/network.hpp"
#include "dangerdet/postprocess.hpp"

namespace dangerdet {

/// Per-image dense predictions of a batch in the layout postprocess expects.
std::vector<std::vector<LevelPrediction>> to_level_predictions(const NetworkOutputs& outputs,
                                                               std::span<const LevelSpec> levels);

class InferenceEngine {
public:
    InferenceEngine(DangerDet model, NormStats norm, TrainConfig config);
    explicit InferenceEngine(const Checkpoint& checkpoint);

    /// Detections for an N x 3 x H x W normalized batch, in input pixels.
    std::vector<std::vector<Detection>> detect_batch(const torch::Tensor& pixels);

    /// Standardizes a raw sample, runs the detector and maps boxes back to the
    /// source image.
    std::vector<Detection> detect(const cv::Mat& bgr);

    DangerDet& model() { return model_; }
    const TrainConfig& config() const { return config_; }
    const NormStats& norm() const { return norm_; }

private:
    DangerDet model_;
    NormStats norm_;
    TrainConfig config_;
};

/// Runs the engine on already standardized pixel tensors (3 x H x W each) in
/// batches and evaluates against `gts`.
EvalReport evaluate_engine(InferenceEngine& engine, std::span<const torch::Tensor> pixels,
                           std::span<const std::vector<BoxAnnotation>> gts, int batch_size = 8,
                           std::vector<std::vector<Detection>>* detections = nullptr);

}  // namespace dangerdet
