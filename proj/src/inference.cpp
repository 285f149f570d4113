#include "dangerdet/inference.hpp"

#include <algorithm>

namespace dangerdet {

std::vector<std::vector<LevelPrediction>> to_level_predictions(const NetworkOutputs& outputs,
                                                               std::span<const LevelSpec> levels) {
    const auto n = outputs.cls_logits.at(0).size(0);
    std::vector<std::vector<LevelPrediction>> out(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < levels.size(); ++i) {
        auto cls = outputs.cls_logits[i].detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
        auto reg = outputs.reg[i].detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
        auto ctr = outputs.ctr_logits[i].detach().to(torch::kFloat32).contiguous();
        const auto rows = cls.size(1), cols = cls.size(2), c = cls.size(3);
        for (int64_t b = 0; b < n; ++b) {
            LevelPrediction p;
            p.spec = levels[i];
            p.rows = static_cast<int>(rows);
            p.cols = static_cast<int>(cols);
            p.num_classes = static_cast<int>(c);
            const float* pc = cls[b].data_ptr<float>();
            const float* pr = reg[b].data_ptr<float>();
            const float* pt = ctr[b].data_ptr<float>();
            p.cls_logits.assign(pc, pc + rows * cols * c);
            p.reg.assign(pr, pr + rows * cols * 4);
            p.ctr_logits.assign(pt, pt + rows * cols);
            out[static_cast<std::size_t>(b)].push_back(std::move(p));
        }
    }
    return out;
}

InferenceEngine::InferenceEngine(DangerDet model, NormStats norm, TrainConfig config)
    : model_(std::move(model)), norm_(norm), config_(std::move(config)) {}

InferenceEngine::InferenceEngine(const Checkpoint& checkpoint)
    : model_(DangerDet(checkpoint.config.model)), norm_(checkpoint.norm), config_(checkpoint.config) {
    load_parameters(model_, checkpoint);
}

std::vector<std::vector<Detection>> InferenceEngine::detect_batch(const torch::Tensor& pixels) {
    torch::NoGradGuard guard;
    const bool was_training = model_->is_training();
    model_->eval();
    const auto dtype = model_->parameters().front().scalar_type();
    auto outputs = model_->forward(pixels.to(dtype));
    if (was_training) model_->train();
    const ImageSize input{static_cast<int>(pixels.size(3)), static_cast<int>(pixels.size(2))};
    const auto levels = default_levels();
    std::vector<std::vector<Detection>> out;
    for (const auto& preds : to_level_predictions(outputs, levels))
        out.push_back(postprocess(preds, input, config_.decode));
    return out;
}

std::vector<Detection> InferenceEngine::detect(const cv::Mat& bgr) {
    ImageSample sample;
    sample.pixels = bgr;
    sample.source_size = {bgr.cols, bgr.rows};
    const auto transform = standardize_transform(sample.source_size, config_.input);
    const auto standardized = standardize_sample(sample, config_.input);
    auto dets = detect_batch(image_to_tensor(standardized.pixels, norm_).unsqueeze(0)).front();
    for (auto& d : dets) d.box = clip_box(transform.invert(d.box), sample.source_size);
    return dets;
}

EvalReport evaluate_engine(InferenceEngine& engine, std::span<const torch::Tensor> pixels,
                           std::span<const std::vector<BoxAnnotation>> gts, int batch_size,
                           std::vector<std::vector<Detection>>* detections) {
    std::vector<std::vector<Detection>> all;
    for (std::size_t i = 0; i < pixels.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(pixels.size(), i + static_cast<std::size_t>(batch_size));
        std::vector<torch::Tensor> chunk(pixels.begin() + static_cast<std::ptrdiff_t>(i),
                                         pixels.begin() + static_cast<std::ptrdiff_t>(end));
        for (auto& d : engine.detect_batch(torch::stack(chunk))) all.push_back(std::move(d));
    }
    auto report = evaluate(all, gts, engine.config().model.num_classes);
    if (detections) *detections = std::move(all);
    return report;
}

}  // namespace dangerdet
