#include "dangerdet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dangerdet/error.hpp"
#include "dangerdet/inference.hpp"
#include "dangerdet/io.hpp"
#include "dangerdet/synthetic.hpp"

namespace dangerdet {

using json = nlohmann::json;

namespace {

constexpr const char* kModule = "trainer";
constexpr std::uint64_t kPermutationStream = 0x7065726d75746531ULL;
constexpr std::uint64_t kFlipStream = 0x666c697073747231ULL;

std::vector<BoxAnnotation> flip_boxes(const std::vector<BoxAnnotation>& boxes, int width) {
    std::vector<BoxAnnotation> out = boxes;
    for (auto& b : out) {
        const double x0 = b.box.x_min;
        b.box.x_min = width - b.box.x_max;
        b.box.x_max = width - x0;
    }
    return out;
}

std::string format_percent(double v) {
    if (std::isnan(v)) return "-";
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(1);
    s << v * 100.0;
    return s.str();
}

}  // namespace

std::vector<torch::Tensor> TrainingSet::pixels() const {
    std::vector<torch::Tensor> out;
    for (const auto& e : examples) out.push_back(e.pixels);
    return out;
}

std::vector<std::vector<BoxAnnotation>> TrainingSet::boxes() const {
    std::vector<std::vector<BoxAnnotation>> out;
    for (const auto& e : examples) out.push_back(e.boxes);
    return out;
}

std::vector<ImageSample> load_corpus(const std::filesystem::path& manifest, ImageSize input,
                                     const KeypointOptions& options) {
    const auto entries = read_manifest(manifest);
    std::vector<ImageSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries)
        out.push_back(standardize_sample(load_sample(e, manifest.parent_path(), options), input));
    return out;
}

NormStats compute_norm_stats(std::span<const ImageSample> samples) {
    std::array<double, 3> sum{}, sq{};
    double count = 0;
    for (const auto& s : samples) {
        for (int r = 0; r < s.pixels.rows; ++r) {
            const auto* row = s.pixels.ptr<cv::Vec3b>(r);
            for (int c = 0; c < s.pixels.cols; ++c)
                for (int k = 0; k < 3; ++k) {
                    sum[static_cast<std::size_t>(k)] += row[c][k];
                    sq[static_cast<std::size_t>(k)] += static_cast<double>(row[c][k]) * row[c][k];
                }
        }
        count += static_cast<double>(s.pixels.total());
    }
    NormStats out;
    if (count == 0) return out;
    for (std::size_t k = 0; k < 3; ++k) {
        out.mean[k] = sum[k] / count;
        out.std[k] = std::max(1.0, std::sqrt(std::max(0.0, sq[k] / count - out.mean[k] * out.mean[k])));
    }
    return out;
}

TrainingSet prepare_training_set(std::span<const ImageSample> samples, const TrainConfig& config,
                                 const NormStats& norm) {
    TrainingSet set;
    set.input = config.input;
    set.norm = norm;
    const auto levels = default_levels();
    for (const auto& s : samples) {
        if (!(s.size() == config.input))
            throw Error(kModule, "ShapeMismatch", "sample " + s.image_id + " is not standardized");
        TrainingExample ex;
        ex.image_id = s.image_id;
        ex.pixels = image_to_tensor(s.pixels, norm);
        ex.boxes = s.boxes;
        ex.has_keypoints = has_present_keypoint(s.keypoints);
        const auto flipped_boxes = flip_boxes(s.boxes, config.input.width);
        const auto flipped_kpts = flip_keypoints_horizontal(s.keypoints, config.input.width);
        ex.targets[0] = assign_targets(s.boxes, levels, config.input);
        ex.targets[1] = assign_targets(flipped_boxes, levels, config.input);
        ex.heatmaps[0] = render_heatmaps(s.keypoints, config.input, config.heatmap_sigma, config.model.num_keypoints);
        ex.heatmaps[1] = render_heatmaps(flipped_kpts, config.input, config.heatmap_sigma, config.model.num_keypoints);
        set.examples.push_back(std::move(ex));
    }
    return set;
}

std::pair<std::vector<ImageSample>, std::vector<ImageSample>> split_samples(std::vector<ImageSample> samples) {
    std::pair<std::vector<ImageSample>, std::vector<ImageSample>> out;
    for (auto& s : samples) (in_validation_split(s.image_id) ? out.second : out.first).push_back(std::move(s));
    return out;
}

double learning_rate(const TrainConfig& c, int step) {
    if (step < c.warmup_steps) {
        const double alpha = static_cast<double>(step) / c.warmup_steps;
        return c.base_lr * (c.warmup_factor * (1.0 - alpha) + alpha);
    }
    double lr = c.base_lr;
    for (int m : c.milestones)
        if (step >= m) lr *= c.lr_gamma;
    return lr;
}

std::vector<BatchItem> batch_for_step(const TrainConfig& c, std::size_t n, int step) {
    std::vector<BatchItem> out;
    if (n == 0) return out;
    std::uint64_t cached_epoch = ~0ULL;
    std::vector<std::size_t> perm(n);
    for (int i = 0; i < c.batch_size; ++i) {
        const auto pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(c.batch_size) +
                         static_cast<std::uint64_t>(i);
        const auto epoch = pos / n;
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            SceneRng rng(derive_seed(c.seed ^ kPermutationStream, epoch));
            for (std::size_t k = n; k > 1; --k)
                std::swap(perm[k - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(k - 1)))]);
            cached_epoch = epoch;
        }
        BatchItem item;
        item.index = perm[pos % n];
        if (c.flip) item.flip = SceneRng(derive_seed(c.seed ^ kFlipStream, pos)).uniform() < 0.5;
        out.push_back(item);
    }
    return out;
}

json step_record_to_json(const StepRecord& r) {
    json j = breakdown_to_json(r.loss);
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["seconds"] = r.seconds;
    return j;
}

Trainer::Trainer(TrainConfig config, const TrainingSet& data) : config_(std::move(config)), data_(data) {
    if (data_.examples.empty()) throw Error(kModule, "CorpusEmpty", "training corpus has no images");
    if (config_.deterministic) configure_determinism();
    torch::manual_seed(config_.seed);
    model_ = DangerDet(config_.model);
    model_->train();
}

Trainer::Trainer(const Checkpoint& ck, const TrainingSet& data) : config_(ck.config), data_(data) {
    if (data_.examples.empty()) throw Error(kModule, "CorpusEmpty", "training corpus has no images");
    if (config_.deterministic) configure_determinism();
    model_ = DangerDet(config_.model);
    load_parameters(model_, ck);
    model_->train();
    for (const auto& [name, t] : ck.tensors)
        if (name.rfind("momentum/", 0) == 0) momentum_.emplace(name.substr(9), t.clone());
    step_ = ck.step;
}

BatchTargets Trainer::collate(const std::vector<BatchItem>& batch, torch::Tensor& pixels) const {
    std::vector<torch::Tensor> images;
    std::vector<TargetMaps> targets;
    std::vector<KeypointHeatmapStack> heatmaps;
    std::vector<char> mask_storage;
    for (const auto& item : batch) {
        const auto& ex = data_.examples[item.index];
        const int v = item.flip ? 1 : 0;
        images.push_back(item.flip ? torch::flip(ex.pixels, {2}) : ex.pixels);
        targets.push_back(ex.targets[static_cast<std::size_t>(v)]);
        if (config_.model.hourglass_count > 0) heatmaps.push_back(ex.heatmaps[static_cast<std::size_t>(v)]);
        mask_storage.push_back(ex.has_keypoints ? 1 : 0);
    }
    pixels = torch::stack(images);
    std::unique_ptr<bool[]> mask(new bool[mask_storage.size()]);
    for (std::size_t i = 0; i < mask_storage.size(); ++i) mask[i] = mask_storage[i] != 0;
    return collate_targets(targets, heatmaps, std::span<const bool>(mask.get(), mask_storage.size()));
}

StepRecord Trainer::step() {
    const auto start = std::chrono::steady_clock::now();
    const auto batch = batch_for_step(config_, data_.examples.size(), step_);
    torch::Tensor pixels;
    const auto targets = collate(batch, pixels);

    model_->zero_grad();
    auto outputs = model_->forward(pixels);
    LossTerms terms;
    try {
        terms = composite_loss(outputs, targets, config_.lambda_reg);
    } catch (const Error& e) {
        if (e.kind() != "NonFiniteLogit") throw;
        throw Error(kModule, "DivergedLoss", "non-finite logits at step " + std::to_string(step_ + 1));
    }
    auto record = StepRecord{};
    record.loss = breakdown(terms);
    if (!std::isfinite(record.loss.total))
        throw Error(kModule, "DivergedLoss", "non-finite total loss at step " + std::to_string(step_ + 1));
    terms.total.backward();

    auto params = model_->parameters();
    if (config_.clip_norm > 0) torch::nn::utils::clip_grad_norm_(params, config_.clip_norm);

    const double lr = learning_rate(config_, step_);
    {
        torch::NoGradGuard guard;
        for (const auto& p : model_->named_parameters()) {
            auto& param = p.value();
            if (!param.grad().defined()) continue;
            auto g = param.grad() + config_.weight_decay * param;
            auto it = momentum_.find(p.key());
            if (it == momentum_.end())
                it = momentum_.emplace(p.key(), g.clone()).first;
            else
                it->second.mul_(config_.momentum).add_(g);
            param.add_(it->second, -lr);
        }
    }
    ++step_;
    record.step = step_;
    record.lr = lr;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.config = config_;
    ck.norm = data_.norm;
    ck.step = step_;
    ck.tensors = parameter_tensors(const_cast<DangerDet&>(model_));
    for (const auto& [name, t] : momentum_) ck.tensors.emplace("momentum/" + name, t.clone());
    ck.meta = {{"seed", config_.seed}, {"images", data_.examples.size()}};
    return ck;
}

TrainResult train(const TrainConfig& config, const TrainingSet& data, const std::filesystem::path& out_dir,
                  const std::optional<Checkpoint>& resume, const std::function<void(const StepRecord&)>& on_step) {
    std::filesystem::create_directories(out_dir);
    std::optional<Checkpoint> start = resume;
    // only the step budget may change on resume
    if (start) start->config.max_steps = config.max_steps;
    Trainer trainer = start ? Trainer(*start, data) : Trainer(config, data);
    const int max_steps = config.max_steps;
    TrainResult result;
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw Error(kModule, "IoError", "cannot open training log in " + out_dir.string());
    while (trainer.steps_done() < max_steps) {
        auto record = trainer.step();
        log << step_record_to_json(record).dump() << '\n';
        log.flush();
        if (on_step) on_step(record);
        result.log.push_back(record);
        if (config.checkpoint_interval > 0 && record.step % config.checkpoint_interval == 0 && record.step < max_steps)
            save_checkpoint(trainer.checkpoint(), out_dir / ("checkpoint_" + std::to_string(record.step) + ".ddet"));
    }
    result.final_checkpoint = out_dir / "final.ddet";
    save_checkpoint(trainer.checkpoint(), result.final_checkpoint);
    return result;
}

std::string method_label(const BackboneConfig& m) {
    std::string label = m.hourglass_count == 0 ? "FCOS" : "DangerDet";
    if (m.hourglass_count != 0 && m.hourglass_count != 4) label += std::to_string(m.hourglass_count);
    if (m.variant == BackboneVariant::kResNet101) label += "*";
    return label;
}

std::vector<TrainConfig> comparison_grid(const TrainConfig& base) {
    const std::pair<BackboneVariant, int> rows[] = {
        {BackboneVariant::kResNet50, 0},  {BackboneVariant::kResNet50, 4}, {BackboneVariant::kResNet101, 0},
        {BackboneVariant::kResNet101, 4}, {BackboneVariant::kResNet50, 1}, {BackboneVariant::kResNet50, 2}};
    std::vector<TrainConfig> out;
    for (const auto& [variant, t] : rows) {
        auto c = base;
        c.model = BackboneConfig::for_variant(variant, t);
        c.model.num_keypoints = base.model.num_keypoints;
        c.model.num_classes = base.model.num_classes;
        out.push_back(c);
    }
    return out;
}

std::vector<AblationRow> ablation_grid(std::span<const TrainConfig> grid, const TrainingSet& train_set,
                                       const TrainingSet& validation, const std::filesystem::path& out_dir,
                                       const std::function<void(const std::string&)>& progress) {
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& config = grid[i];
        if (progress) progress("training " + method_label(config.model) + " (" + std::to_string(i + 1) + "/" +
                               std::to_string(grid.size()) + ")");
        const auto run_dir = out_dir / ("run_" + std::to_string(i));
        auto result = train(config, train_set, run_dir);
        InferenceEngine engine(load_checkpoint(result.final_checkpoint));
        const auto pixels = validation.pixels();
        const auto boxes = validation.boxes();
        AblationRow row;
        row.method = method_label(config.model);
        row.resnet = config.model.variant == BackboneVariant::kResNet50    ? "50"
                     : config.model.variant == BackboneVariant::kResNet101 ? "101"
                                                                           : "tiny";
        row.pose = config.model.hourglass_count > 0;
        row.hourglass_count = config.model.hourglass_count;
        row.report = evaluate_engine(engine, pixels, boxes);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
    std::ostringstream out;
    out << "| Method | resnet | pose | T | AP50 | AP75 | mAP |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows)
        out << "| " << r.method << " | " << r.resnet << " | " << (r.pose ? "yes" : "no") << " | "
            << r.hourglass_count << " | " << format_percent(r.report.ap50) << " | " << format_percent(r.report.ap75)
            << " | " << format_percent(r.report.map) << " |\n";
    return out.str();
}

}  // namespace dangerdet
