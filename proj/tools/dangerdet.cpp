#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dangerdet/annotation.hpp"
#include "dangerdet/checkpoint.hpp"
#include "dangerdet/config.hpp"
#include "dangerdet/error.hpp"
#include "dangerdet/evaluation.hpp"
#include "dangerdet/heatmaps.hpp"
#include "dangerdet/inference.hpp"
#include "dangerdet/io.hpp"
#include "dangerdet/synthetic.hpp"
#include "dangerdet/targets.hpp"
#include "dangerdet/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dangerdet;

namespace {

struct Globals {
    std::string config_path;
    std::vector<std::string> overrides;
    int verbosity = 0;
};

fs::path resolve_config(const std::string& path) {
    if (path.empty()) {
        if (const char* dir = std::getenv("DANGERDET_CONFIG_DIR")) {
            const fs::path candidate = fs::path(dir) / "default.conf";
            if (fs::exists(candidate)) return candidate;
        }
        return {};
    }
    fs::path p(path);
    if (!fs::exists(p) && p.is_relative())
        if (const char* dir = std::getenv("DANGERDET_CONFIG_DIR"); dir && fs::exists(fs::path(dir) / p))
            return fs::path(dir) / p;
    if (!fs::exists(p)) throw Error("cli", "IoError", "config file " + path + " not found");
    return p;
}

TrainConfig load_config(const Globals& g) {
    TrainConfig config;
    if (const auto path = resolve_config(g.config_path); !path.empty())
        config = apply_settings(config, parse_settings(read_text_file(path, "cli")));
    Settings overrides;
    for (const auto& kv : g.overrides) overrides = parse_override(kv, std::move(overrides));
    return apply_settings(config, overrides);
}

void log(const Globals& g, const std::string& line) {
    if (g.verbosity >= 0) std::cerr << line << '\n';
}

KeypointOptions keypoint_options(const TrainConfig& c) {
    KeypointOptions o;
    o.num_keypoints = c.model.num_keypoints;
    o.absent_threshold = c.keypoint_threshold;
    return o;
}

std::vector<ImageSample> select_split(std::vector<ImageSample> samples, const std::string& split) {
    if (split == "all") return samples;
    auto [train, val] = split_samples(std::move(samples));
    if (split == "train") return train;
    if (split == "val") return val;
    throw Error("cli", "ConfigError", "split must be one of train, val, all");
}

void write_report(const EvalReport& report, const std::string& out) {
    std::cout << format_class_table(report);
    std::cout << "mAP " << format_double(report.map) << "  AP50 " << format_double(report.ap50) << "  AP75 "
              << format_double(report.ap75) << '\n';
    if (!out.empty()) write_file_atomic(out, report_to_json(report).dump(2) + "\n", "cli");
}

cv::Mat colorize(const cv::Mat& unit_float) {
    cv::Mat u8, color;
    unit_float.convertTo(u8, CV_8U, 255.0);
    cv::applyColorMap(u8, color, cv::COLORMAP_JET);
    return color;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose-augmented behavior detector"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("-c,--config", g.config_path, "config file (key = value)");
    app.add_option("-s,--set", g.overrides, "override as key=value, repeatable");
    app.add_flag("-q,--quiet", [&](std::int64_t) { g.verbosity = -1; }, "suppress progress output");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "standardize a corpus and write train/val manifests");
    std::string prep_manifest, prep_out;
    prepare->add_option("--manifest", prep_manifest, "input manifest.jsonl")->required();
    prepare->add_option("--out", prep_out, "output directory")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    SceneSpec spec;
    int synth_n = 16;
    std::string synth_out = "synthetic";
    synth->add_option("--seed", spec.seed, "generator seed");
    synth->add_option("--n", synth_n, "number of images")->check(CLI::NonNegativeNumber);
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--width", spec.image_size.width, "image width");
    synth->add_option("--height", spec.image_size.height, "image height");
    synth->add_option("--actors-min", spec.actors_min);
    synth->add_option("--actors-max", spec.actors_max);
    synth->add_option("--scale-min", spec.scale_min);
    synth->add_option("--scale-max", spec.scale_max);
    synth->add_option("--occlusion", spec.occlusion_rate);
    synth->add_option("--keypoint-noise", spec.keypoint_noise, "keypoint jitter std in pixels");
    synth->add_option("--keypoint-dropout", spec.keypoint_dropout, "probability a keypoint is dropped");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a detector");
    std::string train_manifest, train_out = "run", train_resume, train_split = "train";
    train_cmd->add_option("--manifest", train_manifest, "corpus manifest.jsonl")->required();
    train_cmd->add_option("--out", train_out, "run directory");
    train_cmd->add_option("--resume", train_resume, "checkpoint to continue from");
    train_cmd->add_option("--split", train_split, "train, val or all");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate detections or a checkpoint against ground truth");
    std::string eval_manifest, eval_dets, eval_ckpt, eval_out, eval_split = "all";
    eval_cmd->add_option("--manifest", eval_manifest, "ground-truth manifest.jsonl")->required();
    auto* dets_opt = eval_cmd->add_option("--detections", eval_dets, "detections JSON-lines");
    auto* ckpt_opt = eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to run");
    dets_opt->excludes(ckpt_opt);
    eval_cmd->add_option("--split", eval_split, "train, val or all");
    eval_cmd->add_option("--out", eval_out, "report JSON path");

    // infer
    auto* infer = app.add_subcommand("infer", "detect on images and draw overlays");
    std::string infer_ckpt, infer_out = "detections";
    std::vector<std::string> infer_images;
    double infer_min_score = 0.3;
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--image", infer_images, "input image, repeatable")->required();
    infer->add_option("--out", infer_out, "output directory");
    infer->add_option("--min-score", infer_min_score, "overlay score cut-off");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "train and evaluate a backbone/T grid");
    std::string abl_manifest, abl_out = "ablation", abl_grid = "tiny:0,tiny:1";
    bool abl_comparison = false;
    ablate->add_option("--manifest", abl_manifest)->required();
    ablate->add_option("--out", abl_out);
    ablate->add_option("--grid", abl_grid, "comma-separated backbone:T entries");
    ablate->add_flag("--comparison", abl_comparison, "use the six-row backbone/T comparison grid");

    // dump-targets / dump-heatmaps
    auto* dump_t = app.add_subcommand("dump-targets", "write per-level target maps of one image");
    auto* dump_h = app.add_subcommand("dump-heatmaps", "write keypoint heatmaps of one image");
    std::string dump_manifest, dump_id, dump_out = "dump";
    for (auto* sub : {dump_t, dump_h}) {
        sub->add_option("--manifest", dump_manifest)->required();
        sub->add_option("--image-id", dump_id, "defaults to the first record");
        sub->add_option("--out", dump_out);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: cli::ConfigError: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*synth) {
            const auto corpus = generate_corpus(spec, synth_n, synth_out);
            log(g, "wrote " + std::to_string(corpus.entries.size()) + " images to " + corpus.manifest.string());
            return 0;
        }

        const TrainConfig config = load_config(g);
        const auto kopts = keypoint_options(config);

        if (*prepare) {
            auto samples = load_corpus(prep_manifest, config.input, kopts);
            std::vector<ManifestEntry> all, train_entries, val_entries;
            for (const auto& s : samples) {
                auto e = save_sample(s, prep_out);
                (in_validation_split(s.image_id) ? val_entries : train_entries).push_back(e);
                all.push_back(std::move(e));
            }
            write_manifest(fs::path(prep_out) / "manifest.jsonl", all);
            write_manifest(fs::path(prep_out) / "train.jsonl", train_entries);
            write_manifest(fs::path(prep_out) / "val.jsonl", val_entries);
            auto [train_samples, _] = split_samples(std::move(samples));
            const auto norm = compute_norm_stats(train_samples);
            write_file_atomic(fs::path(prep_out) / "norm.json",
                              json{{"mean", norm.mean}, {"std", norm.std}}.dump(2) + "\n", "cli");
            log(g, "prepared " + std::to_string(all.size()) + " images (" + std::to_string(train_entries.size()) +
                       " train, " + std::to_string(val_entries.size()) + " val)");
            return 0;
        }

        if (*train_cmd) {
            auto samples = select_split(load_corpus(train_manifest, config.input, kopts), train_split);
            std::optional<Checkpoint> resume;
            if (!train_resume.empty()) resume = load_checkpoint(train_resume);
            const NormStats norm = resume ? resume->norm : compute_norm_stats(samples);
            const auto set = prepare_training_set(samples, resume ? resume->config : config, norm);
            fs::create_directories(train_out);
            write_file_atomic(fs::path(train_out) / "config.conf", format_settings(config), "cli");
            const int every = std::max(1, config.max_steps / 20);
            auto result = train(config, set, train_out, resume, [&](const StepRecord& r) {
                if (r.step % every == 0 || r.step == 1)
                    log(g, "step " + std::to_string(r.step) + " total " + format_double(r.loss.total) + " cls " +
                               format_double(r.loss.l_cls) + " reg " + format_double(r.loss.l_reg) + " cen " +
                               format_double(r.loss.l_cen) + " kpt " + format_double(r.loss.l_kpt));
            });
            log(g, "checkpoint " + result.final_checkpoint.string());
            return 0;
        }

        if (*eval_cmd) {
            const auto entries = read_manifest(eval_manifest);
            std::vector<ImageSample> samples;
            for (const auto& e : entries) samples.push_back(load_sample(e, fs::path(eval_manifest).parent_path(), kopts));
            samples = select_split(std::move(samples), eval_split);
            std::vector<std::vector<BoxAnnotation>> gts;
            for (const auto& s : samples) gts.push_back(s.boxes);
            std::vector<std::vector<Detection>> dets(samples.size());
            if (!eval_dets.empty()) {
                std::map<std::string, std::size_t> index;
                for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].image_id] = i;
                for (auto& img : parse_detections_jsonl(read_text_file(eval_dets, "cli")))
                    if (auto it = index.find(img.image_id); it != index.end()) dets[it->second] = std::move(img.detections);
            } else if (!eval_ckpt.empty()) {
                InferenceEngine engine(load_checkpoint(eval_ckpt));
                for (std::size_t i = 0; i < samples.size(); ++i) dets[i] = engine.detect(samples[i].pixels);
            } else {
                throw Error("cli", "ConfigError", "eval needs --detections or --checkpoint");
            }
            write_report(evaluate(dets, gts, config.model.num_classes), eval_out);
            return 0;
        }

        if (*infer) {
            InferenceEngine engine(load_checkpoint(infer_ckpt));
            fs::create_directories(infer_out);
            std::string jsonl;
            for (const auto& path : infer_images) {
                cv::Mat image = cv::imread(path, cv::IMREAD_COLOR);
                if (image.empty()) throw Error("cli", "IoError", "cannot read image " + path);
                const auto dets = engine.detect(image);
                const auto stem = fs::path(path).stem().string();
                jsonl += detections_to_jsonl(stem, dets);
                write_png_atomic(fs::path(infer_out) / (stem + "_overlay.png"), render_overlay(image, dets, infer_min_score),
                                 "cli");
                log(g, stem + ": " + std::to_string(dets.size()) + " detections");
            }
            write_file_atomic(fs::path(infer_out) / "detections.jsonl", jsonl, "cli");
            return 0;
        }

        if (*ablate) {
            auto samples = load_corpus(abl_manifest, config.input, kopts);
            auto [train_samples, val_samples] = split_samples(std::move(samples));
            const auto norm = compute_norm_stats(train_samples);
            const auto train_set = prepare_training_set(train_samples, config, norm);
            const auto val_set = prepare_training_set(val_samples, config, norm);
            std::vector<TrainConfig> grid;
            if (abl_comparison) {
                grid = comparison_grid(config);
            } else {
                std::stringstream ss(abl_grid);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    const auto colon = item.find(':');
                    if (colon == std::string::npos) throw Error("cli", "ConfigError", "grid entry '" + item + "' is not backbone:T");
                    auto c = config;
                    c.model = BackboneConfig::for_variant(variant_from_name(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
                    c.model.num_keypoints = config.model.num_keypoints;
                    grid.push_back(apply_settings(c, {}));
                }
            }
            const auto rows = ablation_grid(grid, train_set, val_set, abl_out, [&](const std::string& m) { log(g, m); });
            const auto table = format_ablation_table(rows);
            json results = json::array();
            for (const auto& r : rows)
                results.push_back({{"method", r.method}, {"resnet", r.resnet}, {"pose", r.pose},
                                   {"T", r.hourglass_count}, {"report", report_to_json(r.report)}});
            write_file_atomic(fs::path(abl_out) / "table.md", table, "cli");
            write_file_atomic(fs::path(abl_out) / "results.json", results.dump(2) + "\n", "cli");
            std::cout << table;
            return 0;
        }

        if (*dump_t || *dump_h) {
            const auto entries = read_manifest(dump_manifest);
            if (entries.empty()) throw Error("cli", "IoError", "manifest is empty");
            auto it = dump_id.empty() ? entries.begin()
                                      : std::find_if(entries.begin(), entries.end(),
                                                     [&](const ManifestEntry& e) { return e.image_id == dump_id; });
            if (it == entries.end()) throw Error("cli", "IoError", "image id " + dump_id + " not in manifest");
            const auto sample =
                standardize_sample(load_sample(*it, fs::path(dump_manifest).parent_path(), kopts), config.input);
            fs::create_directories(dump_out);
            if (*dump_t) {
                const auto maps = assign_targets(sample.boxes, default_levels(), config.input);
                json doc = {{"image_id", sample.image_id}, {"levels", json::array()}};
                for (const auto& l : maps.levels) {
                    cv::Mat ctr(l.rows, l.cols, CV_32F);
                    for (int i = 0; i < l.rows * l.cols; ++i) ctr.at<float>(i / l.cols, i % l.cols) = static_cast<float>(l.ctr[static_cast<std::size_t>(i)]);
                    write_png_atomic(fs::path(dump_out) / ("centerness_P" + std::to_string(l.spec.level) + ".png"),
                                     colorize(ctr), "cli");
                    doc["levels"].push_back({{"level", l.spec.level}, {"rows", l.rows}, {"cols", l.cols},
                                             {"class_map", l.class_map}, {"reg", l.reg}, {"ctr", l.ctr}});
                }
                write_file_atomic(fs::path(dump_out) / "targets.json", doc.dump() + "\n", "cli");
            } else {
                const auto stack = render_heatmaps(sample.keypoints, config.input, config.heatmap_sigma, config.model.num_keypoints);
                cv::Mat composite = cv::Mat::zeros(stack.rows, stack.cols, CV_32F);
                for (int k = 0; k < stack.channels; ++k) {
                    cv::Mat m(stack.rows, stack.cols, CV_32F,
                              const_cast<float*>(stack.maps.data()) + static_cast<std::size_t>(k) * stack.rows * stack.cols);
                    write_png_atomic(fs::path(dump_out) / ("heatmap_" + std::to_string(k) + ".png"), colorize(m), "cli");
                    cv::max(composite, m, composite);
                }
                write_png_atomic(fs::path(dump_out) / "heatmap_max.png", colorize(composite), "cli");
            }
            log(g, "wrote " + dump_out);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.qualified_name() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: cli::ModuleError: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
