#include "torch_doctest.hpp"

#include <opencv2/core.hpp>

#include "dangerdet/checkpoint.hpp"
#include "dangerdet/error.hpp"
#include "dangerdet/losses.hpp"
#include "dangerdet/network.hpp"
#include "test_support.hpp"

using namespace dangerdet;

namespace {

BackboneConfig tiny(int t) { return BackboneConfig::for_variant(BackboneVariant::kTiny, t); }

bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) { return a.sizes() == b.sizes() && torch::equal(a, b); }

}  // namespace

TEST_CASE("tiny config shapes at 256x128") {
    configure_determinism();
    torch::manual_seed(0);
    DangerDet model(tiny(2));
    torch::NoGradGuard guard;
    const auto out = model->forward(torch::randn({2, 3, 128, 256}));
    REQUIRE(out.cls_logits.size() == 5);
    const int64_t rows[] = {16, 8, 4, 2, 1}, cols[] = {32, 16, 8, 4, 2};
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK((out.cls_logits[i].sizes() == torch::IntArrayRef{2, 3, rows[i], cols[i]}));
        CHECK((out.reg[i].sizes() == torch::IntArrayRef{2, 4, rows[i], cols[i]}));
        CHECK((out.reg_raw[i].sizes() == torch::IntArrayRef{2, 4, rows[i], cols[i]}));
        CHECK((out.ctr_logits[i].sizes() == torch::IntArrayRef{2, 1, rows[i], cols[i]}));
        CHECK(out.reg[i].gt(0).all().item<bool>());
    }
    REQUIRE(out.kpt_heatmaps.size() == 2);
    REQUIRE(out.pose_features.size() == 2);
    for (const auto& h : out.kpt_heatmaps) CHECK((h.sizes() == torch::IntArrayRef{2, 17, 16, 32}));
    for (const auto& f : out.pose_features) CHECK((f.sizes() == torch::IntArrayRef{2, 64, 16, 32}));
}

TEST_CASE("T = 0 drops the pose branch") {
    DangerDet base(tiny(0));
    DangerDet one(tiny(1));
    CHECK(!base->pose);
    CHECK(!base->head->align);
    CHECK(base->parameter_count() < one->parameter_count());
    torch::NoGradGuard guard;
    const auto out = base->forward(torch::randn({1, 3, 128, 128}));
    CHECK(out.kpt_heatmaps.empty());
    CHECK(out.pose_features.empty());
}

TEST_CASE("indivisible input is rejected") {
    DangerDet model(tiny(1));
    torch::NoGradGuard guard;
    try {
        model->forward(torch::zeros({1, 3, 128, 250}));
        FAIL("expected IndivisibleInput");
    } catch (const Error& e) {
        CHECK(e.qualified_name() == "network::IndivisibleInput");
    }
}

TEST_CASE("zero scales give unit distances") {
    DangerDet model(tiny(1));
    torch::NoGradGuard guard;
    for (auto& s : model->head->scales) s.zero_();
    const auto out = model->forward(torch::randn({1, 3, 128, 128}));
    for (const auto& r : out.reg) CHECK(torch::allclose(r, torch::ones_like(r), 0.0, 0.0));
}

TEST_CASE("pose aggregation") {
    torch::manual_seed(5);
    DangerDet model(tiny(1));
    torch::NoGradGuard guard;
    const std::vector<torch::Tensor> zeros = {torch::zeros({1, 64, 16, 32})};
    // zero-initialized alignment: the classification input is the bare level map
    CHECK(model->aggregate_pose(zeros, 3).abs().max().item<float>() == 0.0f);

    model->head->align->bias.fill_(0.5);
    const auto biased = model->aggregate_pose(zeros, 3);
    CHECK(torch::allclose(biased, torch::full_like(biased, 0.5)));

    const std::vector<torch::Tensor> feats = {torch::randn({1, 64, 16, 32})};
    torch::nn::init::normal_(model->head->align->weight);
    CHECK((model->aggregate_pose(feats, 3).sizes() == torch::IntArrayRef{1, 64, 16, 32}));
    CHECK((model->aggregate_pose(feats, 5).sizes() == torch::IntArrayRef{1, 64, 4, 8}));
    CHECK((model->aggregate_pose(feats, 7).sizes() == torch::IntArrayRef{1, 64, 1, 2}));
}

TEST_CASE("zero-initialized alignment reproduces the baseline classification input") {
    torch::manual_seed(9);
    DangerDet with_pose(tiny(1));
    torch::NoGradGuard guard;
    const auto x = torch::randn({1, 3, 128, 128});
    const auto out = with_pose->forward(x);
    const auto c = with_pose->backbone->forward(x);
    const auto levels = with_pose->pyramid->forward(c);
    for (std::size_t i = 0; i < 5; ++i) {
        auto bare = with_pose->head->cls_out(with_pose->head->cls_tower->forward(levels[i]));
        CHECK(bit_equal(bare, out.cls_logits[i]));
    }
}

TEST_CASE("shared box trunk feeds every level") {
    torch::manual_seed(2);
    DangerDet model(tiny(0));
    torch::NoGradGuard guard;
    const auto x = torch::randn({1, 3, 256, 256});
    const auto before = model->forward(x);
    auto first = model->head->box_tower->ptr(0)->as<torch::nn::Conv2dImpl>();
    first->weight.add_(torch::randn_like(first->weight) * 0.05);
    const auto after = model->forward(x);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(!torch::equal(before.reg[i], after.reg[i]));
        CHECK(!torch::equal(before.ctr_logits[i], after.ctr_logits[i]));
        CHECK(torch::equal(before.cls_logits[i], after.cls_logits[i]));
    }
}

TEST_CASE("forward is deterministic") {
    configure_determinism();
    torch::manual_seed(4);
    DangerDet model(tiny(1));
    torch::NoGradGuard guard;
    const auto x = torch::randn({2, 3, 128, 256});
    const auto a = model->forward(x);
    const auto b = model->forward(x);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(bit_equal(a.cls_logits[i], b.cls_logits[i]));
        CHECK(bit_equal(a.reg[i], b.reg[i]));
    }
    CHECK(bit_equal(a.kpt_heatmaps[0], b.kpt_heatmaps[0]));
}

TEST_CASE("every parameter receives gradient from the composite loss") {
    torch::manual_seed(6);
    auto cfg = tiny(2);
    cfg.num_keypoints = 3;
    DangerDet model(cfg);
    {
        // move off the zero-initialized alignment so the pose path reaches the classifier
        torch::NoGradGuard guard;
        torch::nn::init::normal_(model->head->align->weight, 0.0, 0.01);
    }
    const ImageSize input{128, 128};
    const std::vector<BoxAnnotation> boxes = {{0, {8, 10, 50, 60}}, {1, {60, 40, 120, 100}}};
    std::vector<KeypointSet> persons(1);
    persons[0].points = {{20, 20, 1, true}, {30, 40, 1, true}, {90, 70, 1, true}};
    const TargetMaps tm[] = {assign_targets(boxes, default_levels(128.0 / 1152.0), input)};
    const KeypointHeatmapStack hs[] = {render_heatmaps(persons, input, 2.0, 3)};
    const bool mask[] = {true};
    const auto targets = collate_targets(tm, hs, mask);
    const auto terms = composite_loss(model->forward(torch::randn({1, 3, 128, 128})), targets);
    CHECK(terms.n_pos > 0);
    terms.total.backward();
    int checked = 0, scales_with_positives = 0;
    for (const auto& p : model->named_parameters()) {
        INFO(p.key());
        REQUIRE(p.value().grad().defined());
        const double g = p.value().grad().abs().sum().item<double>();
        const auto at = p.key().find("scale_");
        if (at != std::string::npos) {
            // a level scale only enters the box loss through its own positives
            const int level = std::stoi(p.key().substr(at + 6));
            const bool has_positives = tm[0].levels[static_cast<std::size_t>(level - 3)].positives() > 0;
            CHECK((g > 0.0) == has_positives);
            scales_with_positives += has_positives;
        } else {
            CHECK(g > 0.0);
        }
        ++checked;
    }
    CHECK(scales_with_positives > 0);
    CHECK(checked > 100);
}

TEST_CASE("checkpoint round trip is bit-identical") {
    testing_support::TempDir dir("ckpt");
    torch::manual_seed(8);
    DangerDet model(tiny(1));
    Checkpoint ck;
    ck.config.model = tiny(1);
    ck.norm = {{10, 20, 30}, {2, 3, 4}};
    ck.step = 17;
    ck.tensors = parameter_tensors(model);
    ck.tensors["momentum/head.scale_3"] = torch::tensor({0.25});
    save_checkpoint(ck, dir.path() / "m.ddet");

    const auto loaded = load_checkpoint(dir.path() / "m.ddet");
    CHECK(loaded.step == 17);
    CHECK(loaded.norm == ck.norm);
    CHECK(loaded.config.model == ck.config.model);
    CHECK(loaded.tensors.size() == ck.tensors.size());

    DangerDet other(tiny(1));
    load_parameters(other, loaded);
    torch::NoGradGuard guard;
    const auto x = torch::randn({1, 3, 128, 128});
    const auto a = model->forward(x);
    const auto b = other->forward(x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(bit_equal(a.cls_logits[i], b.cls_logits[i]));

    DangerDet mismatched(tiny(0));
    try {
        load_parameters(mismatched, loaded);
        FAIL("expected ConfigMismatch");
    } catch (const Error& e) {
        CHECK(e.qualified_name() == "network::ConfigMismatch");
    }
}

TEST_CASE("image_to_tensor normalizes per channel") {
    cv::Mat img(2, 3, CV_8UC3, cv::Scalar(10, 20, 30));
    img.at<cv::Vec3b>(1, 2) = {0, 0, 255};
    const NormStats stats{{10, 20, 30}, {2, 4, 5}};
    const auto t = image_to_tensor(img, stats);
    CHECK((t.sizes() == torch::IntArrayRef{3, 2, 3}));
    CHECK(t[0][0][0].item<float>() == 0.0f);
    CHECK(t[2][1][2].item<float>() == doctest::Approx(45.0));
    CHECK(t[1][1][2].item<float>() == doctest::Approx(-5.0));
}
