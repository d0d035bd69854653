#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "cyclegc/phantom.hpp"
#include "cyclegc/segmentation.hpp"
#include "test_helpers.hpp"

using namespace cyclegc;
namespace fs = std::filesystem;

namespace {

std::vector<std::pair<ImageGrid, LabelGrid>> labeled_ct_set(int n, std::uint64_t seed) {
    std::vector<std::pair<ImageGrid, LabelGrid>> out;
    for (int i = 0; i < n; ++i) {
        const PhantomSample s = generate_phantom(mix_seed(seed, i), {32, 32}, 2.0);
        out.emplace_back(s.ct, s.labels);
    }
    return out;
}

SegTrainConfig tiny_seg(std::uint64_t seed) {
    SegTrainConfig cfg = SegTrainConfig::profile_config("desk");
    cfg.iterations = 30;
    cfg.base_width = 4;
    cfg.seed = seed;
    return cfg;
}

Generator tiny_gmr(std::uint64_t seed) {
    Generator g(GeneratorConfig{4, 2}, Direction::CTtoMR);
    g.init_params(seed);
    return g;
}

Generator tiny_gct(std::uint64_t seed) {
    Generator g(GeneratorConfig{4, 2}, Direction::MRtoCT);
    g.init_params(seed);
    return g;
}

}  // namespace

TEST_CASE("training pairs carry real CT in channel 0 and synth MR in channel 1") {
    const auto labeled = labeled_ct_set(2, 5);
    const Generator g_mr = tiny_gmr(1);
    const auto pairs = build_training_pairs(labeled, g_mr);
    REQUIRE(pairs.size() == 2);

    const auto& [stack, labels] = pairs[0];
    CHECK(stack.ch0 == Modality::CT);
    CHECK(stack.ch1 == Modality::SynthMR);
    CHECK(stack.x.c == 2);

    const Tensor ct_t = image_to_tensor(labeled[0].first);
    for (std::size_t i = 0; i < ct_t.size(); ++i) CHECK(stack.x.v[i] == ct_t.v[i]);

    // swapping channels changes the stack (guard against silent transposition)
    const Tensor synth = g_mr.forward(ct_t);
    bool differs = false;
    for (std::size_t i = 0; i < synth.size() && !differs; ++i)
        differs = stack.x.v[i] != synth.v[i];
    CHECK(differs);

    CHECK(labels.classes == labeled[0].second.classes);

    const auto pairs2 = build_training_pairs(labeled, g_mr);
    CHECK(pairs2[0].first.x.v == stack.x.v);  // deterministic per checkpoint

    // direction guard
    CHECK_THROWS_AS(build_training_pairs(labeled, tiny_gct(1)), std::invalid_argument);
}

TEST_CASE("inference pairs carry synth CT in channel 0 and real MR in channel 1") {
    std::vector<ImageGrid> mr;
    for (int i = 0; i < 2; ++i) mr.push_back(generate_phantom(40 + i, {32, 32}, 2.0).mr);
    const Generator g_ct = tiny_gct(2);
    const auto stacks = build_inference_pairs(mr, g_ct);
    REQUIRE(stacks.size() == 2);
    CHECK(stacks[0].ch0 == Modality::SynthCT);
    CHECK(stacks[0].ch1 == Modality::MR);
    const Tensor mr_t = image_to_tensor(mr[0]);
    for (std::size_t i = 0; i < mr_t.size(); ++i)
        CHECK(stacks[0].x.v[mr_t.size() + i] == mr_t.v[i]);
    CHECK_THROWS_AS(build_inference_pairs(mr, tiny_gmr(2)), std::invalid_argument);
}

TEST_CASE("train_segmenter determinism, zero-lr freeze, and label validation") {
    const auto labeled = labeled_ct_set(3, 6);
    const Generator g_mr = tiny_gmr(3);
    const auto pairs = build_training_pairs(labeled, g_mr);

    SegTrainConfig frozen = tiny_seg(9);
    frozen.lr = 0.0;
    frozen.iterations = 3;
    UNet before(UNetConfig{frozen.base_width, 2, frozen.n_classes});
    before.init_params(mix_seed(9, 0x0E6));
    const UNet trained_frozen = train_segmenter(pairs, frozen);
    CHECK(trained_frozen.flatten() == before.flatten());

    const UNet a = train_segmenter(pairs, tiny_seg(10));
    const UNet b = train_segmenter(pairs, tiny_seg(10));
    CHECK(a.flatten() == b.flatten());
    const UNet c = train_segmenter(pairs, tiny_seg(11));
    CHECK(a.flatten() != c.flatten());

    auto bad_pairs = pairs;
    bad_pairs[0].second.classes[0] = 7;
    CHECK_THROWS_AS(train_segmenter(bad_pairs, tiny_seg(9)), InvalidDataError);
}

TEST_CASE("segmentation loss decreases on a small run") {
    const auto labeled = labeled_ct_set(6, 12);
    const auto pairs = build_training_pairs(labeled, tiny_gmr(4));
    SegTrainConfig cfg = tiny_seg(13);
    cfg.iterations = 150;
    SegTrainResult log;
    train_segmenter(pairs, cfg, &log);
    CHECK(log.last_loss < log.first_loss);
}

TEST_CASE("segment produces valid argmax labels") {
    const auto labeled = labeled_ct_set(2, 20);
    const auto pairs = build_training_pairs(labeled, tiny_gmr(5));
    const UNet net = train_segmenter(pairs, tiny_seg(14));

    const LabelGrid pred = segment(net, pairs[0].first, phantom_class_names());
    CHECK(pred.h == 32);
    CHECK(pred.w == 32);
    for (int v : pred.classes) {
        CHECK(v >= 0);
        CHECK(v <= 4);
    }

    // argmax consistency against the probability map
    const Tensor probs = net.forward(pairs[0].first.x);
    for (std::size_t i = 0; i < probs.plane(); ++i) {
        int best = 0;
        double bv = probs.v[i];
        for (int c = 1; c < probs.c; ++c) {
            const double v = probs.v[static_cast<std::size_t>(c) * probs.plane() + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        CHECK(pred.classes[i] == best);
    }
}

TEST_CASE("evaluate_segmentation report") {
    const auto names = phantom_class_names();
    LabelGrid truth(16, 16, names);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) truth.at(r, c) = 1;
    for (int r = 8; r < 12; ++r)
        for (int c = 8; c < 12; ++c) truth.at(r, c) = 3;

    const MetricReport perfect = evaluate_segmentation({truth}, {truth});
    for (const auto& item : perfect.per_item) CHECK(item.value == 1.0);
    CHECK(foreground_mean_dice({truth}, {truth}) == 1.0);

    LabelGrid empty(16, 16, names);
    const MetricReport rep = evaluate_segmentation({empty}, {truth});
    for (const auto& item : rep.per_item) {
        if (item.metric == "dice_bone_a" || item.metric == "dice_muscle_a")
            CHECK(item.value == 0.0);
        else
            CHECK(item.value == 1.0);  // absent classes
    }

    CHECK_THROWS_AS(evaluate_segmentation({truth}, {}), std::invalid_argument);
}

TEST_CASE("unet checkpoint round trip and arch guard") {
    const auto labeled = labeled_ct_set(2, 30);
    const auto pairs = build_training_pairs(labeled, tiny_gmr(6));
    const SegTrainConfig cfg = tiny_seg(15);
    const UNet net = train_segmenter(pairs, cfg);

    const fs::path p = fs::temp_directory_path() / "cyclegc_unet_test.bin";
    save_unet(net, cfg, p.string());
    const UNet loaded = load_unet(p.string());
    CHECK(loaded.flatten() == net.flatten());
    CHECK(loaded.arch_hash() == net.arch_hash());

    const LabelGrid p1 = segment(net, pairs[1].first, phantom_class_names());
    const LabelGrid p2 = segment(loaded, pairs[1].first, phantom_class_names());
    CHECK(p1.classes == p2.classes);
}
