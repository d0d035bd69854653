#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cyclegc/imaging.hpp"
#include "cyclegc/phantom.hpp"
#include "cyclegc/trainer.hpp"
#include "test_helpers.hpp"

using namespace cyclegc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("cyclegc_trainer_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TrainConfig tiny_config(std::uint64_t seed) {
    TrainConfig cfg = TrainConfig::profile_config("desk");
    cfg.total_iterations = 12;
    cfg.fixed_phase_iterations = 6;
    cfg.checkpoint_interval = 4;
    cfg.gen_base_width = 4;
    cfg.disc_base_width = 4;
    cfg.pool_capacity = 4;
    cfg.seed = seed;
    return cfg;
}

std::vector<ImageGrid> tiny_slices(std::uint64_t seed, int n) {
    std::vector<ImageGrid> out;
    for (int i = 0; i < n; ++i) {
        const PhantomSample s = generate_phantom(mix_seed(seed, i), {32, 32}, 2.0);
        out.push_back(seed % 2 == 0 ? s.ct : s.mr);
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("learning rate schedule hits the paper values exactly") {
    const TrainConfig cfg = TrainConfig::profile_config("paper");
    CHECK(lr_at(cfg, 0) == 2e-4);
    CHECK(lr_at(cfg, 100000) == 2e-4);
    CHECK(lr_at(cfg, 150000) == 1e-4);
    CHECK(lr_at(cfg, 200000) == 0.0);
    CHECK_THROWS_AS(lr_at(cfg, -1), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(cfg, 200001), std::invalid_argument);

    // non-increasing and continuous at the knee
    double prev = lr_at(cfg, 0);
    for (long it = 0; it <= 200000; it += 1000) {
        const double v = lr_at(cfg, it);
        CHECK(v <= prev + 1e-18);
        prev = v;
    }

    const TrainConfig desk = TrainConfig::profile_config("desk");
    CHECK(lr_at(desk, 0) == 2e-4);
    CHECK(lr_at(desk, 1000) == 2e-4);
    CHECK(lr_at(desk, 1500) == 1e-4);
    CHECK(lr_at(desk, 2000) == 0.0);
}

TEST_CASE("image pool contract") {
    Rng rng(1);
    ImagePool pool(3);
    const Tensor fresh(1, 4, 4, 1.0);
    const Tensor got = pool.sample(fresh, rng);
    CHECK(got.v == fresh.v);
    CHECK(pool.buffer().size() == 1);

    ImagePool none(0);
    for (int i = 0; i < 5; ++i) {
        const Tensor t(1, 2, 2, static_cast<double>(i));
        CHECK(none.sample(t, rng).v == t.v);
    }
    CHECK(none.buffer().empty());
}

TEST_CASE("image pool fresh-return frequency is one half at capacity") {
    Rng rng(9);
    ImagePool pool(10);
    for (int i = 0; i < 10; ++i) pool.sample(Tensor(1, 1, 1, -1.0), rng);

    int fresh_returns = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const Tensor fresh(1, 1, 1, static_cast<double>(i + 1));
        if (pool.sample(fresh, rng).v == fresh.v) ++fresh_returns;
    }
    const double freq = static_cast<double>(fresh_returns) / draws;
    CHECK(freq > 0.48);
    CHECK(freq < 0.52);
}

TEST_CASE("train_step validates inputs") {
    SynthesisTrainState state(tiny_config(3));
    state.init_params();
    TensorBatch bad{Tensor(1, 32, 32, 3.0)};  // outside [-1,1]
    TensorBatch ok{Tensor(1, 32, 32, 0.1)};
    CHECK_THROWS_AS(train_step(state, bad, ok), InvalidDataError);
    CHECK_THROWS_AS(train_step(state, {}, ok), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    TrainConfig cfg = tiny_config(5);
    cfg.base_lr = 0.0;
    SynthesisTrainState state(cfg);
    state.init_params();
    const auto before = state.g_ct.flatten();
    const auto before_d = state.d_mr.flatten();

    const auto ct = tiny_slices(2, 2);
    const auto mr = tiny_slices(3, 2);
    TensorBatch cb{image_to_tensor(ct[0])}, mb{image_to_tensor(mr[0])};
    train_step(state, cb, mb);
    CHECK(state.g_ct.flatten() == before);
    CHECK(state.d_mr.flatten() == before_d);
    CHECK(state.iteration == 1);
}

TEST_CASE("train_step determinism and loss breakdown composition") {
    const auto ct = tiny_slices(2, 2);
    const auto mr = tiny_slices(3, 2);
    TensorBatch cb{image_to_tensor(ct[0])}, mb{image_to_tensor(mr[0])};

    SynthesisTrainState a(tiny_config(7)), b(tiny_config(7));
    a.init_params();
    b.init_params();
    for (int i = 0; i < 3; ++i) {
        const LossBreakdown la = train_step(a, cb, mb);
        const LossBreakdown lb = train_step(b, cb, mb);
        CHECK(la.total == lb.total);
        CHECK(la.adv_ct == lb.adv_ct);
        CHECK(la.gc == lb.gc);
        const double recompose = la.adv_ct + la.adv_mr + 3.0 * la.cycle + 0.3 * la.gc;
        CHECK(std::abs(la.total - recompose) <= 1e-10 * std::abs(la.total));
    }
    CHECK(a.g_ct.flatten() == b.g_ct.flatten());
    CHECK(a.d_ct.flatten() == b.d_ct.flatten());
}

TEST_CASE("diverged training raises with the breakdown attached") {
    SynthesisTrainState state(tiny_config(11));
    state.init_params();
    auto poisoned = state.g_mr.flatten();
    poisoned[10] = std::numeric_limits<double>::quiet_NaN();
    state.g_mr.load_flat(poisoned);

    TensorBatch cb{Tensor(1, 32, 32, 0.1)}, mb{Tensor(1, 32, 32, -0.2)};
    CHECK_THROWS_AS(train_step(state, cb, mb), TrainingDivergedError);
}

TEST_CASE("synthesize_volume plumbing") {
    const auto vol = tiny_slices(4, 3);
    auto identity = [](const Tensor& t) { return t; };
    const auto out = synthesize_volume(identity, vol, Modality::SynthCT);
    REQUIRE(out.size() == 3);
    CHECK(out[0].modality == Modality::SynthCT);
    for (std::size_t i = 0; i < vol[0].px.size(); ++i)
        CHECK(out[0].px[i] == doctest::Approx(vol[0].px[i]).epsilon(1e-12));

    Generator g(GeneratorConfig{4, 2}, Direction::MRtoCT);
    g.init_params(5);
    std::vector<ImageGrid> masked = vol;
    masked[1].mask.assign(masked[1].px.size(), 1);
    masked[1].mask[7] = 0;
    const auto synth = synthesize_volume(g, masked);
    CHECK(synth.size() == 3);
    CHECK(synth[0].modality == Modality::SynthCT);
    CHECK(synth[1].mask == masked[1].mask);
    const auto synth2 = synthesize_volume(g, masked);
    CHECK(synth[2].px == synth2[2].px);
}

TEST_CASE("run_training writes deterministic logs and checkpoints") {
    const auto ct = tiny_slices(2, 3);
    const auto mr = tiny_slices(3, 3);

    const fs::path d1 = temp_dir("run1");
    const fs::path d2 = temp_dir("run2");
    const TrainResult r1 = run_training(tiny_config(21), ct, mr, d1.string());
    const TrainResult r2 = run_training(tiny_config(21), ct, mr, d2.string());

    CHECK(slurp(r1.log_path) == slurp(r2.log_path));
    CHECK(!r1.checkpoint_paths.empty());
    CHECK(fs::exists(r1.final_checkpoint));

    // 12 iterations logged
    std::istringstream is(slurp(r1.log_path));
    std::string line;
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 13);  // header + 12

    CHECK_THROWS_AS(run_training(tiny_config(21), {}, mr, d1.string()), std::invalid_argument);
}

TEST_CASE("checkpoint resume reproduces the original trajectory") {
    const auto ct = tiny_slices(2, 3);
    const auto mr = tiny_slices(3, 3);

    const fs::path full_dir = temp_dir("full");
    const TrainResult full = run_training(tiny_config(33), ct, mr, full_dir.string());

    // checkpoint at iteration 4 (interval 4)
    const std::string ckpt4 = full.checkpoint_paths.front();
    CHECK(ckpt4.find("00000004") != std::string::npos);

    const fs::path resume_dir = temp_dir("resume");
    const TrainResult resumed =
        run_training(tiny_config(33), ct, mr, resume_dir.string(), {}, ckpt4);

    auto tail_rows = [](const std::string& text, long from_iter) {
        std::vector<std::string> rows;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            char* end = nullptr;
            const long it = std::strtol(line.c_str(), &end, 10);
            if (end != line.c_str() && it >= from_iter) rows.push_back(line);
        }
        return rows;
    };
    const auto orig = tail_rows(slurp(full.log_path), 4);
    const auto redo = tail_rows(slurp(resumed.log_path), 4);
    REQUIRE(orig.size() == redo.size());
    CHECK(orig == redo);
}

TEST_CASE("checkpoint refuses architecture mismatch") {
    const auto ct = tiny_slices(2, 2);
    const auto mr = tiny_slices(3, 2);
    const fs::path dir = temp_dir("arch");
    const TrainResult r = run_training(tiny_config(41), ct, mr, dir.string());

    TrainConfig wider = tiny_config(41);
    wider.gen_base_width = 8;
    SynthesisTrainState state(wider);
    CHECK_THROWS_AS(load_state(state, r.final_checkpoint), FormatError);

    Generator g_ct(GeneratorConfig{8, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{8, 9}, Direction::CTtoMR);
    CHECK_THROWS_AS(load_generators(r.final_checkpoint, g_ct, g_mr), FormatError);

    const TrainConfig echoed = config_from_checkpoint(r.final_checkpoint);
    CHECK(echoed.gen_base_width == 4);
    CHECK(echoed.seed == 41);
}

TEST_CASE("config validation") {
    TrainConfig bad = TrainConfig::profile_config("desk");
    bad.fixed_phase_iterations = bad.total_iterations + 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    TrainConfig neg = TrainConfig::profile_config("desk");
    neg.weights.lambda_gc = -0.1;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::profile_config("bogus"), std::invalid_argument);
}
