#include "cyclegc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cyclegc/imaging.hpp"
#include "cyclegc/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cyclegc {

ExperimentPlan ExperimentPlan::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("experiment plan is not valid JSON: ") + e.what());
    }
    ExperimentPlan p;
    p.output_dir = j.value("output_dir", "");
    p.profile = j.value("profile", "desk");
    p.n_subjects = j.value("n_subjects", 24);
    p.image_size = j.value("image_size", 64);
    p.pose_jitter = j.value("pose_jitter", 4.0);
    p.slices_per_subject = j.value("slices_per_subject", 4);
    p.with_segmentation = j.value("with_segmentation", false);
    p.iterations_override = j.value("iterations", -1L);
    p.seg_iterations_override = j.value("seg_iterations", -1L);
    p.threads = j.value("threads", 1);
    if (j.contains("metrics")) p.metrics = j["metrics"].get<std::vector<std::string>>();
    if (j.contains("arms")) {
        p.arms.clear();
        for (const auto& a : j["arms"]) {
            ExperimentArm arm;
            arm.train_size = a.value("train_size", 40);
            arm.use_gc = a.value("use_gc", true);
            arm.seed = a.value("seed", 1ULL);
            p.arms.push_back(arm);
        }
    }
    return p;
}

ExperimentPlan ExperimentPlan::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open experiment plan: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string ExperimentPlan::to_json() const {
    json j;
    j["output_dir"] = output_dir;
    j["profile"] = profile;
    j["n_subjects"] = n_subjects;
    j["image_size"] = image_size;
    j["pose_jitter"] = pose_jitter;
    j["slices_per_subject"] = slices_per_subject;
    j["with_segmentation"] = with_segmentation;
    j["iterations"] = iterations_override;
    j["seg_iterations"] = seg_iterations_override;
    j["threads"] = threads;
    j["metrics"] = metrics;
    json arms_json = json::array();
    for (const auto& a : arms)
        arms_json.push_back({{"train_size", a.train_size}, {"use_gc", a.use_gc}, {"seed", a.seed}});
    j["arms"] = arms_json;
    return j.dump(2);
}

void ExperimentPlan::validate() const {
    if (arms.empty()) throw std::invalid_argument("experiment plan: arms must be non-empty");
    if (output_dir.empty()) throw std::invalid_argument("experiment plan: output_dir required");
    if (n_subjects < 3) throw std::invalid_argument("experiment plan: n_subjects < 3");
    if (image_size < 32 || image_size % 16 != 0)
        throw std::invalid_argument("experiment plan: image_size must be >= 32 and divisible by 16");
}

namespace {

std::string arm_dir_name(const ExperimentArm& a) {
    std::ostringstream os;
    os << "arm_n" << a.train_size << (a.use_gc ? "_gc" : "_nogc");
    return os.str();
}

struct ArmFiles {
    std::string run_dir;
    std::string eval_csv;
    std::string manifest;
};

ArmResult run_arm(const ExperimentPlan& plan, const ExperimentArm& arm) {
    const fs::path run_dir =
        fs::path(plan.output_dir) / arm_dir_name(arm) / ("seed_" + std::to_string(arm.seed));
    fs::create_directories(run_dir);

    SplitOptions sopt;
    sopt.size = {plan.image_size, plan.image_size};
    sopt.pose_jitter = plan.pose_jitter;
    sopt.slices_per_subject = plan.slices_per_subject;
    sopt.max_ct_slices = arm.train_size;
    sopt.max_mr_slices = std::max(2, arm.train_size / 2);
    const UnpairedSplit split =
        make_unpaired_split(plan.n_subjects, mix_seed(0x591731, arm.seed), sopt);

    TrainConfig cfg = TrainConfig::profile_config(plan.profile);
    cfg.seed = arm.seed;
    if (!arm.use_gc) cfg.weights.lambda_gc = 0.0;
    if (plan.iterations_override > 0) {
        cfg.total_iterations = plan.iterations_override;
        cfg.fixed_phase_iterations = plan.iterations_override / 2;
        cfg.checkpoint_interval = std::max(1L, plan.iterations_override / 4);
    }

    const TrainResult tr =
        run_training(cfg, split.ct_train, split.mr_train, (run_dir / "synth").string());

    Generator g_ct(GeneratorConfig{cfg.gen_base_width, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{cfg.gen_base_width, 9}, Direction::CTtoMR);
    load_generators(tr.final_checkpoint, g_ct, g_mr);

    MetricReport report;
    int idx = 0;
    for (const auto& sample : split.paired_test) {
        const std::string item = "test" + std::to_string(idx++);
        const std::vector<ImageGrid> synth_ct = synthesize_volume(g_ct, {sample.mr});
        const std::vector<ImageGrid> synth_mr = synthesize_volume(g_mr, {sample.ct});
        ImageGrid identity_ct = sample.mr;
        identity_ct.modality = Modality::SynthCT;

        report.add(item, "mae", mae(synth_ct[0], sample.ct));
        report.add(item, "psnr", psnr(synth_ct[0], sample.ct));
        report.add(item, "mi", mutual_information(sample.mr, synth_ct[0], report.config.mi_bins));
        report.add(item, "gc", gradient_correlation(sample.mr, synth_ct[0]));
        report.add(item, "mi_rev", mutual_information(sample.ct, synth_mr[0], report.config.mi_bins));
        report.add(item, "gc_rev", gradient_correlation(sample.ct, synth_mr[0]));
        report.add(item, "mae_identity", mae(identity_ct, sample.ct));
        report.add(item, "psnr_identity", psnr(identity_ct, sample.ct));
    }
    report.write_csv((run_dir / "synth_eval.csv").string());
    report.write_aggregate_json((run_dir / "synth_eval_aggregate.json").string());

    ArmResult res;
    res.arm = arm;
    res.dir = run_dir.string();
    res.mae_mean = mean_of(report.values_for("mae"));
    res.psnr_mean = mean_of(report.values_for("psnr"));
    res.mi_mean = mean_of(report.values_for("mi"));
    res.gc_mean = mean_of(report.values_for("gc"));
    res.mae_identity = mean_of(report.values_for("mae_identity"));

    json manifest;
    manifest["arm"] = {{"train_size", arm.train_size}, {"use_gc", arm.use_gc}, {"seed", arm.seed}};
    manifest["profile"] = plan.profile;
    manifest["train_config"] = {{"total_iterations", cfg.total_iterations},
                                {"fixed_phase_iterations", cfg.fixed_phase_iterations},
                                {"base_lr", cfg.base_lr},
                                {"batch_size", cfg.batch_size},
                                {"lambda_cycle", cfg.weights.lambda_cycle},
                                {"lambda_gc", cfg.weights.lambda_gc},
                                {"pool_capacity", cfg.pool_capacity},
                                {"gen_base_width", cfg.gen_base_width},
                                {"disc_base_width", cfg.disc_base_width},
                                {"adam_betas", {0.5, 0.999}}};
    manifest["arch"] = {{"g_ct", g_ct.arch_hash()},
                        {"g_mr", g_mr.arch_hash()}};
    manifest["data"] = {{"n_subjects", plan.n_subjects},
                        {"ct_train_slices", split.ct_train.size()},
                        {"mr_train_slices", split.mr_train.size()},
                        {"paired_test_slices", split.paired_test.size()},
                        {"image_size", plan.image_size},
                        {"pose_jitter", plan.pose_jitter}};
    manifest["final_checkpoint"] = tr.final_checkpoint;

    if (plan.with_segmentation) {
        SegTrainConfig scfg = SegTrainConfig::profile_config(plan.profile);
        scfg.seed = arm.seed;
        if (plan.seg_iterations_override > 0) scfg.iterations = plan.seg_iterations_override;

        std::vector<std::pair<ImageGrid, LabelGrid>> labeled_ct;
        for (const auto& s : split.ct_train_samples) labeled_ct.emplace_back(s.ct, s.labels);
        const auto pairs = build_training_pairs(labeled_ct, g_mr);
        SegTrainResult seg_log;
        UNet unet = train_segmenter(pairs, scfg, &seg_log);
        save_unet(unet, scfg, (run_dir / "unet.bin").string());

        std::vector<ImageGrid> test_mr;
        std::vector<LabelGrid> test_labels;
        for (const auto& s : split.paired_test) {
            test_mr.push_back(s.mr);
            test_labels.push_back(s.labels);
        }
        const auto stacks = build_inference_pairs(test_mr, g_ct);
        std::vector<LabelGrid> preds;
        for (const auto& st : stacks)
            preds.push_back(segment(unet, st, phantom_class_names()));
        MetricReport dice_report = evaluate_segmentation(preds, test_labels);
        dice_report.write_csv((run_dir / "dice.csv").string());
        dice_report.write_aggregate_json((run_dir / "dice_aggregate.json").string());
        res.fg_dice = foreground_mean_dice(preds, test_labels);

        manifest["segmentation"] = {{"iterations", scfg.iterations},
                                    {"lr", scfg.lr},
                                    {"base_width", scfg.base_width},
                                    {"seed", scfg.seed},
                                    {"unet_arch", unet.arch_hash()},
                                    {"first_loss", seg_log.first_loss},
                                    {"last_loss", seg_log.last_loss},
                                    {"foreground_mean_dice", res.fg_dice},
                                    {"generator_checkpoint", tr.final_checkpoint}};
    }

    std::ofstream mf(run_dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
    return res;
}

std::string fmt_val(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, bool force) {
    plan.validate();
    const fs::path out(plan.output_dir);
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw std::invalid_argument("output_dir is not empty; pass --force to overwrite: " +
                                    plan.output_dir);
    fs::create_directories(out);
    {
        std::ofstream pf(out / "plan.json");
        pf << plan.to_json() << "\n";
    }

    std::vector<ArmResult> results(plan.arms.size());
    const int workers = std::max(1, plan.threads);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= plan.arms.size()) return;
            results[i] = run_arm(plan, plan.arms[i]);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // Long-format per-item table: every figure is recomputable from this.
    std::ofstream per_item(out / "per_item.csv");
    per_item << "metric,train_size,use_gc,seed,item,value\n";
    for (const auto& r : results) {
        std::ifstream in(fs::path(r.dir) / "synth_eval.csv");
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            per_item << line.substr(c1 + 1, c2 - c1 - 1) << "," << r.arm.train_size << ","
                     << (r.arm.use_gc ? 1 : 0) << "," << r.arm.seed << "," << line.substr(0, c1)
                     << "," << line.substr(c2 + 1) << "\n";
        }
        const fs::path dice_csv = fs::path(r.dir) / "dice.csv";
        if (fs::exists(dice_csv)) {
            std::ifstream din(dice_csv);
            std::getline(din, line);
            while (std::getline(din, line)) {
                const auto c1 = line.find(',');
                const auto c2 = line.find(',', c1 + 1);
                per_item << line.substr(c1 + 1, c2 - c1 - 1) << "," << r.arm.train_size << ","
                         << (r.arm.use_gc ? 1 : 0) << "," << r.arm.seed << ","
                         << line.substr(0, c1) << "," << line.substr(c2 + 1) << "\n";
            }
        }
    }
    per_item.close();

    // Table-1-shaped aggregate: mean +- SD per (metric, train_size, use_gc).
    std::map<std::string, std::map<std::pair<int, int>, std::vector<double>>> agg;
    auto note = [&](const std::string& metric, const ArmResult& r, double v) {
        agg[metric][{r.arm.train_size, r.arm.use_gc ? 1 : 0}].push_back(v);
    };
    for (const auto& r : results) {
        note("mae", r, r.mae_mean);
        note("psnr", r, r.psnr_mean);
        note("mi", r, r.mi_mean);
        note("gc", r, r.gc_mean);
        note("mae_identity", r, r.mae_identity);
        if (r.fg_dice >= 0.0) note("fg_dice", r, r.fg_dice);
    }
    std::ofstream cmp(out / "comparison.csv");
    cmp << "metric,train_size,use_gc,mean,sd,n\n";
    for (const auto& [metric, groups] : agg)
        for (const auto& [key, vals] : groups)
            cmp << metric << "," << key.first << "," << key.second << "," << fmt_val(mean_of(vals))
                << "," << fmt_val(sample_sd(vals)) << "," << vals.size() << "\n";
    cmp.close();

    json summary;
    summary["arms"] = json::array();
    for (const auto& r : results)
        summary["arms"].push_back({{"train_size", r.arm.train_size},
                                   {"use_gc", r.arm.use_gc},
                                   {"seed", r.arm.seed},
                                   {"dir", r.dir},
                                   {"mae", r.mae_mean},
                                   {"psnr", r.psnr_mean},
                                   {"mi", r.mi_mean},
                                   {"gc", r.gc_mean},
                                   {"mae_identity", r.mae_identity},
                                   {"fg_dice", r.fg_dice}});
    std::ofstream sf(out / "summary.json");
    sf << summary.dump(2) << "\n";

    ExperimentResult result;
    result.arms = results;
    result.output_dir = plan.output_dir;
    result.comparison_csv = (out / "comparison.csv").string();
    result.per_item_csv = (out / "per_item.csv").string();
    return result;
}

}  // namespace cyclegc
