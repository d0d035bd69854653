#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cyclegc/experiment.hpp"
#include "cyclegc/imaging.hpp"
#include "cyclegc/metrics.hpp"
#include "cyclegc/phantom.hpp"
#include "cyclegc/segmentation.hpp"
#include "cyclegc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cyclegc;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string profile = "desk";
    std::optional<std::uint64_t> seed;
};

void attach_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file (field names mirror the config structs)");
    cmd->add_option("--profile", opts.profile, "Schedule profile: paper or desk")
        ->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--seed", opts.seed, "Random seed override");
}

json read_config_json(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config: " + path);
    json j;
    in >> j;
    return j;
}

TrainConfig make_train_config(const CommonOpts& opts) {
    TrainConfig cfg = TrainConfig::profile_config(opts.profile);
    const json j = read_config_json(opts.config_path);
    cfg.total_iterations = j.value("total_iterations", cfg.total_iterations);
    cfg.fixed_phase_iterations = j.value("fixed_phase_iterations", cfg.fixed_phase_iterations);
    cfg.base_lr = j.value("base_lr", cfg.base_lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.weights.lambda_cycle = j.value("lambda_cycle", cfg.weights.lambda_cycle);
    cfg.weights.lambda_gc = j.value("lambda_gc", cfg.weights.lambda_gc);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.checkpoint_interval = j.value("checkpoint_interval", cfg.checkpoint_interval);
    cfg.gen_base_width = j.value("gen_base_width", cfg.gen_base_width);
    cfg.disc_base_width = j.value("disc_base_width", cfg.disc_base_width);
    cfg.pool_capacity = j.value("pool_capacity", cfg.pool_capacity);
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

SegTrainConfig make_seg_config(const CommonOpts& opts) {
    SegTrainConfig cfg = SegTrainConfig::profile_config(opts.profile);
    const json j = read_config_json(opts.config_path);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.base_width = j.value("base_width", cfg.base_width);
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

int run_phantom_generate(const CommonOpts& opts, const std::string& out_dir, int subjects,
                         int slices, int size, double jitter, bool split) {
    const std::uint64_t seed = opts.seed.value_or(1);
    if (split) {
        SplitOptions sopt;
        sopt.size = {size, size};
        sopt.pose_jitter = jitter;
        sopt.slices_per_subject = slices;
        const UnpairedSplit s = make_unpaired_split(subjects, seed, sopt);
        save_slices((fs::path(out_dir) / "ct_train").string(), s.ct_train);
        save_slices((fs::path(out_dir) / "mr_train").string(), s.mr_train);
        save_dataset((fs::path(out_dir) / "test").string(), s.paired_test);
        save_dataset((fs::path(out_dir) / "ct_train_labeled").string(), s.ct_train_samples);
        std::cout << "wrote split: " << s.ct_train.size() << " CT train, " << s.mr_train.size()
                  << " MR train, " << s.paired_test.size() << " paired test slices under "
                  << out_dir << "\n";
    } else {
        std::vector<PhantomSample> samples;
        std::vector<std::uint64_t> seeds;
        for (int subj = 0; subj < subjects; ++subj)
            for (int k = 0; k < slices; ++k) {
                const std::uint64_t s = mix_seed(seed, 0x5CE9E, static_cast<std::uint64_t>(subj));
                samples.push_back(generate_phantom(s, {size, size}, jitter, k));
                samples.back().subject_id = subj;
                seeds.push_back(s);
            }
        save_dataset(out_dir, samples, seeds);
        std::cout << "wrote " << samples.size() << " paired samples to " << out_dir << "\n";
    }
    return 0;
}

int run_synth_train(const CommonOpts& opts, const std::string& ct_dir, const std::string& mr_dir,
                    const std::string& out_dir, const std::string& resume) {
    const TrainConfig cfg = make_train_config(opts);
    const auto ct = load_slices(ct_dir, Modality::CT);
    const auto mr = load_slices(mr_dir, Modality::MR);
    std::cout << "training on " << ct.size() << " CT and " << mr.size() << " MR slices, "
              << cfg.total_iterations << " iterations (profile " << cfg.profile << ")\n";
    TrainCallbacks cb;
    cb.on_checkpoint = [](long it, const std::string& path) {
        std::cout << "checkpoint @" << it << ": " << path << "\n";
    };
    const TrainResult r = run_training(cfg, ct, mr, out_dir, cb, resume);
    std::cout << "final checkpoint: " << r.final_checkpoint << "\nlog: " << r.log_path << "\n";
    return 0;
}

int run_synth_eval(const std::string& checkpoint, const std::string& data_dir,
                   const std::string& out_dir) {
    const TrainConfig cfg = config_from_checkpoint(checkpoint);
    Generator g_ct(GeneratorConfig{cfg.gen_base_width, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{cfg.gen_base_width, 9}, Direction::CTtoMR);
    load_generators(checkpoint, g_ct, g_mr);

    const auto samples = load_dataset(data_dir);
    if (samples.empty()) throw InvalidDataError("no samples in " + data_dir);
    fs::create_directories(out_dir);

    MetricReport report;
    std::vector<ImageGrid> synth_out;
    int idx = 0;
    for (const auto& s : samples) {
        const std::string item = "item" + std::to_string(idx++);
        const auto synth_ct = synthesize_volume(g_ct, {s.mr});
        const auto synth_mr = synthesize_volume(g_mr, {s.ct});
        report.add(item, "mae", mae(synth_ct[0], s.ct));
        report.add(item, "psnr", psnr(synth_ct[0], s.ct));
        report.add(item, "mi", mutual_information(s.mr, synth_ct[0], report.config.mi_bins));
        report.add(item, "gc", gradient_correlation(s.mr, synth_ct[0]));
        report.add(item, "mi_rev", mutual_information(s.ct, synth_mr[0], report.config.mi_bins));
        report.add(item, "gc_rev", gradient_correlation(s.ct, synth_mr[0]));
        synth_out.push_back(synth_ct[0]);
    }
    save_slices((fs::path(out_dir) / "synth_ct").string(), synth_out);
    report.write_csv((fs::path(out_dir) / "synth_eval.csv").string());
    report.write_aggregate_json((fs::path(out_dir) / "synth_eval_aggregate.json").string());
    for (const auto& a : report.aggregates())
        std::cout << a.metric << ": " << a.mean << " +- " << a.sd << " (n=" << a.n << ")\n";
    return 0;
}

int run_seg_train(const CommonOpts& opts, const std::string& data_dir,
                  const std::string& gen_checkpoint, const std::string& out_path) {
    const SegTrainConfig scfg = make_seg_config(opts);
    const TrainConfig gcfg = config_from_checkpoint(gen_checkpoint);
    Generator g_ct(GeneratorConfig{gcfg.gen_base_width, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{gcfg.gen_base_width, 9}, Direction::CTtoMR);
    load_generators(gen_checkpoint, g_ct, g_mr);

    const auto samples = load_dataset(data_dir);
    std::vector<std::pair<ImageGrid, LabelGrid>> labeled;
    for (const auto& s : samples) labeled.emplace_back(s.ct, s.labels);
    const auto pairs = build_training_pairs(labeled, g_mr);
    SegTrainResult log;
    const UNet net = train_segmenter(pairs, scfg, &log);
    save_unet(net, scfg, out_path);
    std::cout << "trained on " << pairs.size() << " stacks; CE " << log.first_loss << " -> "
              << log.last_loss << "\nmodel: " << out_path << "\n";
    return 0;
}

int run_seg_eval(const std::string& model_path, const std::string& gen_checkpoint,
                 const std::string& data_dir, const std::string& out_dir) {
    const UNet net = load_unet(model_path);
    const TrainConfig gcfg = config_from_checkpoint(gen_checkpoint);
    Generator g_ct(GeneratorConfig{gcfg.gen_base_width, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{gcfg.gen_base_width, 9}, Direction::CTtoMR);
    load_generators(gen_checkpoint, g_ct, g_mr);

    const auto samples = load_dataset(data_dir);
    std::vector<ImageGrid> mr;
    std::vector<LabelGrid> truths;
    for (const auto& s : samples) {
        mr.push_back(s.mr);
        truths.push_back(s.labels);
    }
    const auto stacks = build_inference_pairs(mr, g_ct);
    fs::create_directories(out_dir);
    std::vector<LabelGrid> preds;
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        preds.push_back(segment(net, stacks[i], phantom_class_names()));
        char name[32];
        std::snprintf(name, sizeof(name), "pred_%04d.png", static_cast<int>(i));
        write_png_labels((fs::path(out_dir) / name).string(), preds.back());
    }
    {
        json legend;
        legend["class_names"] = phantom_class_names();
        std::ofstream lf(fs::path(out_dir) / "legend.json");
        lf << legend.dump(2) << "\n";
    }
    MetricReport report = evaluate_segmentation(preds, truths);
    report.write_csv((fs::path(out_dir) / "dice.csv").string());
    report.write_aggregate_json((fs::path(out_dir) / "dice_aggregate.json").string());
    std::cout << "foreground mean Dice: " << foreground_mean_dice(preds, truths) << "\n";
    for (const auto& a : report.aggregates())
        std::cout << a.metric << ": " << a.mean << " +- " << a.sd << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cyclegc: unpaired cross-modality synthesis with a gradient-consistency loss"};
    app.require_subcommand(1);

    // phantom generate
    auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic paired-modality phantom data");
    phantom_cmd->require_subcommand(1);
    auto* phantom_gen = phantom_cmd->add_subcommand("generate", "Render a phantom dataset");
    CommonOpts pg_opts;
    std::string pg_out = "phantom_data";
    int pg_subjects = 8, pg_slices = 4, pg_size = 64;
    double pg_jitter = 4.0;
    bool pg_split = false;
    attach_common(phantom_gen, pg_opts);
    phantom_gen->add_option("--out", pg_out, "Output directory");
    phantom_gen->add_option("--subjects", pg_subjects, "Number of subjects");
    phantom_gen->add_option("--slices", pg_slices, "Slices per subject");
    phantom_gen->add_option("--size", pg_size, "Square slice size");
    phantom_gen->add_option("--jitter", pg_jitter, "Pose jitter (degrees)");
    phantom_gen->add_flag("--split", pg_split, "Emit disjoint CT-train/MR-train/test directories");

    // synth train / eval
    auto* synth_cmd = app.add_subcommand("synth", "Cross-modality synthesis");
    synth_cmd->require_subcommand(1);
    auto* synth_train = synth_cmd->add_subcommand("train", "Train the translation networks");
    CommonOpts st_opts;
    std::string st_ct, st_mr, st_out = "synth_run", st_resume;
    attach_common(synth_train, st_opts);
    synth_train->add_option("--ct", st_ct, "CT training slice directory")->required();
    synth_train->add_option("--mr", st_mr, "MR training slice directory")->required();
    synth_train->add_option("--out", st_out, "Run output directory");
    synth_train->add_option("--resume", st_resume, "Checkpoint to resume from");

    auto* synth_eval = synth_cmd->add_subcommand("eval", "Evaluate a checkpoint on paired data");
    CommonOpts se_opts;
    std::string se_ckpt, se_data, se_out = "synth_eval";
    attach_common(synth_eval, se_opts);
    synth_eval->add_option("--checkpoint", se_ckpt, "Training checkpoint")->required();
    synth_eval->add_option("--data", se_data, "Paired test dataset directory")->required();
    synth_eval->add_option("--out", se_out, "Report output directory");

    // seg train / eval
    auto* seg_cmd = app.add_subcommand("seg", "Two-channel segmentation");
    seg_cmd->require_subcommand(1);
    auto* seg_train = seg_cmd->add_subcommand("train", "Train the segmentation network");
    CommonOpts sg_opts;
    std::string sg_data, sg_ckpt, sg_out = "unet.bin";
    attach_common(seg_train, sg_opts);
    seg_train->add_option("--data", sg_data, "Labeled CT dataset directory")->required();
    seg_train->add_option("--checkpoint", sg_ckpt, "Synthesis checkpoint (for G_MR)")->required();
    seg_train->add_option("--out", sg_out, "Model output path");

    auto* seg_eval = seg_cmd->add_subcommand("eval", "Segment MR volumes and score Dice");
    CommonOpts sv_opts;
    std::string sv_model, sv_ckpt, sv_data, sv_out = "seg_eval";
    attach_common(seg_eval, sv_opts);
    seg_eval->add_option("--model", sv_model, "Trained segmentation model")->required();
    seg_eval->add_option("--checkpoint", sv_ckpt, "Synthesis checkpoint (for G_CT)")->required();
    seg_eval->add_option("--data", sv_data, "Labeled MR dataset directory")->required();
    seg_eval->add_option("--out", sv_out, "Prediction/report output directory");

    // experiment run
    auto* exp_cmd = app.add_subcommand("experiment", "Multi-arm study orchestration");
    exp_cmd->require_subcommand(1);
    auto* exp_run = exp_cmd->add_subcommand("run", "Run an experiment plan");
    CommonOpts ex_opts;
    std::string ex_plan;
    std::string ex_out_override;
    bool ex_force = false;
    int ex_threads = 0;
    attach_common(exp_run, ex_opts);
    exp_run->add_option("--plan", ex_plan, "Experiment plan JSON")->required();
    exp_run->add_option("--out", ex_out_override, "Override the plan's output_dir");
    exp_run->add_option("--threads", ex_threads, "Parallel arm workers");
    exp_run->add_flag("--force", ex_force, "Overwrite a non-empty output directory");

    // report figures
    auto* rep_cmd = app.add_subcommand("report", "Reports and figures");
    rep_cmd->require_subcommand(1);
    auto* rep_fig = rep_cmd->add_subcommand("figures", "Render SVG figures from experiment CSVs");
    CommonOpts rf_opts;
    std::string rf_exp, rf_out = "figures";
    attach_common(rep_fig, rf_opts);
    rep_fig->add_option("--experiment", rf_exp, "Experiment output directory")->required();
    rep_fig->add_option("--out", rf_out, "Figure output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom_gen->parsed())
            return run_phantom_generate(pg_opts, pg_out, pg_subjects, pg_slices, pg_size,
                                        pg_jitter, pg_split);
        if (synth_train->parsed())
            return run_synth_train(st_opts, st_ct, st_mr, st_out, st_resume);
        if (synth_eval->parsed()) return run_synth_eval(se_ckpt, se_data, se_out);
        if (seg_train->parsed()) return run_seg_train(sg_opts, sg_data, sg_ckpt, sg_out);
        if (seg_eval->parsed()) return run_seg_eval(sv_model, sv_ckpt, sv_data, sv_out);
        if (exp_run->parsed()) {
            ExperimentPlan plan = ExperimentPlan::from_json_file(ex_plan);
            if (!ex_out_override.empty()) plan.output_dir = ex_out_override;
            if (ex_opts.profile != "desk") plan.profile = ex_opts.profile;
            if (ex_threads > 0) plan.threads = ex_threads;
            const ExperimentResult r = run_experiment(plan, ex_force);
            std::cout << "experiment complete: " << r.output_dir << "\n"
                      << "comparison table: " << r.comparison_csv << "\n";
            return 0;
        }
        if (rep_fig->parsed()) {
            const auto files = report_figures(rf_exp, rf_out);
            for (const auto& f : files) std::cout << "wrote " << f << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
