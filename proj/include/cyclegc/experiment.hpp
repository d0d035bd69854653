#pragma once

#include <string>
#include <vector>

#include "cyclegc/phantom.hpp"
#include "cyclegc/segmentation.hpp"
#include "cyclegc/trainer.hpp"

namespace cyclegc {

struct ExperimentArm {
    int train_size = 40;   // CT training slice budget; MR gets half
    bool use_gc = true;
    std::uint64_t seed = 1;
};

struct ExperimentPlan {
    std::vector<ExperimentArm> arms;
    std::vector<std::string> metrics{"mae", "psnr", "mi", "gc"};
    std::string output_dir;
    std::string profile = "desk";
    int n_subjects = 24;
    int image_size = 64;
    double pose_jitter = 4.0;
    int slices_per_subject = 4;
    bool with_segmentation = false;
    long iterations_override = -1;       // -1 keeps the profile value
    long seg_iterations_override = -1;
    int threads = 1;                     // arms run as independent workers

    static ExperimentPlan from_json_file(const std::string& path);
    static ExperimentPlan from_json(const std::string& text);
    std::string to_json() const;
    void validate() const;
};

struct ArmResult {
    ExperimentArm arm;
    std::string dir;
    // Per-test-slice means for this run.
    double mae_mean = 0.0;
    double psnr_mean = 0.0;
    double mi_mean = 0.0;
    double gc_mean = 0.0;
    double mae_identity = 0.0;
    double fg_dice = -1.0;  // -1 when segmentation was not run
};

struct ExperimentResult {
    std::vector<ArmResult> arms;
    std::string output_dir;
    std::string comparison_csv;
    std::string per_item_csv;
};

/// Runs every arm: phantom split, synthesis training, paired MAE/PSNR and
/// unpaired MI/GC evaluation, optional two-channel segmentation. Writes
/// per-arm CSVs, run manifests, and an aggregate comparison table. Refuses a
/// non-empty output_dir unless force is set.
ExperimentResult run_experiment(const ExperimentPlan& plan, bool force = false);

/// Renders box-and-whisker SVGs for each metric (one box per arm) and
/// per-structure Dice panels from the CSVs an experiment emitted. Figures are
/// pure views of the CSV data. Returns the written file paths; empty metric
/// columns are skipped with a notice on stderr.
std::vector<std::string> report_figures(const std::string& experiment_dir,
                                        const std::string& out_dir);

/// Low-level panel writer; returns false (and writes nothing) when every
/// group is empty.
bool write_boxplot_svg(const std::string& path, const std::string& title,
                       const std::string& ylabel,
                       const std::vector<std::pair<std::string, std::vector<double>>>& groups);

}  // namespace cyclegc
