#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cyclegc/metrics.hpp"
#include "cyclegc/networks.hpp"
#include "cyclegc/trainer.hpp"

namespace cyclegc {

struct SegTrainConfig {
    long iterations = 100000;
    double lr = 1e-4;  // fixed rate
    int batch_size = 1;
    std::uint64_t seed = 1;
    int base_width = 64;
    int n_classes = 5;
    std::string profile = "paper";

    static SegTrainConfig profile_config(const std::string& name);
    void validate() const;
};

/// Two-channel stack with enforced channel-domain semantics: channel 0 is
/// always CT-domain (real or synthesized), channel 1 MR-domain.
struct SegStack {
    Tensor x;  // (2, H, W) internal range
    Modality ch0 = Modality::CT;
    Modality ch1 = Modality::MR;
};

/// Training pairs: channel 0 = real CT, channel 1 = G_MR(CT); labels untouched.
std::vector<std::pair<SegStack, LabelGrid>> build_training_pairs(
    const std::vector<std::pair<ImageGrid, LabelGrid>>& labeled_ct, const Generator& g_mr);

/// Inference pairs: channel 0 = G_CT(MR), channel 1 = real MR.
std::vector<SegStack> build_inference_pairs(const std::vector<ImageGrid>& mr,
                                            const Generator& g_ct);

struct SegTrainResult {
    std::vector<std::pair<long, double>> loss_log;  // (iteration, CE loss)
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Per-pixel multi-class cross-entropy with Adam at the fixed configured
/// rate; deterministic per seed. Throws InvalidDataError when labels carry
/// a class id >= n_classes.
UNet train_segmenter(const std::vector<std::pair<SegStack, LabelGrid>>& pairs,
                     const SegTrainConfig& config, SegTrainResult* result = nullptr);

/// Per-pixel argmax of the class probabilities; ties break toward the lower
/// class index.
LabelGrid segment(const UNet& u, const SegStack& stack,
                  const std::vector<std::string>& class_names);

/// Per-volume, per-class Dice with mean +- SD aggregates.
MetricReport evaluate_segmentation(const std::vector<LabelGrid>& preds,
                                   const std::vector<LabelGrid>& truths);

/// Mean Dice over all foreground classes present in the truth set.
double foreground_mean_dice(const std::vector<LabelGrid>& preds,
                            const std::vector<LabelGrid>& truths);

void save_unet(const UNet& u, const SegTrainConfig& config, const std::string& path);
UNet load_unet(const std::string& path);

}  // namespace cyclegc
