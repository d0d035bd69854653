#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cyclegc/image.hpp"
#include "cyclegc/losses.hpp"
#include "cyclegc/networks.hpp"

namespace cyclegc {

/// Raised when any loss component turns non-finite; carries the offending
/// breakdown. No silent restarts.
class TrainingDivergedError : public std::runtime_error {
public:
    TrainingDivergedError(const std::string& msg, const LossBreakdown& b)
        : std::runtime_error(msg), breakdown(b) {}
    LossBreakdown breakdown;
};

struct TrainConfig {
    long total_iterations = 200000;
    long fixed_phase_iterations = 100000;
    double base_lr = 2e-4;
    int batch_size = 1;
    LossWeights weights;
    std::uint64_t seed = 1;
    long checkpoint_interval = 10000;
    int gen_base_width = 64;
    int disc_base_width = 64;
    int pool_capacity = 50;
    std::string profile = "paper";

    /// "paper": the full-scale schedule. "desk": every schedule constant
    /// scaled down by 100x and narrow networks, one shared code path.
    static TrainConfig profile_config(const std::string& name);
    void validate() const;
};

/// Piecewise learning-rate schedule: base_lr through the fixed phase, then
/// linear decay to zero at total_iterations.
double lr_at(const TrainConfig& config, long iteration);

/// History buffer of synthesized images for discriminator updates. Below
/// capacity it stores and returns the fresh image; at capacity it returns the
/// fresh image or swaps it against a random buffered one, each with
/// probability 1/2.
class ImagePool {
public:
    explicit ImagePool(int capacity = 50) : capacity_(capacity) {}

    Tensor sample(const Tensor& fresh, Rng& rng);

    int capacity() const { return capacity_; }
    const std::vector<Tensor>& buffer() const { return buf_; }
    void restore(std::vector<Tensor> buf) { buf_ = std::move(buf); }

private:
    int capacity_;
    std::vector<Tensor> buf_;
};

struct SynthesisTrainState {
    explicit SynthesisTrainState(const TrainConfig& cfg);

    TrainConfig config;
    Generator g_ct;  // MR -> CT
    Generator g_mr;  // CT -> MR
    Discriminator d_ct;
    Discriminator d_mr;
    nn::Adam adam_g_ct;
    nn::Adam adam_g_mr;
    nn::Adam adam_d_ct;
    nn::Adam adam_d_mr;
    ImagePool pool_ct;
    ImagePool pool_mr;
    Rng rng;
    long iteration = 0;

    void init_params();
};

/// One alternating update of the min-max objective: both generators step on
/// the composite loss, then each discriminator steps on least-squares real
/// vs pool-sampled fake scores. Batches are internal-range tensors.
LossBreakdown train_step(SynthesisTrainState& state, const TensorBatch& ct_batch,
                         const TensorBatch& mr_batch);

struct TrainCallbacks {
    std::function<void(long iteration, const LossBreakdown&, double lr)> on_step;
    std::function<void(long iteration, const std::string& checkpoint_path)> on_checkpoint;
};

struct TrainResult {
    std::vector<std::string> checkpoint_paths;
    std::string final_checkpoint;
    std::string log_path;
    LossBreakdown last;
};

/// Full training loop over unpaired datasets ([0,255] ImageGrids). Writes
/// CSV logs (iteration, adv_ct, adv_mr, cycle, gc, total, lr) and periodic
/// checkpoints under out_dir. Resuming from a checkpoint reproduces the
/// original trajectory bit-exactly for a fixed seed and data order.
TrainResult run_training(const TrainConfig& config, const std::vector<ImageGrid>& ct_dataset,
                         const std::vector<ImageGrid>& mr_dataset, const std::string& out_dir,
                         const TrainCallbacks& callbacks = {},
                         const std::string& resume_checkpoint = "");

/// Per-slice generator application; masks propagate unchanged and outputs
/// carry the synthesized modality tag.
std::vector<ImageGrid> synthesize_volume(const Generator& g, const std::vector<ImageGrid>& volume);

/// Plumbing variant used by tests: applies an arbitrary slice map.
std::vector<ImageGrid> synthesize_volume(const std::function<Tensor(const Tensor&)>& fn,
                                         const std::vector<ImageGrid>& volume, Modality out_modality);

// Checkpoint I/O for the full training state (parameters, optimizer moments,
// pools, RNG state, iteration). Loading refuses on architecture mismatch.
void save_state(const SynthesisTrainState& state, const std::string& path);
void load_state(SynthesisTrainState& state, const std::string& path);

/// Reads only g_ct/g_mr parameters from a checkpoint into freshly shaped
/// generators (for eval and the segmentation pipeline).
void load_generators(const std::string& path, Generator& g_ct, Generator& g_mr);

/// Recovers the training configuration echoed in a checkpoint manifest.
TrainConfig config_from_checkpoint(const std::string& path);

}  // namespace cyclegc
