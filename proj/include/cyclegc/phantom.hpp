#pragma once

#include <utility>
#include <vector>

#include "cyclegc/image.hpp"

namespace cyclegc {

/// Parametric closed shape: an ellipse with a low-order radial wobble
/// (metaball-like). wobble_amp/wobble_phase describe terms
/// a_k cos(k*phi + psi_k) for k = 2, 3 added to the unit radius.
struct ShapeDesc {
    double cx = 0.5, cy = 0.5;   // center in unit-square coordinates
    double rx = 0.1, ry = 0.1;   // half axes in unit-square units
    double theta = 0.0;          // rotation of the axes, radians
    double wobble_amp[2] = {0.0, 0.0};
    double wobble_phase[2] = {0.0, 0.0};

    bool contains(double u, double v) const;
};

struct PhantomStructure {
    int class_id = 0;
    ShapeDesc shape;
    double ct_intensity = 0.0;       // [0, 255]
    double mr_intensity = 0.0;       // [0, 255]
    double texture_amplitude = 0.0;  // >= 0; MR band-limited texture
};

/// Fully determined description of one rendered slice. Same subject_seed and
/// pose reproduce a bit-identical scene.
struct PhantomScene {
    std::uint64_t subject_seed = 0;
    double pose = 0.0;  // joint-angle analog, degrees
    std::vector<PhantomStructure> structures;
    double bias_coeff[6] = {0, 0, 0, 0, 0, 0};  // MR polynomial bias surface
    double ct_background = 0.0;
    double mr_background = 0.0;
    std::vector<std::string> class_names;
};

struct PhantomSample {
    ImageGrid ct;
    ImageGrid mr;
    LabelGrid labels;
    int subject_id = 0;
    double pose = 0.0;
};

/// Default class inventory: background, two bones, two muscles.
std::vector<std::string> phantom_class_names();

/// Deterministic scene construction for a subject; pose drawn as
/// pose_jitter-scaled offset keyed by (subject_seed, sample_index).
PhantomScene make_scene(std::uint64_t subject_seed, double pose_jitter, int sample_index = 0);

/// Renders the paired pseudo-CT / pseudo-MR slice pair for one subject.
/// Bones are bright in CT and dark in MR; muscles mid-gray in CT and
/// bright-textured in MR; the MR carries a smooth multiplicative bias field.
/// Throws std::invalid_argument if either dimension is below 32 or
/// pose_jitter < 0.
PhantomSample generate_phantom(std::uint64_t subject_seed, std::pair<int, int> size,
                               double pose_jitter, int sample_index = 0);

struct SplitOptions {
    std::pair<int, int> size{64, 64};
    double pose_jitter = 4.0;
    int slices_per_subject = 4;
    int test_slices_per_subject = 2;
    // Group fractions: remaining subjects after the test group split 2:1
    // between CT-train and MR-train (the source cohorts are unpaired and
    // CT-heavy, so the synthetic split mirrors that imbalance).
    int max_ct_slices = -1;  // -1 = no truncation
    int max_mr_slices = -1;
};

struct UnpairedSplit {
    std::vector<ImageGrid> ct_train;
    std::vector<ImageGrid> mr_train;
    std::vector<PhantomSample> paired_test;
    std::vector<int> ct_subjects;
    std::vector<int> mr_subjects;
    std::vector<int> test_subjects;
    /// Full samples backing ct_train (parallel), for label-dependent
    /// downstream pipelines; the mr side of these is never exposed as
    /// training data.
    std::vector<PhantomSample> ct_train_samples;
};

/// Partitions n_subjects into three disjoint groups (CT-train / MR-train /
/// paired test) and renders their slices. No subject contributes to more
/// than one group. Throws std::invalid_argument when n_subjects < 3.
UnpairedSplit make_unpaired_split(int n_subjects, std::uint64_t split_seed,
                                  const SplitOptions& opts = {});

}  // namespace cyclegc
