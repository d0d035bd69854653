#pragma once

#include <vector>

#include "cyclegc/tensor.hpp"

namespace cyclegc {

struct LossWeights {
    double lambda_cycle = 3.0;
    double lambda_gc = 0.3;
};

struct LossBreakdown {
    double adv_ct = 0.0;
    double adv_mr = 0.0;
    double cycle = 0.0;
    double gc = 0.0;
    double total = 0.0;
};

using TensorBatch = std::vector<Tensor>;

/// Least-squares discriminator objective: mean((real-1)^2) + mean(fake^2),
/// batch-size invariant (mean of per-map means). Optional output gradients.
double adv_loss_discriminator(const TensorBatch& real_scores, const TensorBatch& fake_scores,
                              TensorBatch* g_real = nullptr, TensorBatch* g_fake = nullptr);

/// Generator side: mean((fake-1)^2).
double adv_loss_generator(const TensorBatch& fake_scores, TensorBatch* g_fake = nullptr);

/// L1 reconstruction penalty summed over both cycle directions; each
/// direction is a per-pixel, per-batch mean. Gradients are with respect to
/// the reconstructed images.
double cycle_loss(const TensorBatch& x, const TensorBatch& x_rec, const TensorBatch& y,
                  const TensorBatch& y_rec, TensorBatch* g_x_rec = nullptr,
                  TensorBatch* g_y_rec = nullptr);

/// Gradient-consistency penalty: half the sum over both translation
/// directions of per-image (1 - GC(input, translation)), batch-averaged.
/// The NCC denominators carry an epsilon guard so flat gradient images
/// contribute zero gradient instead of NaN. Gradients are with respect to
/// the synthesized images.
double gc_loss(const TensorBatch& x, const TensorBatch& x_synth_mr, const TensorBatch& y,
               const TensorBatch& y_synth_ct, TensorBatch* g_x_synth = nullptr,
               TensorBatch* g_y_synth = nullptr);

/// Differentiable GC of a single image pair (epsilon-guarded NCC).
double gc_value_eps(const Tensor& a, const Tensor& b);

/// Composes the objective: total = adv_ct + adv_mr + lambda_cycle * cycle
/// + lambda_gc * gc.
LossBreakdown total_loss(double adv_ct, double adv_mr, double cycle, double gc,
                         const LossWeights& w);

}  // namespace cyclegc
