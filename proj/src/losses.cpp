#include "cyclegc/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "cyclegc/metrics.hpp"

namespace cyclegc {

namespace {

constexpr double kNccEps = 1e-8;

void require_batch(const TensorBatch& b, const char* who) {
    if (b.empty()) throw std::invalid_argument(std::string(who) + ": empty batch");
}

void require_pairwise(const TensorBatch& a, const TensorBatch& b, const char* who) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(who) + ": batch size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].same_shape(b[i]))
            throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

struct NccParts {
    double ncc = 0.0;
    double sa = 0.0, sb = 0.0, num = 0.0;
    double mean_a = 0.0, mean_b = 0.0;
};

NccParts ncc_eps(const double* a, const double* b, std::size_t n) {
    NccParts p;
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sa += a[i];
        sb += b[i];
    }
    p.mean_a = sa / static_cast<double>(n);
    p.mean_b = sb / static_cast<double>(n);
    double da = 0.0, db = 0.0, num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xa = a[i] - p.mean_a;
        const double xb = b[i] - p.mean_b;
        da += xa * xa;
        db += xb * xb;
        num += xa * xb;
    }
    p.sa = std::sqrt(da + kNccEps);
    p.sb = std::sqrt(db + kNccEps);
    p.num = num;
    p.ncc = num / (p.sa * p.sb);
    return p;
}

// acc += coeff * d ncc(a, b) / d b
void ncc_eps_grad_b(const double* a, const double* b, std::size_t n, const NccParts& p,
                    double coeff, double* acc) {
    const double inv_ss = 1.0 / (p.sa * p.sb);
    const double num_term = p.num / (p.sa * p.sb * p.sb * p.sb);
    // raw_i = ac_i/(sa sb) - num*bc_i/(sa sb^3); centering projects out the mean.
    double raw_mean = 0.0;
    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ac = a[i] - p.mean_a;
        const double bc = b[i] - p.mean_b;
        raw[i] = ac * inv_ss - bc * num_term;
        raw_mean += raw[i];
    }
    raw_mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) acc[i] += coeff * (raw[i] - raw_mean);
}

struct GcWork {
    std::vector<double> gax, gay, gbx, gby;
};

// GC with epsilon-guarded NCC; optionally accumulates coeff * dGC/dB.
double gc_pair(const Tensor& a, const Tensor& b, double coeff, double* gb_acc, GcWork& wk) {
    const int h = a.h, w = a.w;
    const std::size_t n = a.plane();
    wk.gax.resize(n);
    wk.gay.resize(n);
    wk.gbx.resize(n);
    wk.gby.resize(n);
    gradient_x_raw(a.v.data(), h, w, wk.gax.data());
    gradient_y_raw(a.v.data(), h, w, wk.gay.data());
    gradient_x_raw(b.v.data(), h, w, wk.gbx.data());
    gradient_y_raw(b.v.data(), h, w, wk.gby.data());

    const NccParts px = ncc_eps(wk.gax.data(), wk.gbx.data(), n);
    const NccParts py = ncc_eps(wk.gay.data(), wk.gby.data(), n);
    const double gc = 0.5 * (px.ncc + py.ncc);
    if (gb_acc && coeff != 0.0) {
        std::vector<double> gx(n, 0.0), gy(n, 0.0);
        ncc_eps_grad_b(wk.gax.data(), wk.gbx.data(), n, px, 0.5 * coeff, gx.data());
        ncc_eps_grad_b(wk.gay.data(), wk.gby.data(), n, py, 0.5 * coeff, gy.data());
        gradient_x_adjoint(gx.data(), h, w, gb_acc);
        gradient_y_adjoint(gy.data(), h, w, gb_acc);
    }
    return gc;
}

}  // namespace

double gc_value_eps(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("gc_value_eps: shape mismatch");
    GcWork wk;
    return gc_pair(a, b, 0.0, nullptr, wk);
}

double adv_loss_discriminator(const TensorBatch& real_scores, const TensorBatch& fake_scores,
                              TensorBatch* g_real, TensorBatch* g_fake) {
    require_batch(real_scores, "adv_loss_discriminator");
    require_batch(fake_scores, "adv_loss_discriminator");
    double loss = 0.0;
    const double br = static_cast<double>(real_scores.size());
    const double bf = static_cast<double>(fake_scores.size());
    if (g_real) g_real->clear();
    if (g_fake) g_fake->clear();
    for (const auto& r : real_scores) {
        const double n = static_cast<double>(r.size());
        double s = 0.0;
        for (double v : r.v) s += (v - 1.0) * (v - 1.0);
        loss += s / n / br;
        if (g_real) {
            Tensor g(r.c, r.h, r.w);
            for (std::size_t i = 0; i < r.size(); ++i) g.v[i] = 2.0 * (r.v[i] - 1.0) / n / br;
            g_real->push_back(std::move(g));
        }
    }
    for (const auto& f : fake_scores) {
        const double n = static_cast<double>(f.size());
        double s = 0.0;
        for (double v : f.v) s += v * v;
        loss += s / n / bf;
        if (g_fake) {
            Tensor g(f.c, f.h, f.w);
            for (std::size_t i = 0; i < f.size(); ++i) g.v[i] = 2.0 * f.v[i] / n / bf;
            g_fake->push_back(std::move(g));
        }
    }
    return loss;
}

double adv_loss_generator(const TensorBatch& fake_scores, TensorBatch* g_fake) {
    require_batch(fake_scores, "adv_loss_generator");
    double loss = 0.0;
    const double b = static_cast<double>(fake_scores.size());
    if (g_fake) g_fake->clear();
    for (const auto& f : fake_scores) {
        const double n = static_cast<double>(f.size());
        double s = 0.0;
        for (double v : f.v) s += (v - 1.0) * (v - 1.0);
        loss += s / n / b;
        if (g_fake) {
            Tensor g(f.c, f.h, f.w);
            for (std::size_t i = 0; i < f.size(); ++i) g.v[i] = 2.0 * (f.v[i] - 1.0) / n / b;
            g_fake->push_back(std::move(g));
        }
    }
    return loss;
}

double cycle_loss(const TensorBatch& x, const TensorBatch& x_rec, const TensorBatch& y,
                  const TensorBatch& y_rec, TensorBatch* g_x_rec, TensorBatch* g_y_rec) {
    require_batch(x, "cycle_loss");
    require_batch(y, "cycle_loss");
    require_pairwise(x, x_rec, "cycle_loss");
    require_pairwise(y, y_rec, "cycle_loss");

    auto one_direction = [](const TensorBatch& ref, const TensorBatch& rec, TensorBatch* grad) {
        const double b = static_cast<double>(ref.size());
        double loss = 0.0;
        if (grad) grad->clear();
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const double n = static_cast<double>(ref[i].size());
            double s = 0.0;
            for (std::size_t k = 0; k < ref[i].size(); ++k)
                s += std::abs(rec[i].v[k] - ref[i].v[k]);
            loss += s / n / b;
            if (grad) {
                Tensor g(ref[i].c, ref[i].h, ref[i].w);
                for (std::size_t k = 0; k < ref[i].size(); ++k) {
                    const double d = rec[i].v[k] - ref[i].v[k];
                    g.v[k] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n / b;
                }
                grad->push_back(std::move(g));
            }
        }
        return loss;
    };
    return one_direction(x, x_rec, g_x_rec) + one_direction(y, y_rec, g_y_rec);
}

double gc_loss(const TensorBatch& x, const TensorBatch& x_synth_mr, const TensorBatch& y,
               const TensorBatch& y_synth_ct, TensorBatch* g_x_synth, TensorBatch* g_y_synth) {
    require_batch(x, "gc_loss");
    require_batch(y, "gc_loss");
    require_pairwise(x, x_synth_mr, "gc_loss");
    require_pairwise(y, y_synth_ct, "gc_loss");

    GcWork wk;
    auto one_direction = [&wk](const TensorBatch& input, const TensorBatch& synth,
                               TensorBatch* grad) {
        const double b = static_cast<double>(input.size());
        double acc = 0.0;
        if (grad) grad->clear();
        for (std::size_t i = 0; i < input.size(); ++i) {
            double* gptr = nullptr;
            if (grad) {
                grad->push_back(Tensor(input[i].c, input[i].h, input[i].w, 0.0));
                gptr = grad->back().v.data();
            }
            // d/dsynth of 0.5*(1-GC)/b  ->  coeff = -0.5/b on dGC/dsynth.
            const double gc = gc_pair(input[i], synth[i], -0.5 / b, gptr, wk);
            acc += (1.0 - gc) / b;
        }
        return acc;
    };
    const double lx = one_direction(x, x_synth_mr, g_x_synth);
    const double ly = one_direction(y, y_synth_ct, g_y_synth);
    return 0.5 * (lx + ly);
}

LossBreakdown total_loss(double adv_ct, double adv_mr, double cycle, double gc,
                         const LossWeights& w) {
    LossBreakdown b;
    b.adv_ct = adv_ct;
    b.adv_mr = adv_mr;
    b.cycle = cycle;
    b.gc = gc;
    b.total = adv_ct + adv_mr + w.lambda_cycle * cycle + w.lambda_gc * gc;
    return b;
}

}  // namespace cyclegc
