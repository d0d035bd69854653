#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cyclegc/losses.hpp"
#include "cyclegc/metrics.hpp"
#include "test_helpers.hpp"

using namespace cyclegc;
using testutil::central_diff;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

Tensor constant(int h, int w, double v) { return Tensor(1, h, w, v); }

ImageGrid as_grid(const Tensor& t) {
    ImageGrid g(t.h, t.w, Modality::CT);
    g.px = t.v;
    return g;
}

}  // namespace

TEST_CASE("discriminator adversarial loss hand values") {
    const TensorBatch perfect_real{constant(3, 3, 1.0)};
    const TensorBatch perfect_fake{constant(3, 3, 0.0)};
    CHECK(adv_loss_discriminator(perfect_real, perfect_fake) == doctest::Approx(0.0));

    const TensorBatch half{constant(3, 3, 0.5)};
    CHECK(adv_loss_discriminator(half, half) == doctest::Approx(0.5));

    const TensorBatch fooled_real{constant(3, 3, 0.0)};
    const TensorBatch fooled_fake{constant(3, 3, 1.0)};
    CHECK(adv_loss_discriminator(fooled_real, fooled_fake) == doctest::Approx(2.0));

    CHECK_THROWS_AS(adv_loss_discriminator({}, perfect_fake), std::invalid_argument);
}

TEST_CASE("generator adversarial loss hand values") {
    CHECK(adv_loss_generator({constant(2, 2, 1.0)}) == doctest::Approx(0.0));
    CHECK(adv_loss_generator({constant(2, 2, 0.0)}) == doctest::Approx(1.0));
    CHECK(adv_loss_generator({constant(2, 2, 0.5)}) == doctest::Approx(0.25));
    CHECK_THROWS_AS(adv_loss_generator({}), std::invalid_argument);
}

TEST_CASE("adversarial losses are batch-size invariant") {
    Rng rng(3);
    const Tensor a = random_tensor(1, 4, 4, rng);
    const TensorBatch one{a};
    const TensorBatch three{a, a, a};
    CHECK(adv_loss_generator(one) == doctest::Approx(adv_loss_generator(three)).epsilon(1e-12));
}

TEST_CASE("cycle loss hand values and brute force oracle") {
    Rng rng(4);
    const Tensor x = random_tensor(1, 6, 6, rng);
    const Tensor y = random_tensor(1, 6, 6, rng);
    CHECK(cycle_loss({x}, {x}, {y}, {y}) == doctest::Approx(0.0));

    Tensor x_off = x;
    for (auto& v : x_off.v) v += 0.25;
    CHECK(cycle_loss({x}, {x_off}, {y}, {y}) == doctest::Approx(0.25).epsilon(1e-12));

    const Tensor xr = random_tensor(1, 6, 6, rng);
    const Tensor yr = random_tensor(1, 6, 6, rng);
    double brute = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) brute += std::abs(xr.v[i] - x.v[i]);
    brute /= static_cast<double>(x.size());
    double brute_y = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) brute_y += std::abs(yr.v[i] - y.v[i]);
    brute_y /= static_cast<double>(y.size());
    CHECK(cycle_loss({x}, {xr}, {y}, {yr}) == doctest::Approx(brute + brute_y).epsilon(1e-12));

    CHECK_THROWS_AS(cycle_loss({x}, {random_tensor(1, 5, 6, rng)}, {y}, {yr}),
                    std::invalid_argument);
}

TEST_CASE("gc loss hand values") {
    Rng rng(5);
    const Tensor x = random_tensor(1, 8, 8, rng);
    const Tensor y = random_tensor(1, 8, 8, rng);

    // Gradient-preserving translations (positive affine) give GC ~ 1.
    Tensor xs = x, ys = y;
    for (auto& v : xs.v) v = 1.7 * v + 0.3;
    for (auto& v : ys.v) v = 0.4 * v - 0.2;
    CHECK(gc_loss({x}, {xs}, {y}, {ys}) == doctest::Approx(0.0).epsilon(1e-6));

    // Negated gradients: GC = -1 in both directions -> loss 2.
    Tensor xn = x, yn = y;
    for (auto& v : xn.v) v = -v;
    for (auto& v : yn.v) v = -v;
    CHECK(gc_loss({x}, {xn}, {y}, {yn}) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("gc loss agrees with the metric-path evaluation") {
    Rng rng(6);
    for (int trial = 0; trial < 8; ++trial) {
        const Tensor x = random_tensor(1, 9, 7, rng);
        const Tensor xs = random_tensor(1, 9, 7, rng);
        const Tensor y = random_tensor(1, 9, 7, rng);
        const Tensor ys = random_tensor(1, 9, 7, rng);
        const double loss = gc_loss({x}, {xs}, {y}, {ys});
        const double expect = 0.5 * ((1.0 - gradient_correlation(as_grid(x), as_grid(xs))) +
                                     (1.0 - gradient_correlation(as_grid(y), as_grid(ys))));
        CHECK(loss == doctest::Approx(expect).epsilon(1e-7));
    }
}

TEST_CASE("gc loss is invariant under positive affine rescaling of synth images") {
    Rng rng(7);
    const Tensor x = random_tensor(1, 8, 8, rng);
    const Tensor xs = random_tensor(1, 8, 8, rng);
    const Tensor y = random_tensor(1, 8, 8, rng);
    const Tensor ys = random_tensor(1, 8, 8, rng);
    const double before = gc_loss({x}, {xs}, {y}, {ys});
    Tensor xs2 = xs, ys2 = ys;
    for (auto& v : xs2.v) v = 3.1 * v + 0.7;
    for (auto& v : ys2.v) v = 0.09 * v - 0.4;
    CHECK(gc_loss({x}, {xs2}, {y}, {ys2}) == doctest::Approx(before).epsilon(1e-6));
}

TEST_CASE("cycle loss gradient matches finite differences") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor(1, 8, 8, rng);
        Tensor xr = random_tensor(1, 8, 8, rng);
        const Tensor y = random_tensor(1, 8, 8, rng);
        Tensor yr = random_tensor(1, 8, 8, rng);
        // keep FD probes away from the L1 kink
        for (std::size_t i = 0; i < xr.size(); ++i)
            if (std::abs(xr.v[i] - x.v[i]) < 5e-3) xr.v[i] += 1e-2;
        for (std::size_t i = 0; i < yr.size(); ++i)
            if (std::abs(yr.v[i] - y.v[i]) < 5e-3) yr.v[i] += 1e-2;

        TensorBatch gx, gy;
        cycle_loss({x}, {xr}, {y}, {yr}, &gx, &gy);
        auto eval = [&]() { return cycle_loss({x}, {xr}, {y}, {yr}); };
        for (int k = 0; k < 12; ++k) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(xr.size()) - 1));
            CHECK(rel_err(gx[0].v[idx], central_diff(xr.v, idx, 1e-3, eval)) < 1e-3);
            CHECK(rel_err(gy[0].v[idx], central_diff(yr.v, idx, 1e-3, eval)) < 1e-3);
        }
    }
}

TEST_CASE("gc loss gradient matches finite differences") {
    Rng rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor(1, 8, 8, rng);
        Tensor xs = random_tensor(1, 8, 8, rng);
        const Tensor y = random_tensor(1, 8, 8, rng);
        Tensor ys = random_tensor(1, 8, 8, rng);
        TensorBatch gx, gy;
        gc_loss({x}, {xs}, {y}, {ys}, &gx, &gy);
        auto eval = [&]() { return gc_loss({x}, {xs}, {y}, {ys}); };
        for (int k = 0; k < 12; ++k) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(xs.size()) - 1));
            CHECK(rel_err(gx[0].v[idx], central_diff(xs.v, idx, 1e-3, eval)) < 1e-3);
            CHECK(rel_err(gy[0].v[idx], central_diff(ys.v, idx, 1e-3, eval)) < 1e-3);
        }
    }
}

TEST_CASE("total loss composition") {
    const LossWeights defaults;
    CHECK(defaults.lambda_cycle == 3.0);
    CHECK(defaults.lambda_gc == 0.3);

    const LossBreakdown b = total_loss(1.0, 1.0, 1.0, 1.0, defaults);
    CHECK(b.total == doctest::Approx(5.3).epsilon(1e-12));
    CHECK(std::abs(b.total - (b.adv_ct + b.adv_mr + 3.0 * b.cycle + 0.3 * b.gc)) <=
          1e-10 * std::abs(b.total));

    const LossBreakdown plain = total_loss(0.7, 0.9, 5.0, 3.0, LossWeights{0.0, 0.0});
    CHECK(plain.total == doctest::Approx(1.6).epsilon(1e-12));

    CHECK(total_loss(0, 0, 0, 0, defaults).total == 0.0);

    // lambda_gc = 0 bit-matches the plain objective.
    const LossBreakdown base = total_loss(0.31, 0.47, 1.13, 0.77, LossWeights{3.0, 0.0});
    CHECK(base.total == 0.31 + 0.47 + 3.0 * 1.13);

    // Linearity in the gc weight.
    const double g = 0.77;
    const LossBreakdown w1 = total_loss(0.31, 0.47, 1.13, g, LossWeights{3.0, 0.3});
    const LossBreakdown w2 = total_loss(0.31, 0.47, 1.13, g, LossWeights{3.0, 0.4});
    CHECK((w2.total - w1.total) / 0.1 == doctest::Approx(g).epsilon(1e-9));
}
