#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cyclegc/metrics.hpp"
#include "test_helpers.hpp"

using namespace cyclegc;
using testutil::random_grid;

namespace {

ImageGrid grid_from(std::initializer_list<std::initializer_list<double>> rows) {
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows.begin()->size());
    ImageGrid g(h, w, Modality::CT);
    int r = 0;
    for (const auto& row : rows) {
        int c = 0;
        for (double v : row) g.at(r, c++) = v;
        ++r;
    }
    return g;
}

ImageGrid cropped(const ImageGrid& g, int r0, int c0, int h, int w) {
    ImageGrid out(h, w, g.modality);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out.at(r, c) = g.at(r0 + r, c0 + c);
    return out;
}

void add_rect_mask(ImageGrid& g, int r0, int c0, int h, int w) {
    g.mask.assign(g.px.size(), 0);
    for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) g.mask[static_cast<std::size_t>(r) * g.w + c] = 1;
}

}  // namespace

TEST_CASE("ncc basics") {
    Rng rng(42);
    const ImageGrid a = random_grid(12, 9, rng);
    CHECK(ncc(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    ImageGrid b = a;
    for (auto& v : b.px) v = 2.5 * v + 17.0;
    CHECK(ncc(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto& v : b.px) v = -v;
    CHECK(ncc(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("ncc hand example: centered dot product vanishes") {
    const ImageGrid a = grid_from({{0, 1}, {2, 3}});
    const ImageGrid b = grid_from({{0, 1}, {1, 0}});
    CHECK(ncc(a, b) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ncc errors and conventions") {
    Rng rng(1);
    const ImageGrid a = random_grid(4, 4, rng);
    const ImageGrid small = random_grid(4, 3, rng);
    CHECK_THROWS_AS(ncc(a, small), std::invalid_argument);

    ImageGrid b = a;
    ImageGrid am = a;
    am.mask.assign(a.px.size(), 0);
    CHECK_THROWS_AS(ncc(am, b), std::invalid_argument);

    ImageGrid flat(4, 4, Modality::CT, 5.0);
    CHECK(ncc(flat, a) == 0.0);
    CHECK(ncc(a, flat) == 0.0);
}

TEST_CASE("ncc symmetry property") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const ImageGrid a = random_grid(8, 8, rng);
        const ImageGrid b = random_grid(8, 8, rng);
        const double ab = ncc(a, b);
        CHECK(ab == doctest::Approx(ncc(b, a)).epsilon(1e-15));
        CHECK(std::abs(ab) <= 1.0 + 1e-12);
    }
}

TEST_CASE("gradient correlation basics and ramps") {
    Rng rng(3);
    const ImageGrid a = random_grid(10, 10, rng);
    CHECK(gradient_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    ImageGrid b = a;
    for (auto& v : b.px) v = 3.0 * v + 4.0;
    CHECK(gradient_correlation(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto& v : b.px) v = -v;
    CHECK(gradient_correlation(a, b) == doctest::Approx(-1.0).epsilon(1e-12));

    // Horizontal vs vertical ramps: both NCC terms hit the constant-image
    // convention, so GC is exactly 0.
    ImageGrid hramp(6, 6, Modality::CT), vramp(6, 6, Modality::CT);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
            hramp.at(r, c) = c;
            vramp.at(r, c) = r;
        }
    CHECK(gradient_correlation(hramp, vramp) == 0.0);
}

TEST_CASE("gc rejects tiny grids") {
    const ImageGrid a = grid_from({{1, 2, 3}});
    CHECK_THROWS_AS(gradient_correlation(a, a), std::invalid_argument);
}

TEST_CASE("mae") {
    Rng rng(11);
    const ImageGrid a = random_grid(9, 7, rng);
    CHECK(mae(a, a) == 0.0);
    ImageGrid b = a;
    for (auto& v : b.px) v += 10.0;
    CHECK(mae(a, b) == doctest::Approx(10.0).epsilon(1e-13));
}

TEST_CASE("psnr formula") {
    Rng rng(13);
    ImageGrid a = random_grid(8, 8, rng, 10.0, 200.0);
    ImageGrid b = a;
    for (auto& v : b.px) v += 1.0;  // MSE = 1
    CHECK(psnr(a, b) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-9));
    CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-4));

    CHECK(std::isinf(psnr(a, a)));

    ImageGrid zero(4, 4, Modality::CT, 0.0), full(4, 4, Modality::CT, 255.0);
    CHECK(psnr(zero, full) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mutual information") {
    // Two equally frequent levels, identical images, two bins: MI = ln 2.
    ImageGrid a(4, 4, Modality::CT, 0.0);
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 2; ++r) a.at(r, c) = 255.0;
    CHECK(mutual_information(a, a, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    const ImageGrid flat(4, 4, Modality::CT, 99.0);
    CHECK(mutual_information(a, flat, 16) == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(17);
    const ImageGrid x = random_grid(16, 16, rng);
    const ImageGrid y = random_grid(16, 16, rng);
    CHECK(mutual_information(x, y, 64) ==
          doctest::Approx(mutual_information(y, x, 64)).epsilon(1e-13));
    CHECK(mutual_information(x, y, 64) >= -1e-12);

    // MI(A, A) equals the histogram entropy of A.
    const int bins = 16;
    std::vector<double> hist(bins, 0.0);
    for (double v : x.px) {
        int k = static_cast<int>(std::floor(v / 255.0 * bins));
        k = std::min(bins - 1, std::max(0, k));
        hist[static_cast<std::size_t>(k)] += 1.0;
    }
    double entropy = 0.0;
    for (double h : hist) {
        if (h > 0.0) {
            const double p = h / static_cast<double>(x.px.size());
            entropy -= p * std::log(p);
        }
    }
    CHECK(mutual_information(x, x, bins) == doctest::Approx(entropy).epsilon(1e-12));

    CHECK_THROWS_AS(mutual_information(x, y, 1), std::invalid_argument);
}

TEST_CASE("dice") {
    std::vector<std::string> names{"bg", "fg"};
    LabelGrid p(4, 4, names), g(4, 4, names);
    p.at(0, 0) = p.at(0, 1) = 1;
    g.at(0, 0) = g.at(0, 1) = 1;
    CHECK(dice(p, g, 1) == 1.0);
    CHECK(dice(p, g, 1) == dice(g, p, 1));

    LabelGrid q(4, 4, names);
    q.at(3, 3) = q.at(3, 2) = 1;  // disjoint, equal size
    CHECK(dice(p, q, 1) == 0.0);

    LabelGrid h(4, 4, names);
    h.at(0, 1) = h.at(0, 2) = 1;  // |P|=|G|=2, overlap 1
    CHECK(dice(p, h, 1) == doctest::Approx(0.5));

    CHECK(dice(p, g, 3) == 1.0);  // class absent from both

    LabelGrid wrong(4, 5, names);
    CHECK_THROWS_AS(dice(p, wrong, 1), std::invalid_argument);
}

TEST_CASE("masked metric equals cropped metric on rectangular masks") {
    Rng rng(23);
    ImageGrid a = random_grid(16, 14, rng);
    ImageGrid b = random_grid(16, 14, rng);
    const int r0 = 3, c0 = 2, h = 9, w = 8;
    add_rect_mask(a, r0, c0, h, w);
    add_rect_mask(b, r0, c0, h, w);
    const ImageGrid ac = cropped(a, r0, c0, h, w);
    const ImageGrid bc = cropped(b, r0, c0, h, w);

    CHECK(std::abs(ncc(a, b) - ncc(ac, bc)) <= 1e-10);
    CHECK(std::abs(gradient_correlation(a, b) - gradient_correlation(ac, bc)) <= 1e-10);
    CHECK(std::abs(mae(a, b) - mae(ac, bc)) <= 1e-10);
    CHECK(std::abs(psnr(a, b) - psnr(ac, bc)) <= 1e-10);
    CHECK(std::abs(mutual_information(a, b, 32) - mutual_information(ac, bc, 32)) <= 1e-10);
}

TEST_CASE("gc invariance under positive affine maps") {
    Rng rng(29);
    const ImageGrid a = random_grid(12, 12, rng);
    ImageGrid b = random_grid(12, 12, rng);
    const double before = gradient_correlation(a, b);
    for (auto& v : b.px) v = 0.37 * v + 120.0;
    CHECK(gradient_correlation(a, b) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("gradient operator adjoint identity") {
    Rng rng(31);
    const int h = 9, w = 11;
    std::vector<double> x(static_cast<std::size_t>(h) * w), y(x.size());
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);

    std::vector<double> gx(x.size()), gty(x.size(), 0.0);
    gradient_x_raw(x.data(), h, w, gx.data());
    gradient_x_adjoint(y.data(), h, w, gty.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lhs += gx[i] * y[i];
        rhs += x[i] * gty[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    std::vector<double> gy(x.size()), gtyy(x.size(), 0.0);
    gradient_y_raw(x.data(), h, w, gy.data());
    gradient_y_adjoint(y.data(), h, w, gtyy.data());
    lhs = rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lhs += gy[i] * y[i];
        rhs += x[i] * gtyy[i];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("metric report aggregates and serialization") {
    MetricReport r;
    r.add("a", "mae", 1.0);
    r.add("b", "mae", 2.0);
    r.add("c", "mae", 4.0);
    r.add("a", "psnr", 30.0);

    const auto aggs = r.aggregates();
    REQUIRE(aggs.size() == 2);
    CHECK(aggs[0].metric == "mae");
    const double expect_mean = (1.0 + 2.0 + 4.0) / 3.0;
    CHECK(std::abs(aggs[0].mean - expect_mean) <= 1e-12 * std::abs(expect_mean));
    CHECK(aggs[0].n == 3);
    CHECK(aggs[1].metric == "psnr");

    const std::string csv = r.to_csv();
    CHECK(csv.find("item_id,metric,value") == 0);
    CHECK(csv.find("a,mae,1") != std::string::npos);
    const std::string j = r.aggregate_json();
    CHECK(j.find("mi_bins") != std::string::npos);
    CHECK(j.find("nats") != std::string::npos);
}
