#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dssdn/augment.hpp"

using namespace dssdn;

TEST_CASE("mixup endpoints and midpoint") {
    Tensor x0 = Tensor::zeros({4, 6});
    Tensor x2 = Tensor::full({4, 6}, 2.0);
    Tensor y0 = Tensor::zeros({10});
    y0.data()[1] = 1.0;
    Tensor y1 = Tensor::zeros({10});
    y1.data()[7] = 1.0;

    auto [xa, ya] = mixup_with_lambda(x0, x2, y0, y1, 1.0);
    CHECK(xa.data() == x0.data());
    CHECK(ya.data() == y0.data());

    auto [xm, ym] = mixup_with_lambda(x0, x2, y0, y1, 0.5);
    for (double v : xm.data()) CHECK(v == doctest::Approx(1.0));
    CHECK(ym.data()[1] == doctest::Approx(0.5));
    CHECK(ym.data()[7] == doctest::Approx(0.5));
}

TEST_CASE("mixup rejects mismatched shapes") {
    Tensor a = Tensor::zeros({4, 6});
    Tensor b = Tensor::zeros({4, 7});
    Tensor y = Tensor::full({2}, 0.5);
    CHECK_THROWS_AS(mixup_with_lambda(a, b, y, y, 0.5), DimensionError);
}

TEST_CASE("mixup labels stay on the simplex and mixes stay convex over 1000 draws") {
    std::mt19937_64 rng(100);
    Tensor x_i = Tensor::uniform({8, 8}, -10, 2, rng);
    Tensor x_j = Tensor::uniform({8, 8}, -10, 2, rng);
    Tensor y_i = Tensor::zeros({10});
    y_i.data()[2] = 1.0;
    Tensor y_j = Tensor::zeros({10});
    y_j.data()[9] = 1.0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto [xm, ym] = mixup(x_i, x_j, y_i, y_j, 0.4, rng);
        double s = 0.0;
        for (double v : ym.data()) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        for (size_t k = 0; k < xm.data().size(); ++k) {
            const double lo = std::min(x_i.data()[k], x_j.data()[k]);
            const double hi = std::max(x_i.data()[k], x_j.data()[k]);
            CHECK(xm.data()[k] >= lo - 1e-12);
            CHECK(xm.data()[k] <= hi + 1e-12);
        }
    }
}

TEST_CASE("spec_augment width 0 is the identity") {
    std::mt19937_64 rng(101);
    Tensor x = Tensor::uniform({20, 16}, -8, 0, rng);
    SpecAugmentConfig cfg;
    cfg.max_mask_width = 0;
    CHECK(spec_augment(x, cfg, rng).data() == x.data());
}

TEST_CASE("spec_augment changed-cell bound and fill value") {
    std::mt19937_64 rng(102);
    SpecAugmentConfig cfg;  // 2+2 masks, width <= 2
    for (int trial = 0; trial < 200; ++trial) {
        Tensor x = Tensor::uniform({25, 18}, -8, 0, rng);
        double mean = 0.0;
        for (double v : x.data()) mean += v;
        mean /= static_cast<double>(x.size());

        Tensor y = spec_augment(x, cfg, rng);
        const int t = x.dim(0), f = x.dim(1);
        int changed_cells = 0;
        for (size_t k = 0; k < y.data().size(); ++k) {
            if (y.data()[k] != x.data()[k]) ++changed_cells;
        }
        // at most (sum of time widths)*f + (sum of freq widths)*t cells
        CHECK(changed_cells <= 2 * 2 * f + 2 * 2 * t);
        for (size_t k = 0; k < y.data().size(); ++k) {
            if (y.data()[k] != x.data()[k]) {
                CHECK(y.data()[k] == doctest::Approx(mean).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("spectrum corrector forced arithmetic and symmetry") {
    // identical statistics -> unit correction
    std::vector<std::pair<std::string, std::vector<double>>> same = {
        {"a", {3.0, 3.0}}, {"b", {3.0, 3.0}}, {"c", {3.0, 3.0}}};
    auto c1 = fit_spectrum_corrector(same);
    for (double v : c1.correction) CHECK(v == doctest::Approx(1.0));

    // means 2 and 4 around device-A mean 3 -> reference 3, correction 1
    std::vector<std::pair<std::string, std::vector<double>>> mid = {
        {"b", {2.0}}, {"a", {3.0}}, {"c", {4.0}}};
    auto c2 = fit_spectrum_corrector(mid);
    CHECK(c2.reference[0] == doctest::Approx(3.0));
    CHECK(c2.correction[0] == doctest::Approx(1.0));
}

TEST_CASE("spectrum corrector requires a non-A device") {
    std::vector<std::pair<std::string, std::vector<double>>> only_a = {{"a", {1.0}}};
    CHECK_THROWS_AS(fit_spectrum_corrector(only_a), ConfigError);
}

TEST_CASE("correction maps the device-A mean onto the reference and is invertible") {
    std::mt19937_64 rng(103);
    std::uniform_real_distribution<double> d(0.5, 4.0);
    const int bins = 32;
    std::vector<std::pair<std::string, std::vector<double>>> means;
    for (const char* dev : {"a", "b", "c", "d"}) {
        std::vector<double> m(bins);
        for (double& v : m) v = d(rng);
        means.push_back({dev, m});
    }
    auto corr = fit_spectrum_corrector(means);

    Tensor a_mean = Tensor::zeros({1, bins});
    for (int i = 0; i < bins; ++i) a_mean.data()[static_cast<size_t>(i)] = corr.device_a[static_cast<size_t>(i)];
    Tensor fixed = apply_correction(a_mean, corr);
    for (int i = 0; i < bins; ++i) {
        CHECK(fixed.data()[static_cast<size_t>(i)] ==
              doctest::Approx(corr.reference[static_cast<size_t>(i)]).epsilon(1e-12));
    }

    // invertibility
    Tensor x = Tensor::uniform({5, bins}, 0.1, 3.0, rng);
    Tensor y = apply_correction(x, corr);
    SpectrumCorrector inverse = corr;
    for (double& v : inverse.correction) v = 1.0 / v;
    Tensor back = apply_correction(y, inverse);
    for (size_t k = 0; k < x.data().size(); ++k) {
        CHECK(back.data()[k] == doctest::Approx(x.data()[k]).epsilon(1e-12));
    }
}

TEST_CASE("constant input scales linearly under correction") {
    SpectrumCorrector corr;
    corr.correction = {2.0, 0.5, 3.0};
    corr.reference = corr.device_a = {1.0, 1.0, 1.0};
    Tensor x = Tensor::full({4, 3}, 1.5);
    Tensor y = apply_correction(x, corr);
    for (int t = 0; t < 4; ++t) {
        CHECK(y.data()[static_cast<size_t>(t) * 3 + 0] == doctest::Approx(3.0));
        CHECK(y.data()[static_cast<size_t>(t) * 3 + 1] == doctest::Approx(0.75));
        CHECK(y.data()[static_cast<size_t>(t) * 3 + 2] == doctest::Approx(4.5));
    }
}

TEST_CASE("mixup schedule: always on early, coin-flip late") {
    MixupConfig cfg;
    std::mt19937_64 rng(104);
    for (int e = 0; e < 50; ++e) CHECK(cfg.active(e, 100, rng));
    int on = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        if (cfg.active(70, 100, rng)) ++on;
    }
    CHECK(on > 800);
    CHECK(on < 1200);
}
