#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "peftlab/errors.hpp"
#include "peftlab/losses.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/ops.hpp"
#include "peftlab/rng.hpp"
#include "support/fd_check.hpp"
#include "support/test_util.hpp"

using namespace peftlab;
using testsupport::fd_check;
using testsupport::random_tensor;

namespace {

Tensor random_targets(std::vector<int> shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& t : v) t = rng.coin() ? 1.0 : 0.0;
    return Tensor::from_data(std::move(shape), std::move(v));
}

// Direct definition evaluated in extended precision, independent of the
// softplus path used by the implementation.
double bce_direct(const Tensor& logits, const Tensor& targets) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < logits.values().size(); ++i) {
        const long double z = logits.values()[i];
        const long double s = 1.0L / (1.0L + std::exp(-z));
        const long double y = targets.values()[i];
        acc += -(y * std::log(s) + (1.0L - y) * std::log(1.0L - s));
    }
    return static_cast<double>(acc / static_cast<long double>(logits.values().size()));
}

}  // namespace

TEST_CASE("bce fixed points and stability") {
    CHECK(bce(Tensor::scalar(0.0), Tensor::scalar(1.0)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const double big = bce(Tensor::scalar(50.0), Tensor::scalar(1.0)).item();
    CHECK(std::isfinite(big));
    CHECK(big < 1e-20);
    CHECK(bce(Tensor::scalar(-800.0), Tensor::scalar(0.0)).item() == 0.0);
}

TEST_CASE("bce matches the direct formula on random input") {
    Tensor z = random_tensor({4, 4}, 101, -4.0, 4.0, false);
    Tensor y = random_targets({4, 4}, 102);
    CHECK(bce(z, y).item() == doctest::Approx(bce_direct(z, y)).epsilon(1e-12));
}

TEST_CASE("bce rejects non-binary targets") {
    CHECK_THROWS_AS(bce(Tensor::scalar(0.0), Tensor::scalar(0.5)), ValidationError);
    CHECK_THROWS_AS(composite_loss(Tensor::scalar(0.0), Tensor::scalar(-1.0), LossConfig{}),
                    ValidationError);
}

TEST_CASE("dice loss closed forms") {
    // Saturated logits make sigmoid exactly 0/1, so a perfect prediction
    // scores 0 up to the eps convention.
    Tensor y = random_targets({4, 4}, 111);
    std::vector<double> zv(16);
    for (int i = 0; i < 16; ++i) zv[i] = y.values()[i] == 1.0 ? 800.0 : -800.0;
    Tensor z = Tensor::from_data({4, 4}, std::move(zv));
    CHECK(dice_loss(z, y).item() == doctest::Approx(0.0).epsilon(1e-9));

    // Both empty: eps keeps the ratio at 1.
    CHECK(dice_loss(Tensor::full({4, 4}, -800.0), Tensor::zeros({4, 4})).item() == 0.0);

    // sigmoid(0) = 0.5 everywhere against a half-ones target, n = 16:
    // 1 - (2*4 + eps) / (8 + 8 + eps) ~= 0.5
    std::vector<double> half(16, 0.0);
    for (int i = 0; i < 8; ++i) half[i] = 1.0;
    Tensor yh = Tensor::from_data({4, 4}, std::move(half));
    CHECK(dice_loss(Tensor::zeros({4, 4}), yh).item() == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("focal loss closed forms") {
    // gamma = 0, alpha = 0.5 reduces to half the bce.
    Tensor z = random_tensor({3, 5}, 121, -3.0, 3.0, false);
    Tensor y = random_targets({3, 5}, 122);
    CHECK(focal_loss(z, y, 0.0, 0.5).item() ==
          doctest::Approx(0.5 * bce(z, y).item()).epsilon(1e-14));

    // p_t -> 1 drives the loss to zero regardless of gamma.
    CHECK(focal_loss(Tensor::scalar(800.0), Tensor::scalar(1.0), 2.0, 0.25).item() == 0.0);
    CHECK(focal_loss(Tensor::scalar(-800.0), Tensor::scalar(0.0), 5.0, 0.25).item() == 0.0);

    // z = 0, y = 1, gamma = 2, alpha = 0.25: 0.25 * 0.25 * ln 2.
    CHECK(focal_loss(Tensor::scalar(0.0), Tensor::scalar(1.0), 2.0, 0.25).item() ==
          doctest::Approx(0.0433216987849966).epsilon(1e-12));
}

TEST_CASE("composite loss identities") {
    Tensor z = random_tensor({4, 4}, 131, -3.0, 3.0, false);
    Tensor y = random_targets({4, 4}, 132);

    LossConfig single;
    single.lambda = 0.0;
    const double expected0 = add(bce(z, y), dice_loss(z, y)).item();
    CHECK(composite_loss(z, y, single).item() == doctest::Approx(expected0).epsilon(1e-15));

    LossConfig multi;
    multi.lambda = 1.0;
    const double expected1 =
        add(focal_loss(z, y, multi.focal_gamma, multi.focal_alpha), dice_loss(z, y)).item();
    CHECK(composite_loss(z, y, multi).item() == doctest::Approx(expected1).epsilon(1e-15));
}

TEST_CASE("composite loss stays within its convex-combination bounds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Tensor z = random_tensor({3, 4}, 1400 + seed, -4.0, 4.0, false);
        Tensor y = random_targets({3, 4}, 1500 + seed);
        LossConfig cfg;
        cfg.lambda = Rng(1600 + seed).uniform();
        const double ce = bce(z, y).item();
        const double fo = focal_loss(z, y, cfg.focal_gamma, cfg.focal_alpha).item();
        const double di = dice_loss(z, y).item();
        const double ell = composite_loss(z, y, cfg).item();
        CHECK(ell >= 0.0);
        CHECK(ce >= 0.0);
        CHECK(fo >= 0.0);
        CHECK(ell >= std::min(ce, fo) + di - 1e-12);
        CHECK(ell <= std::max(ce, fo) + di + 1e-12);
    }
}

TEST_CASE("loss gradients match finite differences") {
    Tensor z = random_tensor({3, 4}, 141, -2.0, 2.0);
    Tensor y = random_targets({3, 4}, 142);
    LossConfig cfg;
    CHECK(fd_check([&] { return bce(z, y); }, z).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return dice_loss(z, y); }, z).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return focal_loss(z, y, 2.0, 0.25); }, z).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return composite_loss(z, y, cfg); }, z).max_rel_err < 1e-5);
}

TEST_CASE("lambda outside [0,1] is rejected") {
    LossConfig cfg;
    cfg.lambda = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.lambda = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("metrics on identical and disjoint masks") {
    Tensor a = random_targets({8, 8}, 151);
    MetricReport same = metrics(a, a);
    CHECK(same.dsc == 1.0);
    CHECK(same.miou == 1.0);
    CHECK(same.f1 == 1.0);

    std::vector<double> p(16, 0.0), t(16, 0.0);
    p[0] = p[1] = 1.0;
    t[5] = t[6] = 1.0;
    MetricReport disj =
        metrics(Tensor::from_data({4, 4}, p), Tensor::from_data({4, 4}, t));
    CHECK(disj.dsc == 0.0);
    CHECK(disj.miou < 0.5);  // fg IoU is exactly 0
}

TEST_CASE("metrics hand-count oracle on the 4x4 half overlap") {
    // pred = top half, target = left half: TP=4, FP=4, FN=4, TN=4.
    std::vector<double> pred(16, 0.0), target(16, 0.0);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c) pred[r * 4 + c] = 1.0;
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 2; ++c) target[r * 4 + c] = 1.0;
    }
    MetricReport m = metrics(Tensor::from_data({4, 4}, pred), Tensor::from_data({4, 4}, target));
    CHECK(m.dsc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.miou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("dsc equals f1 bitwise and survives pred/target swap") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor p = random_targets({6, 6}, 1700 + seed);
        Tensor t = random_targets({6, 6}, 1800 + seed);
        MetricReport m = metrics(p, t);
        MetricReport swapped = metrics(t, p);
        CHECK(m.dsc == m.f1);
        CHECK(m.dsc == swapped.dsc);
    }
}

TEST_CASE("aggregate is the mean of per-sample reports") {
    std::vector<MetricReport> rows = {{0.5, 0.25, 0.5}, {1.0, 1.0, 1.0}};
    MetricReport m = mean_report(rows);
    CHECK(m.dsc == doctest::Approx(0.75));
    CHECK(m.miou == doctest::Approx(0.625));
}

TEST_CASE("binarize thresholds sigmoid at one half") {
    Tensor z = Tensor::from_data({4}, {-0.1, 0.0, 0.1, 5.0});
    CHECK(binarize_logits(z).values() == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("csv row formatting is stable") {
    MetricReport m{0.5, 1.0 / 3.0, 0.5};
    CHECK(metric_csv_header() == "run_id,strategy,scenario,dsc,miou,f1,trainable_params,steps,seed");
    CHECK(metric_csv_row("r1", "full", "medical", m, 42, 300, 7) ==
          "r1,full,medical,0.500000,0.333333,0.500000,42,300,7");
}
