#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "peftlab/errors.hpp"
#include "peftlab/ops.hpp"
#include "peftlab/tensor.hpp"
#include "peftlab/tensor_io.hpp"
#include "support/fd_check.hpp"
#include "support/test_util.hpp"

using namespace peftlab;
using testsupport::fd_check;
using testsupport::random_tensor;
using testsupport::random_tensor_away_from_zero;

TEST_CASE("matmul identity and projector") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor proj = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    Tensor n = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(proj, n).values() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2, 3]"), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4, 2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences") {
    Tensor a = random_tensor({3, 4}, 11);
    Tensor b = random_tensor({4, 2}, 12);
    auto loss = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
    CHECK(fd_check(loss, a).max_rel_err < 1e-6);
    CHECK(fd_check(loss, b).max_rel_err < 1e-6);
}

TEST_CASE("conv2d trivial kernels") {
    Tensor x = random_tensor({1, 1, 4, 4}, 21, 0.0, 1.0, false);
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
    Tensor out = conv2d(x, w, 1, 0);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        CHECK(out.values()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-12));
    }

    Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor x3 = random_tensor({1, 1, 3, 3}, 22, 0.0, 1.0, false);
    double total = 0.0;
    for (const double v : x3.values()) total += v;
    Tensor s = conv2d(x3, ones, 1, 0);
    CHECK(s.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(s.item() == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("conv2d gradient matches finite differences") {
    Tensor x = random_tensor({1, 2, 5, 5}, 31);
    Tensor w = random_tensor({3, 2, 3, 3}, 32);
    auto loss = [&] { return sum(mul(conv2d(x, w, 1, 1), conv2d(x, w, 1, 1))); };
    CHECK(fd_check(loss, w).max_rel_err < 1e-6);
    CHECK(fd_check(loss, x).max_rel_err < 1e-6);

    // Strided, unpadded variant.
    auto loss2 = [&] { return sum(conv2d(x, w, 2, 0)); };
    CHECK(fd_check(loss2, w).max_rel_err < 1e-6);
}

TEST_CASE("conv2d rejects oversized kernels") {
    Tensor x = Tensor::zeros({1, 1, 3, 3});
    Tensor w = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, 1, 0), ShapeError);
    CHECK_NOTHROW(conv2d(x, w, 1, 1));
}

TEST_CASE("sigmoid and softmax fixed points") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
    Tensor c = Tensor::full({5}, 3.7);
    Tensor sm = softmax(c, 0);
    for (const double v : sm.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("layernorm gradient matches finite differences") {
    // Probe with a random linear functional: sum(layernorm(x)^2) is nearly
    // scale-invariant and would starve the finite-difference signal.
    Tensor x = random_tensor({4, 8}, 41);
    Tensor probe = random_tensor({4, 8}, 42, -1.0, 1.0, false);
    auto loss = [&] { return sum(mul(layernorm(x, 1), probe)); };
    CHECK(fd_check(loss, x).max_rel_err < 1e-6);
    auto loss0 = [&] { return sum(mul(layernorm(x, 0), probe)); };
    CHECK(fd_check(loss0, x).max_rel_err < 1e-6);
}

TEST_CASE("elementwise and shaping ops pass finite differences") {
    Tensor a = random_tensor({3, 5}, 51);
    Tensor b = random_tensor({3, 5}, 52);
    Tensor pos = random_tensor({3, 5}, 53, 0.2, 1.5);

    auto check_a = [&](auto builder, double tol = 1e-6) {
        CHECK(fd_check(builder, a).max_rel_err < tol);
    };
    check_a([&] { return sum(mul(add(a, b), add(a, b))); });
    check_a([&] { return sum(mul(sub(a, b), sub(a, b))); });
    check_a([&] { return sum(mul(mul(a, b), a)); });
    check_a([&] { return sum(div(a, pos)); });
    check_a([&] { return sum(mul(scale(a, -1.7), a)); });
    check_a([&] { return sum(mul(gelu(a), gelu(a))); });
    check_a([&] { return sum(mul(sigmoid(a), sigmoid(a))); });
    check_a([&] { return sum(softplus(a)); });
    check_a([&] { return mean(exp(a)); });
    check_a([&] { return sum(mul(softmax(a, 1), b)); });
    check_a([&] { return sum(mul(softmax(a, 0), b)); });
    check_a([&] { return sum(mul(reshape(a, {5, 3}), reshape(b, {5, 3}))); });
    check_a([&] { return sum(mul(transpose(a), transpose(b))); });
    check_a([&] { return sum(mul(slice(a, 1, 1, 3), slice(b, 1, 0, 3))); });
    check_a([&] { return sum(mul(concat({a, b}, 0), concat({b, a}, 0))); });
    check_a([&] { return mean(mul(a, a)); });

    CHECK(fd_check([&] { return sum(log(pos)); }, pos).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return sum(pow_scalar(pos, 2.5)); }, pos).max_rel_err < 1e-6);

    Tensor nz = random_tensor_away_from_zero({3, 5}, 54);
    CHECK(fd_check([&] { return sum(mul(relu(nz), nz)); }, nz).max_rel_err < 1e-4);

    Tensor v = random_tensor({5}, 55);
    CHECK(fd_check([&] { return sum(mul(add_rowvec(a, v), b)); }, v).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return sum(mul(mul_rowvec(a, v), b)); }, v).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return sum(mul(mul_rowvec(a, v), b)); }, a).max_rel_err < 1e-6);

    Tensor img = random_tensor({2, 3, 4, 4}, 56);
    Tensor bias = random_tensor({3}, 57);
    CHECK(fd_check([&] { return sum(mul(bias_nchw(img, bias), img)); }, bias).max_rel_err < 1e-6);
    CHECK(fd_check([&] { return sum(mul(upsample_bilinear(img, 2), upsample_bilinear(img, 2))); },
                   img)
              .max_rel_err < 1e-6);
}

TEST_CASE("relu derivative at exactly zero is zero") {
    Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0}, true);
    Tensor y = sum(relu(x));
    y.backward();
    CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("backward of sum gives all-ones gradient") {
    Tensor x = random_tensor({2, 3, 4}, 61);
    sum(x).backward();
    for (const double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of square at 3 gives 6") {
    Tensor x = Tensor::scalar(3.0, true);
    mul(x, x).backward();
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward requires a scalar") {
    Tensor x = random_tensor({2, 2}, 62);
    CHECK_THROWS_AS(add(x, x).backward(), ContractError);
}

TEST_CASE("bce-style loss through matmul matches finite differences") {
    Tensor w = random_tensor({3, 4}, 71);
    Tensor x = random_tensor({4, 2}, 72, -1.0, 1.0, false);
    Rng rng(73);
    std::vector<double> yv(6);
    for (auto& t : yv) t = rng.coin() ? 1.0 : 0.0;
    Tensor y = Tensor::from_data({3, 2}, yv);
    Tensor one_minus_y = Tensor::from_data({3, 2}, [&] {
        std::vector<double> v(yv.size());
        for (std::size_t i = 0; i < yv.size(); ++i) v[i] = 1.0 - yv[i];
        return v;
    }());
    auto loss = [&] {
        Tensor z = matmul(w, x);
        return mean(add(mul(y, softplus(neg(z))), mul(one_minus_y, softplus(z))));
    };
    CHECK(fd_check(loss, w).max_rel_err < 1e-5);
}

TEST_CASE("gradient accumulates across repeated backward calls") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = mul(x, x);
    y.backward();
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(8.0).epsilon(1e-15));
    x.zero_grad();
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("diamond graph accumulates through both paths") {
    // y = x*x + x -> dy/dx = 2x + 1
    Tensor x = Tensor::scalar(1.5, true);
    add(mul(x, x), x).backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("chain of depth 5 multiplies local derivatives") {
    Tensor x = Tensor::scalar(0.3, true);
    Tensor t = x;
    for (int i = 0; i < 5; ++i) t = sigmoid(t);
    t.backward();
    double v = 0.3, expected = 1.0;
    for (int i = 0; i < 5; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        expected *= s * (1.0 - s);
        v = s;
    }
    CHECK(x.grad()[0] == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("forward results are identical across runs") {
    auto run = [] {
        Tensor a = random_tensor({6, 6}, 81);
        Tensor b = random_tensor({6, 6}, 82);
        return softmax(matmul(gelu(a), sigmoid(b)), 1).values();
    };
    CHECK(run() == run());
}

TEST_CASE("tensor binary file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "peftlab_tensor_io";
    std::filesystem::create_directories(dir);
    Tensor t = random_tensor({2, 3, 4}, 91, -10.0, 10.0, false);
    save_tensor(dir / "t.bin", t);
    Tensor back = load_tensor(dir / "t.bin");
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
    CHECK_FALSE(back.requires_grad());

    CHECK_THROWS_AS(load_tensor(dir / "missing.bin"), ValidationError);
}
