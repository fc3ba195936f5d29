#include <doctest.h>

#include <cmath>

#include "detrkit/tensor.hpp"

using namespace detrkit;

TEST_CASE("linear layer") {
    SUBCASE("identity weight passes the vector through") {
        const Tensor out = linear(Tensor::vec({1, 2, 3}), Tensor::identity(3), Tensor::zeros({3}));
        CHECK(out.data == std::vector<double>{1, 2, 3});
    }
    SUBCASE("zero weight returns the bias") {
        const Tensor out = linear(Tensor::vec({7, -3}), Tensor::zeros({2, 2}), Tensor::vec({5, 5}));
        CHECK(out.data == std::vector<double>{5, 5});
    }
    SUBCASE("hand-computed matrix-vector product") {
        const Tensor w = Tensor::matrix(2, 2, {1, 1, 1, -1});
        const Tensor out = linear(Tensor::vec({2, 3}), w, Tensor::zeros({2}));
        CHECK(out.data[0] == doctest::Approx(5.0));
        CHECK(out.data[1] == doctest::Approx(-1.0));
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(linear(Tensor::vec({1, 2, 3}), Tensor::identity(2), Tensor::zeros({2})),
                        std::invalid_argument);
        CHECK_THROWS_AS(linear(Tensor::vec({1, 2}), Tensor::identity(2), Tensor::zeros({3})),
                        std::invalid_argument);
    }
}

TEST_CASE("sigmoid and softmax") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5));
    CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75));

    const Tensor uniform = softmax(Tensor::vec({2.5, 2.5, 2.5, 2.5}));
    for (double v : uniform.data) CHECK(v == doctest::Approx(0.25));

    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const Tensor x = Tensor::random({6}, rng, 30.0);
        const Tensor s = softmax(x);
        double sum = 0.0;
        for (double v : s.data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);

        // invariant to adding a constant
        Tensor shifted = x;
        const double c = rng.uniform(-5.0, 5.0);
        for (double& v : shifted.data) v += c;
        const Tensor s2 = softmax(shifted);
        for (std::size_t i = 0; i < s.numel(); ++i)
            CHECK(s.data[i] == doctest::Approx(s2.data[i]).epsilon(1e-12));
    }

    for (int t = 0; t < 50; ++t) {
        const Tensor x = Tensor::random({4}, rng, 4.0);
        for (double v : sigmoid(x).data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("bilinear sampling") {
    const Tensor quad = Tensor({1, 2, 2}, {1, 2, 3, 4});

    SUBCASE("integer lattice points reproduce stored values exactly") {
        Rng rng(9);
        const Tensor map = Tensor::random({3, 4, 5}, rng, 2.0);
        for (std::size_t y = 0; y < 4; ++y) {
            for (std::size_t x = 0; x < 5; ++x) {
                const Tensor s =
                    bilinear_sample(map, {static_cast<double>(x), static_cast<double>(y)});
                for (std::size_t c = 0; c < 3; ++c) CHECK(s.data[c] == map(c, y, x));
            }
        }
    }
    SUBCASE("cell center averages the four corners") {
        CHECK(bilinear_sample(quad, {0.5, 0.5}).data[0] == doctest::Approx(2.5));
    }
    SUBCASE("far outside the map samples zero") {
        CHECK(bilinear_sample(quad, {-5.0, -5.0}).data[0] == 0.0);
        CHECK(bilinear_sample(quad, {100.0, 0.5}).data[0] == 0.0);
    }
    SUBCASE("linear in the map") {
        Rng rng(17);
        for (int t = 0; t < 40; ++t) {
            const Tensor a = Tensor::random({2, 3, 3}, rng, 1.0);
            const Tensor b = Tensor::random({2, 3, 3}, rng, 1.0);
            const double al = rng.uniform(-2, 2), be = rng.uniform(-2, 2);
            const Point2D p{rng.uniform(-1, 3), rng.uniform(-1, 3)};
            Tensor mix = Tensor::zeros({2, 3, 3});
            for (std::size_t i = 0; i < mix.numel(); ++i)
                mix.data[i] = al * a.data[i] + be * b.data[i];
            const Tensor sm = bilinear_sample(mix, p);
            const Tensor sa = bilinear_sample(a, p);
            const Tensor sb = bilinear_sample(b, p);
            for (std::size_t c = 0; c < 2; ++c)
                CHECK(std::abs(sm.data[c] - (al * sa.data[c] + be * sb.data[c])) <= 1e-12);
        }
    }
}

TEST_CASE("bilinear sampling gradients") {
    SUBCASE("flat field has zero location gradient") {
        const Tensor flat = Tensor::full({2, 3, 3}, 4.2);
        const BilinearGrad g = bilinear_sample_grad(flat, {1.4, 0.7}, Tensor::vec({1, 1}));
        CHECK(g.x == doctest::Approx(0.0));
        CHECK(g.y == doctest::Approx(0.0));
    }
    SUBCASE("field equal to the x coordinate has unit x gradient") {
        Tensor ramp = Tensor::zeros({1, 3, 4});
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 4; ++x) ramp(0, y, x) = static_cast<double>(x);
        const BilinearGrad g = bilinear_sample_grad(ramp, {1.3, 0.6}, Tensor::vec({1}));
        CHECK(g.x == doctest::Approx(1.0));
        CHECK(g.y == doctest::Approx(0.0));
    }
    SUBCASE("matches central finite differences at an interior point") {
        Rng rng(5);
        const Tensor map = Tensor::random({1, 4, 4}, rng, 1.0);
        const Tensor up = Tensor::vec({1.0});
        const Point2D p{1.3, 2.7};
        const BilinearGrad g = bilinear_sample_grad(map, p, up);
        const Tensor fd = finite_diff_grad(
            [&](const Tensor& v) { return bilinear_sample(map, {v.data[0], v.data[1]}).data[0]; },
            Tensor::vec({p.x, p.y}), 1e-5);
        CHECK(g.x == doctest::Approx(fd.data[0]).epsilon(1e-6));
        CHECK(g.y == doctest::Approx(fd.data[1]).epsilon(1e-6));
    }
}

TEST_CASE("finite difference oracle on closed forms") {
    const Tensor x = Tensor::vec({1, 2});
    const Tensor g = finite_diff_grad(
        [](const Tensor& t) {
            double acc = 0.0;
            for (double v : t.data) acc += v * v;
            return acc;
        },
        x, 1e-5);
    CHECK(g.data[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g.data[1] == doctest::Approx(4.0).epsilon(1e-6));

    const Tensor zero = finite_diff_grad([](const Tensor&) { return 3.0; }, x, 1e-5);
    CHECK(zero.data[0] == 0.0);
    CHECK(zero.data[1] == 0.0);

    const Tensor prod = finite_diff_grad(
        [](const Tensor& t) { return t.data[0] * t.data[1]; }, Tensor::vec({3, 5}), 1e-5);
    CHECK(prod.data[0] == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(prod.data[1] == doctest::Approx(3.0).epsilon(1e-6));

    CHECK_THROWS_AS(
        finite_diff_grad([](const Tensor& t) { return 1.0 / (t.data[0] - t.data[0]); }, x, 1e-5),
        std::runtime_error);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0),
                    std::invalid_argument);
}

TEST_CASE("operations keep finite inputs finite") {
    Rng rng(21);
    for (int t = 0; t < 20; ++t) {
        const Tensor x = Tensor::random({4, 5, 6}, rng, 10.0);
        CHECK(x.all_finite());
        CHECK(sigmoid(x).all_finite());
        CHECK(bilinear_sample(x, {rng.uniform(-10, 10), rng.uniform(-10, 10)}).all_finite());
    }
}
