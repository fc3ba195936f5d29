#include <doctest.h>

#include <cmath>

#include "detrkit/msfca.hpp"
#include "detrkit/selftest.hpp"

using namespace detrkit;

TEST_CASE("dct basis values") {
    SUBCASE("zero frequency is the all-ones matrix") {
        const DctBasis b = dct_basis(4, 4, 0, 0);
        for (double v : b.values.data) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("2x2 (1,0) basis rows") {
        const DctBasis b = dct_basis(2, 2, 1, 0);
        CHECK(b.values(0, 0) == doctest::Approx(0.70711).epsilon(1e-4));
        CHECK(b.values(0, 1) == doctest::Approx(0.70711).epsilon(1e-4));
        CHECK(b.values(1, 0) == doctest::Approx(-0.70711).epsilon(1e-4));
        CHECK(b.values(1, 1) == doctest::Approx(-0.70711).epsilon(1e-4));
    }
    SUBCASE("distinct bases are orthogonal") {
        const DctBasis a = dct_basis(4, 4, 0, 0);
        const DctBasis b = dct_basis(4, 4, 1, 0);
        double dot = 0.0;
        for (std::size_t i = 0; i < 16; ++i) dot += a.values.data[i] * b.values.data[i];
        CHECK(std::abs(dot) <= 1e-12);
    }
    SUBCASE("out-of-range frequency indices are rejected") {
        CHECK_THROWS_AS(dct_basis(4, 4, 4, 0), std::invalid_argument);
        CHECK_THROWS_AS(dct_basis(4, 4, 0, 7), std::invalid_argument);
    }
}

TEST_CASE("frequency compression") {
    SUBCASE("zero frequency scales the constant") {
        const Tensor part = Tensor::full({2, 4, 4}, 3.0);
        const Tensor f = freq_compress(part, 0, 0);
        CHECK(f.data[0] == doctest::Approx(48.0));  // 16 * 3
        CHECK(f.data[1] == doctest::Approx(48.0));
    }
    SUBCASE("hand-computed 2x2 (1,0) compression") {
        const Tensor part = Tensor({1, 2, 2}, {1, 2, 3, 4});
        // 0.70711 * (1 + 2) - 0.70711 * (3 + 4)
        CHECK(freq_compress(part, 1, 0).data[0] == doctest::Approx(-2.82843).epsilon(1e-4));
    }
    SUBCASE("zero frequency equals scaled global average pooling") {
        Rng rng(2);
        const Tensor part = Tensor::random({3, 5, 7}, rng, 2.0);
        const Tensor f = freq_compress(part, 0, 0);
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 35; ++i) mean += part.data[c * 35 + i];
            mean /= 35.0;
            CHECK(f.data[c] == doctest::Approx(35.0 * mean).epsilon(1e-12));
        }
    }
    SUBCASE("linear in the input") {
        Rng rng(4);
        const Tensor a = Tensor::random({2, 3, 3}, rng, 1.0);
        const Tensor b = Tensor::random({2, 3, 3}, rng, 1.0);
        Tensor mix = Tensor::zeros({2, 3, 3});
        for (std::size_t i = 0; i < mix.numel(); ++i) mix.data[i] = 2.0 * a.data[i] - 3.0 * b.data[i];
        const Tensor fm = freq_compress(mix, 1, 2);
        const Tensor fa = freq_compress(a, 1, 2);
        const Tensor fb = freq_compress(b, 1, 2);
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(fm.data[c] == doctest::Approx(2.0 * fa.data[c] - 3.0 * fb.data[c]).epsilon(1e-12));
    }
}

TEST_CASE("multi-spectral compression") {
    SUBCASE("one group degenerates to plain compression") {
        Rng rng(6);
        const Tensor x = Tensor::random({4, 3, 3}, rng, 1.0);
        FrequencyAssignment a{1, {{1, 1}}};
        const Tensor got = multi_spectral_compress(x, a);
        const Tensor want = freq_compress(x, 1, 1);
        for (std::size_t c = 0; c < 4; ++c) CHECK(got.data[c] == want.data[c]);
    }
    SUBCASE("per-channel groups at zero frequency give scaled per-channel means") {
        Rng rng(7);
        const Tensor x = Tensor::random({4, 2, 2}, rng, 1.0);
        FrequencyAssignment a{4, {{0, 0}, {0, 0}, {0, 0}, {0, 0}}};
        const Tensor got = multi_spectral_compress(x, a);
        for (std::size_t c = 0; c < 4; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 4; ++i) mean += x.data[c * 4 + i];
            CHECK(got.data[c] == doctest::Approx(mean).epsilon(1e-12));  // 4 * mean/4
        }
    }
    SUBCASE("matches the naive per-group loop") {
        Rng rng(8);
        const Tensor x = Tensor::random({4, 2, 2}, rng, 1.0);
        FrequencyAssignment a{2, {{0, 0}, {1, 0}}};
        const Tensor got = multi_spectral_compress(x, a);
        for (std::size_t g = 0; g < 2; ++g) {
            Tensor part = Tensor::zeros({2, 2, 2});
            std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(g * 8),
                      x.data.begin() + static_cast<std::ptrdiff_t>((g + 1) * 8), part.data.begin());
            for (std::size_t c = 0; c < 2; ++c) {
                const double want =
                    selftest::naive_freq_compress_at(part, c, a.pairs[g].first, a.pairs[g].second);
                CHECK(got.data[g * 2 + c] == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }
    SUBCASE("non-dividing group counts are rejected") {
        const Tensor x = Tensor::zeros({5, 2, 2});
        FrequencyAssignment a{2, {{0, 0}, {0, 0}}};
        CHECK_THROWS_AS(multi_spectral_compress(x, a), std::invalid_argument);
    }
}

TEST_CASE("msfca application") {
    Rng rng(12);
    SUBCASE("zero fc halves the input") {
        const Tensor x = Tensor::random({4, 3, 3}, rng, 1.0);
        MsfcaParams p{default_assignment(4, 3, 3), Tensor::zeros({4, 4}), Tensor::zeros({4})};
        const Tensor out = apply_msfca(x, p);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(0.5 * x.data[i]).epsilon(1e-12));
    }
    SUBCASE("saturating bias passes the input through") {
        const Tensor x = Tensor::random({4, 3, 3}, rng, 1.0);
        MsfcaParams p{default_assignment(4, 3, 3), Tensor::zeros({4, 4}), Tensor::full({4}, 20.0)};
        const Tensor out = apply_msfca(x, p);
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(x.data[i]).epsilon(1e-8));
    }
    SUBCASE("matches the composed compress -> fc -> sigmoid -> scale oracle") {
        const Tensor x = Tensor::random({4, 4, 4}, rng, 1.0);
        MsfcaParams p{default_assignment(2, 4, 4), Tensor::random({4, 4}, rng, 0.3),
                      Tensor::random({4}, rng, 0.3)};
        const Tensor att = sigmoid(linear(multi_spectral_compress(x, p.assignment), p.fc_weight,
                                          p.fc_bias));
        const Tensor out = apply_msfca(x, p);
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < 16; ++i)
                CHECK(out.data[c * 16 + i] ==
                      doctest::Approx(att.data[c] * x.data[c * 16 + i]).epsilon(1e-12));
    }
    SUBCASE("attention keeps nonnegative channels nonnegative") {
        Tensor x = Tensor::random({4, 3, 3}, rng, 1.0);
        for (double& v : x.data) v = std::abs(v);
        MsfcaParams p{default_assignment(4, 3, 3), Tensor::random({4, 4}, rng, 1.0),
                      Tensor::random({4}, rng, 1.0)};
        for (double v : apply_msfca(x, p).data) CHECK(v >= 0.0);
    }
    SUBCASE("fc shape mismatch is rejected") {
        const Tensor x = Tensor::zeros({4, 3, 3});
        MsfcaParams p{default_assignment(4, 3, 3), Tensor::zeros({3, 3}), Tensor::zeros({3})};
        CHECK_THROWS_AS(apply_msfca(x, p), std::invalid_argument);
    }
}

TEST_CASE("default frequency assignment walks the balanced zigzag") {
    const FrequencyAssignment a = default_assignment(6, 8, 8);
    const std::vector<std::pair<std::size_t, std::size_t>> want = {{0, 0}, {0, 1}, {1, 0},
                                                                   {1, 1}, {0, 2}, {2, 0}};
    CHECK(a.pairs == want);

    // a cramped grid cycles through its valid pairs
    const FrequencyAssignment tiny = default_assignment(6, 2, 2);
    CHECK(tiny.pairs.size() == 6);
    for (const auto& [u, v] : tiny.pairs) {
        CHECK(u < 2);
        CHECK(v < 2);
    }
}

TEST_CASE("full-set compressions reconstruct the input after norm scaling") {
    Rng rng(14);
    const std::size_t H = 6, W = 4;
    const Tensor x = Tensor::random({1, H, W}, rng, 1.0);
    Tensor rec = Tensor::zeros({H, W});
    for (std::size_t u = 0; u < H; ++u) {
        for (std::size_t v = 0; v < W; ++v) {
            const Tensor basis = dct_basis(H, W, u, v).values;
            double norm2 = 0.0;
            for (double b : basis.data) norm2 += b * b;
            const double coef = freq_compress(x, u, v).data[0] / norm2;
            for (std::size_t i = 0; i < H * W; ++i) rec.data[i] += coef * basis.data[i];
        }
    }
    for (std::size_t i = 0; i < H * W; ++i)
        CHECK(rec.data[i] == doctest::Approx(x.data[i]).epsilon(1e-9));
}
