#include <doctest.h>

#include <cmath>

#include "bconv/errors.hpp"
#include "bconv/rng.hpp"
#include "bconv/tensor.hpp"
#include "support/oracles.hpp"

using namespace bconv;

TEST_CASE("zeros fills and handles the empty shape") {
    Tensor z = Tensor::zeros({2, 2});
    CHECK(z.size() == 4);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

    Tensor empty = Tensor::zeros({0});
    CHECK(empty.size() == 0);

    CHECK(Tensor::zeros({3}).sum() == 0.0);
}

TEST_CASE("randn is deterministic per (shape, seed)") {
    Tensor a = Tensor::randn({4}, 7);
    Tensor b = Tensor::randn({4}, 7);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == b[i]);

    Tensor c = Tensor::randn({4}, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < 4; ++i) any_diff = any_diff || a[i] != c[i];
    CHECK(any_diff);
}

TEST_CASE("randn sample mean is near zero") {
    Tensor big = Tensor::randn({10000}, 1);
    CHECK(std::abs(big.sum() / 10000.0) < 0.05);
}

TEST_CASE("matmul basics") {
    Tensor eye({2, 2});
    eye.at2(0, 0) = 1.0;
    eye.at2(1, 1) = 1.0;
    Tensor m({2, 2});
    m.at2(0, 0) = 1;
    m.at2(0, 1) = 2;
    m.at2(1, 0) = 3;
    m.at2(1, 1) = 4;
    Tensor prod = matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod[i] == m[i]);

    Tensor row({1, 2});
    row.at2(0, 0) = 1.0;
    Tensor col({2, 1});
    col.at2(0, 0) = 5.0;
    col.at2(1, 0) = 7.0;
    Tensor sel = matmul(row, col);
    CHECK(sel.size() == 1);
    CHECK(sel[0] == 5.0);

    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
    Tensor a = Tensor::randn({3, 4}, 11);
    Tensor b = Tensor::randn({4, 2}, 12);
    CHECK(testsupport::max_abs_diff(matmul(a, b), testsupport::matmul_naive(a, b)) <= 1e-12);
}

TEST_CASE("matmul associativity on random matrices") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tensor a = Tensor::randn({4, 3}, seed * 3 + 1);
        Tensor b = Tensor::randn({3, 5}, seed * 3 + 2);
        Tensor c = Tensor::randn({5, 2}, seed * 3 + 3);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(std::abs(left[i] - right[i]) <=
                  1e-10 * std::max(1.0, std::abs(left[i]) + std::abs(right[i])));
        }
    }
}

TEST_CASE("reshape preserves order and round-trips") {
    Tensor t = Tensor::randn({2, 6}, 3);
    Tensor r = t.reshaped({3, 4}).reshaped({2, 6});
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == r[i]);
    CHECK_THROWS_AS(t.reshaped({5}), DimensionError);
}

TEST_CASE("seed derivation separates components") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}
