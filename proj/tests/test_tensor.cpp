#include "doctest.h"
#include "semcomm/tensor.hpp"

using namespace semcomm;

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3, 4}, 1.5f);
    CHECK(t.numel() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.at(1, 2, 3) == 1.5f);
    CHECK(t.all_finite());

    CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f, 2.0f}), ShapeError);
}

TEST_CASE("rng streams are reproducible and seed-dependent") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double va = a.gaussian();
        CHECK(va == b.gaussian());
    }
    bool any_diff = false;
    Rng a2(42);
    for (int i = 0; i < 10; ++i) any_diff |= (a2.gaussian() != c.gaussian());
    CHECK(any_diff);
}

TEST_CASE("gaussian sampler moments") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.gaussian();
        sum += v;
        sum2 += v * v;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("uniform stays in range") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
