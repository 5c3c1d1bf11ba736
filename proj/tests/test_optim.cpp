#include <cmath>

#include "doctest.h"
#include "semcomm/optim.hpp"

using namespace semcomm;

TEST_CASE("zero gradient leaves parameters unchanged") {
    ParamStore ps;
    ps.create("w", Tensor({3}, 1.25f));
    AdamOptimizer opt({0.1f, 0.9f, 0.999f, 1e-8f, {}});
    opt.step(ps);
    for (float v : ps.value("w").data) CHECK(v == 1.25f);
}

TEST_CASE("first Adam step moves by ~lr under unit gradient") {
    ParamStore ps;
    ps.create("w", Tensor({1}, 0.0f));
    AdamOptimizer opt({0.1f, 0.9f, 0.999f, 1e-8f, {}});
    ps.grad("w").data[0] = 1.0f;
    opt.step(ps);
    // bias-corrected mhat/sqrt(vhat) is exactly 1 at step 1
    CHECK(ps.value("w").data[0] == doctest::Approx(-0.1f).epsilon(1e-5));
}

TEST_CASE("Adam minimizes a quadratic bowl") {
    ParamStore ps;
    ps.create("w", Tensor({1}, 1.0f));
    AdamOptimizer opt({0.05f, 0.9f, 0.999f, 1e-8f, {}});
    for (int i = 0; i < 500; ++i) {
        ps.zero_grad();
        ps.grad("w").data[0] = 2.0f * ps.value("w").data[0];  // d/dw w^2
        opt.step(ps);
    }
    CHECK(std::fabs(ps.value("w").data[0]) < 1e-3);
}

TEST_CASE("invalid betas are rejected") {
    CHECK_THROWS_AS(AdamOptimizer({0.1f, 1.0f, 0.999f, 1e-8f, {}}), ContractError);
    CHECK_THROWS_AS(AdamOptimizer({0.1f, 0.9f, 0.0f, 1e-8f, {}}), ContractError);
}

TEST_CASE("step schedule") {
    CHECK(step_lr(5e-4f, {100, 0.5f}, 0) == doctest::Approx(5e-4f));
    CHECK(step_lr(5e-4f, {100, 0.5f}, 250) == doctest::Approx(1.25e-4f));
    CHECK(step_lr(3e-3f, {10, 1.0f}, 12345) == doctest::Approx(3e-3f));
    CHECK_THROWS_AS(step_lr(1e-3f, {100, 0.5f}, -1), ContractError);
}

TEST_CASE("prefix-filtered step touches only matching parameters") {
    ParamStore ps;
    ps.create("A/w", Tensor({1}, 0.0f));
    ps.create("B/w", Tensor({1}, 0.0f));
    ps.grad("A/w").data[0] = 1.0f;
    ps.grad("B/w").data[0] = 1.0f;
    AdamOptimizer opt({0.1f, 0.9f, 0.999f, 1e-8f, {}});
    opt.step(ps, "A/");
    CHECK(ps.value("A/w").data[0] != 0.0f);
    CHECK(ps.value("B/w").data[0] == 0.0f);
}
