#include <cmath>

#include "doctest.h"
#include "semcomm/autograd.hpp"
#include "test_util.hpp"

using namespace semcomm;
using testutil::inner_product;
using testutil::naive_conv2d;
using testutil::naive_conv_transpose2d;

namespace {

Tensor eval_conv(const Tensor& in, const Tensor& k, const Tensor* bias, ConvSpec sp) {
    Graph g(false);
    const Var b = bias ? g.input(*bias) : -1;
    return g.value(conv2d(g, g.input(in), g.input(k), b, sp));
}

}  // namespace

TEST_CASE("conv2d constant-kernel sums") {
    const Tensor in({1, 3, 3}, 1.0f);
    const Tensor k({1, 1, 2, 2}, 1.0f);
    const Tensor out = eval_conv(in, k, nullptr, {1, 0, 1});
    CHECK(out.shape == std::vector<int>{1, 2, 2});
    for (float v : out.data) CHECK(v == doctest::Approx(4.0f));
}

TEST_CASE("conv2d dilation matches direct tap summation") {
    const Tensor in({1, 5, 5}, 1.0f);
    const Tensor k({1, 1, 2, 2}, 1.0f);
    const Tensor out = eval_conv(in, k, nullptr, {1, 0, 2});
    CHECK(out.shape == std::vector<int>{1, 3, 3});
    for (float v : out.data) CHECK(v == doctest::Approx(4.0f));
    const Tensor ref = naive_conv2d(in, k, nullptr, 1, 0, 2);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));
    }
}

TEST_CASE("conv2d equals the naive loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        const Tensor in = random_tensor(rng, {2, 8, 8});
        const Tensor k = random_tensor(rng, {4, 2, 3, 3});
        const Tensor bias = random_tensor(rng, {4});
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(3));
        const int dil = 1 + static_cast<int>(rng.below(2));
        const Tensor got = eval_conv(in, k, &bias, {stride, pad, dil});
        const Tensor want = naive_conv2d(in, k, &bias, stride, pad, dil);
        REQUIRE(got.shape == want.shape);
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("conv2d rejects bad geometry and shapes") {
    Graph g(false);
    const Var in = g.input(Tensor({2, 4, 4}, 1.0f));
    const Var k_badc = g.input(Tensor({1, 3, 3, 3}, 1.0f));
    CHECK_THROWS_AS(conv2d(g, in, k_badc, -1, {1, 0, 1}), ShapeError);
    const Var k_too_big = g.input(Tensor({1, 2, 5, 5}, 1.0f));
    CHECK_THROWS_AS(conv2d(g, in, k_too_big, -1, {1, 0, 1}), GeometryError);
}

TEST_CASE("conv_transpose2d single scatter") {
    Graph g(false);
    const Var in = g.input(Tensor({1, 1, 1}, 1.0f));
    const Var k = g.input(Tensor({1, 1, 2, 2}, 1.0f));
    const Tensor& out = g.value(conv_transpose2d(g, in, k, 1, 0));
    CHECK(out.shape == std::vector<int>{1, 2, 2});
    for (float v : out.data) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("conv_transpose2d stride-2 no-overlap scatter") {
    Graph g(false);
    const Var in = g.input(Tensor({1, 2, 2}, 1.0f));
    const Var k = g.input(Tensor({1, 1, 2, 2}, 1.0f));
    const Tensor& out = g.value(conv_transpose2d(g, in, k, 2, 0));
    CHECK(out.shape == std::vector<int>{1, 4, 4});
    for (float v : out.data) CHECK(v == doctest::Approx(1.0f));

    const Tensor ref = naive_conv_transpose2d(g.value(in), g.value(k), 2, 0);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] == doctest::Approx(ref.data[i]));
    }
}

TEST_CASE("conv and transpose satisfy the adjoint identity") {
    Rng rng(13);
    int done = 0;
    while (done < 10) {
        const int C = 1 + static_cast<int>(rng.below(3));
        const int F = 1 + static_cast<int>(rng.below(3));
        const int k = 2 + static_cast<int>(rng.below(2));
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = static_cast<int>(rng.below(2));
        // exact window tiling so the transpose maps back onto x's extent
        const int Ho = 2 + static_cast<int>(rng.below(4));
        const int H = (Ho - 1) * stride + k - 2 * pad;
        if (H < k || H + 2 * pad < k) continue;
        ++done;
        const Tensor x = random_tensor(rng, {C, H, H});
        const Tensor kern = random_tensor(rng, {F, C, k, k});

        Graph g(false);
        const Tensor cx = g.value(conv2d(g, g.input(x), g.input(kern), -1, {stride, pad, 1}));
        const Tensor y = random_tensor(rng, cx.shape);
        const Tensor adj = g.value(conv_transpose2d(g, g.input(y), g.input(kern), stride, pad));
        REQUIRE(adj.shape == x.shape);
        const double lhs = inner_product(cx, y);
        const double rhs = inner_product(x, adj);
        CHECK(testutil::rel_err(lhs, rhs) < 1e-4);
    }
}

TEST_CASE("pool2d constants, window max, avg oracle") {
    Graph g(false);
    const Var c = g.input(Tensor({2, 4, 4}, 3.25f));
    for (const PoolKind kind : {PoolKind::Max, PoolKind::Avg}) {
        const Tensor& out = g.value(pool2d(g, c, kind, 2, 2));
        for (float v : out.data) CHECK(v == doctest::Approx(3.25f));
    }

    const Var m = g.input(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
    CHECK(g.value(pool2d(g, m, PoolKind::Max, 2, 2)).data[0] == doctest::Approx(4.0f));

    Rng rng(17);
    const Tensor in = random_tensor(rng, {3, 9, 9});
    const Tensor& avg = g.value(pool2d(g, g.input(in), PoolKind::Avg, 3, 2));
    CHECK(avg.shape == std::vector<int>{3, 4, 4});
    for (int ch = 0; ch < 3; ++ch) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                double s = 0;
                for (int u = 0; u < 3; ++u) {
                    for (int v = 0; v < 3; ++v) s += in.at(ch, i * 2 + u, j * 2 + v);
                }
                CHECK(avg.at(ch, i, j) == doctest::Approx(s / 9.0).epsilon(1e-5));
            }
        }
    }

    CHECK_THROWS_AS(pool2d(g, m, PoolKind::Max, 3, 1), GeometryError);
}

TEST_CASE("adaptive_avg_pool2d examples and partition property") {
    Graph g(false);
    const Var m = g.input(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
    CHECK(g.value(adaptive_avg_pool2d(g, m, 1)).data[0] == doctest::Approx(2.5f));

    std::vector<float> seq(16);
    for (int i = 0; i < 16; ++i) seq[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
    const Var m2 = g.input(Tensor::from({1, 4, 4}, seq));
    const Tensor& out = g.value(adaptive_avg_pool2d(g, m2, 2));
    CHECK(out.data[0] == doctest::Approx(3.5f));
    CHECK(out.data[1] == doctest::Approx(5.5f));
    CHECK(out.data[2] == doctest::Approx(11.5f));
    CHECK(out.data[3] == doctest::Approx(13.5f));

    // bins == extent is the identity
    const Tensor& ident = g.value(adaptive_avg_pool2d(g, m2, 4));
    for (int i = 0; i < 16; ++i) CHECK(ident.data[static_cast<std::size_t>(i)] == seq[static_cast<std::size_t>(i)]);

    // regions tile the input: sum of mean*area recovers the total sum
    Rng rng(19);
    for (const int bins : {1, 2, 3, 6}) {
        const int h = 6 + static_cast<int>(rng.below(7));
        const int w = 6 + static_cast<int>(rng.below(7));
        const Tensor in = random_tensor(rng, {2, h, w});
        const Tensor& pooled = g.value(adaptive_avg_pool2d(g, g.input(in), bins));
        for (int c = 0; c < 2; ++c) {
            double total = 0;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) total += in.at(c, i, j);
            }
            double recon = 0;
            for (int bi = 0; bi < bins; ++bi) {
                const int r0 = bi * h / bins, r1 = (bi + 1) * h / bins;
                for (int bj = 0; bj < bins; ++bj) {
                    const int c0 = bj * w / bins, c1 = (bj + 1) * w / bins;
                    recon += static_cast<double>(pooled.at(c, bi, bj)) * (r1 - r0) * (c1 - c0);
                }
            }
            CHECK(std::fabs(total - recon) < 1e-4);
        }
    }

    CHECK_THROWS_AS(adaptive_avg_pool2d(g, m, 3), GeometryError);
}

TEST_CASE("bilinear_upsample closed form") {
    Graph g(false);
    const Var c = g.input(Tensor({3, 2, 2}, 0.75f));
    const Tensor& cu = g.value(bilinear_upsample(g, c, 5, 7));
    for (float v : cu.data) CHECK(v == doctest::Approx(0.75f));

    const Var ramp = g.input(Tensor::from({1, 2, 2}, {0, 1, 0, 1}));
    const Tensor& up = g.value(bilinear_upsample(g, ramp, 4, 4));
    for (int i = 0; i < 4; ++i) {
        CHECK(up.at(0, i, 0) == doctest::Approx(0.0f));
        CHECK(up.at(0, i, 1) == doctest::Approx(1.0f / 3.0f));
        CHECK(up.at(0, i, 2) == doctest::Approx(2.0f / 3.0f));
        CHECK(up.at(0, i, 3) == doctest::Approx(1.0f));
    }

    Rng rng(23);
    const Tensor in = random_tensor(rng, {2, 3, 5});
    const Tensor& same = g.value(bilinear_upsample(g, g.input(in), 3, 5));
    for (std::size_t i = 0; i < in.data.size(); ++i) CHECK(same.data[i] == in.data[i]);
}

TEST_CASE("normalize standardizes and applies affine") {
    Graph g(true);
    const Var gamma = g.input(Tensor({1}, 1.0f));
    const Var beta = g.input(Tensor({1}, 0.0f));

    const Var constant = g.input(Tensor({1, 2, 3}, 5.0f));
    const Tensor& zeros = g.value(normalize(g, constant, gamma, beta, NormKind::Instance));
    for (float v : zeros.data) CHECK(v == doctest::Approx(0.0f));

    const Var pm = g.input(Tensor::from({1, 1, 2}, {-1, 1}));
    const Tensor& unit = g.value(normalize(g, pm, gamma, beta, NormKind::Instance, 1e-12f));
    CHECK(unit.data[0] == doctest::Approx(-1.0f).epsilon(1e-4));
    CHECK(unit.data[1] == doctest::Approx(1.0f).epsilon(1e-4));

    Rng rng(29);
    const Var gamma0 = g.input(Tensor({2}, 0.0f));
    const Var beta7 = g.input(Tensor({2}, 7.0f));
    const Var x = g.input(random_tensor(rng, {2, 3, 3}));
    const Tensor& just_beta = g.value(normalize(g, x, gamma0, beta7, NormKind::Instance));
    for (float v : just_beta.data) CHECK(v == doctest::Approx(7.0f));
}

TEST_CASE("batch normalization uses running statistics in eval mode") {
    ParamStore ps;
    ps.create("bn.gamma", Tensor({1}, 1.0f));
    ps.create("bn.beta", Tensor({1}, 0.0f));
    Tensor rm({1}, 0.0f);
    Tensor rv({1}, 1.0f);

    // training forward shifts the running stats toward the batch stats
    {
        Graph g(true);
        const Var x = g.input(Tensor::from({1, 1, 2}, {4, 8}));
        normalize(g, x, g.param(ps, "bn.gamma"), g.param(ps, "bn.beta"), NormKind::Batch, 1e-5f,
                  &rm, &rv, 0.1f);
    }
    CHECK(rm.data[0] == doctest::Approx(0.6f));        // 0.9*0 + 0.1*6
    CHECK(rv.data[0] == doctest::Approx(0.9f + 0.4f)); // 0.9*1 + 0.1*4

    // eval forward standardizes with the stored statistics
    Graph g(false);
    const Var x = g.input(Tensor::from({1, 1, 2}, {0.6f, 0.6f}));
    const Tensor& y = g.value(normalize(g, x, g.param(ps, "bn.gamma"), g.param(ps, "bn.beta"),
                                        NormKind::Batch, 1e-5f, &rm, &rv, 0.1f));
    for (float v : y.data) CHECK(v == doctest::Approx(0.0f).epsilon(1e-4));
}

TEST_CASE("activations") {
    Graph g(false);
    const Var x = g.input(Tensor::from({1, 1, 2}, {-2, 3}));
    const Tensor& r = g.value(activate(g, x, ActKind::Relu));
    CHECK(r.data[0] == 0.0f);
    CHECK(r.data[1] == 3.0f);

    const Var z = g.input(Tensor({1, 1, 1}, 0.0f));
    CHECK(g.value(activate(g, z, ActKind::Sigmoid)).data[0] == doctest::Approx(0.5f));
    CHECK(g.value(activate(g, z, ActKind::Tanh)).data[0] == doctest::Approx(0.0f));

    const Var eq = g.input(Tensor({4, 2, 2}, 1.7f));
    const Tensor& sm = g.value(activate(g, eq, ActKind::SoftmaxChannel));
    for (float v : sm.data) CHECK(v == doctest::Approx(0.25f));

    Rng rng(31);
    const Var rnd = g.input(random_tensor(rng, {5, 3, 3}, -8.0f, 8.0f));
    const Tensor& p = g.value(activate(g, rnd, ActKind::SoftmaxChannel));
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int c = 0; c < 5; ++c) {
                CHECK(p.at(c, i, j) > 0.0f);
                s += p.at(c, i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("concat and slice are inverse") {
    Graph g(false);
    const Var a = g.input(Tensor({1, 2, 2}, 0.0f));
    const Var b = g.input(Tensor({1, 2, 2}, 1.0f));
    const Var cat = concat_channels(g, a, b);
    CHECK(g.value(cat).dim(0) == 2);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            CHECK(g.value(cat).at(0, i, j) == 0.0f);
            CHECK(g.value(cat).at(1, i, j) == 1.0f);
        }
    }

    Rng rng(37);
    const Tensor ta = random_tensor(rng, {3, 4, 4});
    const Tensor tb = random_tensor(rng, {2, 4, 4});
    const Var cat2 = concat_channels(g, g.input(ta), g.input(tb));
    const Tensor back_a = g.value(slice_channels(g, cat2, 0, 3));
    const Tensor back_b = g.value(slice_channels(g, cat2, 3, 5));
    CHECK(back_a.data == ta.data);
    CHECK(back_b.data == tb.data);

    const Var mism = g.input(Tensor({1, 3, 3}, 0.0f));
    CHECK_THROWS_AS(concat_channels(g, a, mism), ShapeError);
}

TEST_CASE("argmax labels brute-force agreement with lowest-index ties") {
    Rng rng(41);
    const Tensor logits = random_tensor(rng, {5, 6, 6});
    const LabelMap m = argmax_labels(logits);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            int best = 0;
            for (int c = 1; c < 5; ++c) {
                if (logits.at(c, i, j) > logits.at(best, i, j)) best = c;
            }
            CHECK(m.at(i, j) == best);
        }
    }
    const Tensor ties({3, 2, 2}, 0.5f);
    const LabelMap mt = argmax_labels(ties);
    for (std::uint8_t v : mt.labels) CHECK(v == 0);
}

TEST_CASE("single-threaded determinism: identical inputs give identical bits") {
    Rng rng(43);
    const Tensor in = random_tensor(rng, {3, 8, 8});
    const Tensor k = random_tensor(rng, {4, 3, 3, 3});
    const Tensor a = eval_conv(in, k, nullptr, {1, 1, 1});
    const Tensor b = eval_conv(in, k, nullptr, {1, 1, 1});
    CHECK(a.data == b.data);
}
