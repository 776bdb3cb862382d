#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hctx/attention.hpp"
#include "hctx/gradcheck.hpp"
#include "hctx/ops.hpp"

using namespace hctx;

namespace {

AttentionParams random_params(std::mt19937_64& rng, std::size_t d,
                              double stddev = 0.3) {
    AttentionParams p;
    p.w_q = Tensor::randn({d, d}, rng, stddev);
    p.b_q = Tensor::randn({d}, rng, stddev);
    p.w_k = Tensor::randn({d, d}, rng, stddev);
    p.b_k = Tensor::randn({d}, rng, stddev);
    p.w_v = Tensor::randn({d, d}, rng, stddev);
    p.b_v = Tensor::randn({d}, rng, stddev);
    p.w_o = Tensor::randn({d, d}, rng, stddev);
    p.b_o = Tensor::randn({d}, rng, stddev);
    return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.numel() == b.numel());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(a(i) - b(i)));
    }
    return m;
}

}  // namespace

TEST_CASE("causal mask is lower triangular") {
    AttentionMask m = AttentionMask::causal(4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(m.at(i, j) == (j <= i));
    }
}

TEST_CASE("chunked mask is the causal mask cut at chunk boundaries") {
    // T=4, chunk=2: row 2 restarts attention inside the second chunk.
    AttentionMask m = AttentionMask::chunked(4, 2);
    const bool expect[4][4] = {{1, 0, 0, 0},
                               {1, 1, 0, 0},
                               {0, 0, 1, 0},
                               {0, 0, 1, 1}};
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) CHECK(m.at(i, j) == expect[i][j]);
    }
    // Every query can always attend to itself, so validation passes for any
    // chunk size.
    CHECK_NOTHROW(AttentionMask::chunked(7, 3));
    CHECK_THROWS(AttentionMask::chunked(0, 2));
}

TEST_CASE("mask bias magnitude tracks precision") {
    AttentionMask m = AttentionMask::causal(2);
    CHECK(m.bias(DType::F64)(0, 1) == -1e12);
    CHECK(m.bias(DType::F32)(0, 1) == -1e9);
    CHECK(m.bias(DType::F64)(1, 0) == 0.0);
}

TEST_CASE("single attendable key receives the whole attention weight") {
    // Row 0 of a causal mask can only see key 0, so its output is v[0]
    // regardless of scores.
    std::mt19937_64 rng(1);
    Tensor q = Tensor::randn({2, 4}, rng, 1.0);
    Tensor k = Tensor::randn({2, 4}, rng, 1.0);
    Tensor v = Tensor::randn({2, 4}, rng, 1.0);
    Tensor out = scaled_dot_attention(nullptr, q, k, v, AttentionMask::causal(2));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(out(0, j) == doctest::Approx(v(0, j)).epsilon(1e-12));
    }
}

TEST_CASE("uniform scores average the values") {
    Tensor q = Tensor::zeros({1, 4});
    std::mt19937_64 rng(2);
    Tensor k = Tensor::randn({3, 4}, rng, 1.0);
    Tensor v = Tensor::randn({3, 4}, rng, 1.0);
    Tensor out = scaled_dot_attention(nullptr, q, k, v, AttentionMask::all(1, 3));
    for (std::size_t j = 0; j < 4; ++j) {
        const double mean = (v(0, j) + v(1, j) + v(2, j)) / 3.0;
        CHECK(out(0, j) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("attention output rows live in the convex hull of the values") {
    std::mt19937_64 rng(3);
    Tensor q = Tensor::randn({5, 4}, rng, 2.0);
    Tensor k = Tensor::randn({5, 4}, rng, 2.0);
    Tensor v = Tensor::randn({5, 4}, rng, 2.0);
    Tensor out = scaled_dot_attention(nullptr, q, k, v, AttentionMask::all(5, 5));
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double lo = v(0, j), hi = v(0, j);
            for (std::size_t r = 1; r < 5; ++r) {
                lo = std::min(lo, v(r, j));
                hi = std::max(hi, v(r, j));
            }
            CHECK(out(i, j) >= lo - 1e-12);
            CHECK(out(i, j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("multi-head attention is causal") {
    // Changing a later token must not change earlier outputs.
    std::mt19937_64 rng(4);
    const std::size_t t = 6, d = 8;
    RopeTable rope(2, 4, 16);
    AttentionParams p = random_params(rng, d);
    Tensor x = Tensor::randn({t, d}, rng, 1.0);
    Tensor y1 = multi_head_attention(nullptr, x, p, AttentionMask::causal(t), rope, 0);
    Tensor x2 = x.detached();
    for (std::size_t j = 0; j < d; ++j) x2.data()[(t - 1) * d + j] += 3.0;
    Tensor y2 = multi_head_attention(nullptr, x2, p, AttentionMask::causal(t), rope, 0);
    for (std::size_t i = 0; i < (t - 1) * d; ++i) {
        CHECK(y1(i) == doctest::Approx(y2(i)).epsilon(1e-12));
    }
    double last = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        last = std::max(last, std::fabs(y1((t - 1) * d + j) - y2((t - 1) * d + j)));
    }
    CHECK(last > 1e-6);  // the changed position itself does move
}

TEST_CASE("chunked attention equals full attention under the chunked mask") {
    std::mt19937_64 rng(5);
    const std::size_t t = 7, d = 8, chunk = 3;
    RopeTable rope(2, 4, 16);
    AttentionParams p = random_params(rng, d);
    Tensor x = Tensor::randn({t, d}, rng, 1.0);
    Tensor via_chunks = chunked_attention(nullptr, x, p, chunk, rope, 0);
    Tensor via_mask = multi_head_attention(nullptr, x, p,
                                           AttentionMask::chunked(t, chunk), rope, 0);
    CHECK(max_abs_diff(via_chunks, via_mask) < 1e-10);
}

TEST_CASE("chunked attention with chunk >= T degenerates to full attention") {
    std::mt19937_64 rng(6);
    const std::size_t t = 5, d = 8;
    RopeTable rope(4, 2, 16);
    AttentionParams p = random_params(rng, d);
    Tensor x = Tensor::randn({t, d}, rng, 1.0);
    Tensor full = multi_head_attention(nullptr, x, p, AttentionMask::causal(t), rope, 0);
    CHECK(max_abs_diff(chunked_attention(nullptr, x, p, t, rope, 0), full) < 1e-10);
    CHECK(max_abs_diff(chunked_attention(nullptr, x, p, t + 9, rope, 0), full) < 1e-10);
}

TEST_CASE("memory cross attention reads zero from an empty bank") {
    std::mt19937_64 rng(7);
    const std::size_t d = 6;
    AttentionParams p = random_params(rng, d);
    MemoryBank bank(4, d);
    Tensor x = Tensor::randn({3, d}, rng, 1.0);
    Tensor out = memory_cross_attention(nullptr, x, bank, p);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out(i) == 0.0);
}

TEST_CASE("memory cross attention sees only occupied slots") {
    std::mt19937_64 rng(8);
    const std::size_t d = 6;
    AttentionParams p = random_params(rng, d);
    Tensor x = Tensor::randn({2, d}, rng, 1.0);
    Tensor s0 = Tensor::randn({d}, rng, 1.0);
    Tensor s1 = Tensor::randn({d}, rng, 1.0);
    MemoryBank small(2, d);
    small = fifo_insert(fifo_insert(small, s0), s1);
    MemoryBank large(16, d);  // same contents, more headroom
    large = fifo_insert(fifo_insert(large, s0), s1);
    CHECK(max_abs_diff(memory_cross_attention(nullptr, x, small, p),
                       memory_cross_attention(nullptr, x, large, p)) < 1e-12);
}

TEST_CASE("fusion with zero logits is the plain average") {
    std::mt19937_64 rng(9);
    Tensor a = Tensor::randn({2, 3}, rng, 1.0);
    Tensor b = Tensor::randn({2, 3}, rng, 1.0);
    Tensor c = Tensor::randn({2, 3}, rng, 1.0);
    FusionWeights fw;
    fw.logits = Tensor::zeros({3});
    Tensor fused = hybrid_fuse(nullptr, a, b, c, fw);
    for (std::size_t i = 0; i < fused.numel(); ++i) {
        CHECK(fused(i) == doctest::Approx((a(i) + b(i) + c(i)) / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("fusion weights follow the softmax of the logits") {
    Tensor a = Tensor::full({1, 2}, 1.0);
    Tensor b = Tensor::full({1, 2}, 2.0);
    Tensor c = Tensor::full({1, 2}, 4.0);
    FusionWeights fw;
    fw.logits = Tensor::from_values({3}, {std::log(1.0), std::log(2.0), std::log(5.0)});
    // softmax = (1/8, 2/8, 5/8) -> 1*1/8 + 2*2/8 + 4*5/8 = 25/8.
    Tensor fused = hybrid_fuse(nullptr, a, b, c, fw);
    CHECK(fused(0) == doctest::Approx(25.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("subset fusion renormalizes over the enabled paths") {
    Tensor a = Tensor::full({1, 1}, 1.0);
    Tensor c = Tensor::full({1, 1}, 4.0);
    FusionWeights fw;
    fw.logits = Tensor::from_values({3}, {std::log(1.0), 100.0, std::log(3.0)});
    // The huge middle logit is ignored because its path is disabled:
    // weights = (1/4, 3/4) -> 1*1/4 + 4*3/4 = 13/4.
    Tensor fused = hybrid_fuse_subset(nullptr, {&a, nullptr, &c},
                                      {true, false, true}, fw);
    CHECK(fused(0) == doctest::Approx(13.0 / 4.0).epsilon(1e-12));
    CHECK_THROWS(hybrid_fuse_subset(nullptr, {&a, nullptr, &c},
                                    {false, false, false}, fw));
}

TEST_CASE("attention gradients match central differences") {
    RopeTable rope(2, 4, 16);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t t = 4, d = 8;
        std::vector<Tensor> in = {Tensor::randn({t, d}, rng, 0.8)};
        AttentionParams p = random_params(rng, d, 0.3);
        Tensor w = Tensor::randn({t, d}, rng, 1.0);
        auto f = [&](GradTape* tape, std::vector<Tensor>& v) {
            Tensor y = multi_head_attention(tape, v[0], p, AttentionMask::causal(t),
                                            rope, 1);
            Tensor my = ops::mul(tape, y, w);
            return ops::reduce_sum(tape, ops::reduce_sum(tape, my, 0), 0);
        };
        GradCheckResult r = gradcheck(f, in);
        INFO("seed ", seed, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("fusion gradients flow into the logits") {
    std::mt19937_64 rng(11);
    Tensor a = Tensor::randn({2, 2}, rng, 1.0);
    Tensor b = Tensor::randn({2, 2}, rng, 1.0);
    Tensor c = Tensor::randn({2, 2}, rng, 1.0);
    Tensor w = Tensor::randn({2, 2}, rng, 1.0);
    std::vector<Tensor> in = {Tensor::randn({3}, rng, 0.5)};
    auto f = [&](GradTape* tape, std::vector<Tensor>& v) {
        FusionWeights fw;
        fw.logits = v[0];
        Tensor fused = hybrid_fuse(tape, a, b, c, fw);
        Tensor my = ops::mul(tape, fused, w);
        return ops::reduce_sum(tape, ops::reduce_sum(tape, my, 0), 0);
    };
    GradCheckResult r = gradcheck(f, in);
    CHECK(r.pass);
}
