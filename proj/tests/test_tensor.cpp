#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hctx/gradcheck.hpp"
#include "hctx/ops.hpp"
#include "hctx/tensor.hpp"

using namespace hctx;

TEST_CASE("factories and shape accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.rank() == 2);
    CHECK(z.extent(0) == 2);
    CHECK(z.extent(1) == 3);
    CHECK(z.numel() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(z(i) == 0.0);

    Tensor f = Tensor::full({4}, 2.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(f(i) == 2.5);

    Tensor v = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    CHECK(v(1, 0) == 3.0);
    CHECK(Tensor::scalar(7.0).value() == 7.0);

    CHECK_THROWS(Tensor::from_values({2, 2}, {1, 2, 3}));
    CHECK_THROWS((void)v.value());  // not a scalar
}

TEST_CASE("tensors are shared handles; detached copies storage") {
    Tensor a = Tensor::from_values({2}, {1, 2});
    Tensor alias = a;
    alias.data()[0] = 9.0;
    CHECK(a(0) == 9.0);

    Tensor d = a.detached();
    d.data()[0] = -1.0;
    CHECK(a(0) == 9.0);
    CHECK(!d.requires_grad());
}

TEST_CASE("matmul matches a frozen example") {
    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_values({2, 2}, {5, 6, 7, 8});
    Tensor c = ops::matmul(nullptr, a, b);
    CHECK(c(0, 0) == 19.0);
    CHECK(c(0, 1) == 22.0);
    CHECK(c(1, 0) == 43.0);
    CHECK(c(1, 1) == 50.0);
}

TEST_CASE("matmul matches naive triple-loop oracle across shapes") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t m = 1 + rng() % 7, k = 1 + rng() % 7, n = 1 + rng() % 7;
        Tensor a = Tensor::randn({m, k}, rng, 1.0);
        Tensor b = Tensor::randn({k, n}, rng, 1.0);
        Tensor c = ops::matmul(nullptr, a, b);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
                CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("shape mismatches are rejected") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS(ops::matmul(nullptr, a, b));
    CHECK_THROWS(ops::add(nullptr, a, Tensor::zeros({3, 2})));
    CHECK_THROWS(ops::add_rows(nullptr, a, Tensor::zeros({2})));
    CHECK_THROWS(ops::slice_rows(nullptr, a, 1, 5));
    CHECK_THROWS(ops::reshape(nullptr, a, {4, 2}));
}

TEST_CASE("pointwise ops and transpose") {
    Tensor a = Tensor::from_values({2, 2}, {1, -2, 3, 0.5});
    Tensor b = Tensor::from_values({2, 2}, {2, 2, -1, 4});
    Tensor s = ops::add(nullptr, a, b);
    CHECK(s(0, 1) == 0.0);
    Tensor p = ops::mul(nullptr, a, b);
    CHECK(p(1, 0) == -3.0);
    Tensor t = ops::transpose(nullptr, a);
    CHECK(t(0, 1) == 3.0);
    CHECK(ops::scale(nullptr, a, 2.0)(1, 1) == 1.0);
    CHECK(ops::scalar_mul(nullptr, a, Tensor::scalar(3.0))(0, 0) == 3.0);
    Tensor rows = ops::add_rows(nullptr, a, Tensor::from_values({2}, {10, 20}));
    CHECK(rows(0, 0) == 11.0);
    CHECK(rows(1, 1) == 20.5);
}

TEST_CASE("reductions remove the reduced axis") {
    Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor s0 = ops::reduce_sum(nullptr, x, 0);
    CHECK(s0.shape() == std::vector<std::size_t>{3});
    CHECK(s0(0) == 5.0);
    Tensor m1 = ops::reduce_mean(nullptr, x, 1);
    CHECK(m1.shape() == std::vector<std::size_t>{2});
    CHECK(m1(0) == 2.0);
    CHECK(m1(1) == 5.0);
}

TEST_CASE("softmax rows are positive, sum to one, and are shift invariant") {
    std::mt19937_64 rng(3);
    Tensor x = Tensor::randn({4, 5}, rng, 2.0);
    Tensor y = ops::softmax(nullptr, x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(y(i, j) > 0.0);
            row += y(i, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-14));
    }
    Tensor shifted = ops::add(nullptr, x, Tensor::full({4, 5}, 123.0));
    Tensor y2 = ops::softmax(nullptr, shifted, 1);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(y(i) == doctest::Approx(y2(i)).epsilon(1e-12));
    }
    // Large magnitudes must not overflow (max subtraction).
    Tensor big = Tensor::from_values({1, 2}, {1e4, 1e4 - 5});
    Tensor yb = ops::softmax(nullptr, big, 1);
    CHECK(yb(0) == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))));
}

TEST_CASE("layer_norm standardizes the last axis before the affine") {
    std::mt19937_64 rng(4);
    const std::size_t d = 6;
    Tensor x = ops::scale(nullptr, Tensor::randn({3, d}, rng, 3.0), 1.0);
    Tensor y = ops::layer_norm(nullptr, x, Tensor::full({d}, 1.0), Tensor::zeros({d}));
    for (std::size_t i = 0; i < 3; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += y(i * d + j);
        mean /= d;
        for (std::size_t j = 0; j < d; ++j) {
            var += (y(i * d + j) - mean) * (y(i * d + j) - mean);
        }
        var /= d;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks it slightly
    }
    Tensor gain = Tensor::full({d}, 2.0), bias = Tensor::full({d}, -1.0);
    Tensor z = ops::layer_norm(nullptr, x, gain, bias);
    for (std::size_t i = 0; i < z.numel(); ++i) {
        CHECK(z(i) == doctest::Approx(2.0 * y(i) - 1.0).epsilon(1e-12));
    }
}

TEST_CASE("slice and concat round-trip") {
    Tensor x = Tensor::from_values({3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    Tensor top = ops::slice_rows(nullptr, x, 0, 1);
    Tensor rest = ops::slice_rows(nullptr, x, 1, 3);
    Tensor back = ops::concat_rows(nullptr, {top, rest});
    for (std::size_t i = 0; i < 12; ++i) CHECK(back(i) == x(i));

    Tensor left = ops::slice_cols(nullptr, x, 0, 2);
    Tensor right = ops::slice_cols(nullptr, x, 2, 4);
    CHECK(left(1, 1) == 5.0);
    CHECK(right(2, 0) == 10.0);
    Tensor back2 = ops::concat_cols(nullptr, {left, right});
    for (std::size_t i = 0; i < 12; ++i) CHECK(back2(i) == x(i));
}

TEST_CASE("select, stack_scalars and embedding") {
    Tensor v = Tensor::from_values({4}, {5, 6, 7, 8});
    CHECK(ops::select(nullptr, v, 2).value() == 7.0);
    Tensor st = ops::stack_scalars(
        nullptr, {Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(3.0)});
    CHECK(st.shape() == std::vector<std::size_t>{3});
    CHECK(st(1) == 2.0);

    Tensor table = Tensor::from_values({3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor e = ops::embedding(nullptr, table, {2, 0, 2});
    CHECK(e.shape() == std::vector<std::size_t>({3, 2}));
    CHECK(e(0, 0) == 20.0);
    CHECK(e(2, 1) == 21.0);
    CHECK_THROWS(ops::embedding(nullptr, table, {3}));
}

TEST_CASE("cross_entropy on uniform logits is log V; all-masked rejected") {
    Tensor logits = Tensor::zeros({4, 8});
    std::vector<int> targets = {0, 3, 5, 7};
    Tensor l = ops::cross_entropy(nullptr, logits, targets, {1, 1, 1, 1});
    CHECK(l.value() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
    // Only unmasked rows contribute.
    Tensor peaked = Tensor::zeros({2, 4});
    peaked.data()[0 * 4 + 1] = 100.0;  // row 0 ~certain of class 1
    Tensor l2 = ops::cross_entropy(nullptr, peaked, {1, 2}, {1, 0});
    CHECK(l2.value() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_THROWS(ops::cross_entropy(nullptr, peaked, {1, 2}, {0, 0}));
}

TEST_CASE("non-finite results are rejected immediately") {
    Tensor huge = Tensor::full({2}, 1e308);
    CHECK_THROWS(ops::mul(nullptr, huge, huge));
}

TEST_CASE("f32 tensors hold exactly float-representable values") {
    std::mt19937_64 rng(5);
    Tensor a = Tensor::randn({3, 3}, rng, 1.0, DType::F32);
    Tensor b = Tensor::randn({3, 3}, rng, 1.0, DType::F32);
    Tensor c = ops::matmul(nullptr, a, b);
    CHECK(c.dtype() == DType::F32);
    for (std::size_t i = 0; i < c.numel(); ++i) {
        CHECK(c(i) == static_cast<double>(static_cast<float>(c(i))));
    }
}

TEST_CASE("backward accumulates matmul adjoints") {
    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_values({2, 2}, {5, 6, 7, 8});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    GradTape tape;
    Tensor c = ops::matmul(&tape, a, b);
    Tensor loss = ops::reduce_sum(&tape, ops::reduce_sum(&tape, c, 0), 0);
    tape.backward(loss);
    // d(sum)/da = ones * b^T
    CHECK(a.grad()[0] == 11.0);
    CHECK(a.grad()[1] == 15.0);
    CHECK(b.grad()[0] == 4.0);  // ones^T * a, column sums of a
    CHECK(b.grad()[2] == 6.0);
}

TEST_CASE("a tape can be consumed once and needs an attached scalar") {
    Tensor a = Tensor::from_values({2}, {1, 2});
    a.set_requires_grad(true);
    GradTape tape;
    Tensor y = ops::mul(&tape, a, a);
    Tensor loss = ops::reduce_sum(&tape, y, 0);
    tape.backward(loss);
    CHECK(a.grad()[1] == 4.0);
    CHECK(tape.consumed());
    CHECK_THROWS(tape.backward(loss));

    GradTape tape2;
    Tensor z = ops::mul(&tape2, a, a);
    CHECK_THROWS(tape2.backward(z));  // not scalar
    CHECK_THROWS(GradTape().backward(Tensor::scalar(1.0)));  // detached
}

namespace {

void check_unary(const char* name, Tensor (*op)(GradTape*, const Tensor&)) {
    INFO(name);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<Tensor> in = {Tensor::randn({2, 3}, rng, 0.8)};
        auto f = [&](GradTape* t, std::vector<Tensor>& v) {
            Tensor y = op(t, v[0]);
            return ops::reduce_sum(t, ops::reduce_sum(t, ops::mul(t, y, y), 0), 0);
        };
        GradCheckResult r = gradcheck(f, in);
        CHECK(r.pass);
    }
}

}  // namespace

TEST_CASE("pointwise gradients match central differences") {
    check_unary("sigmoid", ops::sigmoid);
    check_unary("tanh", ops::tanh);
    check_unary("gelu", ops::gelu);
}

TEST_CASE("structural op gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed + 100);
        std::vector<Tensor> in = {Tensor::randn({3, 4}, rng, 0.8),
                                  Tensor::randn({4, 2}, rng, 0.8),
                                  Tensor::randn({2}, rng, 0.5),
                                  Tensor::randn({2}, rng, 0.5),
                                  Tensor::randn({1}, rng, 0.5)};
        std::vector<int> targets = {0, 1, 0};
        std::vector<std::uint8_t> mask = {1, 1, 0};
        auto f = [&](GradTape* t, std::vector<Tensor>& v) {
            Tensor h = ops::matmul(t, v[0], v[1]);
            h = ops::add_rows(t, h, v[2]);
            h = ops::layer_norm(t, h, Tensor::full({2}, 1.0), v[3]);
            h = ops::softmax(t, h, 1);
            Tensor top = ops::slice_rows(t, h, 0, 1);
            Tensor rest = ops::slice_rows(t, h, 1, 3);
            h = ops::concat_rows(t, {top, rest});
            h = ops::scalar_mul(t, h, v[4]);
            return ops::cross_entropy(t, h, targets, mask);
        };
        GradCheckResult r = gradcheck(f, in);
        INFO("seed ", seed, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("embedding gradient scatters into the gathered rows") {
    Tensor table = Tensor::from_values({3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    table.set_requires_grad(true);
    GradTape tape;
    Tensor e = ops::embedding(&tape, table, {2, 2, 0});
    Tensor loss = ops::reduce_sum(&tape, ops::reduce_sum(&tape, e, 0), 0);
    tape.backward(loss);
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[2] == 0.0);  // row 1 unused
    CHECK(table.grad()[4] == 2.0);  // row 2 used twice
}
