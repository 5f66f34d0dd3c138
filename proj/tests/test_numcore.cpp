#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "maskasr/common.hpp"
#include "maskasr/grad_check.hpp"
#include "maskasr/rng.hpp"
#include "maskasr/tensor.hpp"

using namespace maskasr;

namespace {

// Independent triple-loop matrix product used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
            c[static_cast<size_t>(i * n + j)] = acc;
        }
    return c;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed products") {
    auto eye = tensor({1, 0, 0, 1}, {2, 2});
    auto m = tensor({2, 3, 4, 5}, {2, 2});
    auto prod = matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(prod->data[i] == m->data[i]);

    auto row = tensor({1, 2}, {1, 2});
    auto col = tensor({3, 4}, {2, 1});
    auto dot = matmul(row, col);
    CHECK(dot->shape == std::vector<int64_t>{1, 1});
    CHECK(dot->data[0] == 11.0);
}

TEST_CASE("matmul matches a triple-loop oracle to 1e-12") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto a = randn(rng, {3, 4});
        auto b = randn(rng, {4, 2});
        auto c = matmul(a, b);
        auto expect = naive_matmul(a->data, b->data, 3, 4, 2);
        for (size_t i = 0; i < expect.size(); ++i) {
            CHECK(std::abs(c->data[i] - expect[i]) < 1e-12);
        }
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    auto a = zeros({2, 3});
    auto b = zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("elementwise forwards hit known values") {
    auto s0 = sigmoid(scalar_tensor(0.0));
    CHECK(s0->data[0] == 0.5);
    auto s2 = sigmoid(scalar_tensor(2.0));
    CHECK(s2->data[0] == doctest::Approx(0.880797).epsilon(1e-6));

    auto sum12 = add(tensor({1, 2}, {2}), tensor({3, 4}, {2}));
    CHECK(sum12->data[0] == 4.0);
    CHECK(sum12->data[1] == 6.0);

    CHECK_THROWS_AS(log(tensor({1.0, 0.0}, {2})), Error);
    CHECK_THROWS_AS(add(zeros({2, 3}), zeros({3, 2})), Error);
}

TEST_CASE("bias broadcast adds the vector to every row") {
    auto x = tensor({1, 2, 3, 4, 5, 6}, {2, 3});
    auto b = tensor({10, 20, 30}, {3}, true);
    auto y = add(x, b);
    const double expect[] = {11, 22, 33, 14, 25, 36};
    for (int i = 0; i < 6; ++i) CHECK(y->data[i] == expect[i]);

    auto loss = sum(y);
    backward(loss);
    for (int j = 0; j < 3; ++j) CHECK(b->grad[j] == 2.0);
}

TEST_CASE("softmax and log-sum-exp") {
    auto u = softmax(tensor({0, 0}, {2}));
    CHECK(u->data[0] == 0.5);
    CHECK(u->data[1] == 0.5);

    auto l = logsumexp(tensor({0, 0}, {2}));
    CHECK(l->data[0] == doctest::Approx(0.693147).epsilon(1e-6));

    auto big = softmax(tensor({1000, 1000}, {2}));
    CHECK(big->data[0] == 0.5);
    CHECK(big->data[1] == 0.5);
}

TEST_CASE("softmax rows sum to one and lse is shift-invariant") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        auto x = randn(rng, {4, 7}, 0.0, 3.0);
        auto p = softmax(x);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < 7; ++j) s += p->data[static_cast<size_t>(r * 7 + j)];
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
        const double c = rng.normal(0.0, 5.0);
        auto base = logsumexp(x);
        auto shifted = logsumexp(add_const(x, c));
        for (int64_t r = 0; r < 4; ++r) {
            CHECK(std::abs(shifted->data[static_cast<size_t>(r)] - (base->data[static_cast<size_t>(r)] + c)) < 1e-12);
        }
    }
}

TEST_CASE("layernorm known outputs") {
    auto gain = ones({4}, true);
    auto bias = zeros({4}, true);
    auto constant = layernorm(tensor({5, 5, 5, 5}, {1, 4}), gain, bias, 1e-5);
    for (int i = 0; i < 4; ++i) CHECK(constant->data[i] == 0.0);

    auto g2 = ones({2});
    auto b2 = zeros({2});
    auto tiny = layernorm(tensor({1, 3}, {1, 2}), g2, b2, 1e-12);
    CHECK(tiny->data[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(tiny->data[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("backward on simple sums") {
    auto w = tensor({1, 2, 3, 4}, {2, 2}, true);
    backward(sum(w));
    for (int i = 0; i < 4; ++i) CHECK(w->grad[i] == 1.0);

    w->zero_grad();
    backward(sum(mul(w, w)));
    const double expect[] = {2, 4, 6, 8};
    for (int i = 0; i < 4; ++i) CHECK(w->grad[i] == expect[i]);
}

TEST_CASE("shared subexpressions accumulate through the diamond") {
    auto x = tensor({1, 2, 3}, {3}, true);
    auto y = mul(x, x);
    backward(sum(add(y, y)));
    for (int i = 0; i < 3; ++i) CHECK(x->grad[i] == 4.0 * x->data[i]);
}

TEST_CASE("backward rejects non-scalar loss and double invocation") {
    auto w = tensor({1, 2}, {2}, true);
    auto v = mul(w, w);
    CHECK_THROWS_AS(backward(v), Error);

    auto loss = sum(mul(w, w));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), Error);
}

TEST_CASE("finite differences are near-exact on a quadratic") {
    Rng rng(7);
    auto w = randn(rng, {3, 3}, 0.0, 1.0, true);
    auto report = finite_diff_check(
        [&] { return add(sum(mul(w, w)), sum(w)); }, {{"w", w}});
    CHECK(report.entries_checked == 9);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("a corrupted backward rule is caught by the checker") {
    Rng rng(11);
    auto w = randn(rng, {2, 2}, 0.0, 1.0, true);
    auto bad_square = [&] {
        std::vector<double> out(w->data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = w->data[i] * w->data[i];
        auto node = make_node(std::move(out), w->shape, {w},
                              [&](Tensor& t) {
                                  w->ensure_grad();
                                  // Deliberately wrong: d(x^2)/dx reported as 3x.
                                  for (size_t i = 0; i < t.grad.size(); ++i)
                                      w->grad[i] += 3.0 * w->data[i] * t.grad[i];
                              },
                              "bad_square");
        return sum(node);
    };
    auto report = finite_diff_check(bad_square, {{"w", w}});
    CHECK(report.max_rel_err > 0.1);
}

TEST_CASE("every differentiable op survives a 20-seed finite-difference sweep") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        auto x = randn(rng, {2, 3});
        auto w1 = randn(rng, {3, 4}, 0.0, 0.7, true);
        auto b1 = randn(rng, {4}, 0.0, 0.3, true);
        auto gain = rand_uniform(rng, {4}, 0.5, 1.5, true);
        auto beta = randn(rng, {4}, 0.0, 0.2, true);
        auto w2 = randn(rng, {4, 2}, 0.0, 0.7, true);

        auto loss_fn = [&] {
            auto h = gelu(add(matmul(x, w1), b1));
            h = layernorm(h, gain, beta, 1e-5);
            auto left = slice_cols(h, 0, 2);
            auto right = slice_cols(h, 2, 2);
            auto joined = concat_cols({left, mul(right, right)});
            auto z = matmul(joined, w2);
            auto probs = softmax(z);
            auto logp = log_softmax(z);
            auto lse = logsumexp(z);
            auto gates = sigmoid(sub(z, scale(z, 0.25)));
            auto pos = add_const(exp(scale(transpose(z), 0.3)), 0.5);
            auto extra = add(sum(log(pos)), sum(relu(add_const(gates, -0.4))));
            auto mixed = add(sum(mul(probs, logp)), mean_all(lse));
            return add(mixed, extra);
        };
        auto report = finite_diff_check(loss_fn, {{"w1", w1}, {"b1", b1}, {"gain", gain}, {"beta", beta}, {"w2", w2}});
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("dropout gradient matches finite differences when the mask is replayed") {
    auto w = tensor({0.3, -0.8, 1.2, 0.1, -0.5, 0.9}, {2, 3}, true);
    auto loss_fn = [&] {
        Rng drop_rng(42);
        auto d = dropout(mul(w, w), 0.5, drop_rng, true);
        return sum(d);
    };
    auto report = finite_diff_check(loss_fn, {{"w", w}});
    CHECK(report.max_rel_err < 1e-6);

    // Eval mode is the identity.
    Rng unused(1);
    auto same = dropout(w, 0.5, unused, false);
    CHECK(same.get() == w.get());
}

TEST_CASE("gradient-sampling option probes the requested number of entries") {
    Rng rng(3);
    auto w = randn(rng, {8, 8}, 0.0, 1.0, true);
    GradCheckOptions opts;
    opts.max_entries_per_param = 10;
    opts.sample_seed = 5;
    auto report = finite_diff_check([&] { return sum(mul(w, w)); }, {{"w", w}}, opts);
    CHECK(report.entries_checked == 10);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("forward passes are bit-deterministic") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        auto x = randn(rng, {3, 5});
        auto w = randn(rng, {5, 4});
        auto g = ones({4});
        auto b = zeros({4});
        auto h = layernorm(gelu(matmul(x, w)), g, b, 1e-5);
        return softmax(h)->data;
    };
    auto a = run(123);
    auto b = run(123);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite values are rejected at op boundaries") {
    CHECK_THROWS_AS(tensor({std::numeric_limits<double>::infinity()}, {1}), Error);
    set_finite_checks(false);
    auto inf = tensor({std::numeric_limits<double>::infinity()}, {1});
    CHECK(std::isinf(inf->data[0]));
    set_finite_checks(true);
    CHECK_THROWS_AS(exp(scalar_tensor(1000.0)), Error);
}
