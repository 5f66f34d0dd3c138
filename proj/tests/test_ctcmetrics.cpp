#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "maskasr/cer.hpp"
#include "maskasr/common.hpp"
#include "maskasr/ctc.hpp"
#include "maskasr/grad_check.hpp"
#include "maskasr/rng.hpp"

using namespace maskasr;

namespace {

// Row-normalized random probability table with strictly positive entries.
TensorPtr random_prob_table(Rng& rng, int64_t frames, int64_t cols) {
    std::vector<double> d(static_cast<size_t>(frames * cols));
    for (int64_t t = 0; t < frames; ++t) {
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            d[static_cast<size_t>(t * cols + j)] = rng.uniform(0.05, 1.0);
            s += d[static_cast<size_t>(t * cols + j)];
        }
        for (int64_t j = 0; j < cols; ++j) d[static_cast<size_t>(t * cols + j)] /= s;
    }
    return tensor(std::move(d), {frames, cols});
}

TensorPtr log_of(const TensorPtr& probs, bool requires_grad = false) {
    std::vector<double> d(probs->data.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = std::log(probs->data[i]);
    return tensor(std::move(d), probs->shape, requires_grad);
}

}  // namespace

TEST_CASE("single uniform frame, one-symbol target") {
    auto lp = tensor({std::log(0.5), std::log(0.5)}, {1, 2});
    auto loss = ctc_loss(lp, {0});
    CHECK(loss->data[0] == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("empty target with all mass on blank gives zero loss") {
    // Columns: {a, blank}; blank carries probability 1 in every frame.
    const double tiny = std::log(1e-300);
    auto lp = tensor({tiny, 0.0, tiny, 0.0, tiny, 0.0}, {3, 2});
    auto loss = ctc_loss(lp, {});
    CHECK(loss->data[0] == 0.0);
}

TEST_CASE("two uniform frames, one-symbol target enumerates to 0.75") {
    const double h = std::log(0.5);
    auto lp = tensor({h, h, h, h}, {2, 2});
    auto loss = ctc_loss(lp, {0});
    CHECK(loss->data[0] == doctest::Approx(0.287682).epsilon(1e-6));
}

TEST_CASE("infeasible targets raise an error naming the lengths") {
    auto lp = tensor({std::log(0.5), std::log(0.5)}, {1, 2});
    CHECK_THROWS_WITH_AS(ctc_loss(lp, {0, 0}), doctest::Contains("needs at least"), Error);

    // A repeat needs a separating blank: "aa" cannot fit in two frames.
    auto lp2 = tensor(std::vector<double>(4, std::log(0.5)), {2, 2});
    CHECK_THROWS_AS(ctc_loss(lp2, {0, 0}), Error);
    try {
        ctc_loss(lp2, {0, 0});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::kInfeasibleTarget);
    }
}

TEST_CASE("collapse rule merges repeats then strips blanks") {
    // Path a a - a with blank id 1 collapses to "aa".
    CHECK(ctc_collapse({0, 0, 1, 0}, 1) == Transcript{0, 0});
    CHECK(ctc_collapse({1, 1, 1}, 1) == Transcript{});
    CHECK(ctc_collapse({2, 2, 0}, 3) == Transcript{2, 0});
}

TEST_CASE("brute-force oracle is deterministic") {
    Rng rng(5);
    auto probs = random_prob_table(rng, 4, 3);
    const double a = ctc_brute_force(probs, {0, 1});
    const double b = ctc_brute_force(probs, {0, 1});
    CHECK(a == b);
}

TEST_CASE("brute-force size guard rejects large instances") {
    Rng rng(1);
    auto big = random_prob_table(rng, 9, 3);
    CHECK_THROWS_AS(ctc_brute_force(big, {0}), Error);
    auto wide = random_prob_table(rng, 4, 7);
    CHECK_THROWS_AS(ctc_brute_force(wide, {0}), Error);
}

TEST_CASE("forward algorithm agrees with exhaustive enumeration over 100+ tables") {
    int compared = 0;
    for (uint64_t seed = 0; seed < 120; ++seed) {
        Rng rng(seed);
        const int64_t frames = rng.uniform_int(1, 6);
        const int64_t vocab = rng.uniform_int(1, 4);
        auto probs = random_prob_table(rng, frames, vocab + 1);

        Transcript target;
        const int64_t want = rng.uniform_int(0, 3);
        for (int64_t i = 0; i < want; ++i) target.push_back(static_cast<int>(rng.uniform_int(0, vocab - 1)));
        // Trim until the target fits the frame budget.
        auto min_frames = [&] {
            int64_t n = static_cast<int64_t>(target.size());
            for (size_t i = 1; i < target.size(); ++i)
                if (target[i] == target[i - 1]) ++n;
            return n;
        };
        while (min_frames() > frames) target.pop_back();

        const double exact = ctc_brute_force(probs, target);
        const double fast = ctc_loss(log_of(probs), target)->data[0];
        CHECK(std::abs(fast - exact) < 1e-9);
        ++compared;
    }
    CHECK(compared >= 100);
}

TEST_CASE("loss is non-negative on normalized tables and zero for a certain path") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        auto probs = random_prob_table(rng, 5, 4);
        auto loss = ctc_loss(log_of(probs), {0, 1});
        CHECK(loss->data[0] >= 0.0);
    }
    // All probability on the exact path "a": loss is 0 up to roundoff.
    const double tiny = std::log(1e-300);
    auto lp = tensor({0.0, tiny, tiny}, {1, 3});
    CHECK(ctc_loss(lp, {0})->data[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ctc gradient matches finite differences") {
    Rng rng(9);
    auto probs = random_prob_table(rng, 4, 4);
    auto lp = log_of(probs, true);
    auto report = finite_diff_check([&] { return ctc_loss(lp, {0, 2}); }, {{"logprobs", lp}});
    CHECK(report.max_rel_err < 1e-4);

    // Through a log-softmax head as used in training.
    auto logits = randn(rng, {5, 4}, 0.0, 1.0, true);
    auto report2 =
        finite_diff_check([&] { return ctc_loss(log_softmax(logits), {1, 0, 1}); }, {{"logits", logits}});
    CHECK(report2.max_rel_err < 1e-4);
}

TEST_CASE("greedy decode collapses frame argmaxes") {
    // Columns {a=0, b=1, blank=2}. Frames argmax to a, a, blank, b.
    auto lp = tensor({0.8, 0.1, 0.1,   //
                      0.7, 0.2, 0.1,   //
                      0.1, 0.2, 0.7,   //
                      0.1, 0.8, 0.1},
                     {4, 3});
    CHECK(greedy_decode(lp) == Transcript{0, 1});

    auto blanks = tensor({0.1, 0.1, 0.8, 0.1, 0.1, 0.8}, {2, 3});
    CHECK(greedy_decode(blanks) == Transcript{});

    auto repeat = tensor({0.8, 0.1, 0.1,   //
                          0.1, 0.1, 0.8,   //
                          0.8, 0.1, 0.1},
                         {3, 3});
    CHECK(greedy_decode(repeat) == Transcript{0, 0});
}

TEST_CASE("greedy ties break toward the lower symbol id") {
    auto lp = tensor({0.5, 0.5}, {1, 2});
    CHECK(greedy_decode(lp) == Transcript{0});
    auto lp3 = tensor({0.3, 0.3, 0.3}, {1, 3});
    CHECK(greedy_decode(lp3) == Transcript{0});
}

TEST_CASE("edit distance and CER on known pairs") {
    CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
    CHECK(cer({1, 2, 3}, {1, 2, 3}).cer == 0.0);
    CHECK(cer({}, {0, 1, 2}).cer == 1.0);

    // kitten -> sitting needs 3 edits over a reference of length 7.
    const Transcript kitten = {'k', 'i', 't', 't', 'e', 'n'};
    const Transcript sitting = {'s', 'i', 't', 't', 'i', 'n', 'g'};
    auto r = cer(kitten, sitting);
    CHECK(r.distance == 3);
    CHECK(r.ref_length == 7);
    CHECK(r.cer == doctest::Approx(0.428571).epsilon(1e-6));

    CHECK_THROWS_AS(cer({1}, {}), Error);
}

TEST_CASE("edit distance is a metric") {
    Rng rng(4);
    auto random_t = [&](int64_t max_len) {
        Transcript t;
        const int64_t n = rng.uniform_int(0, max_len);
        for (int64_t i = 0; i < n; ++i) t.push_back(static_cast<int>(rng.uniform_int(0, 4)));
        return t;
    };
    for (int trial = 0; trial < 25; ++trial) {
        const Transcript a = random_t(8), b = random_t(8), c = random_t(8);
        CHECK(edit_distance(a, b) == edit_distance(b, a));
        CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
        CHECK(edit_distance(a, a) == 0);
    }
}

TEST_CASE("corpus CER micro-averages distances over reference lengths") {
    CerAccumulator acc;
    acc.add({1, 2}, {1, 2, 3});     // distance 1, ref 3
    acc.add({5}, {5});              // distance 0, ref 1
    acc.add({}, {7, 8, 9, 0});      // distance 4, ref 4
    CHECK(acc.utterances == 3);
    CHECK(acc.total_distance == 5);
    CHECK(acc.total_ref_length == 8);
    CHECK(acc.value() == doctest::Approx(5.0 / 8.0));

    CerAccumulator empty;
    CHECK(empty.value() == 0.0);
}
