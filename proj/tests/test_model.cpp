#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "maskasr/common.hpp"
#include "maskasr/model.hpp"
#include "maskasr/rng.hpp"

using namespace maskasr;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.n_blocks = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 24;
    cfg.input_feature_dim = 8;
    cfg.n_scores = 3;
    cfg.sparsity = 0.3;
    cfg.dropout_rate = 0.0;
    return cfg;
}

EncoderModel tiny_model(uint64_t seed = 1, EncoderConfig cfg = tiny_config()) {
    Rng rng(seed);
    return make_encoder(cfg, {"aa", "ab", "ba"}, 10, rng);
}

TensorPtr random_frames(uint64_t seed, int64_t frames, int64_t feat) {
    Rng rng(seed);
    return randn(rng, {frames, feat});
}

bool same_bits(const TensorPtr& a, const TensorPtr& b) {
    return a->data.size() == b->data.size() &&
           std::memcmp(a->data.data(), b->data.data(), a->data.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("forward produces per-frame log-probabilities of the right shape") {
    auto model = tiny_model();
    auto x = random_frames(2, 7, 8);
    auto lp = encoder_forward(model, x, 0, 0);
    CHECK(lp->shape == std::vector<int64_t>{7, 11});
    for (int64_t t = 0; t < 7; ++t) {
        double s = 0.0;
        for (int64_t j = 0; j < 11; ++j) s += std::exp(lp->data[static_cast<size_t>(t * 11 + j)]);
        CHECK(std::abs(s - 1.0) < 1e-10);
    }
}

TEST_CASE("identical mapping rows give identical outputs across languages") {
    auto model = tiny_model();
    for (auto& blk : model.blocks) {
        const int64_t K = blk.qkv.cfg.n_scores;
        for (int64_t k = 0; k < K; ++k) {
            blk.qkv.mapping->data[static_cast<size_t>(1 * K + k)] = blk.qkv.mapping->data[static_cast<size_t>(k)];
            blk.proj.mapping->data[static_cast<size_t>(1 * K + k)] = blk.proj.mapping->data[static_cast<size_t>(k)];
        }
    }
    auto x = random_frames(3, 5, 8);
    CHECK(same_bits(encoder_forward(model, x, 0, 0), encoder_forward(model, x, 1, 0)));
}

TEST_CASE("zero sparsity with one score reduces to the plain transformer bit-exactly") {
    auto cfg = tiny_config();
    cfg.sparsity = 0.0;
    cfg.n_scores = 1;
    auto masked = tiny_model(7, cfg);

    auto dense_cfg = cfg;
    dense_cfg.dense_layers = true;
    auto dense = tiny_model(7, dense_cfg);

    for (int batch = 0; batch < 3; ++batch) {
        auto x = random_frames(100 + static_cast<uint64_t>(batch), 6, 8);
        CHECK(same_bits(encoder_forward(masked, x, 1, 0), encoder_forward(dense, x, 1, 0)));
    }
}

TEST_CASE("parameter selectors partition the model") {
    auto model = tiny_model();
    const auto all = model.params(ParamSelector::kAll);

    size_t total = 0;
    std::set<const Tensor*> seen;
    for (const auto sel : {ParamSelector::kBackboneW, ParamSelector::kSpecialistM,
                           ParamSelector::kMappingT, ParamSelector::kBiases, ParamSelector::kHeads}) {
        for (const auto& p : model.params(sel)) {
            CHECK(seen.insert(p.get()).second);  // disjoint
            ++total;
        }
    }
    CHECK(total == all.size());  // exhaustive
    for (const auto& p : all) CHECK(seen.count(p.get()) == 1);
}

TEST_CASE("mapping selector yields exactly two tensors per block") {
    auto model = tiny_model();
    CHECK(model.params(ParamSelector::kMappingT).size() == static_cast<size_t>(2 * model.cfg.n_blocks));
}

TEST_CASE("bias selector covers layernorm and dense biases and nothing else") {
    auto model = tiny_model();
    const auto biases = model.params(ParamSelector::kBiases);
    // projector + 6 per block + final layernorm
    CHECK(biases.size() == static_cast<size_t>(2 + 6 * model.cfg.n_blocks));
    std::set<const Tensor*> bias_set;
    for (const auto& b : biases) bias_set.insert(b.get());
    CHECK(bias_set.count(model.blocks[0].ln1_bias.get()) == 1);
    CHECK(bias_set.count(model.blocks[0].ff1_b.get()) == 1);
    CHECK(bias_set.count(model.blocks[0].qkv.weight.get()) == 0);
    CHECK(bias_set.count(model.blocks[0].qkv.mapping.get()) == 0);
    CHECK(bias_set.count(model.blocks[0].qkv.scores[0].get()) == 0);
}

TEST_CASE("attaching heads is isolated and sized correctly") {
    auto model = tiny_model();
    auto x = random_frames(5, 4, 8);
    const auto before = encoder_forward(model, x, 0, 0)->data;

    Rng rng(9);
    const int64_t h1 = attach_head(model, 6, rng);
    const int64_t h2 = attach_head(model, 4, rng);
    CHECK(h1 == 1);
    CHECK(h2 == 2);
    CHECK(model.heads[1].weight->shape == std::vector<int64_t>{16, 7});
    CHECK(model.heads[2].weight->shape == std::vector<int64_t>{16, 5});

    const auto after = encoder_forward(model, x, 0, 0)->data;
    CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0);
}

TEST_CASE("attention rows sum to one") {
    auto model = tiny_model();
    auto x = random_frames(11, 9, 8);
    std::vector<TensorPtr> atts;
    encoder_forward(model, x, 2, 0, nullptr, false, nullptr, &atts);
    CHECK(atts.size() == static_cast<size_t>(model.cfg.n_blocks * model.cfg.n_heads));
    for (const auto& att : atts) {
        REQUIRE(att->shape == std::vector<int64_t>{9, 9});
        for (int64_t r = 0; r < 9; ++r) {
            double s = 0.0;
            for (int64_t c = 0; c < 9; ++c) s += att->data[static_cast<size_t>(r * 9 + c)];
            CHECK(std::abs(s - 1.0) < 1e-10);
        }
    }
}

TEST_CASE("adding a language leaves existing languages' outputs bit-identical") {
    auto model = tiny_model();
    auto x0 = random_frames(21, 6, 8);
    auto x1 = random_frames(22, 5, 8);
    const auto out0 = encoder_forward(model, x0, 0, 0)->data;
    const auto out1 = encoder_forward(model, x1, 1, 0)->data;

    Rng rng(33);
    const int64_t head = attach_head(model, 5, rng);
    const int64_t lang = add_language(model, "zz", head, RowInit::kZeros, 0.0, nullptr);
    CHECK(lang == 3);
    CHECK(model.language_index("zz") == 3);
    CHECK_THROWS_AS(add_language(model, "zz", head, RowInit::kZeros, 0.0, nullptr), Error);

    // Scribble over everything adaptation is allowed to train: the new
    // mapping rows, the new head, and the language's bias overlay.
    for (auto& blk : model.blocks) {
        const int64_t K = blk.qkv.cfg.n_scores;
        for (int64_t k = 0; k < K; ++k) {
            blk.qkv.mapping->data[static_cast<size_t>(lang * K + k)] = rng.normal(0.0, 3.0);
            blk.proj.mapping->data[static_cast<size_t>(lang * K + k)] = rng.normal(0.0, 3.0);
        }
    }
    for (auto& v : model.heads[static_cast<size_t>(head)].weight->data) v = rng.normal(0.0, 3.0);
    for (auto& b : model.bias_overlays.at(lang)) {
        for (auto& v : b->data) v = rng.normal(0.0, 3.0);
    }

    CHECK(std::memcmp(encoder_forward(model, x0, 0, 0)->data.data(), out0.data(),
                      out0.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(encoder_forward(model, x1, 1, 0)->data.data(), out1.data(),
                      out1.size() * sizeof(double)) == 0);

    // The new language's forward works against its own head.
    auto lp = encoder_forward(model, x0, lang, head);
    CHECK(lp->shape == std::vector<int64_t>{6, 6});
}

TEST_CASE("preassembled weights match on-the-fly assembly") {
    auto model = tiny_model();
    auto x = random_frames(41, 4, 8);
    auto fresh = encoder_forward(model, x, 0, 0);

    auto lw = assemble_weights(model, 0);
    auto reused = encoder_forward(model, x, 0, 0, &lw);
    CHECK(same_bits(fresh, reused));

    auto frozen = assemble_weights(model, 0, true);
    for (const auto& w : frozen.qkv) CHECK_FALSE(w->requires_grad);
    for (const auto& w : frozen.proj) CHECK_FALSE(w->requires_grad);
    auto detached = encoder_forward(model, x, 0, 0, &frozen);
    CHECK(same_bits(fresh, detached));
}

TEST_CASE("evaluation under the no-grad guard matches the training graph bit-for-bit") {
    auto model = tiny_model();
    auto x = random_frames(55, 5, 8);
    auto graphed = encoder_forward(model, x, 1, 0);
    CHECK(graphed->requires_grad);

    NoGradGuard guard;
    auto plain = encoder_forward(model, x, 1, 0);
    CHECK_FALSE(plain->requires_grad);
    CHECK(same_bits(graphed, plain));
}

TEST_CASE("bad inputs are rejected") {
    auto model = tiny_model();
    auto x = random_frames(3, 4, 8);
    CHECK_THROWS_AS(encoder_forward(model, x, 9, 0), Error);
    CHECK_THROWS_AS(encoder_forward(model, x, 0, 5), Error);
    auto wrong = random_frames(3, 4, 9);
    CHECK_THROWS_AS(encoder_forward(model, wrong, 0, 0), Error);
    CHECK_THROWS_AS(model.language_index("nope"), Error);
}

TEST_CASE("dropout is active only in training mode and is seed-deterministic") {
    auto cfg = tiny_config();
    cfg.dropout_rate = 0.2;
    auto model = tiny_model(3, cfg);
    auto x = random_frames(61, 5, 8);

    auto eval1 = encoder_forward(model, x, 0, 0);
    auto eval2 = encoder_forward(model, x, 0, 0);
    CHECK(same_bits(eval1, eval2));

    Rng d1(77), d2(77), d3(78);
    auto t1 = encoder_forward(model, x, 0, 0, nullptr, true, &d1);
    auto t2 = encoder_forward(model, x, 0, 0, nullptr, true, &d2);
    auto t3 = encoder_forward(model, x, 0, 0, nullptr, true, &d3);
    CHECK(same_bits(t1, t2));
    CHECK_FALSE(same_bits(t1, t3));
    CHECK_FALSE(same_bits(t1, eval1));
}
