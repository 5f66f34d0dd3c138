#include "maskasr/model.hpp"

#include <cmath>

#include "maskasr/common.hpp"

namespace maskasr {

void EncoderConfig::validate() const {
    if (d_model < 1 || n_blocks < 1 || n_heads < 1 || d_ff < 1 || input_feature_dim < 1) {
        fail(ErrorCode::kInvalidArg, "encoder dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        fail(ErrorCode::kInvalidArg, "d_model %lld not divisible by n_heads %lld",
             static_cast<long long>(d_model), static_cast<long long>(n_heads));
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        fail(ErrorCode::kInvalidArg, "dropout rate must lie in [0,1)");
    }
    MaskedLinearConfig probe;
    probe.c_in = d_model;
    probe.c_out = d_model;
    probe.n_scores = n_scores;
    probe.sparsity = sparsity;
    probe.rule = rule;
    probe.validate();
}

const char* param_selector_name(ParamSelector s) {
    switch (s) {
        case ParamSelector::kBackboneW: return "backbone_w";
        case ParamSelector::kSpecialistM: return "specialist_m";
        case ParamSelector::kMappingT: return "mapping_t";
        case ParamSelector::kBiases: return "biases";
        case ParamSelector::kHeads: return "heads";
        case ParamSelector::kAll: return "all";
    }
    return "?";
}

int64_t EncoderModel::language_index(const std::string& tag) const {
    for (size_t i = 0; i < language_tags.size(); ++i) {
        if (language_tags[i] == tag) return static_cast<int64_t>(i);
    }
    fail(ErrorCode::kUnknownLanguage, "language '%s' is not registered", tag.c_str());
}

std::vector<TensorPtr> EncoderModel::base_biases() const {
    std::vector<TensorPtr> b;
    b.push_back(proj_b);
    for (const auto& blk : blocks) {
        b.push_back(blk.ln1_bias);
        b.push_back(blk.qkv.bias);
        b.push_back(blk.proj.bias);
        b.push_back(blk.ln2_bias);
        b.push_back(blk.ff1_b);
        b.push_back(blk.ff2_b);
    }
    b.push_back(final_bias);
    return b;
}

std::vector<TensorPtr> EncoderModel::biases_for(int64_t lang) const {
    auto it = bias_overlays.find(lang);
    if (it != bias_overlays.end()) return it->second;
    return base_biases();
}

std::vector<TensorPtr> EncoderModel::params(ParamSelector s) const {
    std::vector<TensorPtr> out;
    auto backbone = [&] {
        out.push_back(proj_w);
        for (const auto& blk : blocks) {
            out.push_back(blk.ln1_gain);
            out.push_back(blk.qkv.weight);
            out.push_back(blk.proj.weight);
            out.push_back(blk.ln2_gain);
            out.push_back(blk.ff1_w);
            out.push_back(blk.ff2_w);
        }
        out.push_back(final_gain);
    };
    auto specialist = [&] {
        for (const auto& blk : blocks) {
            for (const auto& m : blk.qkv.scores) out.push_back(m);
            if (cfg.rule == MaskRule::kLearned) out.push_back(blk.qkv.threshold);
            for (const auto& m : blk.proj.scores) out.push_back(m);
            if (cfg.rule == MaskRule::kLearned) out.push_back(blk.proj.threshold);
        }
    };
    auto mapping = [&] {
        for (const auto& blk : blocks) {
            out.push_back(blk.qkv.mapping);
            out.push_back(blk.proj.mapping);
        }
    };
    auto biases = [&] {
        for (auto& b : base_biases()) out.push_back(b);
    };
    auto head_params = [&] {
        for (const auto& h : heads) {
            out.push_back(h.weight);
            out.push_back(h.bias);
        }
    };
    switch (s) {
        case ParamSelector::kBackboneW: backbone(); break;
        case ParamSelector::kSpecialistM: specialist(); break;
        case ParamSelector::kMappingT: mapping(); break;
        case ParamSelector::kBiases: biases(); break;
        case ParamSelector::kHeads: head_params(); break;
        case ParamSelector::kAll:
            backbone();
            specialist();
            mapping();
            biases();
            head_params();
            break;
    }
    return out;
}

namespace {

MaskedLinear make_block_layer(const EncoderConfig& cfg, int64_t c_in, int64_t c_out,
                              int64_t n_languages, Rng& rng) {
    MaskedLinearConfig mc;
    mc.c_in = c_in;
    mc.c_out = c_out;
    mc.n_scores = cfg.n_scores;
    mc.sparsity = cfg.sparsity;
    mc.rule = cfg.rule;
    mc.dense = cfg.dense_layers;
    return make_masked_linear(mc, n_languages, rng);
}

TensorPtr dense_init(Rng& rng, int64_t c_in, int64_t c_out) {
    return randn(rng, {c_in, c_out}, 0.0, 1.0 / std::sqrt(static_cast<double>(c_in)), true);
}

// Fixed sinusoidal position table for `frames` steps.
TensorPtr position_table(int64_t frames, int64_t d_model) {
    std::vector<double> p(static_cast<size_t>(frames * d_model));
    for (int64_t t = 0; t < frames; ++t) {
        for (int64_t i = 0; i < d_model; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
            p[static_cast<size_t>(t * d_model + i)] = std::sin(static_cast<double>(t) * freq);
            if (i + 1 < d_model) p[static_cast<size_t>(t * d_model + i + 1)] = std::cos(static_cast<double>(t) * freq);
        }
    }
    return tensor(std::move(p), {frames, d_model});
}

}  // namespace

EncoderModel make_encoder(const EncoderConfig& cfg, const std::vector<std::string>& language_tags,
                          int64_t shared_vocab, Rng& rng) {
    cfg.validate();
    if (language_tags.empty()) fail(ErrorCode::kInvalidArg, "encoder needs at least one language");
    if (shared_vocab < 1) fail(ErrorCode::kInvalidArg, "shared vocabulary must be non-empty");

    EncoderModel model;
    model.cfg = cfg;
    model.language_tags = language_tags;
    model.head_of_language.assign(language_tags.size(), 0);
    const int64_t L = static_cast<int64_t>(language_tags.size());

    model.proj_w = dense_init(rng, cfg.input_feature_dim, cfg.d_model);
    model.proj_b = zeros({cfg.d_model}, true);
    for (int64_t b = 0; b < cfg.n_blocks; ++b) {
        Block blk;
        blk.ln1_gain = ones({cfg.d_model}, true);
        blk.ln1_bias = zeros({cfg.d_model}, true);
        blk.qkv = make_block_layer(cfg, cfg.d_model, 3 * cfg.d_model, L, rng);
        blk.proj = make_block_layer(cfg, cfg.d_model, cfg.d_model, L, rng);
        blk.ln2_gain = ones({cfg.d_model}, true);
        blk.ln2_bias = zeros({cfg.d_model}, true);
        blk.ff1_w = dense_init(rng, cfg.d_model, cfg.d_ff);
        blk.ff1_b = zeros({cfg.d_ff}, true);
        blk.ff2_w = dense_init(rng, cfg.d_ff, cfg.d_model);
        blk.ff2_b = zeros({cfg.d_model}, true);
        model.blocks.push_back(std::move(blk));
    }
    model.final_gain = ones({cfg.d_model}, true);
    model.final_bias = zeros({cfg.d_model}, true);
    attach_head(model, shared_vocab, rng);
    return model;
}

int64_t attach_head(EncoderModel& model, int64_t vocab, Rng& rng) {
    if (vocab < 1) fail(ErrorCode::kInvalidArg, "head vocabulary must be non-empty");
    Head h;
    h.vocab = vocab;
    h.weight = dense_init(rng, model.cfg.d_model, vocab + 1);
    h.bias = zeros({vocab + 1}, true);
    model.heads.push_back(std::move(h));
    return static_cast<int64_t>(model.heads.size()) - 1;
}

int64_t add_language(EncoderModel& model, const std::string& tag, int64_t head, RowInit init,
                     double scale, Rng* rng) {
    for (const auto& t : model.language_tags) {
        if (t == tag) fail(ErrorCode::kInvalidArg, "language '%s' already registered", tag.c_str());
    }
    if (head < 0 || head >= static_cast<int64_t>(model.heads.size())) {
        fail(ErrorCode::kInvalidArg, "head %lld does not exist", static_cast<long long>(head));
    }
    int64_t id = -1;
    for (auto& blk : model.blocks) {
        const int64_t a = blk.qkv.add_language_row(init, scale, rng);
        const int64_t b = blk.proj.add_language_row(init, scale, rng);
        if (a != b || (id != -1 && a != id)) fail(ErrorCode::kInternal, "mapping rows out of sync");
        id = a;
    }
    if (id != static_cast<int64_t>(model.language_tags.size())) {
        fail(ErrorCode::kInternal, "language registry out of sync with mapping rows");
    }
    model.language_tags.push_back(tag);
    model.head_of_language.push_back(head);

    // Private copies of every bias vector; the base model keeps its own.
    std::vector<TensorPtr> overlay;
    for (const auto& b : model.base_biases()) overlay.push_back(tensor(b->data, b->shape, true));
    model.bias_overlays.emplace(id, std::move(overlay));
    return id;
}

LanguageWeights assemble_weights(EncoderModel& model, int64_t lang, bool detached) {
    LanguageWeights lw;
    for (auto& blk : model.blocks) {
        if (detached) {
            NoGradGuard guard;
            lw.qkv.push_back(detach(blk.qkv.masked_weight(lang)));
            lw.proj.push_back(detach(blk.proj.masked_weight(lang)));
        } else {
            lw.qkv.push_back(blk.qkv.masked_weight(lang));
            lw.proj.push_back(blk.proj.masked_weight(lang));
        }
    }
    return lw;
}

TensorPtr encoder_forward(EncoderModel& model, const TensorPtr& x, int64_t lang, int64_t head,
                          const LanguageWeights* weights, bool training, Rng* dropout_rng,
                          std::vector<TensorPtr>* capture_attention) {
    const EncoderConfig& cfg = model.cfg;
    if (lang < 0 || lang >= model.n_languages()) {
        fail(ErrorCode::kUnknownLanguage, "language index %lld not registered", static_cast<long long>(lang));
    }
    if (head < 0 || head >= static_cast<int64_t>(model.heads.size())) {
        fail(ErrorCode::kInvalidArg, "head %lld does not exist", static_cast<long long>(head));
    }
    if (x->shape.size() != 2 || x->shape[1] != cfg.input_feature_dim) {
        fail(ErrorCode::kShape, "encoder expects [frames, %lld] features, got %s",
             static_cast<long long>(cfg.input_feature_dim), shape_str(x->shape).c_str());
    }
    if (training && dropout_rng == nullptr && cfg.dropout_rate > 0.0) {
        fail(ErrorCode::kInvalidArg, "training forward needs a dropout rng");
    }
    const int64_t frames = x->shape[0];
    const int64_t d = cfg.d_model;
    const int64_t dh = d / cfg.n_heads;
    const std::vector<TensorPtr> biases = model.biases_for(lang);

    LanguageWeights local;
    if (weights == nullptr) {
        local = assemble_weights(model, lang);
        weights = &local;
    }

    auto drop = [&](const TensorPtr& t) {
        if (!training || cfg.dropout_rate == 0.0) return t;
        return dropout(t, cfg.dropout_rate, *dropout_rng, true);
    };

    auto h = add(add(matmul(x, model.proj_w), biases[0]), position_table(frames, d));
    for (int64_t b = 0; b < cfg.n_blocks; ++b) {
        const Block& blk = model.blocks[static_cast<size_t>(b)];
        const size_t slot = static_cast<size_t>(1 + 6 * b);

        auto a = layernorm(h, blk.ln1_gain, biases[slot], 1e-5);
        auto qkv = add(matmul(a, weights->qkv[static_cast<size_t>(b)]), biases[slot + 1]);
        std::vector<TensorPtr> ctx;
        for (int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            auto q = slice_cols(qkv, hd * dh, dh);
            auto k = slice_cols(qkv, d + hd * dh, dh);
            auto v = slice_cols(qkv, 2 * d + hd * dh, dh);
            auto att = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh))));
            if (capture_attention != nullptr) capture_attention->push_back(att);
            ctx.push_back(matmul(att, v));
        }
        auto mixed = add(matmul(concat_cols(ctx), weights->proj[static_cast<size_t>(b)]), biases[slot + 2]);
        h = add(h, drop(mixed));

        auto f = layernorm(h, blk.ln2_gain, biases[slot + 3], 1e-5);
        auto ff = add(matmul(gelu(add(matmul(f, blk.ff1_w), biases[slot + 4])), blk.ff2_w), biases[slot + 5]);
        h = add(h, drop(ff));
    }
    auto y = layernorm(h, model.final_gain, biases[static_cast<size_t>(1 + 6 * cfg.n_blocks)], 1e-5);
    const Head& hd = model.heads[static_cast<size_t>(head)];
    return log_softmax(add(matmul(y, hd.weight), hd.bias));
}

int64_t count_scalars(const std::vector<TensorPtr>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p->size();
    return n;
}

}  // namespace maskasr
