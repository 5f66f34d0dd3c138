#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskasr/masked_linear.hpp"
#include "maskasr/rng.hpp"
#include "maskasr/tensor.hpp"

namespace maskasr {

struct EncoderConfig {
    int64_t d_model = 64;
    int64_t n_blocks = 8;
    int64_t n_heads = 4;
    int64_t d_ff = 128;
    int64_t input_feature_dim = 16;
    int64_t n_scores = 4;     // score tensors per masked layer (K)
    double sparsity = 0.3;    // mask sparsity (t)
    MaskRule rule = MaskRule::kTopK;
    double dropout_rate = 0.1;
    bool dense_layers = false;  // plain transformer: no masking anywhere
    void validate() const;
};

// One transformer block: pre-layernorm self-attention with masked QKV and
// output projection, then a plain dense feed-forward. Only QKV and the
// projection carry per-language masks.
struct Block {
    TensorPtr ln1_gain, ln1_bias;
    MaskedLinear qkv;   // d_model -> 3*d_model
    MaskedLinear proj;  // d_model -> d_model
    TensorPtr ln2_gain, ln2_bias;
    TensorPtr ff1_w, ff1_b;  // d_model -> d_ff
    TensorPtr ff2_w, ff2_b;  // d_ff -> d_model
};

struct Head {
    TensorPtr weight;  // [d_model, vocab+1]
    TensorPtr bias;    // [vocab+1]
    int64_t vocab = 0;  // excluding blank
};

// Named parameter partition used by schedules and the optimizer.
enum class ParamSelector { kBackboneW, kSpecialistM, kMappingT, kBiases, kHeads, kAll };

const char* param_selector_name(ParamSelector s);

// Per-language masked weights assembled once and reused across a batch.
struct LanguageWeights {
    std::vector<TensorPtr> qkv;
    std::vector<TensorPtr> proj;
};

struct EncoderModel {
    EncoderConfig cfg;
    TensorPtr proj_w;  // [input_feature_dim, d_model]
    TensorPtr proj_b;
    std::vector<Block> blocks;
    TensorPtr final_gain, final_bias;
    std::vector<Head> heads;
    std::vector<std::string> language_tags;
    std::vector<int64_t> head_of_language;  // index into heads, default 0
    // Languages added after the initial build train their own copies of every
    // bias vector so the original languages' forwards stay bit-identical.
    std::map<int64_t, std::vector<TensorPtr>> bias_overlays;

    int64_t n_languages() const { return static_cast<int64_t>(language_tags.size()); }
    int64_t language_index(const std::string& tag) const;  // error when absent

    // Canonical bias slots, in the order used by both the base model and
    // every overlay: projector, then per block (ln1, qkv, proj, ln2, ff1,
    // ff2), then the final layernorm.
    std::vector<TensorPtr> base_biases() const;
    std::vector<TensorPtr> biases_for(int64_t lang) const;

    std::vector<TensorPtr> params(ParamSelector s) const;
};

// Fresh model over `language_tags` with one shared head covering
// `shared_vocab` symbols (+ blank). All parameters are drawn from rng in a
// fixed order.
EncoderModel make_encoder(const EncoderConfig& cfg, const std::vector<std::string>& language_tags,
                          int64_t shared_vocab, Rng& rng);

// Gaussian-initialized classification head; returns its index.
int64_t attach_head(EncoderModel& model, int64_t vocab, Rng& rng);

// Registers a new language: one mapping row per masked layer (existing rows
// untouched), a bias overlay copied from the current base biases, and a head
// assignment (pass the result of attach_head, or 0 to reuse the shared head).
int64_t add_language(EncoderModel& model, const std::string& tag, int64_t head, RowInit init,
                     double scale, Rng* rng);

// Masked weights for one language. With `detached` the weights are value
// copies with no graph (for evaluation).
LanguageWeights assemble_weights(EncoderModel& model, int64_t lang, bool detached = false);

// Log-probabilities [frames, head_vocab+1] for one utterance x [frames,
// input_feature_dim]. `weights` may be null (assembled on the fly). Dropout
// is applied only when training, drawing from dropout_rng. When
// capture_attention is given, each block appends its per-head attention
// matrices (softmax outputs, [frames, frames]).
TensorPtr encoder_forward(EncoderModel& model, const TensorPtr& x, int64_t lang, int64_t head,
                          const LanguageWeights* weights = nullptr, bool training = false,
                          Rng* dropout_rng = nullptr,
                          std::vector<TensorPtr>* capture_attention = nullptr);

int64_t count_scalars(const std::vector<TensorPtr>& params);

}  // namespace maskasr
