#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "maskasr/rng.hpp"
#include "maskasr/tensor.hpp"

namespace maskasr {

// How a shared score tensor is turned into a binary mask.
enum class MaskRule { kTopK, kThres, kLearned };

const char* mask_rule_name(MaskRule rule);
MaskRule mask_rule_from_name(const std::string& name);

enum class RowInit { kZeros, kGaussian };

struct MaskedLinearConfig {
    int64_t c_in = 0;
    int64_t c_out = 0;
    int64_t n_scores = 4;    // K score tensors shared across languages
    double sparsity = 0.3;   // fraction of weight entries masked out (t)
    MaskRule rule = MaskRule::kTopK;
    bool dense = false;      // bypass masking entirely: plain x*W + b
    void validate() const;
};

// Number of ones a top-k mask must contain: ceil((1-t) * c_in * c_out),
// evaluated so that exactly-integer products are not pushed up by roundoff.
int64_t mask_one_count(double sparsity, int64_t weight_entries);

// A linear layer whose weight is gated, per language, by a binary mask
// assembled from shared score tensors. The mapping tensor holds one row per
// language; entry (l, k) > 0 selects score k for language l.
struct MaskedLinear {
    MaskedLinearConfig cfg;
    TensorPtr weight;                // [c_in, c_out]
    TensorPtr bias;                  // [c_out]
    std::vector<TensorPtr> scores;   // n_scores x [c_in, c_out]
    TensorPtr mapping;               // [n_languages, n_scores]
    TensorPtr threshold;             // [1], kLearned only
    // Languages whose mask fine-tuning replaced the assembled score sum with
    // a private trainable copy; masked_weight uses it when present.
    std::map<int64_t, TensorPtr> dedicated_scores;
    int64_t empty_selections = 0;    // times a language selected no scores
    bool warned_empty = false;

    int64_t n_languages() const { return mapping ? mapping->shape[0] : 0; }
    int64_t mask_ones() const { return mask_one_count(cfg.sparsity, cfg.c_in * cfg.c_out); }

    // Sum of the scores selected by language `lang`. Forward uses the hard
    // indicator 1[mapping > 0]; the backward pass routes gradient to every
    // mapping entry through the derivative of the sigmoid gate
    // (straight-through) and to each selected score with coefficient 1.
    // With soft_gate the forward itself uses sigmoid(mapping) as the
    // coefficient, making the node exactly differentiable (used to validate
    // the straight-through rule against finite differences).
    TensorPtr select_scores(int64_t lang, bool soft_gate = false);

    // Binary mask from a score sum. Backward is an identity pass-through to
    // the scores for every rule; kLearned additionally sends the negated sum
    // of the incoming gradient to the threshold.
    TensorPtr binarize(const TensorPtr& score_sum);

    // weight * mask for one language (elementwise), rebuilt from the current
    // parameters on every call. In dense mode this is the weight itself.
    TensorPtr masked_weight(int64_t lang);

    // x [rows, c_in] -> x * masked_weight + bias.
    TensorPtr forward(const TensorPtr& x, int64_t lang);

    // Same projection with a caller-assembled weight, so one mask assembly
    // can serve a whole batch.
    TensorPtr forward_with(const TensorPtr& weight_l, const TensorPtr& x) const;

    // Appends one mapping row (a new language); existing rows are unchanged.
    // Returns the new language index. rng is only consulted for kGaussian.
    int64_t add_language_row(RowInit init, double scale, Rng* rng);

    // Baseline configuration: a single score tensor selected unconditionally
    // for every language (the mapping is constant and not trainable).
    void enable_single_mask();

    // Copies the language's current assembled score sum into a private
    // trainable tensor that overrides selection for it from now on. The copy
    // reproduces the language's mask bit-exactly until its first update.
    // Idempotent: a second call returns the existing tensor.
    TensorPtr materialize_dedicated_score(int64_t lang);
};

// Fresh layer: weight ~ N(0, 1/sqrt(c_in)), bias zero, scores ~ U[0,1),
// mapping ~ N(0, 0.5); the learned-rule threshold starts at the median of the
// initial per-language score sums (roughly half-dense masks).
MaskedLinear make_masked_linear(const MaskedLinearConfig& cfg, int64_t n_languages, Rng& rng);

}  // namespace maskasr
