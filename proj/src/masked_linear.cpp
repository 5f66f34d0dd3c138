#include "maskasr/masked_linear.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "maskasr/common.hpp"

namespace maskasr {

namespace {

double sig(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

const char* mask_rule_name(MaskRule rule) {
    switch (rule) {
        case MaskRule::kTopK: return "topk";
        case MaskRule::kThres: return "thres";
        case MaskRule::kLearned: return "learned";
    }
    return "?";
}

MaskRule mask_rule_from_name(const std::string& name) {
    if (name == "topk") return MaskRule::kTopK;
    if (name == "thres") return MaskRule::kThres;
    if (name == "learned") return MaskRule::kLearned;
    fail(ErrorCode::kInvalidArg, "unknown mask rule '%s' (expected topk|thres|learned)", name.c_str());
}

void MaskedLinearConfig::validate() const {
    if (c_in < 1 || c_out < 1) fail(ErrorCode::kInvalidArg, "masked layer needs positive dimensions");
    if (n_scores < 1) fail(ErrorCode::kInvalidArg, "masked layer needs at least one score tensor");
    if (sparsity < 0.0 || sparsity >= 1.0) {
        fail(ErrorCode::kInvalidArg, "sparsity must lie in [0,1), got %g", sparsity);
    }
}

int64_t mask_one_count(double sparsity, int64_t weight_entries) {
    // The 1e-9 slack keeps exactly-integer products (e.g. 0.9 * 10) from
    // ceiling up due to binary representation of the decimal sparsity.
    const double x = (1.0 - sparsity) * static_cast<double>(weight_entries);
    return static_cast<int64_t>(std::ceil(x - 1e-9));
}

TensorPtr MaskedLinear::select_scores(int64_t lang, bool soft_gate) {
    if (lang < 0 || lang >= n_languages()) {
        fail(ErrorCode::kUnknownLanguage, "language index %lld not registered (have %lld rows)",
             static_cast<long long>(lang), static_cast<long long>(n_languages()));
    }
    const int64_t K = cfg.n_scores;
    const int64_t n = cfg.c_in * cfg.c_out;
    const double* row = mapping->data.data() + lang * K;

    std::vector<double> s(static_cast<size_t>(n), 0.0);
    int64_t selected = 0;
    for (int64_t k = 0; k < K; ++k) {
        const double gate = soft_gate ? sig(row[k]) : (row[k] > 0.0 ? 1.0 : 0.0);
        if (gate == 0.0) continue;
        if (!soft_gate) ++selected;
        const double* mk = scores[static_cast<size_t>(k)]->data.data();
        for (int64_t i = 0; i < n; ++i) s[static_cast<size_t>(i)] += gate * mk[static_cast<size_t>(i)];
    }
    if (!soft_gate && selected == 0) {
        ++empty_selections;
        if (!warned_empty) {
            warned_empty = true;
            log_warn("language %lld selects no score tensors; its mask falls back to tie-break order",
                     static_cast<long long>(lang));
        }
    }

    std::vector<TensorPtr> parents = scores;
    parents.push_back(mapping);
    auto mapping_t = mapping;
    auto scores_t = scores;
    return make_node(std::move(s), {cfg.c_in, cfg.c_out}, std::move(parents),
                     [mapping_t, scores_t, lang, K, n, soft_gate](Tensor& out_t) {
                         const double* g = out_t.grad.data();
                         const double* row = mapping_t->data.data() + lang * K;
                         for (int64_t k = 0; k < K; ++k) {
                             const auto& mk = scores_t[static_cast<size_t>(k)];
                             const double gate = soft_gate ? sig(row[k]) : (row[k] > 0.0 ? 1.0 : 0.0);
                             if (mk->requires_grad && gate != 0.0) {
                                 mk->ensure_grad();
                                 double* dm = mk->grad.data();
                                 for (int64_t i = 0; i < n; ++i) dm[static_cast<size_t>(i)] += gate * g[static_cast<size_t>(i)];
                             }
                             if (mapping_t->requires_grad) {
                                 // Straight-through: the gate derivative is
                                 // sigma'(T) in both hard and soft modes.
                                 const double sg = sig(row[k]);
                                 double dot = 0.0;
                                 const double* md = mk->data.data();
                                 for (int64_t i = 0; i < n; ++i) dot += g[static_cast<size_t>(i)] * md[static_cast<size_t>(i)];
                                 mapping_t->ensure_grad();
                                 mapping_t->grad[static_cast<size_t>(lang * K + k)] += sg * (1.0 - sg) * dot;
                             }
                         }
                     },
                     "select_scores");
}

TensorPtr MaskedLinear::binarize(const TensorPtr& score_sum) {
    if (score_sum->shape != std::vector<int64_t>{cfg.c_in, cfg.c_out}) {
        fail(ErrorCode::kShape, "binarize: score shape %s does not match weight %lldx%lld",
             shape_str(score_sum->shape).c_str(), static_cast<long long>(cfg.c_in),
             static_cast<long long>(cfg.c_out));
    }
    const int64_t n = cfg.c_in * cfg.c_out;
    std::vector<double> b(static_cast<size_t>(n), 0.0);

    switch (cfg.rule) {
        case MaskRule::kTopK: {
            const int64_t k = mask_ones();
            if (k < 1) fail(ErrorCode::kInvalidArg, "sparsity %g leaves an empty mask", cfg.sparsity);
            if (k >= n) {
                std::fill(b.begin(), b.end(), 1.0);
                break;
            }
            std::vector<int64_t> idx(static_cast<size_t>(n));
            std::iota(idx.begin(), idx.end(), 0);
            const double* s = score_sum->data.data();
            // Largest value first; equal values favour the lower flat index.
            auto better = [s](int64_t a, int64_t c) {
                if (s[a] != s[c]) return s[a] > s[c];
                return a < c;
            };
            std::nth_element(idx.begin(), idx.begin() + k, idx.end(), better);
            for (int64_t i = 0; i < k; ++i) b[static_cast<size_t>(idx[static_cast<size_t>(i)])] = 1.0;
            break;
        }
        case MaskRule::kThres: {
            const double* s = score_sum->data.data();
            for (int64_t i = 0; i < n; ++i) b[static_cast<size_t>(i)] = s[static_cast<size_t>(i)] > 0.0 ? 1.0 : 0.0;
            break;
        }
        case MaskRule::kLearned: {
            const double th = threshold->data[0];
            const double* s = score_sum->data.data();
            for (int64_t i = 0; i < n; ++i) b[static_cast<size_t>(i)] = s[static_cast<size_t>(i)] < th ? 1.0 : 0.0;
            break;
        }
    }

    std::vector<TensorPtr> parents = {score_sum};
    const bool learned = cfg.rule == MaskRule::kLearned;
    auto th = threshold;
    if (learned) parents.push_back(th);
    return make_node(std::move(b), score_sum->shape, std::move(parents),
                     [score_sum, th, learned](Tensor& out_t) {
                         // Straight-through: the indicator backward is the
                         // identity into the score sum.
                         if (score_sum->requires_grad) score_sum->accumulate_grad(out_t.grad);
                         if (learned && th->requires_grad) {
                             double total = 0.0;
                             for (const double g : out_t.grad) total += g;
                             th->ensure_grad();
                             th->grad[0] -= total;
                         }
                     },
                     "binarize");
}

TensorPtr MaskedLinear::masked_weight(int64_t lang) {
    if (cfg.dense) return weight;
    const auto dedicated = dedicated_scores.find(lang);
    if (dedicated != dedicated_scores.end()) {
        return mul(weight, binarize(dedicated->second));
    }
    return mul(weight, binarize(select_scores(lang)));
}

TensorPtr MaskedLinear::forward(const TensorPtr& x, int64_t lang) {
    return forward_with(masked_weight(lang), x);
}

TensorPtr MaskedLinear::forward_with(const TensorPtr& weight_l, const TensorPtr& x) const {
    if (x->shape.size() != 2 || x->shape[1] != cfg.c_in) {
        fail(ErrorCode::kShape, "masked layer expects [rows, %lld] input, got %s",
             static_cast<long long>(cfg.c_in), shape_str(x->shape).c_str());
    }
    return add(matmul(x, weight_l), bias);
}

int64_t MaskedLinear::add_language_row(RowInit init, double scale, Rng* rng) {
    const int64_t L = n_languages();
    const int64_t K = cfg.n_scores;
    std::vector<double> grown(static_cast<size_t>((L + 1) * K));
    std::memcpy(grown.data(), mapping->data.data(), static_cast<size_t>(L * K) * sizeof(double));
    for (int64_t k = 0; k < K; ++k) {
        double v = 0.0;
        if (init == RowInit::kGaussian) {
            if (rng == nullptr) fail(ErrorCode::kInvalidArg, "gaussian row init needs an rng");
            v = rng->normal(0.0, scale);
        }
        grown[static_cast<size_t>(L * K + k)] = v;
    }
    mapping = tensor(std::move(grown), {L + 1, K}, mapping->requires_grad);
    return L;
}

TensorPtr MaskedLinear::materialize_dedicated_score(int64_t lang) {
    const auto existing = dedicated_scores.find(lang);
    if (existing != dedicated_scores.end()) return existing->second;
    std::vector<double> values;
    {
        // Value copy of the assembled sum; no graph should be recorded here.
        NoGradGuard guard;
        values = select_scores(lang)->data;
    }
    auto score = tensor(std::move(values), {cfg.c_in, cfg.c_out}, /*requires_grad=*/true);
    dedicated_scores.emplace(lang, score);
    return score;
}

void MaskedLinear::enable_single_mask() {
    const int64_t L = n_languages();
    cfg.n_scores = 1;
    scores.resize(1);
    // A large constant keeps every language on the single score; the mapping
    // is frozen so gradients reach only the score tensor.
    mapping = full({L, 1}, 1e9, false);
}

MaskedLinear make_masked_linear(const MaskedLinearConfig& cfg, int64_t n_languages, Rng& rng) {
    cfg.validate();
    if (n_languages < 1) fail(ErrorCode::kInvalidArg, "need at least one language");
    MaskedLinear layer;
    layer.cfg = cfg;
    layer.weight = randn(rng, {cfg.c_in, cfg.c_out}, 0.0, 1.0 / std::sqrt(static_cast<double>(cfg.c_in)), true);
    layer.bias = zeros({cfg.c_out}, true);
    for (int64_t k = 0; k < cfg.n_scores; ++k) {
        layer.scores.push_back(rand_uniform(rng, {cfg.c_in, cfg.c_out}, 0.0, 1.0, true));
    }
    layer.mapping = randn(rng, {n_languages, cfg.n_scores}, 0.0, 0.5, true);

    // Threshold for the learned rule: median over every language's initial
    // hard score sum, so the first masks are roughly half dense.
    std::vector<double> pool;
    pool.reserve(static_cast<size_t>(n_languages * cfg.c_in * cfg.c_out));
    for (int64_t l = 0; l < n_languages; ++l) {
        const double* row = layer.mapping->data.data() + l * cfg.n_scores;
        std::vector<double> s(static_cast<size_t>(cfg.c_in * cfg.c_out), 0.0);
        for (int64_t k = 0; k < cfg.n_scores; ++k) {
            if (row[k] <= 0.0) continue;
            const double* mk = layer.scores[static_cast<size_t>(k)]->data.data();
            for (size_t i = 0; i < s.size(); ++i) s[i] += mk[i];
        }
        pool.insert(pool.end(), s.begin(), s.end());
    }
    std::nth_element(pool.begin(), pool.begin() + pool.size() / 2, pool.end());
    layer.threshold = tensor({pool[pool.size() / 2]}, {1}, true);
    return layer;
}

}  // namespace maskasr
