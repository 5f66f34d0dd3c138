#include "maskasr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "maskasr/common.hpp"
#include "maskasr/rng.hpp"

namespace maskasr {

namespace {

std::string csv_cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

double population_std(const std::vector<double>& v) {
    const double n = (double)v.size();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / n);
}

// (a, b, similarity) for every defined pair a < b of one part.
struct Pair {
    int64_t a, b;
    double sim;
};

std::vector<Pair> defined_pairs(const SimilarityPart& part) {
    std::vector<Pair> out;
    for (int64_t a = 0; a < part.n_languages; ++a) {
        for (int64_t b = a + 1; b < part.n_languages; ++b) {
            const double s = part.at(a, b);
            if (!std::isnan(s)) out.push_back({a, b, s});
        }
    }
    return out;
}

// Mean within-family minus mean cross-family similarity under the given
// labels. Returns false when either side has no pairs (gap undefined).
bool contrast_gap(const std::vector<Pair>& pairs, const std::vector<int64_t>& labels,
                  double* gap) {
    double within = 0.0, cross = 0.0;
    int64_t n_within = 0, n_cross = 0;
    for (const auto& p : pairs) {
        if (labels[(size_t)p.a] == labels[(size_t)p.b]) {
            within += p.sim;
            ++n_within;
        } else {
            cross += p.sim;
            ++n_cross;
        }
    }
    if (n_within == 0 || n_cross == 0) return false;
    *gap = within / (double)n_within - cross / (double)n_cross;
    return true;
}

double parse_double_value(const std::string& axis, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || !std::isfinite(v)) {
        fail(ErrorCode::kConfig, "invalid value '%s' for sweep axis %s", value.c_str(),
             axis.c_str());
    }
    return v;
}

int64_t parse_int_value(const std::string& axis, const std::string& value) {
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0') {
        fail(ErrorCode::kConfig, "invalid value '%s' for sweep axis %s", value.c_str(),
             axis.c_str());
    }
    return v;
}

}  // namespace

std::vector<std::vector<std::vector<double>>> mapping_features(const EncoderModel& model,
                                                               int64_t n_parts, bool indicator,
                                                               bool standardize) {
    if (model.cfg.dense_layers) {
        fail(ErrorCode::kConfig, "a dense model has no mapping matrices to analyze");
    }
    const int64_t n_blocks = (int64_t)model.blocks.size();
    if (n_parts < 1 || n_blocks % n_parts != 0) {
        fail(ErrorCode::kInvalidArg, "cannot split %lld blocks into %lld equal parts",
             (long long)n_blocks, (long long)n_parts);
    }
    const int64_t blocks_per_part = n_blocks / n_parts;
    const int64_t n_langs = model.n_languages();

    std::vector<std::vector<std::vector<double>>> parts((size_t)n_parts);
    for (int64_t part = 0; part < n_parts; ++part) {
        auto& features = parts[(size_t)part];
        features.assign((size_t)n_langs, {});
        for (int64_t l = 0; l < n_langs; ++l) {
            auto& f = features[(size_t)l];
            for (int64_t b = part * blocks_per_part; b < (part + 1) * blocks_per_part; ++b) {
                const Block& blk = model.blocks[(size_t)b];
                for (const MaskedLinear* layer : {&blk.qkv, &blk.proj}) {
                    const int64_t k_scores = layer->mapping->shape[1];
                    if (l >= layer->mapping->shape[0]) {
                        fail(ErrorCode::kState, "mapping of block %lld misses language %lld",
                             (long long)b, (long long)l);
                    }
                    const double* row = layer->mapping->data.data() + l * k_scores;
                    for (int64_t k = 0; k < k_scores; ++k) {
                        f.push_back(indicator ? (row[k] > 0.0 ? 1.0 : 0.0) : row[k]);
                    }
                }
            }
            if (standardize) {
                // A constant vector has no direction after centering; detect
                // it exactly, since rounding in the mean would otherwise turn
                // the residuals into +-1 noise.
                const bool constant =
                    std::all_of(f.begin(), f.end(), [&](double x) { return x == f.front(); });
                const double mean = std::accumulate(f.begin(), f.end(), 0.0) / (double)f.size();
                const double sd = population_std(f);
                for (double& x : f) x = !constant && sd > 0.0 ? (x - mean) / sd : 0.0;
            }
        }
    }
    return parts;
}

SimilarityPart cosine_similarity_matrix(const std::vector<std::vector<double>>& features) {
    const int64_t n = (int64_t)features.size();
    if (n < 2) fail(ErrorCode::kInvalidArg, "similarity needs at least two languages");
    for (const auto& f : features) {
        if (f.size() != features[0].size() || f.empty()) {
            fail(ErrorCode::kShape, "feature vectors must share one non-zero length");
        }
    }

    SimilarityPart part;
    part.n_languages = n;
    part.matrix.assign((size_t)(n * n), 0.0);
    part.zero_norm.assign((size_t)n, 0);

    std::vector<double> norm((size_t)n, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (double x : features[(size_t)i]) ss += x * x;
        norm[(size_t)i] = std::sqrt(ss);
        part.zero_norm[(size_t)i] = norm[(size_t)i] == 0.0;
    }

    for (int64_t a = 0; a < n; ++a) {
        for (int64_t b = a; b < n; ++b) {
            double value;
            if (part.zero_norm[(size_t)a] || part.zero_norm[(size_t)b]) {
                value = std::nan("");
            } else {
                double dot = 0.0;
                for (size_t k = 0; k < features[(size_t)a].size(); ++k) {
                    dot += features[(size_t)a][k] * features[(size_t)b][k];
                }
                value = dot / (norm[(size_t)a] * norm[(size_t)b]);
            }
            part.matrix[(size_t)(a * n + b)] = value;
            part.matrix[(size_t)(b * n + a)] = value;
        }
    }
    return part;
}

SimilarityReport similarity_report(const EncoderModel& model,
                                   const std::vector<int64_t>& family_of_language, int64_t n_parts,
                                   bool indicator, bool standardize) {
    const int64_t n_langs = model.n_languages();
    if ((int64_t)family_of_language.size() != n_langs) {
        fail(ErrorCode::kShape, "expected one family label per language (%lld), got %zu",
             (long long)n_langs, family_of_language.size());
    }

    const auto features = mapping_features(model, n_parts, indicator, standardize);

    // Group languages by family, keeping the model order within a family.
    std::vector<int64_t> order((size_t)n_langs);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return family_of_language[(size_t)a] < family_of_language[(size_t)b];
    });

    SimilarityReport report;
    report.n_parts = n_parts;
    report.blocks_per_part = (int64_t)model.blocks.size() / n_parts;
    for (int64_t p = 0; p < n_parts; ++p) {
        report.part_first_block.push_back(p * report.blocks_per_part);
    }
    for (int64_t idx : order) {
        report.languages.push_back(model.language_tags[(size_t)idx]);
        report.families.push_back(family_of_language[(size_t)idx]);
    }
    for (const auto& part_features : features) {
        std::vector<std::vector<double>> reordered;
        reordered.reserve((size_t)n_langs);
        for (int64_t idx : order) reordered.push_back(part_features[(size_t)idx]);
        report.parts.push_back(cosine_similarity_matrix(reordered));
    }
    return report;
}

std::string similarity_csv(const SimilarityReport& report, int64_t part) {
    if (part < 0 || part >= (int64_t)report.parts.size()) {
        fail(ErrorCode::kInvalidArg, "part %lld out of range (%zu parts)", (long long)part,
             report.parts.size());
    }
    const SimilarityPart& m = report.parts[(size_t)part];
    std::string out = "language";
    for (const auto& tag : report.languages) out += "," + tag;
    out += "\n";
    for (int64_t a = 0; a < m.n_languages; ++a) {
        out += report.languages[(size_t)a];
        for (int64_t b = 0; b < m.n_languages; ++b) out += "," + csv_cell(m.at(a, b));
        out += "\n";
    }
    return out;
}

FamilyContrast family_contrast(const SimilarityReport& report, int64_t permutations,
                               uint64_t seed) {
    if (permutations < 1) fail(ErrorCode::kInvalidArg, "need at least one permutation");
    if (report.parts.empty()) fail(ErrorCode::kInvalidArg, "report has no similarity parts");
    const int64_t n_langs = (int64_t)report.languages.size();
    std::vector<int64_t> distinct = report.families;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) fail(ErrorCode::kInvalidArg, "contrast needs at least two families");

    std::vector<std::vector<Pair>> pairs;
    std::vector<Pair> pooled;
    for (const auto& part : report.parts) {
        pairs.push_back(defined_pairs(part));
        pooled.insert(pooled.end(), pairs.back().begin(), pairs.back().end());
    }

    FamilyContrast out;
    for (const auto& part_pairs : pairs) {
        double gap;
        if (!contrast_gap(part_pairs, report.families, &gap)) {
            fail(ErrorCode::kData, "no defined within-family or cross-family pairs");
        }
        out.gap.push_back(gap);
    }
    double observed_overall;
    if (!contrast_gap(pooled, report.families, &observed_overall)) {
        fail(ErrorCode::kData, "no defined within-family or cross-family pairs");
    }
    out.overall_gap = observed_overall;

    // One-sided test: how often do shuffled family labels reach the observed
    // gap? Arrangements whose gap is undefined (possible when undefined
    // similarity entries starve one side) count against the hypothesis.
    std::vector<int64_t> exceed((size_t)report.parts.size(), 0);
    int64_t exceed_overall = 0;
    Rng rng(seed_stream(seed, "analysis/permutation"));
    for (int64_t p = 0; p < permutations; ++p) {
        const auto perm = rng.permutation(n_langs);
        std::vector<int64_t> shuffled((size_t)n_langs);
        for (int64_t i = 0; i < n_langs; ++i) {
            shuffled[(size_t)i] = report.families[(size_t)perm[(size_t)i]];
        }
        for (size_t q = 0; q < pairs.size(); ++q) {
            double gap;
            if (!contrast_gap(pairs[q], shuffled, &gap) || gap >= out.gap[q]) ++exceed[q];
        }
        double gap;
        if (!contrast_gap(pooled, shuffled, &gap) || gap >= out.overall_gap) ++exceed_overall;
    }
    for (size_t q = 0; q < pairs.size(); ++q) {
        out.p_value.push_back((1.0 + (double)exceed[q]) / (1.0 + (double)permutations));
    }
    out.overall_p = (1.0 + (double)exceed_overall) / (1.0 + (double)permutations);
    return out;
}

CollapseReport collapse_metrics(const std::vector<std::vector<double>>& t_history) {
    if (t_history.size() < 2) {
        fail(ErrorCode::kInvalidArg, "collapse metrics need at least two mapping snapshots");
    }
    for (const auto& snap : t_history) {
        if (snap.size() != t_history[0].size() || snap.empty()) {
            fail(ErrorCode::kShape, "mapping snapshots must share one non-zero length");
        }
    }

    CollapseReport out;
    for (const auto& snap : t_history) out.std_per_update.push_back(population_std(snap));
    for (size_t i = 0; i + 1 < t_history.size(); ++i) {
        const auto& a = t_history[i];
        const auto& b = t_history[i + 1];
        int64_t flips = 0;
        for (size_t k = 0; k < a.size(); ++k) flips += (a[k] > 0.0) != (b[k] > 0.0);
        out.switch_rate.push_back((double)flips / (double)a.size());
    }
    out.mean_std = std::accumulate(out.std_per_update.begin(), out.std_per_update.end(), 0.0) /
                   (double)out.std_per_update.size();
    out.mean_switch_rate =
        std::accumulate(out.switch_rate.begin(), out.switch_rate.end(), 0.0) /
        (double)out.switch_rate.size();
    return out;
}

void apply_ablation_value(const std::string& axis, const std::string& value, EncoderConfig& enc,
                          TrainConfig& train) {
    if (axis == "t") {
        enc.sparsity = parse_double_value(axis, value);
    } else if (axis == "K") {
        enc.n_scores = parse_int_value(axis, value);
    } else if (axis == "alpha_beta") {
        const auto colon = value.find(':');
        if (colon == std::string::npos) {
            fail(ErrorCode::kConfig, "alpha_beta values use the form alpha:beta, got '%s'",
                 value.c_str());
        }
        train.alpha = parse_double_value(axis, value.substr(0, colon));
        train.beta = parse_int_value(axis, value.substr(colon + 1));
    } else if (axis == "gamma") {
        train.gamma = parse_int_value(axis, value);
    } else if (axis == "mask_variant") {
        try {
            enc.rule = mask_rule_from_name(value);
        } catch (const Error&) {
            fail(ErrorCode::kConfig, "invalid value '%s' for sweep axis mask_variant",
                 value.c_str());
        }
    } else if (axis == "weight_update") {
        train.weight_update = weight_update_from_name(value);
    } else {
        fail(ErrorCode::kConfig,
             "unknown sweep axis '%s' (expected t|K|alpha_beta|gamma|mask_variant|weight_update)",
             axis.c_str());
    }
}

AblationTable ablation_sweep(const std::string& axis, const std::vector<std::string>& grid,
                             const EncoderConfig& enc_base, const TrainConfig& train_base,
                             const CorpusSet& corpus, const std::vector<uint64_t>& seeds) {
    if (grid.empty()) fail(ErrorCode::kInvalidArg, "sweep grid is empty");
    if (seeds.empty()) fail(ErrorCode::kInvalidArg, "sweep needs at least one seed");

    std::vector<std::string> tags;
    for (const auto& lc : corpus.languages) tags.push_back(lc.tag);

    AblationTable table;
    table.axis = axis;
    table.seeds = seeds;
    for (const auto& value : grid) {
        EncoderConfig enc = enc_base;
        TrainConfig train = train_base;
        apply_ablation_value(axis, value, enc, train);
        enc.validate();
        train.validate();

        AblationRow row;
        row.value = value;
        for (uint64_t seed : seeds) {
            train.seed = seed;
            Rng model_rng(seed_stream(seed, "model"));
            EncoderModel model = make_encoder(enc, tags, corpus.n_symbols, model_rng);
            TrainResult result = train_multilingual(model, corpus, train);
            row.per_seed_cer.push_back(result.mean_final_cer);
        }
        row.mean_cer = std::accumulate(row.per_seed_cer.begin(), row.per_seed_cer.end(), 0.0) /
                       (double)row.per_seed_cer.size();
        table.rows.push_back(row);
    }
    return table;
}

std::string ablation_csv(const AblationTable& table) {
    std::string out = table.axis;
    for (uint64_t seed : table.seeds) out += ",seed_" + std::to_string(seed);
    out += ",mean_cer\n";
    for (const auto& row : table.rows) {
        out += row.value;
        for (double c : row.per_seed_cer) out += "," + csv_cell(c);
        out += "," + csv_cell(row.mean_cer) + "\n";
    }
    return out;
}

}  // namespace maskasr
