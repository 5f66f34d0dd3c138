#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskasr/datagen.hpp"
#include "maskasr/model.hpp"
#include "maskasr/trainer.hpp"

namespace maskasr {

// Per-language feature vectors built from the mapping matrices, one set per
// depth segment ("part") of the encoder: result[part][lang] concatenates the
// language's mapping rows over the part's blocks, block-major, QKV row before
// projection row, so each vector has 2 * (n_blocks / n_parts) * K entries.
// Raw mapping values by default; `indicator` replaces them with the hard
// selection bits 1[T > 0], and `standardize` shifts/scales each vector to
// mean 0 and unit variance (constant vectors become all-zero, which the
// similarity code reports as undefined). Pure read: the model never changes.
std::vector<std::vector<std::vector<double>>> mapping_features(const EncoderModel& model,
                                                               int64_t n_parts,
                                                               bool indicator = false,
                                                               bool standardize = false);

// Pairwise cosine similarities over one part's feature vectors. Entries
// touching a zero-norm vector are NaN rather than a made-up number; the
// per-language flags say which rows those are.
struct SimilarityPart {
    int64_t n_languages = 0;
    std::vector<double> matrix;      // n_languages^2, row-major, NaN = undefined
    std::vector<uint8_t> zero_norm;  // 1 where the language's features have norm 0

    double at(int64_t a, int64_t b) const { return matrix[(size_t)(a * n_languages + b)]; }
};

SimilarityPart cosine_similarity_matrix(const std::vector<std::vector<double>>& features);

// Language-similarity study over a whole model: languages are reordered so
// family members sit next to each other, and every depth segment gets its own
// cosine matrix. Defined entries are symmetric to 1e-12 with a unit diagonal.
struct SimilarityReport {
    std::vector<std::string> languages;  // grouped by family
    std::vector<int64_t> families;       // family label per entry of `languages`
    int64_t n_parts = 0;
    int64_t blocks_per_part = 0;
    std::vector<int64_t> part_first_block;  // first block index of each part
    std::vector<SimilarityPart> parts;
};

// family_of_language is indexed by the model's language index.
SimilarityReport similarity_report(const EncoderModel& model,
                                   const std::vector<int64_t>& family_of_language, int64_t n_parts,
                                   bool indicator = false, bool standardize = false);

// One part as CSV: header row of language tags, then one labelled row per
// language. Undefined entries serialize as empty cells.
std::string similarity_csv(const SimilarityReport& report, int64_t part);

// Within-family versus cross-family similarity, per part and pooled over all
// parts, with a one-sided permutation test (family labels shuffled, p =
// (1 + #{permuted gap >= observed}) / (1 + permutations)).
struct FamilyContrast {
    std::vector<double> gap;      // per part: mean within - mean cross
    std::vector<double> p_value;  // per part
    double overall_gap = 0.0;     // all parts pooled
    double overall_p = 1.0;
};

FamilyContrast family_contrast(const SimilarityReport& report, int64_t permutations = 1000,
                               uint64_t seed = 1);

// Stability diagnostics over recorded mapping snapshots: the spread of the
// mapping entries at each update and how often the hard selections 1[T > 0]
// flip between consecutive updates.
struct CollapseReport {
    std::vector<double> std_per_update;  // population std of each snapshot
    std::vector<double> switch_rate;     // one per consecutive pair, in [0, 1]
    double mean_std = 0.0;
    double mean_switch_rate = 0.0;
};

CollapseReport collapse_metrics(const std::vector<std::vector<double>>& t_history);

// One grid point of a sweep: the axis value as written, one mean dev CER per
// seed, and their mean.
struct AblationRow {
    std::string value;
    std::vector<double> per_seed_cer;
    double mean_cer = 0.0;
};

struct AblationTable {
    std::string axis;
    std::vector<uint64_t> seeds;
    std::vector<AblationRow> rows;
};

// Applies one grid value of a sweep axis to the configuration pair. Axes:
//   t             mask sparsity (double)
//   K             score tensors per layer (integer)
//   alpha_beta    "A:B" pair - mapping lr multiplier and update period
//   gamma         weight/score alternation half-period (integer)
//   mask_variant  binarization rule name (topk / thres / learned)
//   weight_update strategy name (iter / freeze / random)
void apply_ablation_value(const std::string& axis, const std::string& value, EncoderConfig& enc,
                          TrainConfig& train);

// Trains one model per (grid value, seed) on the corpus, sharing seeds across
// grid values, and tabulates the final mean dev CERs. Identical inputs give
// identical tables.
AblationTable ablation_sweep(const std::string& axis, const std::vector<std::string>& grid,
                             const EncoderConfig& enc_base, const TrainConfig& train_base,
                             const CorpusSet& corpus, const std::vector<uint64_t>& seeds);

// CSV with one row per grid value: value, one CER column per seed, mean.
std::string ablation_csv(const AblationTable& table);

}  // namespace maskasr
