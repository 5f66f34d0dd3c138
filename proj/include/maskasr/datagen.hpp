#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskasr/ctc.hpp"
#include "maskasr/rng.hpp"
#include "maskasr/tensor.hpp"

namespace maskasr {

struct DatagenConfig {
    int64_t feature_dim = 16;
    int64_t family_pool = 12;   // symbol prototypes per family
    int64_t lang_vocab = 8;     // symbols per language
    int64_t core_share = 5;     // pool symbols every family member carries
    int64_t min_frames_per_symbol = 2;
    int64_t max_frames_per_symbol = 4;
    int64_t min_utt_symbols = 4;
    int64_t max_utt_symbols = 10;
    double noise_scale = 0.1;        // per-frame gaussian noise
    double perturb_scale = 0.25;     // per-language symbol offset draw scale
    double min_prototype_dist = 2.2; // enforced pairwise floor within a family
    void validate() const;
};

struct FamilySpec {
    int64_t id = 0;
    std::vector<double> prototypes;  // [family_pool, feature_dim], row-major
    double min_pairwise_dist = 0.0;  // measured after placement
};

struct LanguageSpec {
    std::string tag;
    int64_t family = 0;
    std::vector<int> vocab;       // global symbol ids, lang_vocab entries
    std::vector<double> perturb;  // [lang_vocab, feature_dim] symbol offsets
};

struct Utterance {
    TensorPtr features;    // [frames, feature_dim]
    Transcript transcript;  // global symbol ids
    std::string language;
};

struct World {
    DatagenConfig cfg;
    uint64_t seed = 0;
    std::vector<FamilySpec> families;
    std::vector<LanguageSpec> languages;
    int64_t n_symbols() const { return static_cast<int64_t>(families.size()) * cfg.family_pool; }
    int64_t language_index(const std::string& tag) const;
};

// Deterministic world: n_families * langs_per_family languages. Within a
// family every language carries the same `core_share` pool symbols plus a
// random remainder, so family members overlap on >= core/vocab of their
// vocabulary while cross-family overlap is zero. Per-language perturbation
// vectors are norm-capped below half the family's prototype distance so
// symbols stay linearly separable.
World build_world(int64_t n_families, int64_t langs_per_family, uint64_t seed,
                  const DatagenConfig& cfg = {});

// n_utts utterances for one language; fully determined by (world, lang, seed).
std::vector<Utterance> sample_corpus(const World& world, int64_t lang_index, int64_t n_utts,
                                     uint64_t seed);

// Adds low-resource languages after stage-A training data exists. With
// fresh_family=false they join existing families round-robin (adaptable
// case); otherwise each goes into one newly created family (hard case).
// Returns the new language indices.
std::vector<int64_t> add_low_resource_languages(World& world, int64_t n_new, bool fresh_family,
                                                uint64_t seed);

// Stress preset: n_dup languages appended to `family` that are near-copies of
// its first member — same vocabulary, perturbations offset by only dup_scale.
std::vector<int64_t> add_near_duplicate_languages(World& world, int64_t family, int64_t n_dup,
                                                  double dup_scale, uint64_t seed);

// Default corpus sizes.
inline constexpr int64_t kStageATrainUtts = 512;
inline constexpr int64_t kStageAEvalUtts = 128;
inline constexpr int64_t kLowResTrainUtts = 86;  // ~1/6 of a stage-A corpus
inline constexpr int64_t kLowResEvalUtts = 32;

// A corpus on disk / in memory: per-language train and eval splits plus the
// metadata needed to train against it.
struct LanguageCorpus {
    std::string tag;
    int64_t family = 0;
    std::vector<int> vocab;  // global symbol ids of this language
    std::vector<Utterance> train;
    std::vector<Utterance> dev;
};

struct CorpusSet {
    uint64_t seed = 0;
    int64_t feature_dim = 0;
    int64_t n_symbols = 0;  // union vocabulary size (shared head coverage)
    std::vector<LanguageCorpus> languages;
    int64_t language_index(const std::string& tag) const;
};

// Samples train/dev splits for the given languages from disjoint seed
// streams.
CorpusSet make_corpus_set(const World& world, const std::vector<int64_t>& langs,
                          int64_t train_utts, int64_t eval_utts);

// Directory format: `corpus.manifest` (text) plus one `<tag>.<split>.bin` per
// language and split. Each binary record is [frame_count u32][feature_dim
// u32][frames*dim float64 LE][transcript_len u32][ids i32 LE...].
void save_corpus_set(const std::string& dir, const CorpusSet& set);
CorpusSet load_corpus_set(const std::string& dir);

}  // namespace maskasr
