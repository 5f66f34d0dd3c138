#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "maskasr/datagen.hpp"
#include "maskasr/model.hpp"

namespace maskasr {

// Strategy for the shared weights of a multilingual run: alternate weight and
// score updates (kIter), never touch the weights (kFreeze), or update a fixed
// random subset of each weight tensor every iteration (kRandom).
enum class WeightUpdate { kIter, kFreeze, kRandom };

// Reference configurations trained with the same loop: a plain dense model
// shared across languages, one independent dense model per language, or a
// single shared mask for every language.
enum class Baseline { kNone, kSharedWeight, kSeparateWeight, kSingleMask };

const char* weight_update_name(WeightUpdate w);
WeightUpdate weight_update_from_name(const std::string& name);
const char* baseline_name(Baseline b);
Baseline baseline_from_name(const std::string& name);

// Optimization settings for one stage. Mask shape parameters (sparsity, score
// count, rule) live on EncoderConfig; this struct owns everything about the
// update loop. The same struct drives multilingual training, low-resource
// adaptation and mask fine-tuning; fields that do not apply to a stage are
// ignored there (alpha/beta/gamma and the baselines are stage-A concepts).
struct TrainConfig {
    int64_t iterations = 6000;
    int64_t batch_size = 4;
    // Peak learning rate of the tri-stage schedule for every group except the
    // mapping matrices, which train at alpha times this.
    double base_lr = 1e-3;
    double warmup_frac = 0.10;
    double hold_frac = 0.40;
    double decay_frac = 0.50;
    double final_lr_ratio = 0.05;  // lr at the last iteration / peak
    double alpha = 10.0;           // mapping learning-rate multiplier
    int64_t beta = 5;              // mapping update period, iterations
    int64_t gamma = 500;           // weight/score alternation half-period
    WeightUpdate weight_update = WeightUpdate::kIter;
    Baseline baseline = Baseline::kNone;
    // kRandom only: redraw the update subsets every iteration instead of
    // fixing them at start.
    bool resample_update_masks = false;
    double clip_norm = 5.0;    // global gradient-norm clip; 0 disables
    int64_t eval_interval = 1000;  // iterations between interim evals; 0 = none
    int64_t eval_subset = 32;  // dev utterances per interim eval; 0 = all
    // Record the mapping matrices every Nth mapping update (for the collapse
    // diagnostics); 0 disables recording.
    int64_t t_history_interval = 1;
    double adapt_phase1_frac = 0.10;  // head-only fraction of adaptation
    uint64_t seed = 1;

    void validate() const;
};

// Tri-stage learning rate (linear warmup, hold, exponential decay down to
// base_lr * final_lr_ratio at the last iteration). Mapping matrices use alpha
// times the schedule.
double lr_at(const TrainConfig& cfg, int64_t iter, bool mapping_group);

// Whether `group` receives an optimizer step at `iter` during multilingual
// training. Mapping matrices update every beta iterations; with kIter the
// alternation phase p = iter / gamma updates scores on even p and weights on
// odd p (masks adapt to the inherited weights first); biases and heads always
// update.
bool update_gate(const TrainConfig& cfg, int64_t iter, ParamSelector group);

// One line of the metrics log. Training rows carry a loss, eval rows a CER;
// the unused field of either kind is NaN and serialized as an empty cell.
struct MetricRow {
    std::string kind;  // "train" or "eval"
    int64_t iter = 0;
    int64_t phase = 0;
    std::string language;
    double loss = 0.0;
    double lr_other = 0.0;
    double lr_t = 0.0;
    double cer = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricRow& row);
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

// Adam with per-parameter moments and step counters. Parameters belong to
// named groups; a step touches only gated groups, and skipped groups keep
// moments, counters and values bit-identical. An optional 0/1 mask freezes
// individual entries (their moments stay zero, so the update adds exactly
// 0.0).
class AdamOptimizer {
  public:
    AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Returns the entry index (used by set_mask). The tensor must require
    // gradients; `mask` is either empty (train every entry) or one 0/1 flag
    // per entry.
    int64_t add_parameter(const TensorPtr& p, ParamSelector group, std::vector<double> mask = {});
    void add_parameters(const std::vector<TensorPtr>& ps, ParamSelector group);
    void set_mask(int64_t entry, std::vector<double> mask);

    // Masks gradients, clips their global norm over the gated groups (when
    // clip_norm > 0), then applies one Adam update to every gated group.
    // Returns the pre-clip gradient norm.
    double step(const std::function<bool(ParamSelector)>& gate,
                const std::function<double(ParamSelector)>& lr, double clip_norm);
    void zero_grads();

    int64_t parameter_count() const;   // scalars across all entries
    int64_t trainable_scalars() const;  // scalars not frozen by masks
    int64_t entries() const { return static_cast<int64_t>(entries_.size()); }

  private:
    struct Entry {
        TensorPtr p;
        ParamSelector group;
        std::vector<double> m, v;
        std::vector<double> mask;  // empty = all trainable
        int64_t steps = 0;
    };
    double beta1_, beta2_, eps_;
    std::vector<Entry> entries_;
};

// Global symbol ids -> positions in a language's sorted vocabulary (the id
// space of a per-language head). Fails on symbols outside the vocabulary.
Transcript to_local_ids(const Transcript& global_ids, const std::vector<int>& vocab);

// 0/1 vector with exactly `ones` ones at uniformly drawn positions; the
// kRandom strategy uses one per backbone tensor with ones =
// mask_one_count(sparsity, size).
std::vector<double> random_update_mask(Rng& rng, int64_t size, int64_t ones);

// Greedy-decode CER over a language's dev utterances (micro-averaged), with
// detached weights and no graph. Reference ids are translated to the head's
// local alphabet unless the head covers `n_symbols` global ids. max_utts
// limits the dev subset (0 = all).
double eval_language_cer(EncoderModel& model, const LanguageCorpus& lc, int64_t n_symbols,
                         int64_t max_utts = 0);

struct TrainResult {
    std::vector<MetricRow> metrics;
    std::map<std::string, double> initial_cer;  // full-dev CER before training
    std::map<std::string, double> final_cer;    // full-dev CER after training
    double mean_initial_cer = 0.0;
    double mean_final_cer = 0.0;
    // Flattened mapping matrices (block-major, QKV then projection) recorded
    // after mapping updates; empty when the model has no trainable mapping.
    std::vector<std::vector<double>> t_history;
    int64_t iterations_run = 0;
};

// Multilingual CTC training with round-robin language batching. Every corpus
// language must be registered in the model. baseline=kSharedWeight requires a
// dense model; kSingleMask switches the model's layers to single-mask form;
// kSeparateWeight has no shared model and lives in train_separate_weight.
TrainResult train_multilingual(EncoderModel& model, const CorpusSet& corpus,
                               const TrainConfig& cfg);

// The separate-weight baseline: one independent dense model per language,
// each trained on its own corpus for iterations / n_languages steps.
struct SeparateWeightRun {
    std::vector<EncoderModel> models;  // aligned with corpus.languages
    TrainResult result;
};
SeparateWeightRun train_separate_weight(const EncoderConfig& enc_cfg, const CorpusSet& corpus,
                                        const TrainConfig& cfg);

struct AdaptResult {
    int64_t language = -1;
    int64_t head = -1;
    double initial_cer = 0.0;  // untrained head, before any update
    double final_cer = 0.0;
    int64_t trainable_scalars = 0;
    std::vector<MetricRow> metrics;
};

// Low-resource adaptation: registers corpus.tag as a new language (one fresh
// mapping row per masked layer, a private bias overlay, its own head) and
// trains only those additions; every pre-existing parameter is untouched, so
// stage-A outputs stay bit-identical. Phase 1 (the first adapt_phase1_frac of
// the iterations) trains the head alone; phase 2 adds the new mapping rows
// (at the plain learning rate) and the overlay biases. alpha/beta/gamma and
// weight_update do not apply to this stage.
AdaptResult adapt_low_resource(EncoderModel& model, const LanguageCorpus& corpus,
                               const TrainConfig& cfg);

struct MaskFtResult {
    double before_cer = 0.0;
    double after_cer = 0.0;
    std::vector<MetricRow> metrics;
};

// Further mask fine-tuning for an adapted language: copies its assembled
// score sums into dedicated trainable score tensors (mask bits unchanged
// until the first update) and tunes those plus the language's head and bias
// overlay. Shared parameters stay frozen.
MaskFtResult further_mask_ft(EncoderModel& model, const LanguageCorpus& corpus,
                             const TrainConfig& cfg);

// Backbone-reuse comparison: single-mask tuning per target language on the
// trained backbone versus a randomly initialized one of identical shape.
// cer[b][l] is the final dev CER of backbone b on language l.
struct ReuseReport {
    std::vector<std::string> backbones;  // {"trained", "random"}
    std::vector<std::string> languages;
    std::vector<std::vector<double>> cer;
};
ReuseReport backbone_reuse_experiment(const EncoderModel& trained,
                                      const std::vector<LanguageCorpus>& targets,
                                      const TrainConfig& cfg);

}  // namespace maskasr
