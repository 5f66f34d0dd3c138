#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maskasr/datagen.hpp"
#include "maskasr/model.hpp"
#include "maskasr/trainer.hpp"

namespace maskasr {

// Every knob of the toolkit as one flat document of `namespace.key = value`
// lines. `#` starts a comment, blank lines are ignored, unknown or duplicate
// keys are rejected, and every key has the default shown in the struct
// initializers. Two fields are derived rather than configured: the encoder's
// input feature dimension follows data.feature_dim, and trainer.seed / the
// sweep worker seeds follow the top-level seed unless ablate.seeds is set.
struct ExperimentConfig {
    uint64_t seed = 1;

    // data.*: world shape, corpus sizes and the generator's knobs.
    int64_t families = 2;
    int64_t langs_per_family = 4;
    int64_t train_utts = kStageATrainUtts;
    int64_t eval_utts = kStageAEvalUtts;
    int64_t low_res_languages = 2;
    bool low_res_fresh_family = false;
    int64_t low_res_train_utts = kLowResTrainUtts;
    int64_t low_res_eval_utts = kLowResEvalUtts;
    DatagenConfig datagen;

    // model.*
    EncoderConfig encoder;

    // trainer.*
    TrainConfig trainer;

    // adapt.*: the adaptation stage reuses the trainer schedule shape but
    // owns its own budget; mask_ft_iterations > 0 appends the dedicated-mask
    // fine-tuning pass.
    int64_t adapt_iterations = 1000;
    int64_t adapt_batch_size = 4;
    double adapt_base_lr = 1e-3;
    double adapt_phase1_frac = 0.10;
    int64_t mask_ft_iterations = 0;

    // eval.*
    std::string eval_language;  // empty = every language of the corpus
    std::string eval_split = "dev";

    // ablate.*
    std::string ablate_axis = "t";
    std::vector<std::string> ablate_grid = {"0.1", "0.3", "0.5", "0.7"};
    std::vector<uint64_t> ablate_seeds;  // empty = {seed, seed+1, seed+2}

    // analyze.*
    int64_t analyze_n_parts = 4;
    bool analyze_indicator = false;
    bool analyze_standardize = false;
    int64_t analyze_permutations = 1000;

    // paths.*: inputs consumed by the subcommands.
    std::string corpus_path;
    std::string low_res_corpus_path;
    std::string checkpoint_path;
    std::string t_history_path;

    // Cross-field checks plus the embedded structs' own validation.
    void validate() const;

    // The embedded structs with the derived fields applied.
    EncoderConfig encoder_config() const;  // input dim from data.feature_dim
    TrainConfig train_config() const;      // seed from the top-level seed

    // Trainer settings with the adapt.* budget applied.
    TrainConfig adapt_train_config() const;

    // Seeds for sweep workers: ablate.seeds, or three derived from `seed`.
    std::vector<uint64_t> sweep_seeds() const;

    // Canonical serialization: every key in documented order with the current
    // value, parseable by parse_config_text.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string to_text() const;
};

// Parses a config document. Values already present in `base` act as the
// defaults, so callers can layer files over the built-ins.
ExperimentConfig parse_config_text(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config_file(const std::string& path, const ExperimentConfig& base = {});

// Applies one `key = value` assignment (the parser's single-line form).
void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace maskasr
