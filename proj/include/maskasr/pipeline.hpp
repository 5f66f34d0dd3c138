#pragma once

#include <string>
#include <vector>

#include "maskasr/config.hpp"

namespace maskasr {

// One subcommand body: reads the inputs named by the config, writes its
// artifacts under out_dir (created if missing), and reports the files written
// plus a short human-readable summary. All randomness derives from cfg.seed,
// so rerunning the same configuration reproduces every output byte for byte.
struct StepResult {
    std::vector<std::string> outputs;  // files written, in a fixed order
    std::string summary;               // human-readable, newline-terminated
};

// Builds the synthetic world and writes the stage-A corpus (and, when
// data.low_res_languages > 0, the low-resource corpus) as corpus directories.
StepResult run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

// Trains on paths.corpus and writes checkpoint.bin, train_metrics.csv and
// (for models with a trainable mapping) t_history.csv. The separate-weight
// baseline writes one checkpoint per language instead.
StepResult run_train(const ExperimentConfig& cfg, const std::string& out_dir);

// Adapts every language of paths.low_res_corpus onto the checkpoint at
// paths.checkpoint, optionally followed by dedicated-mask fine-tuning
// (adapt.mask_ft_iterations > 0), and writes the grown checkpoint plus
// adapt_metrics.csv.
StepResult run_adapt(const ExperimentConfig& cfg, const std::string& out_dir);

// Greedy-decode CER of the checkpoint over paths.corpus (eval.language
// restricts to one tag, eval.split picks the split) -> eval_report.csv.
StepResult run_eval(const ExperimentConfig& cfg, const std::string& out_dir);

// Ablation sweep over ablate.axis / ablate.grid on paths.corpus ->
// ablation_<axis>.csv.
StepResult run_ablate(const ExperimentConfig& cfg, const std::string& out_dir);

// Mapping-similarity study of the checkpoint: per-part cosine matrices,
// family-contrast permutation test (family labels come from the corpus
// manifests), and mapping-stability metrics when paths.t_history is set.
StepResult run_analyze(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace maskasr
