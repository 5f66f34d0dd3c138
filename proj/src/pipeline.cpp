#include "maskasr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "maskasr/analysis.hpp"
#include "maskasr/checkpoint.hpp"
#include "maskasr/common.hpp"
#include "maskasr/datagen.hpp"
#include "maskasr/trainer.hpp"

namespace maskasr {

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        fail(ErrorCode::kIo, "cannot create directory %s: %s", dir.c_str(),
             ec.message().c_str());
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open %s for writing", path.c_str());
    out << content;
    if (!out) fail(ErrorCode::kIo, "failed writing %s", path.c_str());
}

// The corpus directory's files in the order save_corpus_set writes them.
std::vector<std::string> corpus_files(const std::string& dir, const CorpusSet& set) {
    std::vector<std::string> out = {dir + "/corpus.manifest"};
    for (const auto& lc : set.languages) {
        out.push_back(dir + "/" + lc.tag + ".train.bin");
        out.push_back(dir + "/" + lc.tag + ".dev.bin");
    }
    return out;
}

CorpusSet load_required_corpus(const std::string& path, const char* which) {
    if (path.empty()) fail(ErrorCode::kConfig, "paths.%s must name a corpus directory", which);
    return load_corpus_set(path);
}

// The encoder settings an experiment trains with: geometry from the config,
// input width from the data. A corpus generated under a different
// data.feature_dim than the current document is a configuration mistake, not
// something to paper over silently.
EncoderConfig encoder_for_corpus(const ExperimentConfig& cfg, const CorpusSet& corpus) {
    if (corpus.feature_dim != cfg.datagen.feature_dim) {
        fail(ErrorCode::kConfig,
             "corpus has feature dimension %lld but the config says data.feature_dim = %lld",
             (long long)corpus.feature_dim, (long long)cfg.datagen.feature_dim);
    }
    return cfg.encoder_config();
}

std::vector<std::string> corpus_tags(const CorpusSet& corpus) {
    std::vector<std::string> tags;
    for (const auto& lc : corpus.languages) tags.push_back(lc.tag);
    return tags;
}

std::string cer_table(const std::map<std::string, double>& by_language, double mean) {
    std::string out;
    for (const auto& [tag, cer] : by_language) {
        out += "  " + tag + ": cer " + format_double(cer) + "\n";
    }
    out += "  mean cer " + format_double(mean) + "\n";
    return out;
}

}  // namespace

StepResult run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    World world = build_world(cfg.families, cfg.langs_per_family,
                              seed_stream(cfg.seed, "world"), cfg.datagen);
    std::vector<int64_t> stage_a_langs((size_t)world.languages.size());
    std::iota(stage_a_langs.begin(), stage_a_langs.end(), 0);
    const CorpusSet stage_a =
        make_corpus_set(world, stage_a_langs, cfg.train_utts, cfg.eval_utts);
    const std::string corpus_dir = out_dir + "/corpus";
    save_corpus_set(corpus_dir, stage_a);
    for (const auto& f : corpus_files(corpus_dir, stage_a)) res.outputs.push_back(f);

    res.summary = "world: " + std::to_string(cfg.families) + " families, " +
                  std::to_string(world.languages.size()) + " stage-A languages, " +
                  std::to_string(world.n_symbols()) + " symbols\n" + "stage-A corpus: " +
                  std::to_string(cfg.train_utts) + " train / " + std::to_string(cfg.eval_utts) +
                  " dev utterances per language\n";

    if (cfg.low_res_languages > 0) {
        const auto new_langs =
            add_low_resource_languages(world, cfg.low_res_languages, cfg.low_res_fresh_family,
                                       seed_stream(cfg.seed, "low-res-world"));
        const CorpusSet low_res =
            make_corpus_set(world, new_langs, cfg.low_res_train_utts, cfg.low_res_eval_utts);
        const std::string low_dir = out_dir + "/low_res_corpus";
        save_corpus_set(low_dir, low_res);
        for (const auto& f : corpus_files(low_dir, low_res)) res.outputs.push_back(f);
        res.summary += "low-resource corpus: " + std::to_string(cfg.low_res_languages) +
                       " languages, " + std::to_string(cfg.low_res_train_utts) + " train / " +
                       std::to_string(cfg.low_res_eval_utts) + " dev utterances each\n";
    }
    return res;
}

StepResult run_train(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    const CorpusSet corpus = load_required_corpus(cfg.corpus_path, "corpus");
    const EncoderConfig enc = encoder_for_corpus(cfg, corpus);
    const TrainConfig tc = cfg.train_config();

    if (tc.baseline == Baseline::kSeparateWeight) {
        SeparateWeightRun run = train_separate_weight(enc, corpus, tc);
        for (size_t l = 0; l < run.models.size(); ++l) {
            const std::string path =
                out_dir + "/checkpoint_" + corpus.languages[l].tag + ".bin";
            save_checkpoint(path, run.models[l], cfg.entries());
            res.outputs.push_back(path);
        }
        const std::string metrics_path = out_dir + "/train_metrics.csv";
        write_metrics_csv(metrics_path, run.result.metrics);
        res.outputs.push_back(metrics_path);
        res.summary = "separate-weight baseline, " + std::to_string(tc.iterations) +
                      " total iterations\n" +
                      cer_table(run.result.final_cer, run.result.mean_final_cer);
        return res;
    }

    std::vector<std::string> tags = corpus_tags(corpus);
    Rng rng(seed_stream(cfg.seed, "model"));
    EncoderModel model = make_encoder(enc, tags, corpus.n_symbols, rng);
    const TrainResult tr = train_multilingual(model, corpus, tc);

    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    save_checkpoint(ckpt_path, model, cfg.entries());
    res.outputs.push_back(ckpt_path);
    const std::string metrics_path = out_dir + "/train_metrics.csv";
    write_metrics_csv(metrics_path, tr.metrics);
    res.outputs.push_back(metrics_path);
    if (!tr.t_history.empty()) {
        const std::string history_path = out_dir + "/t_history.csv";
        save_t_history_csv(history_path, tr.t_history);
        res.outputs.push_back(history_path);
    }

    res.summary = std::to_string(tr.iterations_run) + " iterations over " +
                  std::to_string(corpus.languages.size()) + " languages\n" +
                  "initial mean cer " + format_double(tr.mean_initial_cer) + "\n" +
                  cer_table(tr.final_cer, tr.mean_final_cer);
    return res;
}

StepResult run_adapt(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    if (cfg.checkpoint_path.empty()) {
        fail(ErrorCode::kConfig, "paths.checkpoint must name the stage-A checkpoint");
    }
    CheckpointData ckpt = load_checkpoint(cfg.checkpoint_path);
    const CorpusSet low_res = load_required_corpus(cfg.low_res_corpus_path, "low_res_corpus");
    if (low_res.feature_dim != ckpt.model.cfg.input_feature_dim) {
        fail(ErrorCode::kConfig,
             "low-resource corpus has feature dimension %lld but the checkpoint expects %lld",
             (long long)low_res.feature_dim, (long long)ckpt.model.cfg.input_feature_dim);
    }

    const TrainConfig ac = cfg.adapt_train_config();
    std::vector<MetricRow> metrics;
    for (const auto& lc : low_res.languages) {
        const AdaptResult ar = adapt_low_resource(ckpt.model, lc, ac);
        metrics.insert(metrics.end(), ar.metrics.begin(), ar.metrics.end());
        res.summary += lc.tag + ": cer " + format_double(ar.initial_cer) + " -> " +
                       format_double(ar.final_cer) + " (" +
                       std::to_string(ar.trainable_scalars) + " trainable values)\n";
        if (cfg.mask_ft_iterations > 0) {
            TrainConfig fc = ac;
            fc.iterations = cfg.mask_ft_iterations;
            const MaskFtResult fr = further_mask_ft(ckpt.model, lc, fc);
            metrics.insert(metrics.end(), fr.metrics.begin(), fr.metrics.end());
            res.summary += lc.tag + ": dedicated-mask fine-tune cer " +
                           format_double(fr.before_cer) + " -> " + format_double(fr.after_cer) +
                           "\n";
        }
    }

    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    save_checkpoint(ckpt_path, ckpt.model, cfg.entries());
    res.outputs.push_back(ckpt_path);
    const std::string metrics_path = out_dir + "/adapt_metrics.csv";
    write_metrics_csv(metrics_path, metrics);
    res.outputs.push_back(metrics_path);
    return res;
}

StepResult run_eval(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    if (cfg.checkpoint_path.empty()) {
        fail(ErrorCode::kConfig, "paths.checkpoint must name the checkpoint to evaluate");
    }
    CheckpointData ckpt = load_checkpoint(cfg.checkpoint_path);
    const CorpusSet corpus = load_required_corpus(cfg.corpus_path, "corpus");

    std::vector<const LanguageCorpus*> targets;
    for (const auto& lc : corpus.languages) {
        if (cfg.eval_language.empty() || lc.tag == cfg.eval_language) targets.push_back(&lc);
    }
    if (targets.empty()) {
        fail(ErrorCode::kUnknownLanguage, "corpus has no language tagged '%s'",
             cfg.eval_language.c_str());
    }

    std::string csv = "language,family,split,utterances,cer\n";
    std::map<std::string, double> by_language;
    double total = 0.0;
    size_t total_utts = 0;
    for (const LanguageCorpus* lc : targets) {
        // The registry check happens inside the model; an unknown tag is the
        // documented unknown-language error.
        LanguageCorpus view = *lc;
        if (cfg.eval_split == "train") view.dev = lc->train;
        const double cer = eval_language_cer(ckpt.model, view, corpus.n_symbols);
        by_language[lc->tag] = cer;
        total += cer;
        total_utts += view.dev.size();
        csv += lc->tag + "," + std::to_string(lc->family) + "," + cfg.eval_split + "," +
               std::to_string(view.dev.size()) + "," + format_double(cer) + "\n";
    }
    const double mean = total / (double)targets.size();
    csv += "mean,,," + std::to_string(total_utts) + "," + format_double(mean) + "\n";

    const std::string report_path = out_dir + "/eval_report.csv";
    write_text_file(report_path, csv);
    res.outputs.push_back(report_path);
    res.summary = "split " + cfg.eval_split + ", " + std::to_string(targets.size()) +
                  " language(s)\n" + cer_table(by_language, mean);
    return res;
}

StepResult run_ablate(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    const CorpusSet corpus = load_required_corpus(cfg.corpus_path, "corpus");
    const EncoderConfig enc = encoder_for_corpus(cfg, corpus);
    const AblationTable table = ablation_sweep(cfg.ablate_axis, cfg.ablate_grid, enc,
                                               cfg.train_config(), corpus, cfg.sweep_seeds());

    const std::string csv_path = out_dir + "/ablation_" + cfg.ablate_axis + ".csv";
    write_text_file(csv_path, ablation_csv(table));
    res.outputs.push_back(csv_path);

    res.summary = "axis " + table.axis + ", " + std::to_string(table.seeds.size()) + " seed(s)\n";
    for (const auto& row : table.rows) {
        res.summary +=
            "  " + table.axis + " = " + row.value + ": mean cer " + format_double(row.mean_cer) +
            "\n";
    }
    return res;
}

StepResult run_analyze(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    StepResult res;

    if (cfg.checkpoint_path.empty()) {
        fail(ErrorCode::kConfig, "paths.checkpoint must name the checkpoint to analyze");
    }
    CheckpointData ckpt = load_checkpoint(cfg.checkpoint_path);

    // Family labels live in the corpus manifests, not the checkpoint.
    std::map<std::string, int64_t> family_of_tag;
    const CorpusSet corpus = load_required_corpus(cfg.corpus_path, "corpus");
    for (const auto& lc : corpus.languages) family_of_tag[lc.tag] = lc.family;
    if (!cfg.low_res_corpus_path.empty()) {
        const CorpusSet low_res = load_corpus_set(cfg.low_res_corpus_path);
        for (const auto& lc : low_res.languages) family_of_tag[lc.tag] = lc.family;
    }
    std::vector<int64_t> families;
    for (const auto& tag : ckpt.model.language_tags) {
        const auto it = family_of_tag.find(tag);
        if (it == family_of_tag.end()) {
            fail(ErrorCode::kData,
                 "no corpus manifest declares the family of language '%s'; pass the corpus the "
                 "checkpoint was trained on",
                 tag.c_str());
        }
        families.push_back(it->second);
    }

    const SimilarityReport report =
        similarity_report(ckpt.model, families, cfg.analyze_n_parts, cfg.analyze_indicator,
                          cfg.analyze_standardize);
    for (int64_t part = 0; part < report.n_parts; ++part) {
        const std::string path = out_dir + "/similarity_part" + std::to_string(part) + ".csv";
        write_text_file(path, similarity_csv(report, part));
        res.outputs.push_back(path);
    }

    const FamilyContrast contrast =
        family_contrast(report, cfg.analyze_permutations, cfg.seed);
    std::string contrast_csv = "part,first_block,gap,p_value\n";
    res.summary = "family contrast (within - cross cosine):\n";
    for (int64_t part = 0; part < report.n_parts; ++part) {
        contrast_csv += std::to_string(part) + "," +
                        std::to_string(report.part_first_block[(size_t)part]) + "," +
                        format_double(contrast.gap[(size_t)part]) + "," +
                        format_double(contrast.p_value[(size_t)part]) + "\n";
        res.summary += "  part " + std::to_string(part) + " (blocks from " +
                       std::to_string(report.part_first_block[(size_t)part]) + "): gap " +
                       format_double(contrast.gap[(size_t)part]) + ", p " +
                       format_double(contrast.p_value[(size_t)part]) + "\n";
    }
    contrast_csv += "overall,," + format_double(contrast.overall_gap) + "," +
                    format_double(contrast.overall_p) + "\n";
    res.summary += "  overall: gap " + format_double(contrast.overall_gap) + ", p " +
                   format_double(contrast.overall_p) + "\n";
    const std::string contrast_path = out_dir + "/family_contrast.csv";
    write_text_file(contrast_path, contrast_csv);
    res.outputs.push_back(contrast_path);

    if (!cfg.t_history_path.empty()) {
        const auto history = load_t_history_csv(cfg.t_history_path);
        const CollapseReport collapse = collapse_metrics(history);
        std::string collapse_csv = "snapshot,std,switch_rate\n";
        for (size_t i = 0; i < collapse.std_per_update.size(); ++i) {
            collapse_csv += std::to_string(i) + "," + format_double(collapse.std_per_update[i]) +
                            "," + (i == 0 ? "" : format_double(collapse.switch_rate[i - 1])) +
                            "\n";
        }
        const std::string collapse_path = out_dir + "/collapse.csv";
        write_text_file(collapse_path, collapse_csv);
        res.outputs.push_back(collapse_path);
        res.summary += "mapping stability: mean std " + format_double(collapse.mean_std) +
                       ", mean switch rate " + format_double(collapse.mean_switch_rate) + " over " +
                       std::to_string(history.size()) + " snapshots\n";
    }
    return res;
}

}  // namespace maskasr
