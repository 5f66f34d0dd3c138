#include "maskasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "maskasr/cer.hpp"
#include "maskasr/common.hpp"
#include "maskasr/ctc.hpp"

namespace maskasr {

const char* weight_update_name(WeightUpdate w) {
    switch (w) {
        case WeightUpdate::kIter: return "iter";
        case WeightUpdate::kFreeze: return "freeze";
        case WeightUpdate::kRandom: return "random";
    }
    fail(ErrorCode::kInternal, "unhandled weight update");
}

WeightUpdate weight_update_from_name(const std::string& name) {
    if (name == "iter") return WeightUpdate::kIter;
    if (name == "freeze") return WeightUpdate::kFreeze;
    if (name == "random") return WeightUpdate::kRandom;
    fail(ErrorCode::kConfig, "unknown weight update strategy '%s'", name.c_str());
}

const char* baseline_name(Baseline b) {
    switch (b) {
        case Baseline::kNone: return "none";
        case Baseline::kSharedWeight: return "shared_weight";
        case Baseline::kSeparateWeight: return "separate_weight";
        case Baseline::kSingleMask: return "single_mask";
    }
    fail(ErrorCode::kInternal, "unhandled baseline");
}

Baseline baseline_from_name(const std::string& name) {
    if (name == "none") return Baseline::kNone;
    if (name == "shared_weight") return Baseline::kSharedWeight;
    if (name == "separate_weight") return Baseline::kSeparateWeight;
    if (name == "single_mask") return Baseline::kSingleMask;
    fail(ErrorCode::kConfig, "unknown baseline '%s'", name.c_str());
}

void TrainConfig::validate() const {
    if (iterations < 1) fail(ErrorCode::kConfig, "iterations must be >= 1 (got %lld)", (long long)iterations);
    if (batch_size < 1) fail(ErrorCode::kConfig, "batch size must be >= 1 (got %lld)", (long long)batch_size);
    if (!(base_lr > 0.0)) fail(ErrorCode::kConfig, "base learning rate must be positive");
    if (warmup_frac < 0.0 || hold_frac < 0.0 || decay_frac < 0.0) {
        fail(ErrorCode::kConfig, "schedule fractions must be non-negative");
    }
    const double frac_sum = warmup_frac + hold_frac + decay_frac;
    if (std::fabs(frac_sum - 1.0) > 1e-9) {
        fail(ErrorCode::kConfig, "schedule fractions must sum to 1 (got %s)", format_double(frac_sum).c_str());
    }
    if (!(final_lr_ratio > 0.0) || final_lr_ratio > 1.0) {
        fail(ErrorCode::kConfig, "final lr ratio must be in (0, 1]");
    }
    if (!(alpha > 0.0)) fail(ErrorCode::kConfig, "alpha must be positive");
    if (beta < 1) fail(ErrorCode::kConfig, "beta must be >= 1 (got %lld)", (long long)beta);
    if (gamma < 1) fail(ErrorCode::kConfig, "gamma must be >= 1 (got %lld)", (long long)gamma);
    if (clip_norm < 0.0) fail(ErrorCode::kConfig, "clip norm must be >= 0");
    if (eval_interval < 0) fail(ErrorCode::kConfig, "eval interval must be >= 0");
    if (eval_subset < 0) fail(ErrorCode::kConfig, "eval subset must be >= 0");
    if (t_history_interval < 0) fail(ErrorCode::kConfig, "mapping history interval must be >= 0");
    if (adapt_phase1_frac < 0.0 || adapt_phase1_frac >= 1.0) {
        fail(ErrorCode::kConfig, "adaptation phase-1 fraction must be in [0, 1)");
    }
}

double lr_at(const TrainConfig& cfg, int64_t iter, bool mapping_group) {
    if (iter < 0 || iter >= cfg.iterations) {
        fail(ErrorCode::kInvalidArg, "iteration %lld outside [0, %lld)", (long long)iter,
             (long long)cfg.iterations);
    }
    const double peak = cfg.base_lr;
    const auto warmup_iters = (int64_t)std::llround(cfg.warmup_frac * (double)cfg.iterations);
    const auto decay_start = (int64_t)std::llround((cfg.warmup_frac + cfg.hold_frac) * (double)cfg.iterations);
    double lr;
    if (iter < warmup_iters) {
        lr = peak * (double)(iter + 1) / (double)warmup_iters;
    } else if (iter < decay_start) {
        lr = peak;
    } else {
        // Exponential decay reaching peak * final_lr_ratio exactly at the
        // last iteration.
        const double frac = (double)(iter - decay_start + 1) / (double)(cfg.iterations - decay_start);
        lr = peak * std::pow(cfg.final_lr_ratio, frac);
    }
    return mapping_group ? cfg.alpha * lr : lr;
}

bool update_gate(const TrainConfig& cfg, int64_t iter, ParamSelector group) {
    if (iter < 0) fail(ErrorCode::kInvalidArg, "negative iteration");
    const bool score_phase = ((iter / cfg.gamma) % 2) == 0;  // scores first
    switch (group) {
        case ParamSelector::kMappingT:
            return iter % cfg.beta == 0;
        case ParamSelector::kSpecialistM:
            if (cfg.baseline == Baseline::kSharedWeight) return false;
            return cfg.weight_update != WeightUpdate::kIter || score_phase;
        case ParamSelector::kBackboneW:
            if (cfg.baseline == Baseline::kSharedWeight) return true;
            if (cfg.weight_update == WeightUpdate::kFreeze) return false;
            if (cfg.weight_update == WeightUpdate::kRandom) return true;
            return !score_phase;
        case ParamSelector::kBiases:
        case ParamSelector::kHeads:
            return true;
        case ParamSelector::kAll:
            break;
    }
    fail(ErrorCode::kInvalidArg, "kAll is not an optimizer group");
}

std::string metrics_csv_header() { return "kind,iter,phase,language,loss,lr_other,lr_t,cer"; }

namespace {

std::string csv_cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

MetricRow train_row(int64_t iter, int64_t phase, const std::string& language, double loss,
                    double lr_other, double lr_t) {
    MetricRow row;
    row.kind = "train";
    row.iter = iter;
    row.phase = phase;
    row.language = language;
    row.loss = loss;
    row.lr_other = lr_other;
    row.lr_t = lr_t;
    row.cer = std::nan("");
    return row;
}

MetricRow eval_row(int64_t iter, int64_t phase, const std::string& language, double cer_value) {
    MetricRow row;
    row.kind = "eval";
    row.iter = iter;
    row.phase = phase;
    row.language = language;
    row.loss = std::nan("");
    row.lr_other = std::nan("");
    row.lr_t = std::nan("");
    row.cer = cer_value;
    return row;
}

double mean_of(const std::map<std::string, double>& by_language) {
    if (by_language.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [tag, v] : by_language) total += v;
    return total / (double)by_language.size();
}

// Every tensor whose gradient buffer must be cleared between iterations:
// the base partition plus per-language bias overlays and dedicated scores.
std::vector<TensorPtr> all_model_tensors(const EncoderModel& model) {
    auto out = model.params(ParamSelector::kAll);
    for (const auto& [lang, overlay] : model.bias_overlays) {
        (void)lang;
        out.insert(out.end(), overlay.begin(), overlay.end());
    }
    for (const auto& blk : model.blocks) {
        for (const auto& [lang, s] : blk.qkv.dedicated_scores) {
            (void)lang;
            out.push_back(s);
        }
        for (const auto& [lang, s] : blk.proj.dedicated_scores) {
            (void)lang;
            out.push_back(s);
        }
    }
    return out;
}

std::vector<double> mapping_snapshot(const EncoderModel& model) {
    std::vector<double> snap;
    for (const auto& blk : model.blocks) {
        snap.insert(snap.end(), blk.qkv.mapping->data.begin(), blk.qkv.mapping->data.end());
        snap.insert(snap.end(), blk.proj.mapping->data.begin(), blk.proj.mapping->data.end());
    }
    return snap;
}

TensorPtr batch_ctc_loss(EncoderModel& model, const LanguageCorpus& lc, int64_t lang, int64_t head,
                         bool local_ids, const LanguageWeights& weights, int64_t batch_size,
                         Rng& batch_rng, Rng& dropout_rng) {
    TensorPtr total;
    for (int64_t b = 0; b < batch_size; ++b) {
        const auto& utt = lc.train[(size_t)batch_rng.uniform_int(0, (int64_t)lc.train.size() - 1)];
        auto logp = encoder_forward(model, utt.features, lang, head, &weights, /*training=*/true,
                                    &dropout_rng);
        const Transcript target = local_ids ? to_local_ids(utt.transcript, lc.vocab) : utt.transcript;
        auto utt_loss = ctc_loss(logp, target);
        total = total ? add(total, utt_loss) : utt_loss;
    }
    return scale(total, 1.0 / (double)batch_size);
}

void check_loss_finite(double loss_value, int64_t iter) {
    if (!std::isfinite(loss_value)) {
        fail(ErrorCode::kDiverged,
             "training diverged at iteration %lld (loss %s); lower the learning rate",
             (long long)iter, format_double(loss_value).c_str());
    }
}

}  // namespace

std::string metrics_csv_line(const MetricRow& row) {
    std::string line;
    line += row.kind;
    line += ',';
    line += std::to_string(row.iter);
    line += ',';
    line += std::to_string(row.phase);
    line += ',';
    line += row.language;
    line += ',';
    line += csv_cell(row.loss);
    line += ',';
    line += csv_cell(row.lr_other);
    line += ',';
    line += csv_cell(row.lr_t);
    line += ',';
    line += csv_cell(row.cer);
    return line;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open metrics file '%s'", path.c_str());
    out << metrics_csv_header() << '\n';
    for (const auto& row : rows) out << metrics_csv_line(row) << '\n';
    if (!out) fail(ErrorCode::kIo, "failed writing metrics file '%s'", path.c_str());
}

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

int64_t AdamOptimizer::add_parameter(const TensorPtr& p, ParamSelector group,
                                     std::vector<double> mask) {
    if (!p) fail(ErrorCode::kInvalidArg, "null optimizer parameter");
    if (!p->requires_grad) {
        fail(ErrorCode::kInvalidArg, "optimizer parameter %s does not require gradients",
             shape_str(p->shape).c_str());
    }
    if (!mask.empty()) {
        if ((int64_t)mask.size() != p->size()) {
            fail(ErrorCode::kShape, "update mask has %zu entries for a %lld-entry parameter",
                 mask.size(), (long long)p->size());
        }
        for (double v : mask) {
            if (v != 0.0 && v != 1.0) fail(ErrorCode::kInvalidArg, "update masks must be 0/1");
        }
    }
    Entry e;
    e.p = p;
    e.group = group;
    e.m.assign((size_t)p->size(), 0.0);
    e.v.assign((size_t)p->size(), 0.0);
    e.mask = std::move(mask);
    entries_.push_back(std::move(e));
    return (int64_t)entries_.size() - 1;
}

void AdamOptimizer::add_parameters(const std::vector<TensorPtr>& ps, ParamSelector group) {
    for (const auto& p : ps) add_parameter(p, group);
}

void AdamOptimizer::set_mask(int64_t entry, std::vector<double> mask) {
    if (entry < 0 || entry >= (int64_t)entries_.size()) {
        fail(ErrorCode::kInvalidArg, "optimizer entry %lld out of range", (long long)entry);
    }
    auto& e = entries_[(size_t)entry];
    if ((int64_t)mask.size() != e.p->size()) {
        fail(ErrorCode::kShape, "update mask has %zu entries for a %lld-entry parameter",
             mask.size(), (long long)e.p->size());
    }
    e.mask = std::move(mask);
}

double AdamOptimizer::step(const std::function<bool(ParamSelector)>& gate,
                           const std::function<double(ParamSelector)>& lr, double clip_norm) {
    // Global gradient norm over the groups receiving this step, with
    // per-entry masks already applied.
    double sq_sum = 0.0;
    for (const auto& e : entries_) {
        if (!gate(e.group) || e.p->grad.empty()) continue;
        const double* g = e.p->grad.data();
        const int64_t n = e.p->size();
        if (e.mask.empty()) {
            for (int64_t i = 0; i < n; ++i) sq_sum += g[i] * g[i];
        } else {
            for (int64_t i = 0; i < n; ++i) {
                const double gm = g[i] * e.mask[(size_t)i];
                sq_sum += gm * gm;
            }
        }
    }
    const double norm = std::sqrt(sq_sum);
    const double rescale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    for (auto& e : entries_) {
        if (!gate(e.group)) continue;  // full skip: moments and counter untouched
        ++e.steps;
        const double group_lr = lr(e.group);
        const double bc1 = 1.0 - std::pow(beta1_, (double)e.steps);
        const double bc2 = 1.0 - std::pow(beta2_, (double)e.steps);
        const int64_t n = e.p->size();
        const double* g = e.p->grad.empty() ? nullptr : e.p->grad.data();
        double* value = e.p->data.data();
        for (int64_t i = 0; i < n; ++i) {
            double gi = g ? g[i] : 0.0;
            if (!e.mask.empty()) gi *= e.mask[(size_t)i];
            gi *= rescale;
            e.m[(size_t)i] = beta1_ * e.m[(size_t)i] + (1.0 - beta1_) * gi;
            e.v[(size_t)i] = beta2_ * e.v[(size_t)i] + (1.0 - beta2_) * gi * gi;
            const double m_hat = e.m[(size_t)i] / bc1;
            const double v_hat = e.v[(size_t)i] / bc2;
            value[i] -= group_lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
    return norm;
}

void AdamOptimizer::zero_grads() {
    for (auto& e : entries_) e.p->zero_grad();
}

int64_t AdamOptimizer::parameter_count() const {
    int64_t total = 0;
    for (const auto& e : entries_) total += e.p->size();
    return total;
}

int64_t AdamOptimizer::trainable_scalars() const {
    int64_t total = 0;
    for (const auto& e : entries_) {
        if (e.mask.empty()) {
            total += e.p->size();
        } else {
            for (double v : e.mask) total += (v != 0.0) ? 1 : 0;
        }
    }
    return total;
}

std::vector<double> random_update_mask(Rng& rng, int64_t size, int64_t ones) {
    if (ones < 0 || ones > size) {
        fail(ErrorCode::kInvalidArg, "cannot place %lld ones in %lld entries", (long long)ones,
             (long long)size);
    }
    std::vector<double> mask((size_t)size, 0.0);
    const auto perm = rng.permutation(size);
    for (int64_t i = 0; i < ones; ++i) mask[(size_t)perm[(size_t)i]] = 1.0;
    return mask;
}

Transcript to_local_ids(const Transcript& global_ids, const std::vector<int>& vocab) {
    Transcript out;
    out.reserve(global_ids.size());
    for (int id : global_ids) {
        const auto it = std::lower_bound(vocab.begin(), vocab.end(), id);
        if (it == vocab.end() || *it != id) {
            fail(ErrorCode::kData, "symbol %d is not in the language vocabulary", id);
        }
        out.push_back((int)(it - vocab.begin()));
    }
    return out;
}

double eval_language_cer(EncoderModel& model, const LanguageCorpus& lc, int64_t n_symbols,
                         int64_t max_utts) {
    const int64_t lang = model.language_index(lc.tag);
    const int64_t head = model.head_of_language[(size_t)lang];
    const bool local_ids = model.heads[(size_t)head].vocab != n_symbols;
    if (local_ids && model.heads[(size_t)head].vocab != (int64_t)lc.vocab.size()) {
        fail(ErrorCode::kConfig, "head covers %lld symbols but language '%s' has %zu",
             (long long)model.heads[(size_t)head].vocab, lc.tag.c_str(), lc.vocab.size());
    }
    NoGradGuard guard;
    const auto weights = assemble_weights(model, lang, /*detached=*/true);
    CerAccumulator acc;
    int64_t n = (int64_t)lc.dev.size();
    if (max_utts > 0 && max_utts < n) n = max_utts;
    for (int64_t i = 0; i < n; ++i) {
        const auto& utt = lc.dev[(size_t)i];
        auto logp = encoder_forward(model, utt.features, lang, head, &weights);
        const Transcript hyp = greedy_decode(logp);
        const Transcript ref = local_ids ? to_local_ids(utt.transcript, lc.vocab) : utt.transcript;
        acc.add(hyp, ref);
    }
    return acc.value();
}

TrainResult train_multilingual(EncoderModel& model, const CorpusSet& corpus,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.baseline == Baseline::kSeparateWeight) {
        fail(ErrorCode::kInvalidArg,
             "the separate-weight baseline trains one model per language; use train_separate_weight");
    }
    if ((cfg.baseline == Baseline::kSharedWeight) != model.cfg.dense_layers) {
        fail(ErrorCode::kConfig, "the shared-weight baseline requires a dense model (and vice versa)");
    }
    if (corpus.languages.empty()) fail(ErrorCode::kInvalidArg, "corpus has no languages");
    if (cfg.baseline == Baseline::kSingleMask) {
        for (auto& blk : model.blocks) {
            blk.qkv.enable_single_mask();
            blk.proj.enable_single_mask();
        }
        model.cfg.n_scores = 1;
    }

    struct LangRef {
        const LanguageCorpus* lc;
        int64_t lang, head;
        bool local_ids;
    };
    std::vector<LangRef> refs;
    for (const auto& lc : corpus.languages) {
        const int64_t lang = model.language_index(lc.tag);
        const int64_t head = model.head_of_language[(size_t)lang];
        const bool local_ids = model.heads[(size_t)head].vocab != corpus.n_symbols;
        if (local_ids && model.heads[(size_t)head].vocab != (int64_t)lc.vocab.size()) {
            fail(ErrorCode::kConfig, "head covers %lld symbols but language '%s' has %zu",
                 (long long)model.heads[(size_t)head].vocab, lc.tag.c_str(), lc.vocab.size());
        }
        refs.push_back({&lc, lang, head, local_ids});
    }

    // The loop guards the loss value itself; per-op scans are redundant here.
    FiniteCheckGuard no_finite_checks(false);
    Rng batch_rng(seed_stream(cfg.seed, "train/batch"));
    Rng dropout_rng(seed_stream(cfg.seed, "train/dropout"));
    Rng mask_rng(seed_stream(cfg.seed, "train/update-mask"));

    AdamOptimizer opt;
    const bool masked_model = !model.cfg.dense_layers;
    struct RandomEntry {
        int64_t entry, size, ones;
    };
    std::vector<RandomEntry> random_entries;
    for (const auto& p : model.params(ParamSelector::kBackboneW)) {
        std::vector<double> mask;
        int64_t ones = 0;
        if (masked_model && cfg.weight_update == WeightUpdate::kRandom) {
            ones = mask_one_count(model.cfg.sparsity, p->size());
            mask = random_update_mask(mask_rng, p->size(), ones);
        }
        const int64_t entry = opt.add_parameter(p, ParamSelector::kBackboneW, std::move(mask));
        if (ones > 0) random_entries.push_back({entry, p->size(), ones});
    }
    if (masked_model) {
        opt.add_parameters(model.params(ParamSelector::kSpecialistM), ParamSelector::kSpecialistM);
        if (model.blocks[0].qkv.mapping->requires_grad) {
            opt.add_parameters(model.params(ParamSelector::kMappingT), ParamSelector::kMappingT);
        }
    }
    opt.add_parameters(model.params(ParamSelector::kBiases), ParamSelector::kBiases);
    opt.add_parameters(model.params(ParamSelector::kHeads), ParamSelector::kHeads);

    const auto all_tensors = all_model_tensors(model);
    const bool track_mappings =
        masked_model && model.blocks[0].qkv.mapping->requires_grad && cfg.t_history_interval > 0;

    TrainResult out;
    for (const auto& r : refs) {
        const double c = eval_language_cer(model, *r.lc, corpus.n_symbols);
        out.initial_cer[r.lc->tag] = c;
        out.metrics.push_back(eval_row(0, 0, r.lc->tag, c));
    }
    out.mean_initial_cer = mean_of(out.initial_cer);

    int64_t mapping_updates = 0;
    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const auto& r = refs[(size_t)(iter % (int64_t)refs.size())];
        const auto weights = assemble_weights(model, r.lang);
        auto loss = batch_ctc_loss(model, *r.lc, r.lang, r.head, r.local_ids, weights,
                                   cfg.batch_size, batch_rng, dropout_rng);
        const double loss_value = loss->scalar();
        check_loss_finite(loss_value, iter);
        backward(loss);
        const double lr_other = lr_at(cfg, iter, false);
        const double lr_t = lr_at(cfg, iter, true);
        opt.step([&](ParamSelector g) { return update_gate(cfg, iter, g); },
                 [&](ParamSelector g) { return g == ParamSelector::kMappingT ? lr_t : lr_other; },
                 cfg.clip_norm);
        zero_grads(all_tensors);
        if (cfg.resample_update_masks) {
            for (const auto& re : random_entries) {
                opt.set_mask(re.entry, random_update_mask(mask_rng, re.size, re.ones));
            }
        }

        out.metrics.push_back(
            train_row(iter, iter / cfg.gamma, r.lc->tag, loss_value, lr_other, lr_t));
        if (track_mappings && update_gate(cfg, iter, ParamSelector::kMappingT)) {
            if (mapping_updates % cfg.t_history_interval == 0) {
                out.t_history.push_back(mapping_snapshot(model));
            }
            ++mapping_updates;
        }

        const int64_t done = iter + 1;
        if (cfg.eval_interval > 0 && done % cfg.eval_interval == 0 && done != cfg.iterations) {
            for (const auto& r2 : refs) {
                const double c = eval_language_cer(model, *r2.lc, corpus.n_symbols, cfg.eval_subset);
                out.metrics.push_back(eval_row(done, iter / cfg.gamma, r2.lc->tag, c));
            }
        }
    }

    for (const auto& r : refs) {
        const double c = eval_language_cer(model, *r.lc, corpus.n_symbols);
        out.final_cer[r.lc->tag] = c;
        out.metrics.push_back(eval_row(cfg.iterations, (cfg.iterations - 1) / cfg.gamma, r.lc->tag, c));
    }
    out.mean_final_cer = mean_of(out.final_cer);
    out.iterations_run = cfg.iterations;
    return out;
}

SeparateWeightRun train_separate_weight(const EncoderConfig& enc_cfg, const CorpusSet& corpus,
                                        const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.languages.empty()) fail(ErrorCode::kInvalidArg, "corpus has no languages");
    SeparateWeightRun run;
    const int64_t n_langs = (int64_t)corpus.languages.size();
    TrainConfig per_cfg = cfg;
    per_cfg.baseline = Baseline::kSharedWeight;
    per_cfg.iterations = std::max<int64_t>(1, cfg.iterations / n_langs);
    for (const auto& lc : corpus.languages) {
        EncoderConfig ec = enc_cfg;
        ec.dense_layers = true;
        Rng init_rng(seed_stream(cfg.seed, "separate/init/" + lc.tag));
        EncoderModel model = make_encoder(ec, {lc.tag}, (int64_t)lc.vocab.size(), init_rng);
        CorpusSet sub;
        sub.seed = corpus.seed;
        sub.feature_dim = corpus.feature_dim;
        sub.n_symbols = corpus.n_symbols;
        sub.languages.push_back(lc);
        per_cfg.seed = seed_stream(cfg.seed, "separate/train/" + lc.tag);
        TrainResult r = train_multilingual(model, sub, per_cfg);
        run.result.metrics.insert(run.result.metrics.end(), r.metrics.begin(), r.metrics.end());
        run.result.initial_cer[lc.tag] = r.initial_cer.at(lc.tag);
        run.result.final_cer[lc.tag] = r.final_cer.at(lc.tag);
        run.result.iterations_run += r.iterations_run;
        run.models.push_back(std::move(model));
    }
    run.result.mean_initial_cer = mean_of(run.result.initial_cer);
    run.result.mean_final_cer = mean_of(run.result.final_cer);
    return run;
}

AdaptResult adapt_low_resource(EncoderModel& model, const LanguageCorpus& corpus,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (model.cfg.dense_layers) fail(ErrorCode::kConfig, "adaptation requires a masked model");
    for (const auto& tag : model.language_tags) {
        if (tag == corpus.tag) {
            fail(ErrorCode::kInvalidArg, "language '%s' is already registered", corpus.tag.c_str());
        }
    }

    FiniteCheckGuard no_finite_checks(false);
    Rng init_rng(seed_stream(cfg.seed, "adapt/init/" + corpus.tag));
    Rng batch_rng(seed_stream(cfg.seed, "adapt/batch/" + corpus.tag));
    Rng dropout_rng(seed_stream(cfg.seed, "adapt/dropout/" + corpus.tag));

    AdaptResult out;
    out.head = attach_head(model, (int64_t)corpus.vocab.size(), init_rng);
    out.language = add_language(model, corpus.tag, out.head, RowInit::kGaussian, 0.5, &init_rng);

    AdamOptimizer opt;
    opt.add_parameters({model.heads[(size_t)out.head].weight, model.heads[(size_t)out.head].bias},
                       ParamSelector::kHeads);
    for (auto& blk : model.blocks) {
        for (MaskedLinear* layer : {&blk.qkv, &blk.proj}) {
            // Freeze every pre-existing mapping row; only the fresh row moves.
            std::vector<double> mask((size_t)layer->mapping->size(), 0.0);
            const int64_t k_scores = layer->cfg.n_scores;
            for (int64_t k = 0; k < k_scores; ++k) {
                mask[(size_t)(out.language * k_scores + k)] = 1.0;
            }
            opt.add_parameter(layer->mapping, ParamSelector::kMappingT, std::move(mask));
        }
    }
    opt.add_parameters(model.bias_overlays.at(out.language), ParamSelector::kBiases);
    out.trainable_scalars = opt.trainable_scalars();

    const auto all_tensors = all_model_tensors(model);
    out.initial_cer = eval_language_cer(model, corpus, /*n_symbols=*/-1);
    out.metrics.push_back(eval_row(0, 1, corpus.tag, out.initial_cer));

    const auto phase1_iters = (int64_t)std::llround(cfg.adapt_phase1_frac * (double)cfg.iterations);
    // Masks cannot change while the mapping rows are frozen, so phase 1 runs
    // on weights assembled once, detached from the graph.
    const auto frozen_weights = assemble_weights(model, out.language, /*detached=*/true);
    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const bool head_only = iter < phase1_iters;
        const auto weights =
            head_only ? frozen_weights : assemble_weights(model, out.language);
        auto loss = batch_ctc_loss(model, corpus, out.language, out.head, /*local_ids=*/true,
                                   weights, cfg.batch_size, batch_rng, dropout_rng);
        const double loss_value = loss->scalar();
        check_loss_finite(loss_value, iter);
        backward(loss);
        // The new mapping rows train at the plain rate: no alpha boost here.
        const double lr = lr_at(cfg, iter, false);
        opt.step([&](ParamSelector g) { return g == ParamSelector::kHeads || !head_only; },
                 [&](ParamSelector) { return lr; }, cfg.clip_norm);
        zero_grads(all_tensors);
        out.metrics.push_back(train_row(iter, head_only ? 1 : 2, corpus.tag, loss_value, lr, lr));
    }

    out.final_cer = eval_language_cer(model, corpus, /*n_symbols=*/-1);
    out.metrics.push_back(eval_row(cfg.iterations, 2, corpus.tag, out.final_cer));
    return out;
}

MaskFtResult further_mask_ft(EncoderModel& model, const LanguageCorpus& corpus,
                             const TrainConfig& cfg) {
    cfg.validate();
    const int64_t lang = model.language_index(corpus.tag);
    if (model.bias_overlays.find(lang) == model.bias_overlays.end()) {
        fail(ErrorCode::kState, "language '%s' was not adapted; mask fine-tuning follows adaptation",
             corpus.tag.c_str());
    }
    const int64_t head = model.head_of_language[(size_t)lang];

    FiniteCheckGuard no_finite_checks(false);
    Rng batch_rng(seed_stream(cfg.seed, "maskft/batch/" + corpus.tag));
    Rng dropout_rng(seed_stream(cfg.seed, "maskft/dropout/" + corpus.tag));

    MaskFtResult out;
    out.before_cer = eval_language_cer(model, corpus, /*n_symbols=*/-1);
    out.metrics.push_back(eval_row(0, 0, corpus.tag, out.before_cer));

    AdamOptimizer opt;
    for (auto& blk : model.blocks) {
        for (MaskedLinear* layer : {&blk.qkv, &blk.proj}) {
            opt.add_parameter(layer->materialize_dedicated_score(lang), ParamSelector::kSpecialistM);
        }
    }
    opt.add_parameters({model.heads[(size_t)head].weight, model.heads[(size_t)head].bias},
                       ParamSelector::kHeads);
    opt.add_parameters(model.bias_overlays.at(lang), ParamSelector::kBiases);

    const auto all_tensors = all_model_tensors(model);
    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const auto weights = assemble_weights(model, lang);
        auto loss = batch_ctc_loss(model, corpus, lang, head, /*local_ids=*/true, weights,
                                   cfg.batch_size, batch_rng, dropout_rng);
        const double loss_value = loss->scalar();
        check_loss_finite(loss_value, iter);
        backward(loss);
        const double lr = lr_at(cfg, iter, false);
        opt.step([](ParamSelector) { return true; }, [&](ParamSelector) { return lr; },
                 cfg.clip_norm);
        zero_grads(all_tensors);
        out.metrics.push_back(train_row(iter, 0, corpus.tag, loss_value, lr, lr));
    }

    out.after_cer = eval_language_cer(model, corpus, /*n_symbols=*/-1);
    out.metrics.push_back(eval_row(cfg.iterations, 0, corpus.tag, out.after_cer));
    return out;
}

namespace {

void copy_tensor_values(const std::vector<TensorPtr>& dst, const std::vector<TensorPtr>& src) {
    if (dst.size() != src.size()) {
        fail(ErrorCode::kInternal, "parameter lists differ: %zu vs %zu", dst.size(), src.size());
    }
    for (size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->shape != src[i]->shape) {
            fail(ErrorCode::kShape, "parameter %zu shape mismatch: %s vs %s", i,
                 shape_str(dst[i]->shape).c_str(), shape_str(src[i]->shape).c_str());
        }
        std::memcpy(dst[i]->data.data(), src[i]->data.data(),
                    (size_t)src[i]->size() * sizeof(double));
    }
}

}  // namespace

ReuseReport backbone_reuse_experiment(const EncoderModel& trained,
                                      const std::vector<LanguageCorpus>& targets,
                                      const TrainConfig& cfg) {
    cfg.validate();
    if (targets.empty()) fail(ErrorCode::kInvalidArg, "no target languages");
    if (trained.cfg.dense_layers) fail(ErrorCode::kConfig, "backbone reuse requires a masked model");

    FiniteCheckGuard no_finite_checks(false);
    Rng random_rng(seed_stream(cfg.seed, "reuse/random-backbone"));
    const EncoderModel random_model =
        make_encoder(trained.cfg, trained.language_tags, /*shared_vocab=*/1, random_rng);

    ReuseReport rep;
    rep.backbones = {"trained", "random"};
    for (const auto& lc : targets) rep.languages.push_back(lc.tag);
    rep.cer.assign(2, std::vector<double>(targets.size(), 0.0));

    const EncoderModel* sources[2] = {&trained, &random_model};
    for (size_t b = 0; b < 2; ++b) {
        for (size_t ti = 0; ti < targets.size(); ++ti) {
            const auto& lc = targets[ti];
            const std::string scope = "reuse/" + rep.backbones[b] + "/" + lc.tag;
            Rng init_rng(seed_stream(cfg.seed, scope + "/init"));
            Rng batch_rng(seed_stream(cfg.seed, scope + "/batch"));
            Rng dropout_rng(seed_stream(cfg.seed, scope + "/dropout"));

            EncoderModel model =
                make_encoder(trained.cfg, {lc.tag}, (int64_t)lc.vocab.size(), init_rng);
            for (auto& blk : model.blocks) {
                blk.qkv.enable_single_mask();
                blk.proj.enable_single_mask();
            }
            model.cfg.n_scores = 1;
            copy_tensor_values(model.params(ParamSelector::kBackboneW),
                               sources[b]->params(ParamSelector::kBackboneW));
            copy_tensor_values(model.base_biases(), sources[b]->base_biases());

            // Single-mask tuning: the backbone weights stay frozen; the score,
            // head and biases train every iteration.
            AdamOptimizer opt;
            opt.add_parameters(model.params(ParamSelector::kSpecialistM),
                               ParamSelector::kSpecialistM);
            opt.add_parameters(model.params(ParamSelector::kBiases), ParamSelector::kBiases);
            opt.add_parameters(model.params(ParamSelector::kHeads), ParamSelector::kHeads);

            const auto all_tensors = all_model_tensors(model);
            for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
                const auto weights = assemble_weights(model, 0);
                auto loss = batch_ctc_loss(model, lc, 0, 0, /*local_ids=*/true, weights,
                                           cfg.batch_size, batch_rng, dropout_rng);
                const double loss_value = loss->scalar();
                check_loss_finite(loss_value, iter);
                backward(loss);
                const double lr = lr_at(cfg, iter, false);
                opt.step([](ParamSelector) { return true; }, [&](ParamSelector) { return lr; },
                         cfg.clip_norm);
                zero_grads(all_tensors);
            }
            rep.cer[b][ti] = eval_language_cer(model, lc, /*n_symbols=*/-1);
        }
    }
    return rep;
}

}  // namespace maskasr
