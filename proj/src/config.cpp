#include "maskasr/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "maskasr/common.hpp"

namespace maskasr {

namespace {

std::string trim(const std::string& s) {
    size_t lo = 0, hi = s.size();
    while (lo < hi && std::isspace((unsigned char)s[lo])) ++lo;
    while (hi > lo && std::isspace((unsigned char)s[hi - 1])) --hi;
    return s.substr(lo, hi - lo);
}

int64_t parse_i64(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (value.empty() || end == value.c_str() || *end != '\0') {
        fail(ErrorCode::kConfig, "key %s needs an integer, got '%s'", key.c_str(), value.c_str());
    }
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    if (value.empty() || value[0] == '-') {
        fail(ErrorCode::kConfig, "key %s needs a non-negative integer, got '%s'", key.c_str(),
             value.c_str());
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0') {
        fail(ErrorCode::kConfig, "key %s needs a non-negative integer, got '%s'", key.c_str(),
             value.c_str());
    }
    return v;
}

double parse_f64(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end == value.c_str() || *end != '\0' || !std::isfinite(v)) {
        fail(ErrorCode::kConfig, "key %s needs a finite number, got '%s'", key.c_str(),
             value.c_str());
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    fail(ErrorCode::kConfig, "key %s needs true or false, got '%s'", key.c_str(), value.c_str());
}

std::vector<std::string> split_list(const std::string& key, const std::string& value) {
    std::vector<std::string> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) {
            fail(ErrorCode::kConfig, "key %s has an empty list entry in '%s'", key.c_str(),
                 value.c_str());
        }
        out.push_back(item);
    }
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

const char* bool_name(bool v) { return v ? "true" : "false"; }

}  // namespace

void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed") {
        cfg.seed = parse_u64(key, value);
    } else if (key == "data.families") {
        cfg.families = parse_i64(key, value);
    } else if (key == "data.langs_per_family") {
        cfg.langs_per_family = parse_i64(key, value);
    } else if (key == "data.train_utts") {
        cfg.train_utts = parse_i64(key, value);
    } else if (key == "data.eval_utts") {
        cfg.eval_utts = parse_i64(key, value);
    } else if (key == "data.low_res_languages") {
        cfg.low_res_languages = parse_i64(key, value);
    } else if (key == "data.low_res_fresh_family") {
        cfg.low_res_fresh_family = parse_bool(key, value);
    } else if (key == "data.low_res_train_utts") {
        cfg.low_res_train_utts = parse_i64(key, value);
    } else if (key == "data.low_res_eval_utts") {
        cfg.low_res_eval_utts = parse_i64(key, value);
    } else if (key == "data.feature_dim") {
        cfg.datagen.feature_dim = parse_i64(key, value);
    } else if (key == "data.family_pool") {
        cfg.datagen.family_pool = parse_i64(key, value);
    } else if (key == "data.lang_vocab") {
        cfg.datagen.lang_vocab = parse_i64(key, value);
    } else if (key == "data.core_share") {
        cfg.datagen.core_share = parse_i64(key, value);
    } else if (key == "data.min_frames_per_symbol") {
        cfg.datagen.min_frames_per_symbol = parse_i64(key, value);
    } else if (key == "data.max_frames_per_symbol") {
        cfg.datagen.max_frames_per_symbol = parse_i64(key, value);
    } else if (key == "data.min_utt_symbols") {
        cfg.datagen.min_utt_symbols = parse_i64(key, value);
    } else if (key == "data.max_utt_symbols") {
        cfg.datagen.max_utt_symbols = parse_i64(key, value);
    } else if (key == "data.noise_scale") {
        cfg.datagen.noise_scale = parse_f64(key, value);
    } else if (key == "data.perturb_scale") {
        cfg.datagen.perturb_scale = parse_f64(key, value);
    } else if (key == "data.min_prototype_dist") {
        cfg.datagen.min_prototype_dist = parse_f64(key, value);
    } else if (key == "model.d_model") {
        cfg.encoder.d_model = parse_i64(key, value);
    } else if (key == "model.n_blocks") {
        cfg.encoder.n_blocks = parse_i64(key, value);
    } else if (key == "model.n_heads") {
        cfg.encoder.n_heads = parse_i64(key, value);
    } else if (key == "model.d_ff") {
        cfg.encoder.d_ff = parse_i64(key, value);
    } else if (key == "model.n_scores") {
        cfg.encoder.n_scores = parse_i64(key, value);
    } else if (key == "model.sparsity") {
        cfg.encoder.sparsity = parse_f64(key, value);
    } else if (key == "model.rule") {
        try {
            cfg.encoder.rule = mask_rule_from_name(value);
        } catch (const Error&) {
            fail(ErrorCode::kConfig, "key model.rule needs topk, thres or learned, got '%s'",
                 value.c_str());
        }
    } else if (key == "model.dropout") {
        cfg.encoder.dropout_rate = parse_f64(key, value);
    } else if (key == "model.dense_layers") {
        cfg.encoder.dense_layers = parse_bool(key, value);
    } else if (key == "trainer.iterations") {
        cfg.trainer.iterations = parse_i64(key, value);
    } else if (key == "trainer.batch_size") {
        cfg.trainer.batch_size = parse_i64(key, value);
    } else if (key == "trainer.base_lr") {
        cfg.trainer.base_lr = parse_f64(key, value);
    } else if (key == "trainer.warmup_frac") {
        cfg.trainer.warmup_frac = parse_f64(key, value);
    } else if (key == "trainer.hold_frac") {
        cfg.trainer.hold_frac = parse_f64(key, value);
    } else if (key == "trainer.decay_frac") {
        cfg.trainer.decay_frac = parse_f64(key, value);
    } else if (key == "trainer.final_lr_ratio") {
        cfg.trainer.final_lr_ratio = parse_f64(key, value);
    } else if (key == "trainer.alpha") {
        cfg.trainer.alpha = parse_f64(key, value);
    } else if (key == "trainer.beta") {
        cfg.trainer.beta = parse_i64(key, value);
    } else if (key == "trainer.gamma") {
        cfg.trainer.gamma = parse_i64(key, value);
    } else if (key == "trainer.weight_update") {
        cfg.trainer.weight_update = weight_update_from_name(value);
    } else if (key == "trainer.baseline") {
        cfg.trainer.baseline = baseline_from_name(value);
    } else if (key == "trainer.resample_update_masks") {
        cfg.trainer.resample_update_masks = parse_bool(key, value);
    } else if (key == "trainer.clip_norm") {
        cfg.trainer.clip_norm = parse_f64(key, value);
    } else if (key == "trainer.eval_interval") {
        cfg.trainer.eval_interval = parse_i64(key, value);
    } else if (key == "trainer.eval_subset") {
        cfg.trainer.eval_subset = parse_i64(key, value);
    } else if (key == "trainer.t_history_interval") {
        cfg.trainer.t_history_interval = parse_i64(key, value);
    } else if (key == "adapt.iterations") {
        cfg.adapt_iterations = parse_i64(key, value);
    } else if (key == "adapt.batch_size") {
        cfg.adapt_batch_size = parse_i64(key, value);
    } else if (key == "adapt.base_lr") {
        cfg.adapt_base_lr = parse_f64(key, value);
    } else if (key == "adapt.phase1_frac") {
        cfg.adapt_phase1_frac = parse_f64(key, value);
    } else if (key == "adapt.mask_ft_iterations") {
        cfg.mask_ft_iterations = parse_i64(key, value);
    } else if (key == "eval.language") {
        cfg.eval_language = value;
    } else if (key == "eval.split") {
        if (value != "dev" && value != "train") {
            fail(ErrorCode::kConfig, "key eval.split needs dev or train, got '%s'", value.c_str());
        }
        cfg.eval_split = value;
    } else if (key == "ablate.axis") {
        cfg.ablate_axis = value;
    } else if (key == "ablate.grid") {
        cfg.ablate_grid = split_list(key, value);
    } else if (key == "ablate.seeds") {
        cfg.ablate_seeds.clear();
        for (const auto& item : split_list(key, value)) {
            cfg.ablate_seeds.push_back(parse_u64(key, item));
        }
    } else if (key == "analyze.n_parts") {
        cfg.analyze_n_parts = parse_i64(key, value);
    } else if (key == "analyze.indicator") {
        cfg.analyze_indicator = parse_bool(key, value);
    } else if (key == "analyze.standardize") {
        cfg.analyze_standardize = parse_bool(key, value);
    } else if (key == "analyze.permutations") {
        cfg.analyze_permutations = parse_i64(key, value);
    } else if (key == "paths.corpus") {
        cfg.corpus_path = value;
    } else if (key == "paths.low_res_corpus") {
        cfg.low_res_corpus_path = value;
    } else if (key == "paths.checkpoint") {
        cfg.checkpoint_path = value;
    } else if (key == "paths.t_history") {
        cfg.t_history_path = value;
    } else {
        fail(ErrorCode::kConfig, "unknown configuration key '%s'", key.c_str());
    }
}

ExperimentConfig parse_config_text(const std::string& text, const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    std::set<std::string> seen;
    std::stringstream ss(text);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::kConfig, "line %lld is not a 'key = value' assignment: %s",
                 (long long)line_no, line.c_str());
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            fail(ErrorCode::kConfig, "line %lld has an empty key", (long long)line_no);
        }
        if (!seen.insert(key).second) {
            fail(ErrorCode::kConfig, "key %s appears twice", key.c_str());
        }
        apply_config_entry(cfg, key, value);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path, const ExperimentConfig& base) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open config file %s", path.c_str());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), base);
}

void ExperimentConfig::validate() const {
    if (families < 1 || langs_per_family < 1) {
        fail(ErrorCode::kConfig, "world needs at least one family and one language per family");
    }
    if (train_utts < 1 || eval_utts < 1) {
        fail(ErrorCode::kConfig, "corpus splits need at least one utterance");
    }
    if (low_res_languages < 0) fail(ErrorCode::kConfig, "data.low_res_languages must be >= 0");
    if (low_res_languages > 0 && (low_res_train_utts < 1 || low_res_eval_utts < 1)) {
        fail(ErrorCode::kConfig, "low-resource splits need at least one utterance");
    }
    // The embedded validators throw their own codes when called directly;
    // here every violation originates from the configuration document.
    try {
        datagen.validate();
        encoder_config().validate();
        train_config().validate();
        adapt_train_config().validate();
    } catch (const Error& e) {
        fail(ErrorCode::kConfig, "%s", e.what());
    }
    if (mask_ft_iterations < 0) fail(ErrorCode::kConfig, "adapt.mask_ft_iterations must be >= 0");
    if (analyze_n_parts < 1) fail(ErrorCode::kConfig, "analyze.n_parts must be >= 1");
    if (analyze_permutations < 1) fail(ErrorCode::kConfig, "analyze.permutations must be >= 1");
}

EncoderConfig ExperimentConfig::encoder_config() const {
    EncoderConfig ec = encoder;
    ec.input_feature_dim = datagen.feature_dim;
    return ec;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig tc = trainer;
    tc.seed = seed;
    tc.adapt_phase1_frac = adapt_phase1_frac;
    return tc;
}

TrainConfig ExperimentConfig::adapt_train_config() const {
    TrainConfig tc = train_config();
    tc.iterations = adapt_iterations;
    tc.batch_size = adapt_batch_size;
    tc.base_lr = adapt_base_lr;
    tc.baseline = Baseline::kNone;
    return tc;
}

std::vector<uint64_t> ExperimentConfig::sweep_seeds() const {
    if (!ablate_seeds.empty()) return ablate_seeds;
    return {seed, seed + 1, seed + 2};
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
    std::vector<std::string> seed_strings;
    for (uint64_t s : ablate_seeds) seed_strings.push_back(std::to_string(s));
    return {
        {"seed", std::to_string(seed)},
        {"data.families", std::to_string(families)},
        {"data.langs_per_family", std::to_string(langs_per_family)},
        {"data.train_utts", std::to_string(train_utts)},
        {"data.eval_utts", std::to_string(eval_utts)},
        {"data.low_res_languages", std::to_string(low_res_languages)},
        {"data.low_res_fresh_family", bool_name(low_res_fresh_family)},
        {"data.low_res_train_utts", std::to_string(low_res_train_utts)},
        {"data.low_res_eval_utts", std::to_string(low_res_eval_utts)},
        {"data.feature_dim", std::to_string(datagen.feature_dim)},
        {"data.family_pool", std::to_string(datagen.family_pool)},
        {"data.lang_vocab", std::to_string(datagen.lang_vocab)},
        {"data.core_share", std::to_string(datagen.core_share)},
        {"data.min_frames_per_symbol", std::to_string(datagen.min_frames_per_symbol)},
        {"data.max_frames_per_symbol", std::to_string(datagen.max_frames_per_symbol)},
        {"data.min_utt_symbols", std::to_string(datagen.min_utt_symbols)},
        {"data.max_utt_symbols", std::to_string(datagen.max_utt_symbols)},
        {"data.noise_scale", format_double(datagen.noise_scale)},
        {"data.perturb_scale", format_double(datagen.perturb_scale)},
        {"data.min_prototype_dist", format_double(datagen.min_prototype_dist)},
        {"model.d_model", std::to_string(encoder.d_model)},
        {"model.n_blocks", std::to_string(encoder.n_blocks)},
        {"model.n_heads", std::to_string(encoder.n_heads)},
        {"model.d_ff", std::to_string(encoder.d_ff)},
        {"model.n_scores", std::to_string(encoder.n_scores)},
        {"model.sparsity", format_double(encoder.sparsity)},
        {"model.rule", mask_rule_name(encoder.rule)},
        {"model.dropout", format_double(encoder.dropout_rate)},
        {"model.dense_layers", bool_name(encoder.dense_layers)},
        {"trainer.iterations", std::to_string(trainer.iterations)},
        {"trainer.batch_size", std::to_string(trainer.batch_size)},
        {"trainer.base_lr", format_double(trainer.base_lr)},
        {"trainer.warmup_frac", format_double(trainer.warmup_frac)},
        {"trainer.hold_frac", format_double(trainer.hold_frac)},
        {"trainer.decay_frac", format_double(trainer.decay_frac)},
        {"trainer.final_lr_ratio", format_double(trainer.final_lr_ratio)},
        {"trainer.alpha", format_double(trainer.alpha)},
        {"trainer.beta", std::to_string(trainer.beta)},
        {"trainer.gamma", std::to_string(trainer.gamma)},
        {"trainer.weight_update", weight_update_name(trainer.weight_update)},
        {"trainer.baseline", baseline_name(trainer.baseline)},
        {"trainer.resample_update_masks", bool_name(trainer.resample_update_masks)},
        {"trainer.clip_norm", format_double(trainer.clip_norm)},
        {"trainer.eval_interval", std::to_string(trainer.eval_interval)},
        {"trainer.eval_subset", std::to_string(trainer.eval_subset)},
        {"trainer.t_history_interval", std::to_string(trainer.t_history_interval)},
        {"adapt.iterations", std::to_string(adapt_iterations)},
        {"adapt.batch_size", std::to_string(adapt_batch_size)},
        {"adapt.base_lr", format_double(adapt_base_lr)},
        {"adapt.phase1_frac", format_double(adapt_phase1_frac)},
        {"adapt.mask_ft_iterations", std::to_string(mask_ft_iterations)},
        {"eval.language", eval_language},
        {"eval.split", eval_split},
        {"ablate.axis", ablate_axis},
        {"ablate.grid", join_list(ablate_grid)},
        {"ablate.seeds", join_list(seed_strings)},
        {"analyze.n_parts", std::to_string(analyze_n_parts)},
        {"analyze.indicator", bool_name(analyze_indicator)},
        {"analyze.standardize", bool_name(analyze_standardize)},
        {"analyze.permutations", std::to_string(analyze_permutations)},
        {"paths.corpus", corpus_path},
        {"paths.low_res_corpus", low_res_corpus_path},
        {"paths.checkpoint", checkpoint_path},
        {"paths.t_history", t_history_path},
    };
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& [key, value] : entries()) out += key + " = " + value + "\n";
    return out;
}

}  // namespace maskasr
