#include "maskasr/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "maskasr/common.hpp"
#include "maskasr/rng.hpp"

namespace maskasr {

namespace {

constexpr const char* kMagic = "maskasr-checkpoint";
constexpr int64_t kFormatVersion = 1;

// %.17g survives a text round trip bit-exactly for every finite double.
std::string exact_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_le64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back((char)(uint8_t)(bits >> (8 * i)));
}

double read_le64(const char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= (uint64_t)(uint8_t)p[i] << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

// The bias slot names, aligned with EncoderModel::base_biases() order.
std::vector<std::string> bias_slot_names(int64_t n_blocks) {
    std::vector<std::string> names = {"input_proj.bias"};
    for (int64_t i = 0; i < n_blocks; ++i) {
        const std::string b = "block" + std::to_string(i) + ".";
        for (const char* slot : {"ln1.bias", "qkv.bias", "proj.bias", "ln2.bias", "ff1.bias",
                                 "ff2.bias"}) {
            names.push_back(b + slot);
        }
    }
    names.push_back("final_ln.bias");
    return names;
}

// Languages holding a dedicated score copy; save-time validation that every
// masked layer agrees on the set.
std::vector<int64_t> dedicated_languages(const EncoderModel& model) {
    std::vector<int64_t> langs;
    if (model.blocks.empty()) return langs;
    for (const auto& [lang, tensor] : model.blocks[0].qkv.dedicated_scores) {
        (void)tensor;
        langs.push_back(lang);
    }
    for (const auto& blk : model.blocks) {
        for (const MaskedLinear* layer : {&blk.qkv, &blk.proj}) {
            std::vector<int64_t> here;
            for (const auto& [lang, tensor] : layer->dedicated_scores) {
                (void)tensor;
                here.push_back(lang);
            }
            if (here != langs) {
                fail(ErrorCode::kState,
                     "dedicated score copies must cover the same languages in every layer");
            }
        }
    }
    return langs;
}

struct LineReader {
    const std::string& buf;
    size_t pos = 0;
    int64_t line_no = 0;

    std::string next() {
        if (pos >= buf.size()) {
            fail(ErrorCode::kData, "checkpoint manifest ends early after line %lld",
                 (long long)line_no);
        }
        const size_t end = buf.find('\n', pos);
        if (end == std::string::npos) {
            fail(ErrorCode::kData, "checkpoint manifest line %lld is not newline-terminated",
                 (long long)(line_no + 1));
        }
        std::string line = buf.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        return line;
    }
};

int64_t parse_manifest_int(const std::string& what, const std::string& text) {
    char* end = nullptr;
    const long long v = std::strtoll(text.c_str(), &end, 10);
    if (text.empty() || end == text.c_str() || *end != '\0') {
        fail(ErrorCode::kData, "checkpoint %s is not an integer: '%s'", what.c_str(),
             text.c_str());
    }
    return v;
}

double parse_manifest_double(const std::string& what, const std::string& text) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end == text.c_str() || *end != '\0') {
        fail(ErrorCode::kData, "checkpoint %s is not a number: '%s'", what.c_str(), text.c_str());
    }
    return v;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (ss >> f) fields.push_back(f);
    return fields;
}

std::string expect_count_line(LineReader& reader, const std::string& keyword) {
    const auto fields = split_fields(reader.next());
    if (fields.size() != 2 || fields[0] != keyword) {
        fail(ErrorCode::kData, "checkpoint manifest line %lld: expected '%s <count>'",
             (long long)reader.line_no, keyword.c_str());
    }
    return fields[1];
}

}  // namespace

std::vector<NamedParam> named_parameters(const EncoderModel& model) {
    std::vector<NamedParam> out;
    auto add = [&](const std::string& name, ParamSelector group, const TensorPtr& t) {
        out.push_back({name, group, t});
    };
    auto block_name = [](int64_t i) { return "block" + std::to_string(i); };

    add("input_proj.weight", ParamSelector::kBackboneW, model.proj_w);
    for (size_t i = 0; i < model.blocks.size(); ++i) {
        const Block& blk = model.blocks[i];
        const std::string b = block_name((int64_t)i) + ".";
        add(b + "ln1.gain", ParamSelector::kBackboneW, blk.ln1_gain);
        add(b + "qkv.weight", ParamSelector::kBackboneW, blk.qkv.weight);
        add(b + "proj.weight", ParamSelector::kBackboneW, blk.proj.weight);
        add(b + "ln2.gain", ParamSelector::kBackboneW, blk.ln2_gain);
        add(b + "ff1.weight", ParamSelector::kBackboneW, blk.ff1_w);
        add(b + "ff2.weight", ParamSelector::kBackboneW, blk.ff2_w);
    }
    add("final_ln.gain", ParamSelector::kBackboneW, model.final_gain);

    for (size_t i = 0; i < model.blocks.size(); ++i) {
        const Block& blk = model.blocks[i];
        const std::string b = block_name((int64_t)i) + ".";
        for (size_t k = 0; k < blk.qkv.scores.size(); ++k) {
            add(b + "qkv.score" + std::to_string(k), ParamSelector::kSpecialistM,
                blk.qkv.scores[k]);
        }
        if (model.cfg.rule == MaskRule::kLearned) {
            add(b + "qkv.threshold", ParamSelector::kSpecialistM, blk.qkv.threshold);
        }
        for (size_t k = 0; k < blk.proj.scores.size(); ++k) {
            add(b + "proj.score" + std::to_string(k), ParamSelector::kSpecialistM,
                blk.proj.scores[k]);
        }
        if (model.cfg.rule == MaskRule::kLearned) {
            add(b + "proj.threshold", ParamSelector::kSpecialistM, blk.proj.threshold);
        }
    }

    for (size_t i = 0; i < model.blocks.size(); ++i) {
        const std::string b = block_name((int64_t)i) + ".";
        add(b + "qkv.mapping", ParamSelector::kMappingT, model.blocks[i].qkv.mapping);
        add(b + "proj.mapping", ParamSelector::kMappingT, model.blocks[i].proj.mapping);
    }

    const auto slot_names = bias_slot_names((int64_t)model.blocks.size());
    const auto base = model.base_biases();
    for (size_t j = 0; j < base.size(); ++j) add(slot_names[j], ParamSelector::kBiases, base[j]);

    for (size_t h = 0; h < model.heads.size(); ++h) {
        const std::string hn = "head" + std::to_string(h) + ".";
        add(hn + "weight", ParamSelector::kHeads, model.heads[h].weight);
        add(hn + "bias", ParamSelector::kHeads, model.heads[h].bias);
    }

    for (const auto& [lang, overlay] : model.bias_overlays) {
        const std::string prefix = "overlay" + std::to_string(lang) + ".";
        if (overlay.size() != slot_names.size()) {
            fail(ErrorCode::kState, "bias overlay of language %lld has %zu slots, expected %zu",
                 (long long)lang, overlay.size(), slot_names.size());
        }
        for (size_t j = 0; j < overlay.size(); ++j) {
            add(prefix + slot_names[j], ParamSelector::kBiases, overlay[j]);
        }
    }

    for (int64_t lang : dedicated_languages(model)) {
        const std::string prefix = "dedicated" + std::to_string(lang) + ".";
        for (size_t i = 0; i < model.blocks.size(); ++i) {
            const std::string b = block_name((int64_t)i) + ".";
            add(prefix + b + "qkv.score", ParamSelector::kSpecialistM,
                model.blocks[i].qkv.dedicated_scores.at(lang));
            add(prefix + b + "proj.score", ParamSelector::kSpecialistM,
                model.blocks[i].proj.dedicated_scores.at(lang));
        }
    }
    return out;
}

void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const std::vector<std::pair<std::string, std::string>>& config_echo) {
    const int64_t n_langs = model.n_languages();
    for (const auto& tag : model.language_tags) {
        if (tag.empty() || tag.find_first_of(" \t\n") != std::string::npos) {
            fail(ErrorCode::kInvalidArg, "language tag '%s' cannot be stored in a checkpoint",
                 tag.c_str());
        }
    }
    // Overlays must cover exactly the languages added after the initial
    // build, which always form a suffix of the registry.
    int64_t n_initial = n_langs;
    for (const auto& [lang, overlay] : model.bias_overlays) {
        (void)overlay;
        n_initial = std::min(n_initial, lang);
    }
    for (int64_t l = n_initial; l < n_langs; ++l) {
        if (model.bias_overlays.find(l) == model.bias_overlays.end()) {
            fail(ErrorCode::kState,
                 "bias overlays must cover a contiguous suffix of the language registry");
        }
    }
    std::set<int64_t> dedicated;
    for (int64_t lang : dedicated_languages(model)) dedicated.insert(lang);

    const auto entries = named_parameters(model);

    std::string manifest;
    manifest += std::string(kMagic) + " " + std::to_string(kFormatVersion) + "\n";
    manifest += "encoder " + std::to_string(model.cfg.d_model) + " " +
                std::to_string(model.cfg.n_blocks) + " " + std::to_string(model.cfg.n_heads) +
                " " + std::to_string(model.cfg.d_ff) + " " +
                std::to_string(model.cfg.input_feature_dim) + " " +
                std::to_string(model.cfg.n_scores) + " " + exact_double(model.cfg.sparsity) +
                " " + mask_rule_name(model.cfg.rule) + " " + exact_double(model.cfg.dropout_rate) +
                " " + std::to_string(model.cfg.dense_layers ? 1 : 0) + "\n";
    manifest += "config " + std::to_string(config_echo.size()) + "\n";
    for (const auto& [key, value] : config_echo) manifest += key + " = " + value + "\n";
    manifest += "initial_languages " + std::to_string(n_initial) + "\n";
    manifest += "languages " + std::to_string(n_langs) + "\n";
    for (int64_t l = 0; l < n_langs; ++l) {
        manifest += model.language_tags[(size_t)l] + " " +
                    std::to_string(model.head_of_language[(size_t)l]) + " " +
                    (l >= n_initial ? "1" : "0") + " " + (dedicated.count(l) ? "1" : "0") + "\n";
    }
    manifest += "heads " + std::to_string(model.heads.size()) + "\n";
    for (const auto& h : model.heads) manifest += std::to_string(h.vocab) + "\n";

    manifest += "params " + std::to_string(entries.size()) + "\n";
    int64_t offset = 0;
    std::string payload;
    for (const auto& e : entries) {
        manifest += e.name + " " + param_selector_name(e.group) + " f64 " +
                    (e.tensor->requires_grad ? "0" : "1") + " " + std::to_string(offset) + " " +
                    std::to_string(e.tensor->shape.size());
        for (int64_t d : e.tensor->shape) manifest += " " + std::to_string(d);
        manifest += "\n";
        for (double v : e.tensor->data) append_le64(payload, v);
        offset += (int64_t)e.tensor->data.size() * 8;
    }
    manifest += "payload " + std::to_string(payload.size()) + "\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open %s for writing", path.c_str());
    out << manifest;
    out.write(payload.data(), (std::streamsize)payload.size());
    if (!out) fail(ErrorCode::kIo, "failed writing checkpoint %s", path.c_str());
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot open checkpoint %s", path.c_str());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    LineReader reader{buf};

    {
        const auto fields = split_fields(reader.next());
        if (fields.size() != 2 || fields[0] != kMagic) {
            fail(ErrorCode::kData, "not a checkpoint file: bad magic line");
        }
        const int64_t version = parse_manifest_int("format version", fields[1]);
        if (version != kFormatVersion) {
            fail(ErrorCode::kData, "unsupported checkpoint format version %lld",
                 (long long)version);
        }
    }

    EncoderConfig cfg;
    {
        const auto fields = split_fields(reader.next());
        if (fields.size() != 11 || fields[0] != "encoder") {
            fail(ErrorCode::kData, "checkpoint encoder line needs 10 fields");
        }
        cfg.d_model = parse_manifest_int("d_model", fields[1]);
        cfg.n_blocks = parse_manifest_int("n_blocks", fields[2]);
        cfg.n_heads = parse_manifest_int("n_heads", fields[3]);
        cfg.d_ff = parse_manifest_int("d_ff", fields[4]);
        cfg.input_feature_dim = parse_manifest_int("input_feature_dim", fields[5]);
        cfg.n_scores = parse_manifest_int("n_scores", fields[6]);
        cfg.sparsity = parse_manifest_double("sparsity", fields[7]);
        cfg.rule = mask_rule_from_name(fields[8]);
        cfg.dropout_rate = parse_manifest_double("dropout_rate", fields[9]);
        const int64_t dense = parse_manifest_int("dense_layers", fields[10]);
        if (dense != 0 && dense != 1) fail(ErrorCode::kData, "dense_layers flag must be 0 or 1");
        cfg.dense_layers = dense == 1;
    }

    CheckpointData out;
    const int64_t n_config = parse_manifest_int("config count", expect_count_line(reader, "config"));
    if (n_config < 0) fail(ErrorCode::kData, "negative config entry count");
    for (int64_t i = 0; i < n_config; ++i) {
        const std::string line = reader.next();
        const size_t eq = line.find(" = ");
        if (eq == std::string::npos) {
            fail(ErrorCode::kData, "config echo line %lld is not 'key = value'",
                 (long long)reader.line_no);
        }
        out.config_echo.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }

    const int64_t n_initial =
        parse_manifest_int("initial language count", expect_count_line(reader, "initial_languages"));
    const int64_t n_langs =
        parse_manifest_int("language count", expect_count_line(reader, "languages"));
    if (n_initial < 1 || n_langs < n_initial) {
        fail(ErrorCode::kData, "language registry must start with at least one initial language");
    }
    struct LangEntry {
        std::string tag;
        int64_t head;
        bool overlay, dedicated;
    };
    std::vector<LangEntry> langs;
    std::set<std::string> seen_tags;
    for (int64_t l = 0; l < n_langs; ++l) {
        const auto fields = split_fields(reader.next());
        if (fields.size() != 4) {
            fail(ErrorCode::kData, "language entry %lld needs 'tag head overlay dedicated'",
                 (long long)l);
        }
        LangEntry e;
        e.tag = fields[0];
        e.head = parse_manifest_int("head index", fields[1]);
        e.overlay = parse_manifest_int("overlay flag", fields[2]) != 0;
        e.dedicated = parse_manifest_int("dedicated flag", fields[3]) != 0;
        if (!seen_tags.insert(e.tag).second) {
            fail(ErrorCode::kData, "language tag '%s' appears twice", e.tag.c_str());
        }
        if (e.overlay != (l >= n_initial)) {
            fail(ErrorCode::kData,
                 "bias overlay flags must mark exactly the languages after the initial %lld",
                 (long long)n_initial);
        }
        if (l < n_initial && e.head != 0) {
            fail(ErrorCode::kData, "initial languages use the shared head 0");
        }
        langs.push_back(e);
    }

    const int64_t n_heads = parse_manifest_int("head count", expect_count_line(reader, "heads"));
    if (n_heads < 1) fail(ErrorCode::kData, "checkpoint needs at least one head");
    std::vector<int64_t> head_vocab;
    for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t vocab = parse_manifest_int("head vocabulary", reader.next());
        if (vocab < 1) fail(ErrorCode::kData, "head %lld has an empty vocabulary", (long long)h);
        head_vocab.push_back(vocab);
    }
    for (const auto& e : langs) {
        if (e.head < 0 || e.head >= n_heads) {
            fail(ErrorCode::kData, "language '%s' references missing head %lld", e.tag.c_str(),
                 (long long)e.head);
        }
    }

    // Rebuild the structure; every value is overwritten from the payload.
    EncoderModel& model = out.model;
    {
        Rng scratch(0);
        std::vector<std::string> initial_tags;
        for (int64_t l = 0; l < n_initial; ++l) initial_tags.push_back(langs[(size_t)l].tag);
        model = make_encoder(cfg, initial_tags, head_vocab[0], scratch);
        for (int64_t h = 1; h < n_heads; ++h) attach_head(model, head_vocab[(size_t)h], scratch);
        for (int64_t l = n_initial; l < n_langs; ++l) {
            add_language(model, langs[(size_t)l].tag, langs[(size_t)l].head, RowInit::kZeros, 0.0,
                         nullptr);
        }
        for (int64_t l = 0; l < n_langs; ++l) {
            if (!langs[(size_t)l].dedicated) continue;
            for (auto& blk : model.blocks) {
                blk.qkv.materialize_dedicated_score(l);
                blk.proj.materialize_dedicated_score(l);
            }
        }
    }

    const auto entries = named_parameters(model);
    const int64_t n_params =
        parse_manifest_int("parameter count", expect_count_line(reader, "params"));
    if (n_params != (int64_t)entries.size()) {
        fail(ErrorCode::kData, "parameter table has %lld entries, the model needs %zu",
             (long long)n_params, entries.size());
    }
    int64_t expected_offset = 0;
    std::vector<bool> frozen_flags;
    for (const auto& e : entries) {
        const auto fields = split_fields(reader.next());
        if (fields.size() < 6) {
            fail(ErrorCode::kData, "parameter line for '%s' is malformed", e.name.c_str());
        }
        if (fields[0] != e.name) {
            fail(ErrorCode::kData, "parameter table mismatch: manifest has '%s', model expects '%s'",
                 fields[0].c_str(), e.name.c_str());
        }
        if (fields[1] != param_selector_name(e.group)) {
            fail(ErrorCode::kData, "parameter '%s' is in group %s, the model partition says %s",
                 e.name.c_str(), fields[1].c_str(), param_selector_name(e.group));
        }
        if (fields[2] != "f64") {
            fail(ErrorCode::kData, "parameter '%s' has unsupported dtype %s", e.name.c_str(),
                 fields[2].c_str());
        }
        const int64_t frozen = parse_manifest_int("frozen flag", fields[3]);
        if (frozen != 0 && frozen != 1) {
            fail(ErrorCode::kData, "parameter '%s' frozen flag must be 0 or 1", e.name.c_str());
        }
        const int64_t offset = parse_manifest_int("offset", fields[4]);
        if (offset != expected_offset) {
            fail(ErrorCode::kData,
                 "parameter '%s' starts at offset %lld, expected %lld (offsets must tile the "
                 "payload)",
                 e.name.c_str(), (long long)offset, (long long)expected_offset);
        }
        const int64_t rank = parse_manifest_int("rank", fields[5]);
        if ((int64_t)fields.size() != 6 + rank) {
            fail(ErrorCode::kData, "parameter '%s' lists %zu dims for rank %lld", e.name.c_str(),
                 fields.size() - 6, (long long)rank);
        }
        std::vector<int64_t> shape;
        for (int64_t d = 0; d < rank; ++d) {
            shape.push_back(parse_manifest_int("dimension", fields[(size_t)(6 + d)]));
        }
        if (shape != e.tensor->shape) {
            fail(ErrorCode::kShape, "parameter '%s' has shape mismatch against the rebuilt model",
                 e.name.c_str());
        }
        frozen_flags.push_back(frozen == 1);
        expected_offset += (int64_t)e.tensor->data.size() * 8;
    }

    const int64_t payload_bytes =
        parse_manifest_int("payload size", expect_count_line(reader, "payload"));
    if (payload_bytes != expected_offset) {
        fail(ErrorCode::kData, "payload size %lld does not match the parameter table (%lld)",
             (long long)payload_bytes, (long long)expected_offset);
    }
    if ((int64_t)(buf.size() - reader.pos) != payload_bytes) {
        fail(ErrorCode::kData, "payload holds %lld bytes, manifest promises %lld",
             (long long)(buf.size() - reader.pos), (long long)payload_bytes);
    }

    const char* p = buf.data() + reader.pos;
    for (size_t i = 0; i < entries.size(); ++i) {
        TensorPtr t = entries[i].tensor;
        for (double& v : t->data) {
            v = read_le64(p);
            p += 8;
        }
        for (double v : t->data) {
            if (!std::isfinite(v)) {
                fail(ErrorCode::kData, "parameter '%s' contains a non-finite value",
                     entries[i].name.c_str());
            }
        }
        t->requires_grad = !frozen_flags[i];
    }
    return out;
}

void save_t_history_csv(const std::string& path,
                        const std::vector<std::vector<double>>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open %s for writing", path.c_str());
    const size_t width = history.empty() ? 0 : history[0].size();
    out << "snapshot";
    for (size_t j = 0; j < width; ++j) out << ",v" << j;
    out << "\n";
    for (size_t i = 0; i < history.size(); ++i) {
        if (history[i].size() != width) {
            fail(ErrorCode::kShape, "mapping snapshots must share one length");
        }
        out << i;
        for (double v : history[i]) out << "," << format_double(v);
        out << "\n";
    }
    if (!out) fail(ErrorCode::kIo, "failed writing %s", path.c_str());
}

std::vector<std::vector<double>> load_t_history_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::kIo, "cannot open %s", path.c_str());
    std::string line;
    if (!std::getline(in, line)) {
        fail(ErrorCode::kData, "%s is not a mapping history file", path.c_str());
    }
    size_t width = 0;
    {
        std::stringstream header(line);
        std::string cell;
        bool first = true;
        while (std::getline(header, cell, ',')) {
            if (first) {
                if (cell != "snapshot") {
                    fail(ErrorCode::kData, "%s is not a mapping history file", path.c_str());
                }
                first = false;
                continue;
            }
            if (cell != "v" + std::to_string(width)) {
                fail(ErrorCode::kData, "%s has a malformed header column '%s'", path.c_str(),
                     cell.c_str());
            }
            ++width;
        }
        if (first) fail(ErrorCode::kData, "%s is not a mapping history file", path.c_str());
    }
    std::vector<std::vector<double>> history;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) {
                const int64_t idx = parse_manifest_int("snapshot index", cell);
                if (idx != (int64_t)history.size()) {
                    fail(ErrorCode::kData, "snapshot rows must be numbered consecutively");
                }
                first = false;
                continue;
            }
            row.push_back(parse_manifest_double("snapshot value", cell));
        }
        if (row.size() != width || row.empty()) {
            fail(ErrorCode::kData, "snapshot row %zu has %zu values, expected %zu", history.size(),
                 row.size(), width);
        }
        history.push_back(std::move(row));
    }
    return history;
}

}  // namespace maskasr
