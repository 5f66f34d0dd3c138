#include "maskasr/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "maskasr/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "corpus files are written as little-endian raw words");

namespace maskasr {

namespace {

double pair_dist(const double* a, const double* b, int64_t dim) {
    double s = 0.0;
    for (int64_t i = 0; i < dim; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

FamilySpec place_family(int64_t id, const DatagenConfig& cfg, Rng& rng) {
    FamilySpec fam;
    fam.id = id;
    fam.prototypes.resize(static_cast<size_t>(cfg.family_pool * cfg.feature_dim));
    for (int64_t p = 0; p < cfg.family_pool; ++p) {
        double* row = fam.prototypes.data() + p * cfg.feature_dim;
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 1000) {
                fail(ErrorCode::kData, "could not place %lld distinct prototypes at distance %g",
                     static_cast<long long>(cfg.family_pool), cfg.min_prototype_dist);
            }
            for (int64_t i = 0; i < cfg.feature_dim; ++i) row[i] = rng.normal(0.0, 1.0);
            bool ok = true;
            for (int64_t q = 0; q < p && ok; ++q) {
                ok = pair_dist(row, fam.prototypes.data() + q * cfg.feature_dim, cfg.feature_dim) >=
                     cfg.min_prototype_dist;
            }
            if (ok) break;
        }
    }
    fam.min_pairwise_dist = std::numeric_limits<double>::infinity();
    for (int64_t p = 0; p < cfg.family_pool; ++p) {
        for (int64_t q = p + 1; q < cfg.family_pool; ++q) {
            fam.min_pairwise_dist = std::min(
                fam.min_pairwise_dist, pair_dist(fam.prototypes.data() + p * cfg.feature_dim,
                                                 fam.prototypes.data() + q * cfg.feature_dim, cfg.feature_dim));
        }
    }
    return fam;
}

LanguageSpec make_language(const World& world, int64_t family, const std::string& tag,
                           uint64_t lang_seed, double perturb_scale) {
    const DatagenConfig& cfg = world.cfg;
    const FamilySpec& fam = world.families[static_cast<size_t>(family)];
    Rng rng(lang_seed);

    LanguageSpec lang;
    lang.tag = tag;
    lang.family = family;
    // The first core_share pool symbols are common to the whole family; the
    // remainder is a random draw from the rest of the pool.
    const int64_t base = family * cfg.family_pool;
    for (int64_t p = 0; p < cfg.core_share; ++p) lang.vocab.push_back(static_cast<int>(base + p));
    std::vector<int> rest;
    for (int64_t p = cfg.core_share; p < cfg.family_pool; ++p) rest.push_back(static_cast<int>(base + p));
    const auto perm = rng.permutation(static_cast<int64_t>(rest.size()));
    for (int64_t i = 0; i < cfg.lang_vocab - cfg.core_share; ++i) {
        lang.vocab.push_back(rest[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    }
    std::sort(lang.vocab.begin(), lang.vocab.end());

    // Per-symbol offsets, capped below half the prototype separation so a
    // nearest-prototype decision stays correct on noiseless frames.
    const double cap = 0.49 * fam.min_pairwise_dist;
    lang.perturb.resize(static_cast<size_t>(cfg.lang_vocab * cfg.feature_dim));
    for (int64_t s = 0; s < cfg.lang_vocab; ++s) {
        double* row = lang.perturb.data() + s * cfg.feature_dim;
        double norm = 0.0;
        for (int64_t i = 0; i < cfg.feature_dim; ++i) {
            row[i] = rng.normal(0.0, perturb_scale);
            norm += row[i] * row[i];
        }
        norm = std::sqrt(norm);
        if (norm > cap) {
            const double shrink = cap / norm;
            for (int64_t i = 0; i < cfg.feature_dim; ++i) row[i] *= shrink;
        }
    }
    return lang;
}

void cap_perturbations(LanguageSpec& lang, const FamilySpec& fam, const DatagenConfig& cfg) {
    const double cap = 0.49 * fam.min_pairwise_dist;
    for (int64_t s = 0; s < cfg.lang_vocab; ++s) {
        double* row = lang.perturb.data() + s * cfg.feature_dim;
        double norm = 0.0;
        for (int64_t i = 0; i < cfg.feature_dim; ++i) norm += row[i] * row[i];
        norm = std::sqrt(norm);
        if (norm > cap) {
            const double shrink = cap / norm;
            for (int64_t i = 0; i < cfg.feature_dim; ++i) row[i] *= shrink;
        }
    }
}

}  // namespace

void DatagenConfig::validate() const {
    if (feature_dim < 1) fail(ErrorCode::kInvalidArg, "feature_dim must be positive");
    if (family_pool < 1 || lang_vocab < 1 || core_share < 0) {
        fail(ErrorCode::kInvalidArg, "symbol counts must be positive");
    }
    if (core_share > lang_vocab || lang_vocab > family_pool) {
        fail(ErrorCode::kInvalidArg, "need core_share <= lang_vocab <= family_pool (got %lld/%lld/%lld)",
             static_cast<long long>(core_share), static_cast<long long>(lang_vocab),
             static_cast<long long>(family_pool));
    }
    if (min_frames_per_symbol < 1 || max_frames_per_symbol < min_frames_per_symbol) {
        fail(ErrorCode::kInvalidArg, "bad frames-per-symbol range");
    }
    if (min_utt_symbols < 1 || max_utt_symbols < min_utt_symbols) {
        fail(ErrorCode::kInvalidArg, "bad utterance length range");
    }
    if (noise_scale < 0.0 || perturb_scale < 0.0 || min_prototype_dist <= 0.0) {
        fail(ErrorCode::kInvalidArg, "scales must be non-negative and the prototype floor positive");
    }
}

int64_t World::language_index(const std::string& tag) const {
    for (size_t i = 0; i < languages.size(); ++i) {
        if (languages[i].tag == tag) return static_cast<int64_t>(i);
    }
    fail(ErrorCode::kUnknownLanguage, "language '%s' not in world", tag.c_str());
}

World build_world(int64_t n_families, int64_t langs_per_family, uint64_t seed,
                  const DatagenConfig& cfg) {
    cfg.validate();
    if (n_families < 1 || langs_per_family < 1) {
        fail(ErrorCode::kInvalidArg, "need at least one family and one language per family");
    }
    if (n_families > 20 || langs_per_family > 20) {
        fail(ErrorCode::kInvalidArg, "world too large for the tag scheme (max 20x20)");
    }
    World world;
    world.cfg = cfg;
    world.seed = seed;
    for (int64_t f = 0; f < n_families; ++f) {
        Rng fam_rng(seed_stream(seed, "family/" + std::to_string(f)));
        world.families.push_back(place_family(f, cfg, fam_rng));
    }
    for (int64_t f = 0; f < n_families; ++f) {
        for (int64_t j = 0; j < langs_per_family; ++j) {
            std::string tag;
            tag += static_cast<char>('a' + f);
            tag += static_cast<char>('a' + j);
            world.languages.push_back(
                make_language(world, f, tag, seed_stream(seed, "lang/" + tag), cfg.perturb_scale));
        }
    }
    return world;
}

std::vector<Utterance> sample_corpus(const World& world, int64_t lang_index, int64_t n_utts,
                                     uint64_t seed) {
    if (lang_index < 0 || lang_index >= static_cast<int64_t>(world.languages.size())) {
        fail(ErrorCode::kUnknownLanguage, "language index %lld not in world",
             static_cast<long long>(lang_index));
    }
    if (n_utts < 1) fail(ErrorCode::kInvalidArg, "need at least one utterance");
    const DatagenConfig& cfg = world.cfg;
    const LanguageSpec& lang = world.languages[static_cast<size_t>(lang_index)];
    const FamilySpec& fam = world.families[static_cast<size_t>(lang.family)];
    Rng rng(seed);

    std::vector<Utterance> out;
    out.reserve(static_cast<size_t>(n_utts));
    for (int64_t u = 0; u < n_utts; ++u) {
        const int64_t n_sym = rng.uniform_int(cfg.min_utt_symbols, cfg.max_utt_symbols);
        Utterance utt;
        utt.language = lang.tag;
        std::vector<double> frames;
        for (int64_t s = 0; s < n_sym; ++s) {
            const int64_t local = rng.uniform_int(0, cfg.lang_vocab - 1);
            const int global = lang.vocab[static_cast<size_t>(local)];
            utt.transcript.push_back(global);
            const double* proto =
                fam.prototypes.data() + (global - lang.family * cfg.family_pool) * cfg.feature_dim;
            const double* offset = lang.perturb.data() + local * cfg.feature_dim;
            const int64_t reps = rng.uniform_int(cfg.min_frames_per_symbol, cfg.max_frames_per_symbol);
            for (int64_t r = 0; r < reps; ++r) {
                for (int64_t i = 0; i < cfg.feature_dim; ++i) {
                    frames.push_back(proto[i] + offset[i] + rng.normal(0.0, cfg.noise_scale));
                }
            }
        }
        const int64_t n_frames = static_cast<int64_t>(frames.size()) / cfg.feature_dim;
        utt.features = tensor(std::move(frames), {n_frames, cfg.feature_dim});
        out.push_back(std::move(utt));
    }
    return out;
}

std::vector<int64_t> add_low_resource_languages(World& world, int64_t n_new, bool fresh_family,
                                                uint64_t seed) {
    if (n_new < 1) fail(ErrorCode::kInvalidArg, "need at least one new language");
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < n_new; ++i) {
        int64_t family;
        if (fresh_family) {
            Rng fam_rng(seed_stream(seed, "newfam/" + std::to_string(i)));
            family = static_cast<int64_t>(world.families.size());
            world.families.push_back(place_family(family, world.cfg, fam_rng));
        } else {
            family = i % static_cast<int64_t>(world.families.size());
        }
        std::string tag = "x";
        tag += static_cast<char>('a' + i);
        world.languages.push_back(make_language(world, family, tag, seed_stream(seed, "newlang/" + tag),
                                                world.cfg.perturb_scale));
        ids.push_back(static_cast<int64_t>(world.languages.size()) - 1);
    }
    return ids;
}

std::vector<int64_t> add_near_duplicate_languages(World& world, int64_t family, int64_t n_dup,
                                                  double dup_scale, uint64_t seed) {
    if (n_dup < 1) fail(ErrorCode::kInvalidArg, "need at least one duplicate");
    const LanguageSpec* base = nullptr;
    for (const auto& l : world.languages) {
        if (l.family == family) {
            base = &l;
            break;
        }
    }
    if (base == nullptr) fail(ErrorCode::kInvalidArg, "family %lld has no member to duplicate",
                              static_cast<long long>(family));
    const std::string base_tag = base->tag;
    const std::vector<int> base_vocab = base->vocab;
    const std::vector<double> base_perturb = base->perturb;

    std::vector<int64_t> ids;
    for (int64_t d = 0; d < n_dup; ++d) {
        LanguageSpec dup;
        dup.tag = base_tag + "d" + std::to_string(d);
        dup.family = family;
        dup.vocab = base_vocab;
        dup.perturb = base_perturb;
        Rng rng(seed_stream(seed, "dup/" + dup.tag));
        for (auto& v : dup.perturb) v += rng.normal(0.0, dup_scale);
        cap_perturbations(dup, world.families[static_cast<size_t>(family)], world.cfg);
        world.languages.push_back(std::move(dup));
        ids.push_back(static_cast<int64_t>(world.languages.size()) - 1);
    }
    return ids;
}

int64_t CorpusSet::language_index(const std::string& tag) const {
    for (size_t i = 0; i < languages.size(); ++i) {
        if (languages[i].tag == tag) return static_cast<int64_t>(i);
    }
    fail(ErrorCode::kUnknownLanguage, "language '%s' not in corpus", tag.c_str());
}

CorpusSet make_corpus_set(const World& world, const std::vector<int64_t>& langs, int64_t train_utts,
                          int64_t eval_utts) {
    CorpusSet set;
    set.seed = world.seed;
    set.feature_dim = world.cfg.feature_dim;
    set.n_symbols = world.n_symbols();
    for (const int64_t l : langs) {
        const LanguageSpec& spec = world.languages.at(static_cast<size_t>(l));
        LanguageCorpus lc;
        lc.tag = spec.tag;
        lc.family = spec.family;
        lc.vocab = spec.vocab;
        lc.train = sample_corpus(world, l, train_utts, seed_stream(world.seed, "corpus/" + spec.tag + "/train"));
        lc.dev = sample_corpus(world, l, eval_utts, seed_stream(world.seed, "corpus/" + spec.tag + "/dev"));
        set.languages.push_back(std::move(lc));
    }
    return set;
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f, const std::string& path) {
    uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4)) fail(ErrorCode::kIo, "truncated corpus file %s", path.c_str());
    return v;
}

void save_split(const std::string& path, const std::vector<Utterance>& utts, int64_t feature_dim) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::kIo, "cannot write %s", path.c_str());
    for (const auto& u : utts) {
        const int64_t frames = u.features->shape[0];
        write_u32(f, static_cast<uint32_t>(frames));
        write_u32(f, static_cast<uint32_t>(feature_dim));
        f.write(reinterpret_cast<const char*>(u.features->data.data()),
                static_cast<std::streamsize>(u.features->data.size() * sizeof(double)));
        write_u32(f, static_cast<uint32_t>(u.transcript.size()));
        for (const int id : u.transcript) {
            const int32_t v = id;
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!f) fail(ErrorCode::kIo, "short write to %s", path.c_str());
}

std::vector<Utterance> load_split(const std::string& path, const std::string& tag,
                                  int64_t expect_feature_dim, int64_t expect_count, int64_t n_symbols) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::kIo, "cannot open %s", path.c_str());
    std::vector<Utterance> out;
    for (int64_t u = 0; u < expect_count; ++u) {
        const uint32_t frames = read_u32(f, path);
        const uint32_t dim = read_u32(f, path);
        if (dim != static_cast<uint32_t>(expect_feature_dim)) {
            fail(ErrorCode::kData, "%s: feature dim %u does not match manifest %lld", path.c_str(), dim,
                 static_cast<long long>(expect_feature_dim));
        }
        std::vector<double> feat(static_cast<size_t>(frames) * dim);
        if (!f.read(reinterpret_cast<char*>(feat.data()),
                    static_cast<std::streamsize>(feat.size() * sizeof(double)))) {
            fail(ErrorCode::kIo, "truncated corpus file %s", path.c_str());
        }
        const uint32_t tlen = read_u32(f, path);
        if (tlen > frames) {
            fail(ErrorCode::kData, "%s: transcript of %u symbols cannot align into %u frames", path.c_str(),
                 tlen, frames);
        }
        Utterance utt;
        utt.language = tag;
        for (uint32_t i = 0; i < tlen; ++i) {
            int32_t v = 0;
            if (!f.read(reinterpret_cast<char*>(&v), 4)) fail(ErrorCode::kIo, "truncated corpus file %s", path.c_str());
            if (v < 0 || v >= n_symbols) {
                fail(ErrorCode::kData, "%s: symbol id %d outside union vocabulary of %lld", path.c_str(), v,
                     static_cast<long long>(n_symbols));
            }
            utt.transcript.push_back(v);
        }
        utt.features = tensor(std::move(feat), {static_cast<int64_t>(frames), expect_feature_dim});
        out.push_back(std::move(utt));
    }
    char extra;
    if (f.read(&extra, 1)) fail(ErrorCode::kData, "%s: trailing bytes after last utterance", path.c_str());
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

}  // namespace

void save_corpus_set(const std::string& dir, const CorpusSet& set) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create directory %s: %s", dir.c_str(), ec.message().c_str());

    const std::string manifest_path = dir + "/corpus.manifest";
    std::ofstream m(manifest_path, std::ios::trunc);
    if (!m) fail(ErrorCode::kIo, "cannot write %s", manifest_path.c_str());
    m << "corpus-format 1\n";
    m << "seed " << set.seed << "\n";
    m << "feature-dim " << set.feature_dim << "\n";
    m << "symbols " << set.n_symbols << "\n";
    m << "languages " << set.languages.size() << "\n";
    for (const auto& lc : set.languages) {
        m << "language " << lc.tag << " " << lc.family << " " << join_ints(lc.vocab) << " "
          << lc.train.size() << " " << lc.dev.size() << "\n";
        save_split(dir + "/" + lc.tag + ".train.bin", lc.train, set.feature_dim);
        save_split(dir + "/" + lc.tag + ".dev.bin", lc.dev, set.feature_dim);
    }
    if (!m) fail(ErrorCode::kIo, "short write to %s", manifest_path.c_str());
}

CorpusSet load_corpus_set(const std::string& dir) {
    const std::string manifest_path = dir + "/corpus.manifest";
    std::ifstream m(manifest_path);
    if (!m) fail(ErrorCode::kIo, "cannot open %s", manifest_path.c_str());

    CorpusSet set;
    std::string key;
    int fmt = 0;
    m >> key >> fmt;
    if (key != "corpus-format" || fmt != 1) {
        fail(ErrorCode::kData, "%s: not a corpus manifest (version 1)", manifest_path.c_str());
    }
    size_t n_langs = 0;
    m >> key >> set.seed;
    if (key != "seed") fail(ErrorCode::kData, "%s: expected 'seed'", manifest_path.c_str());
    m >> key >> set.feature_dim;
    if (key != "feature-dim") fail(ErrorCode::kData, "%s: expected 'feature-dim'", manifest_path.c_str());
    m >> key >> set.n_symbols;
    if (key != "symbols") fail(ErrorCode::kData, "%s: expected 'symbols'", manifest_path.c_str());
    m >> key >> n_langs;
    if (key != "languages") fail(ErrorCode::kData, "%s: expected 'languages'", manifest_path.c_str());

    for (size_t i = 0; i < n_langs; ++i) {
        LanguageCorpus lc;
        std::string vocab_csv;
        size_t n_train = 0, n_dev = 0;
        m >> key >> lc.tag >> lc.family >> vocab_csv >> n_train >> n_dev;
        if (!m || key != "language") fail(ErrorCode::kData, "%s: malformed language line", manifest_path.c_str());
        lc.vocab = split_ints(vocab_csv);
        lc.train = load_split(dir + "/" + lc.tag + ".train.bin", lc.tag, set.feature_dim,
                              static_cast<int64_t>(n_train), set.n_symbols);
        lc.dev = load_split(dir + "/" + lc.tag + ".dev.bin", lc.tag, set.feature_dim,
                            static_cast<int64_t>(n_dev), set.n_symbols);
        set.languages.push_back(std::move(lc));
    }
    return set;
}

}  // namespace maskasr
