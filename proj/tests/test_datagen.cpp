#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "maskasr/common.hpp"
#include "maskasr/datagen.hpp"

using namespace maskasr;

namespace {

double overlap_fraction(const LanguageSpec& a, const LanguageSpec& b) {
    std::set<int> av(a.vocab.begin(), a.vocab.end());
    int shared = 0;
    for (const int s : b.vocab) shared += av.count(s);
    return static_cast<double>(shared) / static_cast<double>(a.vocab.size());
}

double vec_dist(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("world counts match the request") {
    auto world = build_world(2, 4, 7);
    CHECK(world.families.size() == 2);
    CHECK(world.languages.size() == 8);
    CHECK(world.n_symbols() == 24);
    for (const auto& lang : world.languages) {
        CHECK(lang.vocab.size() == 8);
        CHECK(std::set<int>(lang.vocab.begin(), lang.vocab.end()).size() == 8);
    }
}

TEST_CASE("world generation is deterministic per seed") {
    auto a = build_world(2, 3, 42);
    auto b = build_world(2, 3, 42);
    for (size_t f = 0; f < a.families.size(); ++f) {
        CHECK(a.families[f].prototypes == b.families[f].prototypes);
    }
    for (size_t l = 0; l < a.languages.size(); ++l) {
        CHECK(a.languages[l].vocab == b.languages[l].vocab);
        CHECK(a.languages[l].perturb == b.languages[l].perturb);
    }
}

TEST_CASE("different seeds give different perturbations") {
    auto base = build_world(1, 2, 0);
    int differing = 0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        auto other = build_world(1, 2, seed);
        if (other.languages[0].perturb != base.languages[0].perturb) ++differing;
    }
    CHECK(differing == 10);
}

TEST_CASE("family members overlap on most of their vocabulary, families on none") {
    auto world = build_world(2, 4, 9);
    for (size_t i = 0; i < world.languages.size(); ++i) {
        for (size_t j = i + 1; j < world.languages.size(); ++j) {
            const auto& a = world.languages[i];
            const auto& b = world.languages[j];
            if (a.family == b.family) {
                CHECK(overlap_fraction(a, b) >= 0.6);
            } else {
                CHECK(overlap_fraction(a, b) == 0.0);
            }
        }
    }
}

TEST_CASE("prototypes respect the distance floor and perturbations the cap") {
    auto world = build_world(3, 2, 11);
    for (const auto& fam : world.families) {
        CHECK(fam.min_pairwise_dist >= world.cfg.min_prototype_dist);
    }
    for (const auto& lang : world.languages) {
        const double cap = 0.49 * world.families[static_cast<size_t>(lang.family)].min_pairwise_dist;
        for (int64_t s = 0; s < world.cfg.lang_vocab; ++s) {
            double norm = 0.0;
            for (int64_t i = 0; i < world.cfg.feature_dim; ++i) {
                const double v = lang.perturb[static_cast<size_t>(s * world.cfg.feature_dim + i)];
                norm += v * v;
            }
            CHECK(std::sqrt(norm) <= cap + 1e-12);
        }
    }
}

TEST_CASE("clean frames classify to their own prototype") {
    // A noiseless frame is prototype + capped offset; it must stay nearer to
    // its own prototype than to any other in the world.
    auto world = build_world(2, 4, 13);
    const int64_t dim = world.cfg.feature_dim;
    for (const auto& lang : world.languages) {
        for (size_t s = 0; s < lang.vocab.size(); ++s) {
            const int global = lang.vocab[s];
            const auto& fam = world.families[static_cast<size_t>(lang.family)];
            std::vector<double> frame(static_cast<size_t>(dim));
            const double* proto = fam.prototypes.data() + (global - lang.family * world.cfg.family_pool) * dim;
            for (int64_t i = 0; i < dim; ++i) frame[static_cast<size_t>(i)] = proto[i] + lang.perturb[s * static_cast<size_t>(dim) + static_cast<size_t>(i)];

            int best = -1;
            double best_d = 1e300;
            for (const auto& f2 : world.families) {
                for (int64_t p = 0; p < world.cfg.family_pool; ++p) {
                    const double d = vec_dist(frame.data(), f2.prototypes.data() + p * dim, dim);
                    if (d < best_d) {
                        best_d = d;
                        best = static_cast<int>(f2.id * world.cfg.family_pool + p);
                    }
                }
            }
            CHECK(best == global);
        }
    }
}

TEST_CASE("corpora satisfy CTC feasibility and determinism") {
    auto world = build_world(2, 2, 17);
    auto a = sample_corpus(world, 1, 20, 99);
    auto b = sample_corpus(world, 1, 20, 99);
    auto c = sample_corpus(world, 1, 20, 100);
    REQUIRE(a.size() == 20);
    bool any_diff = false;
    for (size_t u = 0; u < a.size(); ++u) {
        CHECK(a[u].features->shape[0] >= static_cast<int64_t>(a[u].transcript.size()));
        CHECK(a[u].features->data == b[u].features->data);
        CHECK(a[u].transcript == b[u].transcript);
        if (a[u].features->data != c[u].features->data) any_diff = true;
        CHECK(a[u].transcript.size() >= 4);
        CHECK(a[u].transcript.size() <= 10);
    }
    CHECK(any_diff);
}

TEST_CASE("zero noise repeats a symbol's frames exactly") {
    DatagenConfig cfg;
    cfg.noise_scale = 0.0;
    auto world = build_world(1, 1, 21, cfg);
    auto utts = sample_corpus(world, 0, 10, 5);
    // Collect the distinct frame vectors; there can be at most one per symbol.
    std::set<std::vector<double>> distinct;
    for (const auto& u : utts) {
        const int64_t dim = cfg.feature_dim;
        for (int64_t t = 0; t < u.features->shape[0]; ++t) {
            distinct.insert(std::vector<double>(u.features->data.begin() + t * dim,
                                                u.features->data.begin() + (t + 1) * dim));
        }
    }
    CHECK(distinct.size() <= static_cast<size_t>(cfg.lang_vocab));
}

TEST_CASE("low-resource languages join or avoid existing families as asked") {
    auto world = build_world(2, 3, 23);
    const size_t before = world.languages.size();

    auto joined = add_low_resource_languages(world, 2, false, 7);
    CHECK(joined.size() == 2);
    for (const int64_t id : joined) {
        const auto& lang = world.languages[static_cast<size_t>(id)];
        CHECK(lang.family < 2);
        // Shares the family core with the family's first member.
        CHECK(overlap_fraction(world.languages[static_cast<size_t>(lang.family * 3)], lang) >= 0.6);
    }

    auto fresh = add_low_resource_languages(world, 1, true, 8);
    const auto& hard = world.languages[static_cast<size_t>(fresh[0])];
    CHECK(hard.family == 2);
    for (size_t l = 0; l < before; ++l) {
        CHECK(overlap_fraction(world.languages[l], hard) == 0.0);
    }
}

TEST_CASE("default corpus sizes follow the one-sixth rule") {
    CHECK(kStageATrainUtts == 512);
    CHECK(kLowResTrainUtts == 86);
    CHECK(std::abs(kLowResTrainUtts * 6 - kStageATrainUtts) <= 4);
}

TEST_CASE("near-duplicate languages are tiny offsets of the family base") {
    auto world = build_world(2, 2, 31);
    auto dups = add_near_duplicate_languages(world, 0, 3, 0.05, 77);
    CHECK(dups.size() == 3);
    const auto& base = world.languages[0];
    for (const int64_t id : dups) {
        const auto& dup = world.languages[static_cast<size_t>(id)];
        CHECK(dup.family == 0);
        CHECK(dup.vocab == base.vocab);
        CHECK(dup.perturb != base.perturb);
        double total = 0.0;
        for (size_t i = 0; i < dup.perturb.size(); ++i) {
            total += (dup.perturb[i] - base.perturb[i]) * (dup.perturb[i] - base.perturb[i]);
        }
        // 128 entries of sigma=0.05 noise: total distance stays well under 1.
        CHECK(std::sqrt(total) < 1.0);
    }
    CHECK(world.languages[static_cast<size_t>(dups[0])].tag == "aad0");
}

TEST_CASE("corpus sets round-trip through the directory format byte-identically") {
    namespace fs = std::filesystem;
    const std::string dir1 = "datagen_test_tmp/one";
    const std::string dir2 = "datagen_test_tmp/two";
    fs::remove_all("datagen_test_tmp");

    auto world = build_world(2, 2, 37);
    auto set = make_corpus_set(world, {0, 1, 2, 3}, 6, 3);
    save_corpus_set(dir1, set);

    auto loaded = load_corpus_set(dir1);
    CHECK(loaded.seed == set.seed);
    CHECK(loaded.feature_dim == set.feature_dim);
    CHECK(loaded.n_symbols == set.n_symbols);
    REQUIRE(loaded.languages.size() == set.languages.size());
    for (size_t l = 0; l < set.languages.size(); ++l) {
        const auto& a = set.languages[l];
        const auto& b = loaded.languages[l];
        CHECK(a.tag == b.tag);
        CHECK(a.family == b.family);
        CHECK(a.vocab == b.vocab);
        REQUIRE(a.train.size() == b.train.size());
        for (size_t u = 0; u < a.train.size(); ++u) {
            CHECK(a.train[u].features->data == b.train[u].features->data);
            CHECK(a.train[u].transcript == b.train[u].transcript);
        }
    }

    save_corpus_set(dir2, loaded);
    for (const auto& lc : set.languages) {
        CHECK(slurp(dir1 + "/" + lc.tag + ".train.bin") == slurp(dir2 + "/" + lc.tag + ".train.bin"));
        CHECK(slurp(dir1 + "/" + lc.tag + ".dev.bin") == slurp(dir2 + "/" + lc.tag + ".dev.bin"));
    }
    CHECK(slurp(dir1 + "/corpus.manifest") == slurp(dir2 + "/corpus.manifest"));
    fs::remove_all("datagen_test_tmp");
}

TEST_CASE("corrupted corpus files are rejected with a clear error") {
    namespace fs = std::filesystem;
    const std::string dir = "datagen_test_tmp/corrupt";
    fs::remove_all("datagen_test_tmp");

    auto world = build_world(1, 1, 41);
    auto set = make_corpus_set(world, {0}, 3, 2);
    save_corpus_set(dir, set);

    // Truncate the train split.
    const std::string train = dir + "/aa.train.bin";
    const std::string bytes = slurp(train);
    std::ofstream out(train, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_corpus_set(dir), Error);

    CHECK_THROWS_AS(load_corpus_set("datagen_test_tmp/missing"), Error);
    fs::remove_all("datagen_test_tmp");
}
