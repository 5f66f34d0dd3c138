#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maskasr/checkpoint.hpp"
#include "maskasr/common.hpp"
#include "maskasr/config.hpp"
#include "maskasr/datagen.hpp"
#include "maskasr/model.hpp"
#include "maskasr/trainer.hpp"

using namespace maskasr;

namespace {

struct SilenceLogs {
    SilenceLogs() { set_verbosity(0); }
} silence_logs;

ErrorCode thrown_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::kOk;
}

std::string thrown_message(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), (std::streamsize)bytes.size());
    REQUIRE(out.good());
}

// A trained-then-adapted model with every structural feature the checkpoint
// format has to carry: an extra head, a bias overlay, and dedicated scores.
struct AdaptedFixture {
    World world;
    CorpusSet corpus;
    EncoderModel model;
    std::string adapted_tag;

    AdaptedFixture() : world(build_world(2, 2, 77)) {
        std::vector<int64_t> langs((size_t)world.languages.size());
        std::iota(langs.begin(), langs.end(), 0);
        corpus = make_corpus_set(world, langs, 32, 8);

        EncoderConfig ec;
        ec.d_model = 16;
        ec.n_blocks = 2;
        ec.n_heads = 2;
        ec.d_ff = 24;
        ec.n_scores = 3;
        std::vector<std::string> tags;
        for (const auto& lc : corpus.languages) tags.push_back(lc.tag);
        Rng rng(seed_stream(77, "model"));
        model = make_encoder(ec, tags, world.n_symbols(), rng);

        TrainConfig tc;
        tc.iterations = 30;
        tc.batch_size = 2;
        tc.base_lr = 1e-3;
        tc.eval_interval = 0;
        tc.seed = 77;
        train_multilingual(model, corpus, tc);

        const auto new_langs = add_low_resource_languages(world, 1, false, 7);
        CorpusSet low_res = make_corpus_set(world, new_langs, 24, 6);
        adapted_tag = low_res.languages[0].tag;
        TrainConfig ac = tc;
        ac.iterations = 20;
        adapt_low_resource(model, low_res.languages[0], ac);
        TrainConfig fc = tc;
        fc.iterations = 10;
        further_mask_ft(model, low_res.languages[0], fc);
    }
};

std::vector<double> forward_bits(EncoderModel& model, const LanguageCorpus& lc) {
    NoGradGuard guard;
    const int64_t lang = model.language_index(lc.tag);
    const int64_t head = model.head_of_language[(size_t)lang];
    const auto w = assemble_weights(model, lang, /*detached=*/true);
    return encoder_forward(model, lc.dev[0].features, lang, head, &w)->data;
}

}  // namespace

TEST_CASE("config defaults validate and expose the derived fields") {
    ExperimentConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    cfg.seed = 42;
    cfg.datagen.feature_dim = 24;
    cfg.adapt_phase1_frac = 0.25;
    CHECK(cfg.encoder_config().input_feature_dim == 24);
    CHECK(cfg.train_config().seed == 42);
    CHECK(cfg.train_config().adapt_phase1_frac == 0.25);

    // adapt.* replaces only the budget; everything else follows trainer.*.
    cfg.trainer.baseline = Baseline::kSingleMask;
    cfg.trainer.alpha = 3.0;
    cfg.adapt_iterations = 321;
    cfg.adapt_batch_size = 7;
    cfg.adapt_base_lr = 2e-3;
    const TrainConfig at = cfg.adapt_train_config();
    CHECK(at.iterations == 321);
    CHECK(at.batch_size == 7);
    CHECK(at.base_lr == 2e-3);
    CHECK(at.baseline == Baseline::kNone);
    CHECK(at.alpha == 3.0);
    CHECK(at.seed == 42);

    CHECK(cfg.sweep_seeds() == std::vector<uint64_t>{42, 43, 44});
    cfg.ablate_seeds = {9, 11};
    CHECK(cfg.sweep_seeds() == std::vector<uint64_t>{9, 11});
}

TEST_CASE("a config document parses every value type") {
    const std::string text =
        "# experiment setup\n"
        "seed = 9\n"
        "\n"
        "data.families = 3\n"
        "  data.noise_scale =   0.2   \n"
        "model.dense_layers = true\n"
        "model.rule = thres\n"
        "trainer.beta = 4   # update the mapping every fourth step\n"
        "trainer.base_lr = 2.5e-3\n"
        "trainer.weight_update = freeze\n"
        "eval.language = lang3_x\n"
        "ablate.grid = 0.1, 0.5\n"
        "ablate.seeds = 4,5\n"
        "paths.checkpoint = run/model.ckpt\n";
    const ExperimentConfig cfg = parse_config_text(text);
    CHECK(cfg.seed == 9);
    CHECK(cfg.families == 3);
    CHECK(cfg.datagen.noise_scale == 0.2);
    CHECK(cfg.encoder.dense_layers == true);
    CHECK(cfg.encoder.rule == MaskRule::kThres);
    CHECK(cfg.trainer.beta == 4);
    CHECK(cfg.trainer.base_lr == 2.5e-3);
    CHECK(cfg.trainer.weight_update == WeightUpdate::kFreeze);
    CHECK(cfg.eval_language == "lang3_x");
    CHECK(cfg.ablate_grid == std::vector<std::string>{"0.1", "0.5"});
    CHECK(cfg.ablate_seeds == std::vector<uint64_t>{4, 5});
    CHECK(cfg.checkpoint_path == "run/model.ckpt");
    // Unmentioned keys keep their defaults.
    CHECK(cfg.langs_per_family == 4);
    CHECK(cfg.trainer.alpha == ExperimentConfig{}.trainer.alpha);
}

TEST_CASE("unknown, duplicate and malformed config lines are rejected") {
    auto parse_fails = [](const std::string& text) {
        return thrown_code([&] { parse_config_text(text); });
    };
    CHECK(parse_fails("data.wobble = 3\n") == ErrorCode::kConfig);
    CHECK(parse_fails("seed = 1\nseed = 2\n") == ErrorCode::kConfig);
    CHECK(parse_fails("just words\n") == ErrorCode::kConfig);
    CHECK(parse_fails("= 3\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.beta = 1.5\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.base_lr = abc\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.base_lr = nan\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.base_lr = inf\n") == ErrorCode::kConfig);
    CHECK(parse_fails("model.dense_layers = True\n") == ErrorCode::kConfig);
    CHECK(parse_fails("model.dense_layers = 1\n") == ErrorCode::kConfig);
    CHECK(parse_fails("seed = -3\n") == ErrorCode::kConfig);
    CHECK(parse_fails("model.rule = banana\n") == ErrorCode::kConfig);
    CHECK(parse_fails("eval.split = test\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.weight_update = sometimes\n") == ErrorCode::kConfig);
    CHECK(parse_fails("trainer.baseline = other\n") == ErrorCode::kConfig);
    CHECK(parse_fails("ablate.grid = 0.1,,0.3\n") == ErrorCode::kConfig);
    CHECK(parse_fails("ablate.seeds = 4,x\n") == ErrorCode::kConfig);

    // Error messages carry the line number of the offending assignment.
    const std::string msg = thrown_message([&] { parse_config_text("seed = 1\nnonsense\n"); });
    CHECK(msg.find("line 2") != std::string::npos);

    // The same key may be layered over a base config, just not repeated
    // within one document.
    ExperimentConfig base = parse_config_text("seed = 5\n");
    const ExperimentConfig layered = parse_config_text("seed = 6\n", base);
    CHECK(layered.seed == 6);
    CHECK(base.seed == 5);
}

TEST_CASE("config serialization round-trips through the parser") {
    ExperimentConfig cfg;
    cfg.seed = 17;
    cfg.families = 3;
    cfg.low_res_fresh_family = true;
    cfg.datagen.noise_scale = 0.125;
    cfg.encoder.sparsity = 0.7;
    cfg.encoder.rule = MaskRule::kLearned;
    cfg.trainer.base_lr = 5e-4;
    cfg.trainer.weight_update = WeightUpdate::kRandom;
    cfg.trainer.baseline = Baseline::kSharedWeight;
    cfg.eval_language = "lang0_b";
    cfg.ablate_axis = "gamma";
    cfg.ablate_grid = {"100", "300"};
    cfg.ablate_seeds = {8};
    cfg.corpus_path = "corpus.bin";

    const std::string text = cfg.to_text();
    const ExperimentConfig back = parse_config_text(text);
    CHECK(back.to_text() == text);

    // Every key appears exactly once, as its own line.
    const auto entries = cfg.entries();
    std::set<std::string> keys;
    for (const auto& [key, value] : entries) keys.insert(key);
    CHECK(keys.size() == entries.size());
    CHECK((size_t)std::count(text.begin(), text.end(), '\n') == entries.size());

    // The default config serializes and reparses to itself as well.
    const ExperimentConfig defaults;
    CHECK(parse_config_text(defaults.to_text()).to_text() == defaults.to_text());
}

TEST_CASE("config validation rejects out-of-range values") {
    auto broken = [](const std::function<void(ExperimentConfig&)>& mutate) {
        ExperimentConfig cfg;
        mutate(cfg);
        return thrown_code([&] { cfg.validate(); });
    };
    CHECK(broken([](ExperimentConfig& c) { c.families = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.langs_per_family = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.train_utts = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.low_res_languages = -1; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.low_res_train_utts = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.mask_ft_iterations = -1; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.analyze_n_parts = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.analyze_permutations = 0; }) == ErrorCode::kConfig);
    // Embedded sections are validated through the same call.
    CHECK(broken([](ExperimentConfig& c) { c.encoder.d_model = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.trainer.iterations = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.datagen.lang_vocab = 0; }) == ErrorCode::kConfig);
    CHECK(broken([](ExperimentConfig& c) { c.adapt_iterations = 0; }) == ErrorCode::kConfig);
    // A zero-utterance low-resource split is fine when no language uses it.
    CHECK(broken([](ExperimentConfig& c) {
              c.low_res_languages = 0;
              c.low_res_train_utts = 0;
          }) == ErrorCode::kOk);
}

TEST_CASE("config files load from disk and report missing paths") {
    const std::string path = "config_tmp.cfg";
    write_file(path, "seed = 31\ntrainer.gamma = 250\n");
    const ExperimentConfig cfg = load_config_file(path);
    CHECK(cfg.seed == 31);
    CHECK(cfg.trainer.gamma == 250);
    std::filesystem::remove(path);
    CHECK(thrown_code([&] { load_config_file("no_such_file.cfg"); }) == ErrorCode::kIo);
}

TEST_CASE("named parameters walk the partition in order and cover adaptation state") {
    AdaptedFixture fx;
    const auto named = named_parameters(fx.model);

    // Unique names throughout.
    std::set<std::string> names;
    for (const auto& e : named) names.insert(e.name);
    CHECK(names.size() == named.size());

    // The leading region is exactly params(kAll), pointer for pointer, and
    // its group labels reproduce each selector's own list.
    const auto all = fx.model.params(ParamSelector::kAll);
    REQUIRE(named.size() > all.size());
    for (size_t i = 0; i < all.size(); ++i) CHECK(named[i].tensor.get() == all[i].get());
    for (ParamSelector s : {ParamSelector::kBackboneW, ParamSelector::kSpecialistM,
                            ParamSelector::kMappingT, ParamSelector::kBiases,
                            ParamSelector::kHeads}) {
        const auto expect = fx.model.params(s);
        std::vector<Tensor*> got;
        for (size_t i = 0; i < all.size(); ++i) {
            if (named[i].group == s) got.push_back(named[i].tensor.get());
        }
        REQUIRE(got.size() == expect.size());
        for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expect[i].get());
    }

    CHECK(named[0].name == "input_proj.weight");
    CHECK(names.count("block0.qkv.score0"));
    CHECK(names.count("block1.proj.mapping"));
    CHECK(names.count("final_ln.bias"));
    CHECK(names.count("head0.weight"));
    CHECK(names.count("head1.bias"));  // the adapted language's own head

    // The adapted language appends one overlay entry per bias slot and one
    // dedicated score per masked layer, after the shared region.
    const int64_t lang = fx.model.language_index(fx.adapted_tag);
    const std::string overlay = "overlay" + std::to_string(lang) + ".";
    const std::string dedicated = "dedicated" + std::to_string(lang) + ".";
    size_t n_overlay = 0, n_dedicated = 0;
    for (size_t i = all.size(); i < named.size(); ++i) {
        if (named[i].name.rfind(overlay, 0) == 0) ++n_overlay;
        if (named[i].name.rfind(dedicated, 0) == 0) ++n_dedicated;
    }
    CHECK(n_overlay == fx.model.base_biases().size());
    CHECK(n_dedicated == 2 * fx.model.blocks.size());
    CHECK(names.count(overlay + "input_proj.bias"));
    CHECK(names.count(overlay + "block1.ff2.bias"));
    CHECK(names.count(dedicated + "block0.qkv.score"));
    CHECK(n_overlay + n_dedicated + all.size() == named.size());

    // Threshold entries exist exactly when the learned rule is active.
    CHECK(!names.count("block0.qkv.threshold"));
    EncoderConfig lc;
    lc.d_model = 16;
    lc.n_blocks = 1;
    lc.n_heads = 2;
    lc.d_ff = 24;
    lc.rule = MaskRule::kLearned;
    Rng rng(3);
    EncoderModel learned = make_encoder(lc, {"a", "b"}, 4, rng);
    std::set<std::string> learned_names;
    for (const auto& e : named_parameters(learned)) learned_names.insert(e.name);
    CHECK(learned_names.count("block0.qkv.threshold"));
    CHECK(learned_names.count("block0.proj.threshold"));
}

TEST_CASE("checkpoints round-trip byte for byte") {
    AdaptedFixture fx;
    ExperimentConfig echo_cfg;
    echo_cfg.seed = 77;
    echo_cfg.eval_language = fx.adapted_tag;

    const std::string path_a = "ckpt_tmp_a.bin";
    const std::string path_b = "ckpt_tmp_b.bin";
    save_checkpoint(path_a, fx.model, echo_cfg.entries());
    CheckpointData loaded = load_checkpoint(path_a);

    // The embedded config document comes back verbatim.
    CHECK(loaded.config_echo == echo_cfg.entries());

    // Every value array is bit-identical under the same name and group.
    const auto orig = named_parameters(fx.model);
    const auto back = named_parameters(loaded.model);
    REQUIRE(orig.size() == back.size());
    for (size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].name == back[i].name);
        CHECK(orig[i].group == back[i].group);
        CHECK(orig[i].tensor->shape == back[i].tensor->shape);
        CHECK(orig[i].tensor->requires_grad == back[i].tensor->requires_grad);
        REQUIRE(orig[i].tensor->data.size() == back[i].tensor->data.size());
        CHECK(std::memcmp(orig[i].tensor->data.data(), back[i].tensor->data.data(),
                          orig[i].tensor->data.size() * sizeof(double)) == 0);
    }

    // Registries survive: tags, head assignment, head vocabularies.
    CHECK(loaded.model.language_tags == fx.model.language_tags);
    CHECK(loaded.model.head_of_language == fx.model.head_of_language);
    REQUIRE(loaded.model.heads.size() == fx.model.heads.size());
    for (size_t h = 0; h < fx.model.heads.size(); ++h) {
        CHECK(loaded.model.heads[h].vocab == fx.model.heads[h].vocab);
    }

    // The loaded model computes bit-identical outputs.
    for (const auto& lc : fx.corpus.languages) {
        CHECK(forward_bits(loaded.model, lc) == forward_bits(fx.model, lc));
    }

    // Saving the loaded model reproduces the file byte for byte.
    save_checkpoint(path_b, loaded.model, loaded.config_echo);
    CHECK(read_file(path_a) == read_file(path_b));
    std::filesystem::remove(path_a);
    std::filesystem::remove(path_b);
}

TEST_CASE("single-mask and dense models keep their structure through a checkpoint") {
    World world = build_world(2, 2, 13);
    std::vector<int64_t> langs((size_t)world.languages.size());
    std::iota(langs.begin(), langs.end(), 0);
    CorpusSet corpus = make_corpus_set(world, langs, 24, 6);
    std::vector<std::string> tags;
    for (const auto& lc : corpus.languages) tags.push_back(lc.tag);

    EncoderConfig ec;
    ec.d_model = 16;
    ec.n_blocks = 2;
    ec.n_heads = 2;
    ec.d_ff = 24;
    ec.n_scores = 3;
    TrainConfig tc;
    tc.iterations = 12;
    tc.batch_size = 2;
    tc.eval_interval = 0;
    tc.seed = 13;

    SUBCASE("single-mask baseline") {
        Rng rng(seed_stream(13, "model"));
        EncoderModel model = make_encoder(ec, tags, world.n_symbols(), rng);
        TrainConfig sc = tc;
        sc.baseline = Baseline::kSingleMask;
        train_multilingual(model, corpus, sc);
        REQUIRE(!model.blocks[0].qkv.mapping->requires_grad);

        const std::string path = "ckpt_tmp_single.bin";
        save_checkpoint(path, model);
        CheckpointData loaded = load_checkpoint(path);
        CHECK(loaded.model.cfg.n_scores == 1);
        CHECK(!loaded.model.blocks[0].qkv.mapping->requires_grad);
        CHECK(loaded.model.blocks[0].qkv.mapping->data ==
              model.blocks[0].qkv.mapping->data);
        for (const auto& lc : corpus.languages) {
            CHECK(forward_bits(loaded.model, lc) == forward_bits(model, lc));
        }
        std::filesystem::remove(path);
    }

    SUBCASE("dense model") {
        EncoderConfig dc = ec;
        dc.dense_layers = true;
        Rng rng(seed_stream(14, "model"));
        EncoderModel model = make_encoder(dc, tags, world.n_symbols(), rng);
        TrainConfig sc = tc;
        sc.baseline = Baseline::kSharedWeight;
        train_multilingual(model, corpus, sc);

        const std::string path = "ckpt_tmp_dense.bin";
        save_checkpoint(path, model);
        CheckpointData loaded = load_checkpoint(path);
        CHECK(loaded.model.cfg.dense_layers);
        for (const auto& lc : corpus.languages) {
            CHECK(forward_bits(loaded.model, lc) == forward_bits(model, lc));
        }
        std::filesystem::remove(path);
    }
}

TEST_CASE("corrupt checkpoints fail with the violated invariant named") {
    AdaptedFixture fx;
    const std::string path = "ckpt_tmp_good.bin";
    save_checkpoint(path, fx.model);
    const std::string good = read_file(path);
    std::filesystem::remove(path);

    const std::string bad = "ckpt_tmp_bad.bin";
    auto load_mutated = [&](const std::function<void(std::string&)>& mutate) {
        std::string bytes = good;
        mutate(bytes);
        write_file(bad, bytes);
        std::string message;
        ErrorCode code = ErrorCode::kOk;
        try {
            load_checkpoint(bad);
        } catch (const Error& e) {
            code = e.code();
            message = e.what();
        }
        std::filesystem::remove(bad);
        return std::make_pair(code, message);
    };
    auto replace_once = [](std::string& bytes, const std::string& from, const std::string& to) {
        const size_t at = bytes.find(from);
        REQUIRE(at != std::string::npos);
        bytes.replace(at, from.size(), to);
    };

    CHECK(thrown_code([] { load_checkpoint("no_such.ckpt"); }) == ErrorCode::kIo);

    auto [magic_code, magic_msg] = load_mutated([](std::string& b) { b[0] = 'X'; });
    CHECK(magic_code == ErrorCode::kData);
    CHECK(magic_msg.find("magic") != std::string::npos);

    auto [ver_code, ver_msg] = load_mutated([&](std::string& b) {
        replace_once(b, "maskasr-checkpoint 1", "maskasr-checkpoint 2");
    });
    CHECK(ver_code == ErrorCode::kData);
    CHECK(ver_msg.find("version") != std::string::npos);

    auto [trunc_code, trunc_msg] =
        load_mutated([](std::string& b) { b.resize(b.size() - 4); });
    CHECK(trunc_code == ErrorCode::kData);
    CHECK(trunc_msg.find("payload") != std::string::npos);

    auto [name_code, name_msg] = load_mutated([&](std::string& b) {
        replace_once(b, "\ninput_proj.weight backbone_w", "\ninput_proj.wrong backbone_w");
    });
    CHECK(name_code == ErrorCode::kData);
    CHECK(name_msg.find("input_proj.weight") != std::string::npos);

    auto [group_code, group_msg] = load_mutated([&](std::string& b) {
        replace_once(b, "\ninput_proj.weight backbone_w", "\ninput_proj.weight heads");
    });
    CHECK(group_code == ErrorCode::kData);
    CHECK(group_msg.find("group") != std::string::npos);

    // Shrink the first dimension of input_proj.weight ([16, 16] here); the
    // entry's own shape check fires before any offset bookkeeping.
    auto [shape_code, shape_msg] = load_mutated([&](std::string& b) {
        replace_once(b, " 2 16 16\n", " 2 15 16\n");
    });
    CHECK(shape_code == ErrorCode::kShape);
    CHECK(shape_msg.find("input_proj.weight") != std::string::npos);

    // All-ones bytes decode to a NaN payload value.
    auto [nan_code, nan_msg] = load_mutated([&](std::string& b) {
        for (size_t i = b.size() - 8; i < b.size(); ++i) b[i] = (char)0xFF;
    });
    CHECK(nan_code == ErrorCode::kData);
    CHECK(nan_msg.find("non-finite") != std::string::npos);

    auto [lang_code, lang_msg] = load_mutated([&](std::string& b) {
        replace_once(b, "initial_languages 4", "initial_languages 3");
    });
    CHECK(lang_code == ErrorCode::kData);
    CHECK(lang_msg.find("overlay") != std::string::npos);
}

TEST_CASE("checkpoint saving rejects models the format cannot represent") {
    EncoderConfig ec;
    ec.d_model = 16;
    ec.n_blocks = 2;
    ec.n_heads = 2;
    ec.d_ff = 24;
    Rng rng(5);
    EncoderModel model = make_encoder(ec, {"a", "b"}, 4, rng);
    const std::string path = "ckpt_tmp_reject.bin";

    SUBCASE("dedicated scores present in only one layer") {
        model.blocks[0].qkv.materialize_dedicated_score(0);
        CHECK(thrown_code([&] { save_checkpoint(path, model); }) == ErrorCode::kState);
    }
    SUBCASE("bias overlay that is not a registry suffix") {
        model.bias_overlays[0] = model.base_biases();
        CHECK(thrown_code([&] { save_checkpoint(path, model); }) == ErrorCode::kState);
    }
    SUBCASE("language tag with whitespace") {
        Rng rng2(6);
        EncoderModel spaced = make_encoder(ec, {"bad tag"}, 4, rng2);
        CHECK(thrown_code([&] { save_checkpoint(path, spaced); }) == ErrorCode::kInvalidArg);
    }
    std::filesystem::remove(path);
}

TEST_CASE("mapping history files round-trip") {
    const std::string path = "t_history_tmp.csv";
    const std::vector<std::vector<double>> history = {{0.5, -1.0, 2.0}, {3.0, 4.0, -5.25}};
    save_t_history_csv(path, history);
    CHECK(load_t_history_csv(path) == history);

    const std::string text = read_file(path);
    CHECK(text == "snapshot,v0,v1,v2\n0,0.5,-1,2\n1,3,4,-5.25\n");

    save_t_history_csv(path, {});
    CHECK(load_t_history_csv(path).empty());

    write_file(path, "snapshot,v0\n1,0.5\n");
    CHECK(thrown_code([&] { load_t_history_csv(path); }) == ErrorCode::kData);
    write_file(path, "snapshot,v0,v1\n0,0.5\n");
    CHECK(thrown_code([&] { load_t_history_csv(path); }) == ErrorCode::kData);
    write_file(path, "wrong header\n");
    CHECK(thrown_code([&] { load_t_history_csv(path); }) == ErrorCode::kData);
    std::filesystem::remove(path);

    CHECK(thrown_code([&] { load_t_history_csv("absent.csv"); }) == ErrorCode::kIo);
    CHECK(thrown_code([&] { save_t_history_csv(path, {{1.0, 2.0}, {3.0}}); }) ==
          ErrorCode::kShape);
    std::filesystem::remove(path);
}
