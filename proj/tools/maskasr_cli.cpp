// Command-line front end. Talks to the library exclusively through the C API
// in maskasr.h; every experiment knob lives in the configuration document,
// and the flags below are overrides layered on top of it.
#include <cstdio>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <maskasr.h>

namespace {

using RunFn = maskasr_status (*)(const maskasr_config*, const char*, char**, char**);

struct Invocation {
    std::vector<std::string> config_files;
    std::vector<std::pair<std::string, std::string>> overrides;  // key, value
    std::string out_dir = ".";
    bool quiet = false;
};

// One line on stderr, fixed shape: "error <code> <name>: <message>".
int report_failure(maskasr_status status, std::string message) {
    for (char& c : message) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    std::fprintf(stderr, "error %d %s: %s\n", static_cast<int>(status),
                 maskasr_status_name(status), message.c_str());
    return static_cast<int>(status);
}

int run_subcommand(RunFn run, const Invocation& inv) {
    if (inv.quiet) maskasr_set_verbosity(0);

    maskasr_config* cfg = maskasr_config_new();
    if (!cfg) return report_failure(MASKASR_INTERNAL, "out of memory");
    auto finish = [&](int code) {
        maskasr_config_free(cfg);
        return code;
    };

    for (const auto& path : inv.config_files) {
        if (maskasr_status s = maskasr_config_load_file(cfg, path.c_str()); s != MASKASR_OK) {
            return finish(report_failure(s, maskasr_last_error()));
        }
    }
    // Flags override whatever the files said.
    for (const auto& [key, value] : inv.overrides) {
        if (maskasr_status s = maskasr_config_set(cfg, key.c_str(), value.c_str());
            s != MASKASR_OK) {
            return finish(report_failure(s, maskasr_last_error()));
        }
    }

    char* files = nullptr;
    char* summary = nullptr;
    const maskasr_status s = run(cfg, inv.out_dir.c_str(), &files, &summary);
    if (s != MASKASR_OK) {
        maskasr_string_free(files);
        maskasr_string_free(summary);
        return finish(report_failure(s, maskasr_last_error()));
    }
    if (files && files[0]) std::fputs(files, stdout);
    if (!inv.quiet && summary && summary[0]) std::fputs(summary, stdout);
    maskasr_string_free(files);
    maskasr_string_free(summary);
    return finish(0);
}

// Registers a flag whose value overrides one config key.
void add_override(CLI::App* cmd, Invocation& inv, const std::string& flag,
                  const std::string& key, const std::string& help) {
    cmd->add_option(
        flag,
        [&inv, key](const std::vector<std::string>& vals) {
            inv.overrides.emplace_back(key, vals.back());
            return true;
        },
        help);
}

// Registers the flags shared by every subcommand.
void add_common_options(CLI::App* cmd, Invocation& inv) {
    cmd->add_option("--config", inv.config_files,
                    "Configuration file(s), applied in order (`key = value` lines)");
    add_override(cmd, inv, "--seed", "seed", "Experiment seed, overriding the config files");
    cmd->add_option("--out", inv.out_dir, "Output directory (default: current directory)");
    cmd->add_flag("--quiet", inv.quiet, "Suppress progress chatter and summaries");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale multilingual ASR with per-language binary weight masks"};
    app.require_subcommand(1);

    struct Command {
        CLI::App* cmd;
        RunFn run;
        Invocation inv;
    };
    std::deque<Command> commands;  // stable addresses for the option callbacks
    auto register_command = [&](const std::string& name, const std::string& help, RunFn run) {
        commands.push_back({app.add_subcommand(name, help), run, {}});
        add_common_options(commands.back().cmd, commands.back().inv);
        return &commands.back();
    };

    register_command("gen-data", "Generate the synthetic corpora", maskasr_run_gen_data);
    register_command("train", "Train the multilingual model on paths.corpus", maskasr_run_train);
    Command* adapt = register_command(
        "adapt", "Adapt the checkpoint to the low-resource languages", maskasr_run_adapt);
    Command* eval = register_command("eval", "Greedy-decode CER report", maskasr_run_eval);
    Command* ablate =
        register_command("ablate", "Sweep one axis over a value grid", maskasr_run_ablate);
    Command* analyze = register_command(
        "analyze", "Mapping similarity, family contrast and stability reports",
        maskasr_run_analyze);

    add_override(adapt->cmd, adapt->inv, "--checkpoint", "paths.checkpoint",
                 "Stage-A checkpoint to grow");
    add_override(eval->cmd, eval->inv, "--checkpoint", "paths.checkpoint",
                 "Checkpoint to evaluate");
    add_override(eval->cmd, eval->inv, "--corpus", "paths.corpus", "Corpus directory");
    add_override(eval->cmd, eval->inv, "--language", "eval.language",
                 "Restrict to one language tag");
    add_override(ablate->cmd, ablate->inv, "--axis", "ablate.axis",
                 "Sweep axis (t, K, alpha_beta, gamma, mask_variant, weight_update)");
    add_override(ablate->cmd, ablate->inv, "--grid", "ablate.grid",
                 "Comma-separated grid values");
    add_override(analyze->cmd, analyze->inv, "--checkpoint", "paths.checkpoint",
                 "Checkpoint to analyze");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_failure(MASKASR_INVALID_ARG, e.what());
    }

    for (const Command& c : commands) {
        if (c.cmd->parsed()) return run_subcommand(c.run, c.inv);
    }
    return report_failure(MASKASR_INVALID_ARG, "no subcommand given");
}
