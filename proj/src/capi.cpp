#include "maskasr.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "maskasr/common.hpp"
#include "maskasr/config.hpp"
#include "maskasr/pipeline.hpp"

struct maskasr_config {
    maskasr::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// Runs `fn`, translating C++ failures into status codes + the thread-local
// message.
template <typename Fn>
maskasr_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MASKASR_OK;
    } catch (const maskasr::Error& e) {
        g_last_error = e.what();
        return static_cast<maskasr_status>(static_cast<int>(e.code()));
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MASKASR_INTERNAL;
    }
}

maskasr_status require(bool ok, const char* what) {
    if (ok) return MASKASR_OK;
    g_last_error = std::string(what) + " must not be NULL";
    return MASKASR_INVALID_ARG;
}

using StepFn = maskasr::StepResult (*)(const maskasr::ExperimentConfig&, const std::string&);

maskasr_status run_step(StepFn step, const maskasr_config* cfg, const char* out_dir,
                        char** files_out, char** summary_out) {
    if (files_out) *files_out = nullptr;
    if (summary_out) *summary_out = nullptr;
    if (maskasr_status s = require(cfg != nullptr, "cfg"); s != MASKASR_OK) return s;
    if (maskasr_status s = require(out_dir != nullptr, "out_dir"); s != MASKASR_OK) return s;
    return guarded([&] {
        const maskasr::StepResult res = step(cfg->cfg, out_dir);
        if (files_out) {
            std::string joined;
            for (const auto& f : res.outputs) joined += f + "\n";
            *files_out = dup_string(joined);
        }
        if (summary_out) *summary_out = dup_string(res.summary);
    });
}

}  // namespace

extern "C" {

const char* maskasr_status_name(maskasr_status status) {
    return maskasr::error_code_name(static_cast<maskasr::ErrorCode>(static_cast<int>(status)));
}

const char* maskasr_last_error(void) { return g_last_error.c_str(); }

void maskasr_set_verbosity(int level) { maskasr::set_verbosity(level); }

void maskasr_string_free(char* s) { std::free(s); }

maskasr_config* maskasr_config_new(void) { return new (std::nothrow) maskasr_config(); }

void maskasr_config_free(maskasr_config* cfg) { delete cfg; }

maskasr_status maskasr_config_load_file(maskasr_config* cfg, const char* path) {
    if (maskasr_status s = require(cfg != nullptr, "cfg"); s != MASKASR_OK) return s;
    if (maskasr_status s = require(path != nullptr, "path"); s != MASKASR_OK) return s;
    return guarded([&] { cfg->cfg = maskasr::load_config_file(path, cfg->cfg); });
}

maskasr_status maskasr_config_set(maskasr_config* cfg, const char* key, const char* value) {
    if (maskasr_status s = require(cfg != nullptr, "cfg"); s != MASKASR_OK) return s;
    if (maskasr_status s = require(key != nullptr, "key"); s != MASKASR_OK) return s;
    if (maskasr_status s = require(value != nullptr, "value"); s != MASKASR_OK) return s;
    return guarded([&] { maskasr::apply_config_entry(cfg->cfg, key, value); });
}

maskasr_status maskasr_config_validate(const maskasr_config* cfg) {
    if (maskasr_status s = require(cfg != nullptr, "cfg"); s != MASKASR_OK) return s;
    return guarded([&] { cfg->cfg.validate(); });
}

maskasr_status maskasr_config_text(const maskasr_config* cfg, char** text_out) {
    if (text_out) *text_out = nullptr;
    if (maskasr_status s = require(cfg != nullptr, "cfg"); s != MASKASR_OK) return s;
    if (maskasr_status s = require(text_out != nullptr, "text_out"); s != MASKASR_OK) return s;
    return guarded([&] { *text_out = dup_string(cfg->cfg.to_text()); });
}

maskasr_status maskasr_run_gen_data(const maskasr_config* cfg, const char* out_dir,
                                    char** files_out, char** summary_out) {
    return run_step(maskasr::run_gen_data, cfg, out_dir, files_out, summary_out);
}

maskasr_status maskasr_run_train(const maskasr_config* cfg, const char* out_dir,
                                 char** files_out, char** summary_out) {
    return run_step(maskasr::run_train, cfg, out_dir, files_out, summary_out);
}

maskasr_status maskasr_run_adapt(const maskasr_config* cfg, const char* out_dir,
                                 char** files_out, char** summary_out) {
    return run_step(maskasr::run_adapt, cfg, out_dir, files_out, summary_out);
}

maskasr_status maskasr_run_eval(const maskasr_config* cfg, const char* out_dir,
                                char** files_out, char** summary_out) {
    return run_step(maskasr::run_eval, cfg, out_dir, files_out, summary_out);
}

maskasr_status maskasr_run_ablate(const maskasr_config* cfg, const char* out_dir,
                                  char** files_out, char** summary_out) {
    return run_step(maskasr::run_ablate, cfg, out_dir, files_out, summary_out);
}

maskasr_status maskasr_run_analyze(const maskasr_config* cfg, const char* out_dir,
                                   char** files_out, char** summary_out) {
    return run_step(maskasr::run_analyze, cfg, out_dir, files_out, summary_out);
}

}  // extern "C"
