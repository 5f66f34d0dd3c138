/* C interface of the masked multilingual ASR toolkit.
 *
 * Everything fallible returns a maskasr_status; on failure
 * maskasr_last_error() holds a one-line description until the next call on
 * the same thread. Strings handed back through char** out-parameters are
 * heap-allocated and must be released with maskasr_string_free(). */
#ifndef MASKASR_H
#define MASKASR_H

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; the values double as CLI exit codes and never change. */
typedef enum maskasr_status {
    MASKASR_OK = 0,
    MASKASR_INVALID_ARG = 1,
    MASKASR_CONFIG = 2,
    MASKASR_IO = 3,
    MASKASR_DATA = 4,
    MASKASR_SHAPE = 5,
    MASKASR_STATE = 6,
    MASKASR_UNKNOWN_LANGUAGE = 7,
    MASKASR_INFEASIBLE_TARGET = 8,
    MASKASR_DIVERGED = 9,
    MASKASR_INTERNAL = 10
} maskasr_status;

/* Stable lowercase name of a status ("ok", "config", ...). */
const char* maskasr_status_name(maskasr_status status);

/* Message of the most recent failure on the calling thread ("" when none). */
const char* maskasr_last_error(void);

/* Library progress chatter on stderr: 0 silent, 1 progress lines (default). */
void maskasr_set_verbosity(int level);

/* Releases a string returned through any char** parameter. NULL is a no-op. */
void maskasr_string_free(char* s);

/* Opaque experiment configuration: a flat `key = value` document with
 * defaults for every key. */
typedef struct maskasr_config maskasr_config;

maskasr_config* maskasr_config_new(void);
void maskasr_config_free(maskasr_config* cfg);

/* Layers a config file over the current values. */
maskasr_status maskasr_config_load_file(maskasr_config* cfg, const char* path);

/* Applies one `key = value` assignment. */
maskasr_status maskasr_config_set(maskasr_config* cfg, const char* key, const char* value);

/* Cross-field validation of the current values. */
maskasr_status maskasr_config_validate(const maskasr_config* cfg);

/* Canonical serialization: every key in documented order. */
maskasr_status maskasr_config_text(const maskasr_config* cfg, char** text_out);

/* Pipeline steps. Each reads the inputs named by the config, writes its
 * artifacts under out_dir (created if missing) and fills, when non-NULL,
 * *files_out with a newline-separated list of every file written and
 * *summary_out with a short human-readable report. All randomness derives
 * from the config seed: rerunning a step with the same configuration
 * reproduces its outputs byte for byte. */
maskasr_status maskasr_run_gen_data(const maskasr_config* cfg, const char* out_dir,
                                    char** files_out, char** summary_out);
maskasr_status maskasr_run_train(const maskasr_config* cfg, const char* out_dir,
                                 char** files_out, char** summary_out);
maskasr_status maskasr_run_adapt(const maskasr_config* cfg, const char* out_dir,
                                 char** files_out, char** summary_out);
maskasr_status maskasr_run_eval(const maskasr_config* cfg, const char* out_dir,
                                char** files_out, char** summary_out);
maskasr_status maskasr_run_ablate(const maskasr_config* cfg, const char* out_dir,
                                  char** files_out, char** summary_out);
maskasr_status maskasr_run_analyze(const maskasr_config* cfg, const char* out_dir,
                                   char** files_out, char** summary_out);

#ifdef __cplusplus
}
#endif

#endif /* MASKASR_H */
