#ifndef COMPACT_COMPACT_H
#define COMPACT_COMPACT_H

/*
 * C interface to the compact pruning toolkit.
 *
 * Every function returns a compact_status. On failure the calling thread's
 * last error message is available from compact_last_error() until the next
 * call on that thread. Strings returned through `char**` out-parameters are
 * NUL-terminated JSON owned by the caller and released with
 * compact_string_free(). Handles are released with their *_free function;
 * passing NULL to any *_free is a no-op.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define COMPACT_API __declspec(dllexport)
#else
#define COMPACT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum compact_status {
    COMPACT_OK = 0,
    COMPACT_ERR_INVALID_ARGUMENT = 1,
    COMPACT_ERR_IO = 2,
    COMPACT_ERR_FORMAT = 3,
    COMPACT_ERR_VALIDATION = 4,
    COMPACT_ERR_NUMERIC = 5,
    COMPACT_ERR_BUFFER_TOO_SMALL = 6,
    COMPACT_ERR_INTERNAL = 7
} compact_status;

typedef enum compact_scorer {
    COMPACT_SCORER_COMMON_ACT2 = 0,
    COMPACT_SCORER_ACT2 = 1,
    COMPACT_SCORER_ABS_ACT = 2
} compact_scorer;

typedef struct compact_config compact_config;
typedef struct compact_model compact_model;
typedef struct compact_tokenizer compact_tokenizer;
typedef struct compact_corpus compact_corpus;

typedef struct compact_prune_options {
    int64_t vocab_size;        /* V' */
    int64_t inter_size;        /* I' */
    compact_scorer scorer;
    int64_t n_samples;
    int64_t seq_len;
    uint64_t seed;
    unsigned threads;
    const char* calibration;   /* descriptor recorded in the report; may be NULL */
} compact_prune_options;

COMPACT_API const char* compact_version(void);
COMPACT_API const char* compact_last_error(void);
COMPACT_API const char* compact_status_string(compact_status status);
COMPACT_API void compact_string_free(char* str);

/* Model configuration (config.json). */
COMPACT_API compact_status compact_config_load(const char* path, compact_config** out);
COMPACT_API void compact_config_free(compact_config* cfg);
COMPACT_API int64_t compact_config_vocab_size(const compact_config* cfg);
COMPACT_API int64_t compact_config_inter_size(const compact_config* cfg);
COMPACT_API compact_status compact_config_census_json(const compact_config* cfg, char** out_json);
COMPACT_API compact_status compact_pruning_ratio(const compact_config* cfg, int64_t vocab_size, int64_t inter_size,
                                                 double* out_ratio);
/* vocab_floor: smallest admissible V' (1 when no tokenizer constrains it). */
COMPACT_API compact_status compact_sweep_json(const compact_config* cfg, double target_ratio, int64_t vocab_step,
                                              int64_t inter_step, double tolerance, int64_t vocab_floor,
                                              char** out_json);
/* Sweep row closest to the target (ties: larger V'). */
COMPACT_API compact_status compact_plan(const compact_config* cfg, double target_ratio, int64_t vocab_step,
                                        int64_t inter_step, double tolerance, int64_t vocab_floor,
                                        int64_t* out_vocab_size, int64_t* out_inter_size);

/* Model = config.json + tensor container. */
COMPACT_API compact_status compact_model_load(const char* config_path, const char* weights_path,
                                              compact_model** out);
COMPACT_API void compact_model_free(compact_model* model);
COMPACT_API const compact_config* compact_model_config(const compact_model* model);
COMPACT_API compact_status compact_model_census_json(const compact_model* model, char** out_json);
/* out_findings receives the number of findings; 0 means valid. */
COMPACT_API compact_status compact_model_validate_json(const compact_model* model, size_t* out_findings,
                                                       char** out_json);
/* Writes n_ids * vocab_size logits row-major into out (capacity in floats). */
COMPACT_API compact_status compact_model_forward_logits(const compact_model* model, const int32_t* ids,
                                                        size_t n_ids, float* out, size_t capacity);

/* Tokenizer (tokenizer.json). */
COMPACT_API compact_status compact_tokenizer_load(const char* path, compact_tokenizer** out);
COMPACT_API void compact_tokenizer_free(compact_tokenizer* tok);
COMPACT_API compact_status compact_tokenizer_save(const compact_tokenizer* tok, const char* path);
COMPACT_API size_t compact_tokenizer_size(const compact_tokenizer* tok);
COMPACT_API int64_t compact_tokenizer_alphabet_floor(const compact_tokenizer* tok);
/* out_len receives the token count; COMPACT_ERR_BUFFER_TOO_SMALL if capacity is short. */
COMPACT_API compact_status compact_tokenizer_encode(const compact_tokenizer* tok, const char* text, size_t len,
                                                    int32_t* out, size_t capacity, size_t* out_len);
COMPACT_API compact_status compact_tokenizer_decode(const compact_tokenizer* tok, const int32_t* ids, size_t n_ids,
                                                    char** out_bytes, size_t* out_len);
COMPACT_API compact_status compact_tokenizer_prune(const compact_tokenizer* tok, int64_t vocab_size,
                                                   compact_tokenizer** out);
/* Churn of `pruned` relative to `original` over newline-delimited corpus files. */
COMPACT_API compact_status compact_retok_stats_json(const compact_tokenizer* original,
                                                    const compact_tokenizer* pruned,
                                                    const char* const* corpus_paths, size_t n_paths,
                                                    char** out_json);

/* Calibration batch sampled from a newline-delimited text file. */
COMPACT_API compact_status compact_corpus_load(const char* path, const compact_tokenizer* tok, int64_t n_samples,
                                               int64_t seq_len, uint64_t seed, compact_corpus** out);
COMPACT_API void compact_corpus_free(compact_corpus* corpus);
COMPACT_API size_t compact_corpus_num_sequences(const compact_corpus* corpus);
COMPACT_API size_t compact_corpus_num_positions(const compact_corpus* corpus);

/* Importance table JSON for the given scorer; vocab_size is V' (defines S). */
COMPACT_API compact_status compact_score_json(const compact_model* model, const compact_tokenizer* tok,
                                              const compact_corpus* corpus, int64_t vocab_size,
                                              compact_scorer scorer, unsigned threads, char** out_json);

/* Runs the joint pipeline and writes the output directory; returns the report. */
COMPACT_API compact_status compact_prune(const compact_model* model, const compact_tokenizer* tok,
                                         const compact_corpus* corpus, const compact_prune_options* options,
                                         const char* out_dir, char** out_report_json);

/* Structural verification of a pruned directory. */
COMPACT_API compact_status compact_verify_dir(const char* dir, size_t* out_findings, char** out_json);

/* Writes the seeded tiny demo model (weights, config, tokenizer, corpus.txt) into dir. */
COMPACT_API compact_status compact_write_tiny_model(const char* dir, uint64_t seed, size_t n_docs);

#ifdef __cplusplus
}
#endif

#endif /* COMPACT_COMPACT_H */
