#ifndef DEFMOD_DEFMOD_H
#define DEFMOD_DEFMOD_H

#include <stddef.h>
#include <stdint.h>

#if defined(DEFMOD_BUILDING)
#define DM_API __attribute__((visibility("default")))
#else
#define DM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum dm_status {
  DM_OK = 0,
  DM_ERR_INTERNAL = 1,
  DM_ERR_USAGE = 2,
  DM_ERR_FORMAT = 3,
  DM_ERR_NUMERIC = 4,
  DM_ERR_MISSING = 5
} dm_status;

typedef struct dm_config dm_config;
typedef struct dm_model dm_model;
typedef struct dm_senses dm_senses;
typedef struct dm_vectors dm_vectors;

/* Receives report text; `user` is passed through unchanged. */
typedef void (*dm_sink)(const char* text, size_t len, void* user);

DM_API const char* dm_version(void);
/* Message of the last failure on the calling thread ("" when none). */
DM_API const char* dm_last_error(void);

/* Subcommand registry used to build command-line front ends. */
DM_API int dm_subcommand_count(void);
DM_API const char* dm_subcommand_name(int index);
DM_API const char* dm_subcommand_help(int index);
/* Returns -1 for an unknown subcommand. */
DM_API int dm_option_count(const char* subcommand);
DM_API dm_status dm_option_info(const char* subcommand, int index, const char** key, const char** default_value,
                                const char** help, int* required, int* is_flag);

DM_API dm_status dm_config_new(dm_config** out);
DM_API void dm_config_free(dm_config* cfg);
DM_API dm_status dm_config_set(dm_config* cfg, const char* key, const char* value);
/* Returns DM_ERR_MISSING when the key is absent. */
DM_API dm_status dm_config_get(const dm_config* cfg, const char* key, const char** value);
/* Merges a key = value file; values already set are replaced. */
DM_API dm_status dm_config_load(dm_config* cfg, const char* path);

/* Runs one pipeline stage. Defaults fill every key not set in `cfg`. Reports
   go to `sink`, or stdout when it is NULL. */
DM_API dm_status dm_run(const char* subcommand, const dm_config* cfg, dm_sink sink, void* user);

/* Definition models. Text outputs are NUL-terminated; when `capacity` is too
   small the call fails with DM_ERR_USAGE and `needed` holds the required size. */
DM_API dm_status dm_model_load(const char* path, dm_model** out);
DM_API void dm_model_free(dm_model* model);
DM_API dm_status dm_model_mode(const dm_model* model, const char** mode);
DM_API dm_status dm_model_generate(const dm_model* model, const char* word, const char* context, double temperature,
                                   size_t max_length, uint64_t seed, char* buf, size_t capacity, size_t* needed);
/* Perplexity over a JSON Lines definitions file. */
DM_API dm_status dm_model_perplexity(const dm_model* model, const char* path, double* out);

/* AdaGram sense embeddings. `posterior` receives up to `capacity` values;
   `senses` receives the truncation level. `sense` is 1-based. */
DM_API dm_status dm_senses_load(const char* path, dm_senses** out);
DM_API void dm_senses_free(dm_senses* senses);
DM_API dm_status dm_senses_disambiguate(const dm_senses* senses, const char* word, const char* context,
                                        size_t* sense, double* posterior, size_t capacity, size_t* count);

/* Plain-text vectors. Neighbours are written as "token\tcosine" lines. */
DM_API dm_status dm_vectors_load(const char* path, dm_vectors** out);
DM_API void dm_vectors_free(dm_vectors* vectors);
DM_API dm_status dm_vectors_neighbors(const dm_vectors* vectors, const char* word, size_t n, char* buf,
                                      size_t capacity, size_t* needed);

/* Corpus BLEU-4 (0-100) over whitespace-tokenised sentences. */
DM_API dm_status dm_bleu(const char* const* hypotheses, const char* const* references, size_t count, double* out);

#ifdef __cplusplus
}
#endif

#endif
