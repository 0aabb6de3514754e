/* SPDX-License-Identifier: Apache-2.0 */
#ifndef HMT_HMT_H
#define HMT_HMT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HMT_API __declspec(dllexport)
#else
#define HMT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every call returns a status; on failure hmt_last_error() holds the
 * message for the calling thread until its next failing call. */
typedef enum hmt_status {
  HMT_OK = 0,
  HMT_ERR_DIMENSION = 1,
  HMT_ERR_NUMERIC = 2,
  HMT_ERR_INDEX = 3,
  HMT_ERR_CONTRACT = 4,
  HMT_ERR_CAPACITY = 5,
  HMT_ERR_CONFIG = 6,
  HMT_ERR_DATA = 7,
  HMT_ERR_FORMAT = 8,
  HMT_ERR_STABILITY = 9,
  HMT_ERR_IO = 10,
  HMT_ERR_ARGUMENT = 11, /* null handle or output pointer, bad enum */
  HMT_ERR_INTERNAL = 12
} hmt_status;

HMT_API const char* hmt_version(void);
HMT_API const char* hmt_status_name(hmt_status status);
HMT_API const char* hmt_last_error(void);

typedef struct hmt_config hmt_config;
typedef struct hmt_tokens hmt_tokens;
typedef struct hmt_model hmt_model;

/* ---- configuration ---------------------------------------------------- */

HMT_API size_t hmt_config_key_count(void);
HMT_API const char* hmt_config_key_name(size_t index);

HMT_API hmt_status hmt_config_default(hmt_config** out);
/* Duplicate keys print a warning on stderr; last value wins. */
HMT_API hmt_status hmt_config_load(const char* path, hmt_config** out);
HMT_API hmt_status hmt_config_parse(const char* text, hmt_config** out);
/* Override applied after the file; derived keys are re-resolved. */
HMT_API hmt_status hmt_config_set(hmt_config* config, const char* key, const char* value);
/* Several overrides at once, validated together; unchanged on failure. */
HMT_API hmt_status hmt_config_set_many(hmt_config* config, const char* const* keys, const char* const* values,
                                       size_t n);
/* String outputs: writes at most cap bytes including the terminator and
 * stores the full length (without terminator) in *len when non-null. */
HMT_API hmt_status hmt_config_get(const hmt_config* config, const char* key, char* buf, size_t cap, size_t* len);
HMT_API hmt_status hmt_config_text(const hmt_config* config, char* buf, size_t cap, size_t* len);
HMT_API hmt_status hmt_config_hash(const hmt_config* config, char buf[17]);
HMT_API void hmt_config_free(hmt_config* config);

/* ---- token buffers ---------------------------------------------------- */

/* Token files ("HMTD" header) by magic, anything else as raw bytes. */
HMT_API hmt_status hmt_tokens_read(const char* path, hmt_tokens** out);
HMT_API hmt_status hmt_tokens_from_bytes(const uint8_t* bytes, size_t n, hmt_tokens** out);
HMT_API hmt_status hmt_tokens_from_ids(const uint16_t* ids, size_t n, hmt_tokens** out);
HMT_API size_t hmt_tokens_size(const hmt_tokens* tokens);
HMT_API const uint16_t* hmt_tokens_data(const hmt_tokens* tokens);
HMT_API hmt_status hmt_tokens_write(const hmt_tokens* tokens, const char* path);
/* Raw bytes; every id must be below 256. */
HMT_API hmt_status hmt_tokens_write_bytes(const hmt_tokens* tokens, const char* path);
/* Ordered 75/15/10 split. */
HMT_API hmt_status hmt_tokens_split(const hmt_tokens* tokens, hmt_tokens** train, hmt_tokens** val,
                                    hmt_tokens** test);
HMT_API void hmt_tokens_free(hmt_tokens* tokens);

/* ---- dataset builders ------------------------------------------------- */

/* Concatenates then re-chunks. Up to cap chunks are returned in chunks;
 * *count receives the total. */
HMT_API hmt_status hmt_data_concat(const hmt_tokens* const* samples, size_t n, size_t target_length,
                                   hmt_tokens** chunks, size_t cap, size_t* count);
HMT_API hmt_status hmt_data_interleave(const hmt_tokens* a, const hmt_tokens* b, size_t chunk, hmt_tokens** out);
HMT_API hmt_status hmt_data_deinterleave(const hmt_tokens* stream, size_t len_a, size_t len_b, size_t chunk,
                                         hmt_tokens** a, hmt_tokens** b);
HMT_API hmt_status hmt_data_dilate(const hmt_tokens* sample, uint16_t filler, size_t run, hmt_tokens** out);
HMT_API hmt_status hmt_data_strip_dilation(const hmt_tokens* stream, size_t run, hmt_tokens** out);

typedef struct hmt_planted_spec {
  size_t num_segments;
  size_t segment_len;
  size_t distance;
  size_t query_at;
  uint64_t seed;
} hmt_planted_spec;

/* Defaults: 9 segments of 16, distance 8, query at 0. */
HMT_API void hmt_planted_spec_default(hmt_planted_spec* spec);
HMT_API hmt_status hmt_data_planted(const hmt_planted_spec* spec, hmt_tokens** stream, size_t* answer_position);

/* QA sequences from a TSV file, or synthetic yes/no/maybe tuples when
 * tsv_path is NULL. Writes seq_NNNN.bin token files and spans.csv into
 * out_dir (which must exist). */
HMT_API hmt_status hmt_data_qa_build(const char* tsv_path, size_t synthetic_count, uint64_t seed, size_t m,
                                     const char* out_dir, size_t* sequences);

/* ---- models ----------------------------------------------------------- */

/* Fresh parameters from the config seed. Recall follows the `recall` key. */
HMT_API hmt_status hmt_model_create(const hmt_config* config, hmt_model** out);
/* Parameters from a checkpoint. With eval_config, its mechanism settings
 * (segment_len, sensory_len, repr_len, cache_size, recall) apply; without,
 * the checkpoint's stage decides recall. */
HMT_API hmt_status hmt_model_load(const char* checkpoint_path, const hmt_config* eval_config, hmt_model** out);
HMT_API hmt_status hmt_model_config(const hmt_model* model, hmt_config** out);
HMT_API hmt_status hmt_model_parameter_count(const hmt_model* model, size_t* count);
HMT_API void hmt_model_free(hmt_model* model);

/* ---- training --------------------------------------------------------- */

typedef struct hmt_train_summary {
  uint64_t steps;
  double first_loss;
  double final_loss;
  double seconds;
} hmt_train_summary;

/* One stage per `stage`: 1 trains without recall, 2 with. init_checkpoint
 * (nullable) seeds parameters; missing recall parameters start fresh.
 * log_path (nullable) receives `step,loss,ppl,lr,grad_norm` records. */
HMT_API hmt_status hmt_train(const hmt_config* config, const hmt_tokens* corpus, const char* init_checkpoint,
                             const char* out_checkpoint, const char* log_path, hmt_train_summary* summary);
/* Same, on freshly drawn planted-recall samples scored at the answer. */
HMT_API hmt_status hmt_train_planted(const hmt_config* config, const hmt_planted_spec* task,
                                     const char* init_checkpoint, const char* out_checkpoint, const char* log_path,
                                     hmt_train_summary* summary);
/* Continues a checkpoint for `steps` more steps with its own settings. */
HMT_API hmt_status hmt_train_resume(const char* checkpoint, const hmt_tokens* corpus, size_t steps,
                                    const char* out_checkpoint, const char* log_path, hmt_train_summary* summary);

/* ---- evaluation ------------------------------------------------------- */

HMT_API hmt_status hmt_eval_stream(const hmt_model* model, const hmt_tokens* stream, double* mean_nll,
                                   double* ppl, size_t* scored);
/* `length,ppl` CSV to csv_path (nullable); ppl_out (nullable) gets n values. */
HMT_API hmt_status hmt_eval_perplexity(const hmt_model* model, const hmt_tokens* stream, const size_t* lengths,
                                       size_t n, const char* csv_path, double* ppl_out);

typedef struct hmt_histogram_summary {
  size_t events;
  size_t seed_hits;
  size_t bins;
} hmt_histogram_summary;

/* `distance,count` CSV; up to cap (distance, count) pairs are copied out. */
HMT_API hmt_status hmt_eval_histogram(const hmt_model* model, const hmt_tokens* stream, const char* csv_path,
                                      size_t* distances, size_t* counts, size_t cap, hmt_histogram_summary* summary);
/* Mean answer NLL over `samples` planted-recall draws seeded from task->seed. */
HMT_API hmt_status hmt_eval_planted(const hmt_model* model, const hmt_planted_spec* task, size_t samples,
                                    double* mean_answer_nll);

/* param: cache_size or repr_len (evaluate `model` under each value), or
 * sensory_len or unroll (train a fresh model per value under `config` on
 * `train`). Writes `param,value,ppl,seed` CSV. */
HMT_API hmt_status hmt_sweep(const hmt_config* config, const hmt_model* model, const char* param,
                             const size_t* values, size_t n, const hmt_tokens* train, const hmt_tokens* eval,
                             const char* csv_path, double* ppl_out);

typedef struct hmt_gradcheck_result {
  int passed;
  double max_rel_error;
  size_t checked;
  double loss;
  double seconds;
} hmt_gradcheck_result;

/* Fresh model from config on a seeded random window of unroll segments;
 * central differences with h = 1e-5. max_coords 0 checks everything. */
HMT_API hmt_status hmt_gradcheck(const hmt_config* config, size_t unroll, size_t max_coords,
                                 hmt_gradcheck_result* result);

typedef struct hmt_qa_result {
  double answer_nll;
  double accuracy;
  size_t sequences;
  size_t answer_tokens;
  size_t recall_hits;
  size_t recall_checked;
} hmt_qa_result;

HMT_API hmt_status hmt_qa_eval(const hmt_model* model, const char* tsv_path, size_t synthetic_count, uint64_t seed,
                               size_t m, hmt_qa_result* result);

typedef struct hmt_stability_summary {
  int all_finite;
  int all_fd_ok;
  double max_fd_rel_error;
  size_t rows;
} hmt_stability_summary;

/* `depth,mode,grad_norm_m_init,grad_norm_HT,finite_ok` CSV. With
 * assert_finite, a non-finite norm returns HMT_ERR_STABILITY. */
HMT_API hmt_status hmt_report_grad_stability(const hmt_config* config, const size_t* depths, size_t n,
                                             int assert_finite, const char* csv_path,
                                             hmt_stability_summary* summary);
/* `phase,median_seconds,samples` CSV. */
HMT_API hmt_status hmt_report_runtime(const hmt_model* model, const hmt_tokens* stream, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif
