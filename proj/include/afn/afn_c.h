/* C interface to the fusion toolkit: opaque handles, status codes, JSON
 * strings for structured data. Every function returns afn_status; on failure
 * the thread-local message from afn_last_error() describes what went wrong.
 * Strings returned through char** are heap-allocated; release them with
 * afn_string_free(). */
#ifndef AFN_C_H
#define AFN_C_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum afn_status {
  AFN_OK = 0,
  AFN_ERR_CONFIG = 2,  /* bad configuration, flags, or JSON */
  AFN_ERR_DATA = 3,    /* missing/corrupt files, malformed records */
  AFN_ERR_NUMERIC = 4, /* non-finite values in training or inference */
  AFN_ERR_INTERNAL = 5
} afn_status;

typedef struct afn_dataset afn_dataset;
typedef struct afn_model afn_model;

/* progress sink: called with one human-readable line at a time */
typedef void (*afn_log_fn)(const char* line, void* user);

const char* afn_version(void);

/* Message for the most recent failure on this thread; empty after success. */
const char* afn_last_error(void);

void afn_string_free(char* s);

/* ---- datasets ---------------------------------------------------------- */

afn_status afn_dataset_generate(const char* synth_config_json, afn_dataset** out);
afn_status afn_dataset_load(const char* path, afn_dataset** out);
afn_status afn_dataset_save(const afn_dataset* ds, const char* path);
afn_status afn_dataset_size(const afn_dataset* ds, int64_t* out);
afn_status afn_dataset_fraud_count(const afn_dataset* ds, int64_t* out);
void afn_dataset_free(afn_dataset* ds);

/* ---- models ------------------------------------------------------------ */

afn_status afn_model_create(const char* model_config_json, uint64_t init_seed,
                            afn_model** out);

/* Load a checkpoint. expected_config_json may be NULL; when given, a file
 * whose embedded config differs is rejected with AFN_ERR_CONFIG. */
afn_status afn_model_load(const char* path, const char* expected_config_json,
                          afn_model** out);
afn_status afn_model_save(afn_model* m, const char* path);
afn_status afn_model_config(const afn_model* m, char** config_json_out);

/* The config echo embedded in a checkpoint, without loading parameters. */
afn_status afn_checkpoint_config(const char* path, char** config_json_out);
afn_status afn_model_parameter_count(const afn_model* m, int64_t* out);
void afn_model_free(afn_model* m);

/* ---- training and evaluation ------------------------------------------- */

/* Trains in place on the seed's stratified split. result_json_out (optional)
 * receives {"best_epoch", "best_metric", "epochs_run", "history": [...]}. */
afn_status afn_fit(afn_model* m, const afn_dataset* ds, const char* train_config_json,
                   uint64_t seed, char** result_json_out);

/* Rebuilds the (split-ratio, seed) stratified split, tunes the decision
 * threshold on validation, and reports on `split` ("train", "val", "test",
 * or "all") at that threshold. */
afn_status afn_evaluate(afn_model* m, const afn_dataset* ds, const char* train_config_json,
                        uint64_t seed, const char* split, char** report_json_out);

/* ---- experiment batteries ------------------------------------------------
 * experiment_json: {"train": <train config>, "base_model": <model config>}.
 * out_dir may be NULL/empty (nothing persisted, resume ignored). The optional
 * summary receives the aligned-text report. */

afn_status afn_run_grid(const afn_dataset* ds, const char* experiment_json,
                        const char* out_dir, int resume, int threads, afn_log_fn log,
                        void* log_user, char** summary_text_out);

afn_status afn_run_suite(const afn_dataset* ds, const char* experiment_json,
                         const char* out_dir, int resume, int threads, afn_log_fn log,
                         void* log_user, char** summary_text_out);

/* ---- report rendering ---------------------------------------------------- */

/* Align one of the toolkit's CSV files into padded text columns. */
afn_status afn_render_csv(const char* csv_text, char** text_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* AFN_C_H */
