/* C interface to monalab. Every call returns an ml_status; on failure the
 * message for the calling thread is available from ml_last_error().
 * Strings returned through char** are heap-allocated; release them with
 * ml_string_free(). */
#ifndef MONALAB_H
#define MONALAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(MONALAB_BUILDING)
#define ML_API __declspec(dllexport)
#else
#define ML_API __declspec(dllimport)
#endif
#else
#define ML_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ml_status {
  ML_OK = 0,
  ML_ERR_INVALID_ARGUMENT = 1,
  ML_ERR_INVALID_CONFIG = 2,
  ML_ERR_SHAPE = 3,
  ML_ERR_CHECKPOINT_MISMATCH = 4,
  ML_ERR_IO = 5,
  ML_ERR_VERIFICATION = 6, /* a gradient check did not pass */
  ML_ERR_INTERNAL = 7
} ml_status;

typedef enum ml_checkpoint_scope {
  ML_SCOPE_ALL = 0,
  ML_SCOPE_TUNED = 1, /* trainable parameters plus everything not pretrained */
  ML_SCOPE_DELTA = 2  /* injected modules only */
} ml_checkpoint_scope;

typedef struct ml_config ml_config;
typedef struct ml_model ml_model;

ML_API const char* ml_version(void);
ML_API const char* ml_status_name(ml_status status);
ML_API const char* ml_last_error(void);
ML_API void ml_string_free(char* s);

/* ---- run configuration ---- */
ML_API ml_status ml_config_parse(const char* json, ml_config** out);
ML_API ml_status ml_config_load(const char* path, ml_config** out);
ML_API ml_status ml_config_to_json(const ml_config* config, char** out_json);
ML_API ml_status ml_config_set_output_dir(ml_config* config, const char* dir);
ML_API void ml_config_free(ml_config* config);

/* ---- subcommands ---- */

/* Analytic counts for a named preset. method may be NULL for every method.
 * Result JSON: {"preset", "dim", "backbone_total", "rows": [{"method",
 * "trainable", "fraction"}]}. Unknown preset or method: ML_ERR_INVALID_ARGUMENT. */
ML_API ml_status ml_count_params(const char* preset, const char* method, size_t dim,
                                 char** out_json);

/* module: mona | adapter | lora | adaptformer | block | primitives.
 * variant: v1..v4 or NULL (v4). Writes a JSON report in every non-error
 * case; returns ML_ERR_VERIFICATION when some check exceeds tol. */
ML_API ml_status ml_gradcheck(const char* module, const char* variant, uint64_t seed, double tol,
                              int inject_fault, char** out_report);

/* Trains and writes metrics, summary.json, config.json and delta.ckpt into
 * output_dir (NULL: the config's output_dir). Returns the summary JSON. */
ML_API ml_status ml_train(const ml_config* config, const char* output_dir, char** out_summary);

/* {"top1": .., "top5": ..} on the eval split after loading the checkpoint. */
ML_API ml_status ml_eval(const ml_config* config, const char* checkpoint, char** out_json);

/* axis: methods | dims | presets; values: comma-separated list.
 * Returns CSV method,dim,preset,trainable_fraction,final_top1. */
ML_API ml_status ml_compare(const ml_config* config, const char* axis, const char* values,
                            char** out_csv);

/* ---- models ---- */
ML_API ml_status ml_model_build(const ml_config* config, ml_model** out);
ML_API ml_status ml_model_save(const ml_model* model, const char* path, ml_checkpoint_scope scope);
ML_API ml_status ml_model_load(ml_model* model, const char* path);
ML_API ml_status ml_model_counts(const ml_model* model, size_t* total, size_t* trainable);
/* images: batch * image_size^2 * 3 values (NHWC); logits: batch * classes. */
ML_API ml_status ml_model_forward(const ml_model* model, const double* images, size_t batch,
                                  double* logits, size_t logits_len);
ML_API void ml_model_free(ml_model* model);

#ifdef __cplusplus
}
#endif

#endif /* MONALAB_H */
