#ifndef OSQ_OSQ_H
#define OSQ_OSQ_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define OSQ_API __attribute__((visibility("default")))
#else
#define OSQ_API
#endif

typedef enum osq_status {
  OSQ_OK = 0,
  OSQ_E_USAGE = 1,
  OSQ_E_VALIDATION = 2,
  OSQ_E_NUMERICAL = 3,
  OSQ_E_IO = 4,
  OSQ_E_STATE = 5,
  OSQ_E_INTERNAL = 6
} osq_status;

/* Message of the last failed call on the calling thread. */
OSQ_API const char* osq_last_error(void);
OSQ_API const char* osq_version(void);
/* Releases strings returned through char** out-parameters. */
OSQ_API void osq_string_free(char* s);

/* ---- datasets ---- */

typedef struct osq_dataset osq_dataset;

typedef struct osq_dataset_spec {
  const char* family; /* two-radius, ring-transfer, tree-neighbors-match */
  int n, k, L, r;     /* r is the ring radius or the tree depth */
  int count;
  uint64_t seed;
  int distinct_labels;
  int shared_central_ids;
} osq_dataset_spec;

OSQ_API void osq_dataset_spec_init(osq_dataset_spec* spec);
OSQ_API osq_status osq_dataset_generate(const osq_dataset_spec* spec, osq_dataset** out);
/* `structural` skips connectivity and family checks, for diagnosing arbitrary graphs. */
OSQ_API osq_status osq_dataset_read(const char* path, int structural, osq_dataset** out);
OSQ_API osq_status osq_dataset_parse(const char* text, int structural, osq_dataset** out);
/* Fails with OSQ_E_STATE when the file exists and `force` is 0. */
OSQ_API osq_status osq_dataset_write(const osq_dataset* dataset, const char* path, int force);
OSQ_API osq_status osq_dataset_serialize(const osq_dataset* dataset, char** text);
OSQ_API size_t osq_dataset_size(const osq_dataset* dataset);
OSQ_API void osq_dataset_free(osq_dataset* dataset);

/* Key-value report; `curvature_csv` may be NULL. */
OSQ_API osq_status osq_diagnose(const osq_dataset* dataset, size_t index, char** report, char** curvature_csv);

/* ---- experiment configs ---- */

typedef struct osq_config osq_config;

OSQ_API osq_status osq_config_default(osq_config** out);
OSQ_API osq_status osq_config_parse(const char* text, osq_config** out);
OSQ_API osq_status osq_config_read(const char* path, osq_config** out);
/* One `section.key = value` assignment. */
OSQ_API osq_status osq_config_set(osq_config* config, const char* assignment);
OSQ_API osq_status osq_config_format(const osq_config* config, char** text);
OSQ_API osq_status osq_config_run_count(const osq_config* config, size_t* count);
/* Valid until the config is modified or freed. */
OSQ_API const char* osq_config_csv_path(const osq_config* config);
OSQ_API void osq_config_free(osq_config* config);

/* ---- training ---- */

typedef struct osq_epoch {
  int epoch;
  double train_loss;
  double lr;
  double test_acc;
  double grad_probe;
  int has_mad;
  double mad;
  double wall_seconds;
} osq_epoch;

typedef void (*osq_epoch_fn)(const char* run_id, const osq_epoch* epoch, void* user);
typedef void (*osq_run_fn)(const char* run_id, double final_accuracy, void* user);

typedef struct osq_sweep_summary {
  int total;
  int skipped;
  int completed;
} osq_sweep_summary;

/* Trains the single grid point of `config` and appends its rows to the
 * configured CSV. A run already present is skipped and reported through
 * `skipped`. `checkpoint` may be NULL. */
OSQ_API osq_status osq_train(const osq_config* config, const char* checkpoint, osq_epoch_fn on_epoch, void* user,
                             int* skipped);

/* Runs every grid point missing from the CSV. `workers` 0 reads OSQ_WORKERS.
 * `on_run` calls are serialized. */
OSQ_API osq_status osq_sweep(const osq_config* config, int workers, osq_run_fn on_run, void* user,
                             osq_sweep_summary* summary);
OSQ_API osq_status osq_workers_from_env(int* workers);

/* ---- verification ---- */

typedef struct osq_verification osq_verification;

OSQ_API osq_status osq_verify(int quick, osq_verification** out);
OSQ_API size_t osq_verification_count(const osq_verification* v);
OSQ_API osq_status osq_verification_check(const osq_verification* v, size_t index, const char** name, int* passed,
                                          const char** detail);
OSQ_API void osq_verification_free(osq_verification* v);

/* ---- plotting ---- */

/* metric: accuracy, grad-probe, mad, loss. axis: n, k, r, epoch. */
OSQ_API osq_status osq_plot(const char* csv_path, const char* metric, const char* axis, const char* svg_path);

#ifdef __cplusplus
}
#endif

#endif
