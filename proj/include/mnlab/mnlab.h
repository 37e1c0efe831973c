/*
 * Copyright 2026 the mnlab authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C API for the mnlab shared library. All functions return a status code
 * (MNLAB_OK on success); on failure mnlab_last_error() yields a
 * thread-local message. Objects returned through out-parameters are owned
 * by the caller and released with the matching *_free function; strings
 * returned through out-parameters are released with mnlab_string_free.
 */

#ifndef MNLAB_MNLAB_H
#define MNLAB_MNLAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MNLAB_API __declspec(dllexport)
#else
#define MNLAB_API __attribute__((visibility("default")))
#endif

typedef enum mnlab_status {
    MNLAB_OK = 0,
    MNLAB_ERR_INVALID_ARGUMENT = 1,
    MNLAB_ERR_IO = 2,
    MNLAB_ERR_VALIDATION = 3,
    MNLAB_ERR_TRANSFORM = 4,
    MNLAB_ERR_SHAPE = 5,
    MNLAB_ERR_NUMERIC = 6,
    MNLAB_ERR_INTERNAL = 7,
    MNLAB_ERR_PARTIAL = 8 /* some sweep cells failed; results still emitted */
} mnlab_status;

typedef struct mnlab_graph mnlab_graph;
typedef struct mnlab_dataset mnlab_dataset;

MNLAB_API const char* mnlab_version(void);
MNLAB_API const char* mnlab_last_error(void);
MNLAB_API void mnlab_string_free(char* s);

/* ---- graphs ---------------------------------------------------------- */

MNLAB_API mnlab_status mnlab_graph_build_resnet18(int num_classes, int input_channels,
                                                  mnlab_graph** out);
MNLAB_API mnlab_status mnlab_graph_build_micro_cnn(const int* widths, int num_widths,
                                                   int num_classes, mnlab_graph** out);
MNLAB_API mnlab_status mnlab_graph_from_json(const char* json_text, mnlab_graph** out);
MNLAB_API mnlab_status mnlab_graph_to_json(const mnlab_graph* g, char** out_json);
MNLAB_API mnlab_status mnlab_graph_transform(const mnlab_graph* g, int r, mnlab_graph** out);
MNLAB_API mnlab_status mnlab_path_count(int r, long long* out);
MNLAB_API void mnlab_graph_free(mnlab_graph* g);

/* ---- budget audit ----------------------------------------------------- */

/* baseline may be NULL; report JSON includes per-layer preservation rows
 * when it is given. */
MNLAB_API mnlab_status mnlab_audit_json(const mnlab_graph* g, const mnlab_graph* baseline,
                                        int height, int width, long long batch, char** out_json);

/* ---- datasets ---------------------------------------------------------- */

/* variant: 10 for the 1-label-byte layout, 100 for the 2-label-byte one. */
MNLAB_API mnlab_status mnlab_dataset_load_cifar(const char* path, int variant, mnlab_dataset** out);
MNLAB_API mnlab_status mnlab_dataset_synth(const char* spec_json, uint64_t seed, mnlab_dataset** out);
MNLAB_API mnlab_status mnlab_dataset_write_cifar(const mnlab_dataset* ds, const char* path,
                                                 int variant);
MNLAB_API mnlab_status mnlab_dataset_subsample_indices(const mnlab_dataset* ds, int ipc,
                                                       uint64_t seed, char** out_json);
MNLAB_API mnlab_status mnlab_dataset_take_indices(const mnlab_dataset* ds, const char* indices_json,
                                                  int ipc_tag, mnlab_dataset** out);
MNLAB_API mnlab_status mnlab_dataset_info(const mnlab_dataset* ds, char** out_json);
MNLAB_API void mnlab_dataset_free(mnlab_dataset* ds);

/* ---- training / diagnostics ------------------------------------------- */

/* Trains into run_dir (config.json, stats.json, history.csv,
 * checkpoint.mnck); val may be NULL. Returns a summary JSON. */
MNLAB_API mnlab_status mnlab_train(const mnlab_graph* g, const mnlab_dataset* train,
                                   const mnlab_dataset* val, const char* config_json,
                                   const char* run_dir, char** out_summary_json);

/* Loads run_dir and evaluates on eval_ds; writes diag.json + CSVs into
 * out_dir. options_json may be NULL ({"batch_size":64,"pseudo_groups":4}). */
MNLAB_API mnlab_status mnlab_diagnose(const char* run_dir, const mnlab_dataset* eval_ds,
                                      const char* options_json, const char* out_dir,
                                      char** out_diag_json);

/* ---- sweep / report ----------------------------------------------------- */

/* Returns MNLAB_ERR_PARTIAL (with the summary still written) when some
 * cells failed. */
MNLAB_API mnlab_status mnlab_run_sweep(const char* sweep_config_json, char** out_summary_json);
MNLAB_API mnlab_status mnlab_emit_report(const char* results_dir, char** out_summary_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MNLAB_MNLAB_H */
