/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The tfsed Authors */

#ifndef TFSED_TFSED_H_
#define TFSED_TFSED_H_

/*
 * C interface to libtfsed: sound event detection with a convolutional
 * recurrent network and temporal/frequential attention.
 *
 * Every function returns a tfsed_status. On failure the message is
 * available from tfsed_last_error() on the calling thread until the next
 * call on that thread. Handles are opaque and owned by the caller.
 */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tfsed_status {
  TFSED_OK = 0,
  TFSED_ERR_PARAMETER = 1,
  TFSED_ERR_DIMENSION = 2,
  TFSED_ERR_FORMAT = 3,
  TFSED_ERR_IO = 4,
  TFSED_ERR_CHECKPOINT = 5,
  TFSED_ERR_CONFIG = 6,
  TFSED_ERR_STATE = 7,
  TFSED_ERR_NUMERIC = 8,
  TFSED_ERR_PLACEMENT = 9,
  TFSED_ERR_INPUT = 10,
  TFSED_ERR_UNDEFINED = 11,
  TFSED_ERR_INTERNAL = 12
} tfsed_status;

typedef struct tfsed_config tfsed_config;
typedef struct tfsed_model tfsed_model;

/* Receives one line of progress output, without the trailing newline. */
typedef void (*tfsed_log_fn)(const char* line, void* user);

const char* tfsed_version(void);
/* Lower-case category token, e.g. "io" or "config"; "ok" for TFSED_OK. */
const char* tfsed_status_name(tfsed_status status);
const char* tfsed_last_error(void);

/* Run configuration ------------------------------------------------------ */

tfsed_status tfsed_config_create(tfsed_config** out);
void tfsed_config_destroy(tfsed_config* config);
/* Applies key = value lines from a file or a string on top of the current
 * values. Unknown keys fail with TFSED_ERR_CONFIG. */
tfsed_status tfsed_config_load(tfsed_config* config, const char* path);
tfsed_status tfsed_config_parse(tfsed_config* config, const char* text);
tfsed_status tfsed_config_set(tfsed_config* config, const char* key, const char* value);
/* String results: *length receives the size including the terminating NUL.
 * A NULL or short buffer fails with TFSED_ERR_PARAMETER after setting
 * *length. */
tfsed_status tfsed_config_get(const tfsed_config* config, const char* key, char* buffer,
                              size_t capacity, size_t* length);
tfsed_status tfsed_config_serialize(const tfsed_config* config, char* buffer, size_t capacity,
                                    size_t* length);
tfsed_status tfsed_config_validate(const tfsed_config* config);

/* Commands (NULL marks an optional path as absent) ----------------------- */

tfsed_status tfsed_synth(const tfsed_config* config, const char* out_dir, tfsed_log_fn log,
                         void* user);
tfsed_status tfsed_featurize(const tfsed_config* config, const char* wav_dir, const char* out_dir,
                             const char* stats_path, tfsed_log_fn log, void* user);
/* mode: "baseline", "ta", "full" or "pipeline". */
tfsed_status tfsed_train(const tfsed_config* config, const char* mode, const char* train_dir,
                         const char* val_dir, const char* out_dir, const char* init_checkpoint,
                         tfsed_log_fn log, void* user);
/* Exactly one of checkpoint and detections must be given. */
tfsed_status tfsed_eval(const tfsed_config* config, const char* data_dir, const char* checkpoint,
                        const char* detections, const char* out_dir, tfsed_log_fn log, void* user);
tfsed_status tfsed_dump_attention(const tfsed_config* config, const char* checkpoint,
                                  const char* clip, const char* stats_path, const char* out_dir,
                                  tfsed_log_fn log, void* user);

/* Inference ---------------------------------------------------------------- */

tfsed_status tfsed_model_load(const char* checkpoint, tfsed_model** out);
void tfsed_model_destroy(tfsed_model* model);
/* Number of 80 ms output segments for a clip of `frames` feature frames. */
tfsed_status tfsed_model_segments(const tfsed_model* model, size_t frames, size_t* segments);
/* features: row-major [frames x n_mels] normalized log mel energies.
 * probabilities: receives tfsed_model_segments(frames) values. */
tfsed_status tfsed_model_predict(tfsed_model* model, const float* features, size_t frames,
                                 size_t n_mels, float* probabilities, size_t capacity);

#ifdef __cplusplus
}
#endif

#endif /* TFSED_TFSED_H_ */
