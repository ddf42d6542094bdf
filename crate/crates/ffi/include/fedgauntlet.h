#ifndef FEDGAUNTLET_H
#define FEDGAUNTLET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Zero is success.
 */
typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_UTF8 = 2,
  FG_STATUS_CONFIG = 3,
  FG_STATUS_FORMAT = 4,
  FG_STATUS_TRUNCATION = 5,
  FG_STATUS_DEGENERATE_DATA = 6,
  FG_STATUS_SHAPE = 7,
  FG_STATUS_DIVERGENCE = 8,
  FG_STATUS_NO_UPDATES = 9,
  FG_STATUS_IO = 10,
  FG_STATUS_OUT_OF_RANGE = 11,
  FG_STATUS_PANIC = 12,
} FgStatus;

/**
 * Experiment configuration.
 */
typedef struct FgConfig FgConfig;

/**
 * Loaded MNIST train/test split.
 */
typedef struct FgData FgData;

/**
 * Result of one experiment.
 */
typedef struct FgReport FgReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty after success.
 * Valid until the next fedgauntlet call on the same thread.
 */
const char *fg_last_error(void);

/**
 * Library version, static string.
 */
const char *fg_version(void);

/**
 * Default desk-scale configuration.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FgStatus fg_config_new(struct FgConfig **out);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FgStatus fg_config_from_toml(const char *toml_text, struct FgConfig **out);

/**
 * Sets one dotted key, e.g. `attack.kind` to `"mpaf"`. `value` is a TOML
 * value, so strings need their quotes.
 *
 * # Safety
 * `config` must come from this library; `key` and `value` must be NUL-terminated.
 */
enum FgStatus fg_config_set(struct FgConfig *config, const char *key, const char *value);

/**
 * Writes the configuration as TOML into `buf` (NUL-terminated). `needed`
 * receives the full length including the NUL; a short buffer gives
 * `OutOfRange` and leaves `buf` untouched.
 *
 * # Safety
 * `config` must come from this library; `buf` must hold `len` bytes or be null with `len == 0`.
 */
enum FgStatus fg_config_to_toml(const struct FgConfig *config,
                                char *buf,
                                size_t len,
                                size_t *needed);

/**
 * # Safety
 * `config` must come from this library or be null.
 */
void fg_config_free(struct FgConfig *config);

/**
 * Loads the four MNIST IDX files from `dir`.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out` a valid pointer.
 */
enum FgStatus fg_data_load(const char *dir, struct FgData **out);

/**
 * # Safety
 * `data` must come from this library or be null.
 */
void fg_data_free(struct FgData *data);

/**
 * Runs one experiment. With `data` null the data directory is resolved from
 * the config or `FEDGAUNTLET_DATA_DIR`.
 *
 * # Safety
 * `config` must come from this library, `data` likewise or null, `out` valid.
 */
enum FgStatus fg_run(const struct FgConfig *config,
                     const struct FgData *data,
                     struct FgReport **out);

/**
 * # Safety
 * `report` must come from this library and `out` be valid.
 */
enum FgStatus fg_report_final_accuracy(const struct FgReport *report, double *out);

/**
 * # Safety
 * `report` must come from this library and `out` be valid.
 */
enum FgStatus fg_report_num_rounds(const struct FgReport *report, size_t *out);

/**
 * Test accuracy after round `index` (zero-based).
 *
 * # Safety
 * `report` must come from this library and `out` be valid.
 */
enum FgStatus fg_report_round_accuracy(const struct FgReport *report, size_t index, double *out);

/**
 * Number of clients rejected by the defense in round `index` (zero-based).
 *
 * # Safety
 * `report` must come from this library and `out` be valid.
 */
enum FgStatus fg_report_round_rejected(const struct FgReport *report, size_t index, size_t *out);

/**
 * Writes the per-round CSV report.
 *
 * # Safety
 * `report` must come from this library; `path` must be NUL-terminated.
 */
enum FgStatus fg_report_write_csv(const struct FgReport *report, const char *path);

/**
 * # Safety
 * `report` must come from this library or be null.
 */
void fg_report_free(struct FgReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDGAUNTLET_H */
