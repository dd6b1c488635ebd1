#ifndef QST_H
#define QST_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Pipeline selector for [`qst_run`].
typedef enum QstCommand {
  QST_COMMAND_SIMULATE = 0,
  QST_COMMAND_SAMPLE = 1,
  QST_COMMAND_RECONSTRUCT = 2,
  QST_COMMAND_ROUNDTRIP = 3,
  QST_COMMAND_SELFTEST = 4,
} QstCommand;

// Measurement order `ε`.
typedef enum QstOrder {
  QST_ORDER_PLUS = 0,
  QST_ORDER_MINUS = 1,
  QST_ORDER_ZERO = 2,
} QstOrder;

// Result of every fallible call.
typedef enum QstStatus {
  QST_STATUS_OK = 0,
  QST_STATUS_NULL_POINTER = 1,
  QST_STATUS_INVALID_INPUT = 2,
  QST_STATUS_COVERAGE = 3,
  QST_STATUS_DIVERGENCE = 4,
  QST_STATUS_NOT_PHYSICAL = 5,
  QST_STATUS_IO = 6,
  QST_STATUS_BUFFER_TOO_SMALL = 7,
  QST_STATUS_SELF_TEST_FAILED = 8,
  QST_STATUS_PANIC = 9,
} QstStatus;

// Characteristic function on its `(φ_K, φ_X)` grid, plus the standard
// error at the origin when it was estimated from shots.
typedef struct QstCharFn QstCharFn;

// Parsed run configuration.
typedef struct QstConfig QstConfig;

// Reconstructed Moyal function, density matrix and Wigner function.
typedef struct QstReconstruction QstReconstruction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t qst_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *qst_version(void);

// Parses INI text. Relative paths resolve against `base_dir` (may be null
// for the current directory).
//
// # Safety
// `text` and a non-null `base_dir` must be NUL-terminated strings; `out`
// must be valid for one write.
enum QstStatus qst_config_from_str(const char *text, const char *base_dir, struct QstConfig **out);

// Loads an INI file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for one write.
enum QstStatus qst_config_from_file(const char *path, struct QstConfig **out);

// Overrides the output directory.
//
// # Safety
// `config` must be a live handle and `dir` a NUL-terminated string.
enum QstStatus qst_config_set_output_dir(struct QstConfig *config, const char *dir);

// # Safety
// `config` must be null or a handle from this library, freed once.
void qst_config_free(struct QstConfig *config);

// Runs a full pipeline, writing artifacts to the configured directory.
//
// # Safety
// `config` must be a live handle.
enum QstStatus qst_run(const struct QstConfig *config, enum QstCommand command);

// Exact characteristic function `Z_f` for the configuration.
//
// # Safety
// `config` must be a live handle; `out` must be valid for one write.
enum QstStatus qst_simulate(const struct QstConfig *config, struct QstCharFn **out);

// Empirical characteristic function from `[sampling] shots` draws.
//
// # Safety
// `config` must be a live handle; `out` must be valid for one write.
enum QstStatus qst_sample(const struct QstConfig *config, struct QstCharFn **out);

// Grid sizes of a characteristic function.
//
// # Safety
// `z` must be a live handle; `n1`, `n2` valid for one write each.
enum QstStatus qst_charfn_shape(const struct QstCharFn *z, size_t *n1, size_t *n2);

// Copies `Z_f` in row-major order into `re` and `im` (each of length `len`).
//
// # Safety
// `z` must be a live handle; `re`, `im` valid for `len` writes.
enum QstStatus qst_charfn_values(const struct QstCharFn *z, double *re, double *im, size_t len);

// # Safety
// `z` must be null or a handle from this library, freed once.
void qst_charfn_free(struct QstCharFn *z);

// Reconstructs the state from `z` with the configured probe and options.
//
// # Safety
// `config` and `z` must be live handles; `out` valid for one write.
enum QstStatus qst_reconstruct(const struct QstConfig *config,
                               const struct QstCharFn *z,
                               struct QstReconstruction **out);

// Dimension `n` of the reconstructed `n×n` density matrix.
//
// # Safety
// `rec` must be a live handle; `n` valid for one write.
enum QstStatus qst_reconstruction_dim(const struct QstReconstruction *rec, size_t *n);

// Copies `ρ(X_i, X_j)` row-major into `re` and `im` (each of length `len`).
//
// # Safety
// `rec` must be a live handle; `re`, `im` valid for `len` writes.
enum QstStatus qst_reconstruction_density(const struct QstReconstruction *rec,
                                          double *re,
                                          double *im,
                                          size_t len);

// Covered fraction of the region of interest and the positivity
// projection distance.
//
// # Safety
// `rec` must be a live handle; outputs valid for one write each.
enum QstStatus qst_reconstruction_diagnostics(const struct QstReconstruction *rec,
                                              double *covered_fraction,
                                              double *projection_distance);

// Uhlmann fidelity between the reconstruction and the configured state.
//
// # Safety
// `config` and `rec` must be live handles; `fidelity` valid for one write.
enum QstStatus qst_reconstruction_fidelity(const struct QstConfig *config,
                                           const struct QstReconstruction *rec,
                                           double *fidelity);

// # Safety
// `rec` must be null or a handle from this library, freed once.
void qst_reconstruction_free(struct QstReconstruction *rec);

// Largest difference between the brute-force oracle and the analytic
// characteristic function on `n_probe`-point probe grids.
//
// # Safety
// `difference` must be valid for one write.
enum QstStatus qst_oracle_check(size_t n_probe, enum QstOrder order, double *difference);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QST_H */
