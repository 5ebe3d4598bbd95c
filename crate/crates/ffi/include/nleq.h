#ifndef NLEQ_H
#define NLEQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NleqStatus {
  NLEQ_STATUS_OK = 0,
  NLEQ_STATUS_NULL_POINTER = 1,
  NLEQ_STATUS_INVALID_PARAMETER = 2,
  NLEQ_STATUS_INVALID_STATE = 3,
  NLEQ_STATUS_NUMERICAL = 4,
  NLEQ_STATUS_IO = 5,
  NLEQ_STATUS_PARSE = 6,
  NLEQ_STATUS_PANIC = 7,
} NleqStatus;

/**
 * Opaque constellation handle.
 */
typedef struct NleqConstellation NleqConstellation;

/**
 * Opaque network handle.
 */
typedef struct NleqModel NleqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nleq_version(void);

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL,
 * or 0 when there is no error.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null with `len == 0`.
 */
size_t nleq_last_error_message(char *buf, size_t len);

/**
 * Unit-power 2^m-ASK with Gray labels and a uniform prior.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum NleqStatus nleq_constellation_new_ask(size_t bits_per_symbol, struct NleqConstellation **out);

/**
 * # Safety
 * `c` must be null or a handle from [`nleq_constellation_new_ask`].
 */
void nleq_constellation_free(struct NleqConstellation *c);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t nleq_constellation_len(const struct NleqConstellation *c);

/**
 * Bits per symbol, or 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t nleq_constellation_bits_per_symbol(const struct NleqConstellation *c);

/**
 * Copy the points (ascending) and their labels. Both arrays must hold
 * `len` entries, with `len` equal to the constellation size.
 *
 * # Safety
 * Pointers must be valid for `len` elements.
 */
enum NleqStatus nleq_constellation_points(const struct NleqConstellation *c,
                                          double *points,
                                          uint32_t *labels,
                                          size_t len);

/**
 * Gaussian soft demapping of `n` equalized samples at noise variance
 * `sigma2`. Writes `n * m` LLRs (row-major, bit 0 = label MSB,
 * positive favors 0) into `llrs`.
 *
 * # Safety
 * `y` must hold `n` values and `llrs` room for `n * m`.
 */
enum NleqStatus nleq_demap(const struct NleqConstellation *c,
                           double sigma2,
                           const double *y,
                           size_t n,
                           double *llrs);

/**
 * Load a network checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum NleqStatus nleq_model_load(const char *path, struct NleqModel **out);

/**
 * # Safety
 * `m` must be null or a handle from [`nleq_model_load`].
 */
void nleq_model_free(struct NleqModel *m);

/**
 * Input width (tap count), or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t nleq_model_input_len(const struct NleqModel *m);

/**
 * Output width, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t nleq_model_output_len(const struct NleqModel *m);

/**
 * Run the network on `n` row-major input windows.
 *
 * # Safety
 * `inputs` must hold `n * input_len` values, `outputs` room for
 * `n * output_len`.
 */
enum NleqStatus nleq_model_predict(const struct NleqModel *m,
                                   const double *inputs,
                                   size_t n,
                                   double *outputs);

/**
 * Train the model described by a TOML experiment file and write its results
 * directory under `out_dir` (or the file's `out_dir` when null).
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_dir` null or one.
 */
enum NleqStatus nleq_train_from_config(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLEQ_H */
