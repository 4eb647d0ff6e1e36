#ifndef PICARDNET_H
#define PICARDNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_INVALID_ARGUMENT = 2,
  PN_STATUS_CONFIG = 3,
  PN_STATUS_RESOURCE_GUARD = 4,
  PN_STATUS_NUMERIC = 5,
  PN_STATUS_IO = 6,
  PN_STATUS_PANIC = 7,
} PnStatus;

/**
 * Opaque network handle.
 */
typedef struct PnNetwork PnNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *pn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pn_version(void);

/**
 * Parse a network from its JSON serialization.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PnStatus pn_network_from_json(const char *json, struct PnNetwork **out);

/**
 * Serialize a network; free the result with `pn_string_free`.
 *
 * # Safety
 * `net` must come from this library and `out` must be a valid pointer.
 */
enum PnStatus pn_network_to_json(const struct PnNetwork *net, char **out);

/**
 * # Safety
 * `s` must be null or come from `pn_network_to_json`.
 */
void pn_string_free(char *s);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void pn_network_free(struct PnNetwork *net);

/**
 * Input and output dimension, depth (number of affine layers) and the
 * parameter count of a network. Counts beyond `u64` saturate.
 *
 * # Safety
 * `net` must be a live handle; each output pointer may be null.
 */
enum PnStatus pn_network_shape(const struct PnNetwork *net,
                               size_t *input_dim,
                               size_t *output_dim,
                               size_t *depth,
                               uint64_t *param_count);

/**
 * Evaluate the realization at `x`.
 *
 * # Safety
 * `x` must hold `x_len` values and `out` room for `out_len` values.
 */
enum PnStatus pn_network_realize(const struct PnNetwork *net,
                                 const double *x,
                                 size_t x_len,
                                 double *out,
                                 size_t out_len);

/**
 * `U^{root}_{n,M}(t, x)` for a catalog problem on the `M^M`-step grid.
 *
 * # Safety
 * `problem` must be a NUL-terminated string, `x` must hold `dim` values and
 * `out` must be a valid pointer.
 */
enum PnStatus pn_mlp_estimate(const char *problem,
                              size_t dim,
                              double horizon,
                              uint32_t n,
                              uint32_t m,
                              uint64_t seed,
                              double t,
                              const double *x,
                              double *out);

/**
 * Build `Φ^{root}_{n,t}` for a catalog problem with exact encodings on the
 * `M^M`-step grid; its realization equals `pn_mlp_estimate` with the same
 * arguments.
 *
 * # Safety
 * `problem` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PnStatus pn_build_mlp_network(const char *problem,
                                   size_t dim,
                                   double horizon,
                                   uint32_t n,
                                   uint32_t m,
                                   uint64_t seed,
                                   double t,
                                   struct PnNetwork **out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PICARDNET_H */
