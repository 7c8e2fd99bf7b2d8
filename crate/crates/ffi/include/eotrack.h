#ifndef EOTRACK_H
#define EOTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EotStatus {
  EOT_STATUS_OK = 0,
  EOT_STATUS_NULL_POINTER = 1,
  EOT_STATUS_INVALID_ARGUMENT = 2,
  EOT_STATUS_NUMERICAL = 3,
  EOT_STATUS_DISCONNECTED = 4,
  EOT_STATUS_PANIC = 5,
  // The requested quantity is not available (yet).
  EOT_STATUS_UNAVAILABLE = 6,
} EotStatus;

typedef enum EotVariant {
  EOT_VARIANT_DVBEOT = 0,
  EOT_VARIANT_DVBEOT_KNOWN_R = 1,
  EOT_VARIANT_DVBEOT_NO_R = 2,
  EOT_VARIANT_NON_COOPERATIVE = 3,
  EOT_VARIANT_CENTRALIZED = 4,
} EotVariant;

// Opaque sensor network.
typedef struct EotNetwork EotNetwork;

// Opaque tracker.
typedef struct EotTracker EotTracker;

// Tracker parameters. Obtain defaults from [`eot_tracker_config_default`].
typedef struct EotTrackerConfig {
  double scan_time;
  double maneuver_correlation;
  double accel_rms;
  double extension_decay;
  double scaling;
  uint32_t vb_iterations;
  uint32_t consensus_rounds;
  double rho;
  double tolerance;
  // Row-major noise covariance, used by the known-noise variant.
  double known_noise[4];
} EotTrackerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *eot_version(void);

// Copies the last error message of this thread into `buf` (truncated,
// always NUL-terminated when `cap > 0`). Returns the full message length
// without the terminator.
size_t eot_last_error_message(char *buf, size_t cap);

// Random connected geometric graph of `n` nodes in `[0, side]²`.
enum EotStatus eot_network_generate(size_t n,
                                    double side,
                                    double radius,
                                    uint64_t seed,
                                    struct EotNetwork **out);

// Network from `n_edges` zero-based node pairs stored flat in `edges`.
enum EotStatus eot_network_from_edges(size_t n,
                                      const size_t *edges,
                                      size_t n_edges,
                                      struct EotNetwork **out);

enum EotStatus eot_network_node_count(const struct EotNetwork *net, size_t *out);

enum EotStatus eot_network_degree(const struct EotNetwork *net, size_t node, size_t *out);

// Writes up to `cap` neighbor indices of `node` into `buf` and the total
// neighbor count into `written`.
enum EotStatus eot_network_neighbors(const struct EotNetwork *net,
                                     size_t node,
                                     size_t *buf,
                                     size_t cap,
                                     size_t *written);

void eot_network_free(struct EotNetwork *net);

// Fills `out` with the default parameters.
enum EotStatus eot_tracker_config_default(struct EotTrackerConfig *out);

// Creates a tracker over a copy of `net`. `variant` is an [`EotVariant`] value.
enum EotStatus eot_tracker_new(const struct EotNetwork *net,
                               const struct EotTrackerConfig *cfg,
                               uint32_t variant,
                               struct EotTracker **out);

// Processes one scan. `counts[k]` is the number of measurements of node
// `k`; `points` holds all measurements as consecutive `(x, y)` pairs,
// node by node.
enum EotStatus eot_tracker_step(struct EotTracker *tracker,
                                const size_t *counts,
                                size_t n_nodes,
                                const double *points);

// Number of estimates per scan: the node count, or 1 for the centralized variant.
enum EotStatus eot_tracker_estimate_count(const struct EotTracker *tracker, size_t *out);

// Latest posterior centroid of `node` into `out[2]`.
enum EotStatus eot_tracker_centroid(const struct EotTracker *tracker, size_t node, double *out);

// Latest `E[X]` of `node`, row-major into `out[4]`.
enum EotStatus eot_tracker_extension(const struct EotTracker *tracker, size_t node, double *out);

// Latest `E[R]` of `node`, row-major into `out[4]`; `EOT_STATUS_UNAVAILABLE`
// when the variant neglects noise.
enum EotStatus eot_tracker_noise(const struct EotTracker *tracker, size_t node, double *out);

void eot_tracker_free(struct EotTracker *tracker);

// Gaussian Wasserstein distance between `(c1, s1)` and `(c2, s2)`; centers
// have 2 values, shapes 4 (row-major).
enum EotStatus eot_gwd(const double *c1,
                       const double *s1,
                       const double *c2,
                       const double *s2,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EOTRACK_H */
