#ifndef MSBRIDGE_H
#define MSBRIDGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MsbStatus {
  MSB_STATUS_OK = 0,
  MSB_STATUS_NULL_POINTER = 1,
  MSB_STATUS_INVALID_INPUT = 2,
  MSB_STATUS_SHAPE_MISMATCH = 3,
  MSB_STATUS_OUT_OF_RANGE = 4,
  MSB_STATUS_KERNEL_UNDERFLOW = 5,
  /**
   * The solve ran out of sweeps; the handle is still valid and usable.
   */
  MSB_STATUS_NOT_CONVERGED = 6,
  MSB_STATUS_BUFFER_TOO_SMALL = 7,
  MSB_STATUS_IO = 8,
  MSB_STATUS_INTERNAL = 9,
  MSB_STATUS_PANIC = 10,
} MsbStatus;

typedef enum MsbStructure {
  MSB_STRUCTURE_PATH = 0,
  MSB_STRUCTURE_BARYCENTRIC = 1,
  MSB_STRUCTURE_SERIES_PARALLEL = 2,
} MsbStructure;

typedef struct MsbPrediction MsbPrediction;

/**
 * Marginals being assembled for one problem.
 */
typedef struct MsbProblem MsbProblem;

typedef struct MsbSolution MsbSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf`, NUL-terminated and
 * truncated to `len` bytes. Returns the full message length excluding the NUL,
 * or 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t msb_last_error_message(char *buf, size_t len);

/**
 * Creates an empty problem. `bary_support` is only read for barycentric structures.
 *
 * # Safety
 * `out` must be a valid pointer to a `MsbProblem *`.
 */
enum MsbStatus msb_problem_new(enum MsbStructure structure,
                               size_t cores,
                               size_t snapshots,
                               size_t bary_support,
                               struct MsbProblem **out);

/**
 * Sets the marginal at node `(core, snapshot)`: `n` points of dimension `dim`
 * (row-major) with positive weights summing to one.
 *
 * # Safety
 * `problem` must come from [`msb_problem_new`]; `points` must hold `n * dim`
 * doubles and `weights` `n` doubles.
 */
enum MsbStatus msb_problem_set_marginal(struct MsbProblem *problem,
                                        size_t core,
                                        size_t snapshot,
                                        double time,
                                        const double *points,
                                        const double *weights,
                                        size_t n,
                                        size_t dim);

/**
 * # Safety
 * `problem` must be NULL or come from [`msb_problem_new`] and not be used afterwards.
 */
void msb_problem_free(struct MsbProblem *problem);

/**
 * Runs multimarginal Sinkhorn. On [`MsbStatus::NotConverged`] `*out` still
 * receives a solution holding the last scalings.
 *
 * # Safety
 * `problem` must come from [`msb_problem_new`]; `out` must be a valid pointer.
 */
enum MsbStatus msb_solve(const struct MsbProblem *problem,
                         double epsilon,
                         double tolerance,
                         size_t max_iterations,
                         bool normalize_costs,
                         struct MsbSolution **out);

/**
 * # Safety
 * `solution` must be NULL or a live solution handle.
 */
size_t msb_solution_iterations(const struct MsbSolution *solution);

/**
 * # Safety
 * `solution` must be NULL or a live solution handle.
 */
bool msb_solution_converged(const struct MsbSolution *solution);

/**
 * Largest L1 gap between a marginal of the solved plan and its target.
 *
 * # Safety
 * `solution` must be a live solution handle; `out` a valid pointer.
 */
enum MsbStatus msb_solution_max_residual(const struct MsbSolution *solution, double *out);

/**
 * Copies the scaling vector of node `(core, snapshot)` into `buf`; `*written`
 * receives its length. Pass `buf = NULL, len = 0` to query the length alone.
 *
 * # Safety
 * `buf` must hold `len` writable doubles; `written` must be a valid pointer.
 */
enum MsbStatus msb_solution_scaling(const struct MsbSolution *solution,
                                    size_t core,
                                    size_t snapshot,
                                    double *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Unimarginal projection of the solved plan onto node `(core, snapshot)`.
 * Same buffer protocol as [`msb_solution_scaling`].
 *
 * # Safety
 * `buf` must hold `len` writable doubles; `written` must be a valid pointer.
 */
enum MsbStatus msb_solution_projection(const struct MsbSolution *solution,
                                       size_t core,
                                       size_t snapshot,
                                       double *buf,
                                       size_t len,
                                       size_t *written);

/**
 * # Safety
 * `solution` must be NULL or a live handle, not used afterwards.
 */
void msb_solution_free(struct MsbSolution *solution);

/**
 * Predicted distribution of core `core` at time `tau`.
 *
 * # Safety
 * `solution` must be a live solution handle; `out` a valid pointer.
 */
enum MsbStatus msb_predict(const struct MsbSolution *solution,
                           size_t core,
                           double tau,
                           struct MsbPrediction **out);

/**
 * # Safety
 * `prediction` must be NULL or a live prediction handle.
 */
size_t msb_prediction_len(const struct MsbPrediction *prediction);

/**
 * # Safety
 * `prediction` must be NULL or a live prediction handle.
 */
size_t msb_prediction_dim(const struct MsbPrediction *prediction);

/**
 * Copies the support (`len * dim` doubles, row-major) and weights (`len` doubles).
 *
 * # Safety
 * `points` must hold `points_len` and `weights` `weights_len` writable doubles.
 */
enum MsbStatus msb_prediction_copy(const struct MsbPrediction *prediction,
                                   double *points,
                                   size_t points_len,
                                   double *weights,
                                   size_t weights_len);

/**
 * # Safety
 * `prediction` must be NULL or a live handle, not used afterwards.
 */
void msb_prediction_free(struct MsbPrediction *prediction);

/**
 * Exact 2-Wasserstein distance between two weighted point clouds in `R^dim`.
 *
 * # Safety
 * `a_points` must hold `n * dim` doubles, `a_weights` `n`; likewise for `b` with `m`.
 */
enum MsbStatus msb_wasserstein2(const double *a_points,
                                const double *a_weights,
                                size_t n,
                                const double *b_points,
                                const double *b_weights,
                                size_t m,
                                size_t dim,
                                double *out);

/**
 * Hilbert projective distance between two positive vectors of length `n`.
 *
 * # Safety
 * `u` and `v` must each hold `n` doubles; `out` must be a valid pointer.
 */
enum MsbStatus msb_hilbert_metric(const double *u, const double *v, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSBRIDGE_H */
