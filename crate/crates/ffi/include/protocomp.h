#ifndef PROTOCOMP_H
#define PROTOCOMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PC_STATUS_NULL_POINTER = 1,
  /**
   * Bad arguments or inconsistent input data.
   */
  PC_STATUS_VALIDATION = 2,
  /**
   * A numerical failure (loss of definiteness, underflow, no convergence).
   */
  PC_STATUS_NUMERICAL = 3,
  /**
   * File or format problem.
   */
  PC_STATUS_IO = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  PC_STATUS_PANIC = 5,
} PcStatus;

typedef enum PcMethod {
  PC_METHOD_SCC = 0,
  PC_METHOD_SHC = 1,
  PC_METHOD_SUBSAMPLE = 2,
  PC_METHOD_CNN = 3,
  PC_METHOD_RNN = 4,
  PC_METHOD_FCNN = 5,
  PC_METHOD_RMHC = 6,
} PcMethod;

typedef enum PcMetric {
  /**
   * JBLD for covariances, Sinkhorn for histograms.
   */
  PC_METRIC_AUTO = 0,
  PC_METRIC_JBLD = 1,
  PC_METRIC_AIRM = 2,
  PC_METRIC_SINKHORN = 3,
  PC_METRIC_EMD = 4,
} PcMetric;

/**
 * Opaque labeled dataset.
 */
typedef struct PcDataset PcDataset;

/**
 * Options for `pc_compress`. Non-positive `gamma_sq` and `lambda` and a
 * zero `max_iter` mean "use the default".
 */
typedef struct PcCompressOptions {
  enum PcMethod method;
  double ratio;
  uint64_t seed;
  double gamma_sq;
  double lambda;
  size_t max_iter;
} PcCompressOptions;

/**
 * Summary of `pc_evaluate`.
 */
typedef struct PcEvalReport {
  double error_rate;
  uint64_t distance_evals;
  /**
   * Median wall time in seconds.
   */
  double wall_time;
} PcEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *pc_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum PcStatus pc_dataset_load(const char *path_, struct PcDataset **out);

/**
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum PcStatus pc_dataset_save(const struct PcDataset *ds, const char *path_);

/**
 * Synthetic covariance dataset with `classes * per_class` members.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_dataset_gen_covariance(size_t classes,
                                        size_t per_class,
                                        size_t dim,
                                        size_t wishart_dof,
                                        double separation,
                                        uint64_t seed,
                                        struct PcDataset **out);

/**
 * Synthetic histogram dataset; the ground metric is Euclidean over random
 * codewords in the unit square.
 *
 * # Safety
 * `out` must be writable.
 */
enum PcStatus pc_dataset_gen_histogram(size_t classes,
                                       size_t per_class,
                                       size_t dim,
                                       double concentration,
                                       uint64_t seed,
                                       struct PcDataset **out);

/**
 * Stratified split into training and test handles.
 *
 * # Safety
 * `ds` must be a live handle; `train` and `test` writable.
 */
enum PcStatus pc_dataset_split(const struct PcDataset *ds,
                               double test_fraction,
                               uint64_t seed,
                               struct PcDataset **train,
                               struct PcDataset **test);

/**
 * Number of members; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t pc_dataset_len(const struct PcDataset *ds);

/**
 * Matrix side or histogram length; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t pc_dataset_dim(const struct PcDataset *ds);

/**
 * Copies the labels into `labels`, which holds `len` entries.
 *
 * # Safety
 * `ds` must be a live handle and `labels` writable for `len` entries.
 */
enum PcStatus pc_dataset_labels(const struct PcDataset *ds, size_t *labels, size_t len);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void pc_dataset_free(struct PcDataset *ds);

/**
 * Compresses `train` into a new prototype dataset.
 *
 * # Safety
 * `train` must be a live handle, `opts` readable and `out` writable.
 */
enum PcStatus pc_compress(const struct PcDataset *train,
                          const struct PcCompressOptions *opts,
                          struct PcDataset **out);

/**
 * k-NN classification of `test` against `reference`. A non-positive
 * `lambda` picks the default for Sinkhorn.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum PcStatus pc_evaluate(const struct PcDataset *reference,
                          const struct PcDataset *test,
                          size_t k,
                          enum PcMetric metric,
                          double lambda,
                          struct PcEvalReport *out);

/**
 * Jensen-Bregman LogDet divergence of two `dim x dim` SPD matrices.
 *
 * # Safety
 * `x` and `y` must hold `dim * dim` doubles; `out` writable.
 */
enum PcStatus pc_jbld(const double *x, const double *y, size_t dim, double *out);

/**
 * Affine-invariant Riemannian distance of two SPD matrices.
 *
 * # Safety
 * `x` and `y` must hold `dim * dim` doubles; `out` writable.
 */
enum PcStatus pc_airm(const double *x, const double *y, size_t dim, double *out);

/**
 * Sinkhorn distance between histograms `a` and `b` under the row-major
 * ground cost `cost`.
 *
 * # Safety
 * `a` and `b` must hold `dim` doubles, `cost` `dim * dim`; `out` writable.
 */
enum PcStatus pc_sinkhorn(const double *a,
                          const double *b,
                          const double *cost,
                          size_t dim,
                          double lambda,
                          double *out);

/**
 * Exact earth mover's distance by the transportation simplex.
 *
 * # Safety
 * `a` and `b` must hold `dim` doubles, `cost` `dim * dim`; `out` writable.
 */
enum PcStatus pc_emd(const double *a, const double *b, const double *cost, size_t dim, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTOCOMP_H */
