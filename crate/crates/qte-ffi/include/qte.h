/* C interface for the qte library. */

#ifndef QTE_H
#define QTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome kind of the Gamma-cutoff search.
 */
typedef enum QteCutoffKind {
  QTE_CUTOFF_KIND_BELOW_ONE = 0,
  QTE_CUTOFF_KIND_VALUE = 1,
  QTE_CUTOFF_KIND_ABOVE_CAP = 2,
} QteCutoffKind;

typedef enum QteDesign {
  QTE_DESIGN_SCRE = 0,
  QTE_DESIGN_MATCHED_SETS = 1,
} QteDesign;

typedef enum QteMethod {
  QTE_METHOD_ILP = 0,
  QTE_METHOD_LP = 1,
} QteMethod;

typedef enum QteScore {
  QTE_SCORE_WILCOXON = 0,
  QTE_SCORE_STEPHENSON = 1,
} QteScore;

/**
 * Status codes returned by every fallible call.
 */
typedef enum QteStatus {
  QTE_STATUS_OK = 0,
  QTE_STATUS_NULL_POINTER = 1,
  QTE_STATUS_INVALID_UTF8 = 2,
  QTE_STATUS_INVALID_ARGUMENT = 3,
  QTE_STATUS_BUDGET_EXCEEDED = 4,
  QTE_STATUS_WRONG_DESIGN = 5,
  QTE_STATUS_VALIDATION_FAILED = 6,
  QTE_STATUS_PARSE_ERROR = 7,
  QTE_STATUS_OUT_OF_RANGE = 8,
  QTE_STATUS_PANIC = 9,
} QteStatus;

typedef enum QteTail {
  QTE_TAIL_FINITE_SAMPLE = 0,
  QTE_TAIL_GAUSSIAN = 1,
} QteTail;

/**
 * Opaque dataset handle.
 */
typedef struct QteDataset QteDataset;

/**
 * Opaque confidence-report handle.
 */
typedef struct QteReport QteReport;

/**
 * Analysis options shared by the p-value and confidence-set entry points.
 */
typedef struct QteOptions {
  enum QteScore score;
  /**
   * Stephenson parameter; ignored for Wilcoxon scores.
   */
  uint32_t stephenson_h;
  enum QteMethod method;
  double alpha;
  /**
   * Nonzero: Monte Carlo null with `mc_reps`/`mc_seed`; zero: exact
   * enumeration capped by `exact_budget`.
   */
  uint8_t use_monte_carlo;
  uint64_t mc_reps;
  uint64_t mc_seed;
  uint64_t exact_budget;
  /**
   * Nonzero: permute unit order with `tie_seed` before analysis.
   */
  uint8_t use_tie_seed;
  uint64_t tie_seed;
} QteOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the underlying library; static storage.
 */
const char *qte_version(void);

/**
 * Message describing the most recent error on this thread. Valid until the
 * next failing call on the same thread.
 */
const char *qte_last_error(void);

/**
 * Default options: Wilcoxon scores, exact ILP method, alpha 0.1, exact
 * null with the standard enumeration budget.
 */
struct QteOptions qte_options_default(void);

/**
 * Loads a dataset from a CSV file with header `stratum,treated,outcome`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QteStatus qte_dataset_load_csv(const char *path,
                                    enum QteDesign design,
                                    struct QteDataset **out);

/**
 * Builds a dataset from parallel arrays of length `len`: stratum labels
 * (strata ordered by first appearance), 0/1 treatment indicators, and
 * outcomes. Unit order within a stratum follows the array order.
 *
 * # Safety
 * The three arrays must be readable for `len` elements; `out` must be a
 * valid pointer.
 */
enum QteStatus qte_dataset_from_arrays(uintptr_t len,
                                       const uint32_t *stratum,
                                       const uint8_t *treated,
                                       const double *outcome,
                                       enum QteDesign design,
                                       struct QteDataset **out);

/**
 * # Safety
 * `dataset` must be a handle from this library or null.
 */
void qte_dataset_free(struct QteDataset *dataset);

/**
 * # Safety
 * `dataset` must be a valid handle.
 */
uintptr_t qte_dataset_units(const struct QteDataset *dataset);

/**
 * # Safety
 * `dataset` must be a valid handle.
 */
uintptr_t qte_dataset_strata(const struct QteDataset *dataset);

/**
 * Checks the dataset invariants; on failure the findings are in
 * `qte_last_error`.
 *
 * # Safety
 * `dataset` must be a valid handle.
 */
enum QteStatus qte_dataset_validate(const struct QteDataset *dataset);

/**
 * Randomization p-value for the null "k-th smallest effect <= c".
 *
 * # Safety
 * `dataset` and `out_p` must be valid pointers.
 */
enum QteStatus qte_scre_pvalue(const struct QteDataset *dataset,
                               struct QteOptions options,
                               uintptr_t k,
                               double c,
                               double *out_p);

/**
 * Simultaneous lower confidence limits for every effect quantile under the
 * stratified randomized design.
 *
 * # Safety
 * `dataset` and `out` must be valid pointers.
 */
enum QteStatus qte_scre_confidence(const struct QteDataset *dataset,
                                   struct QteOptions options,
                                   struct QteReport **out);

/**
 * Worst-case sensitivity p-value at bias `gamma`.
 *
 * # Safety
 * `dataset` and `out_p` must be valid pointers.
 */
enum QteStatus qte_sensitivity_pvalue(const struct QteDataset *dataset,
                                      struct QteOptions options,
                                      double gamma,
                                      enum QteTail tail,
                                      uintptr_t k,
                                      double c,
                                      double *out_p);

/**
 * Simultaneous sensitivity confidence limits at bias `gamma`.
 *
 * # Safety
 * `dataset` and `out` must be valid pointers.
 */
enum QteStatus qte_sensitivity_confidence(const struct QteDataset *dataset,
                                          struct QteOptions options,
                                          double gamma,
                                          enum QteTail tail,
                                          struct QteReport **out);

/**
 * Largest bias at which the (k, c) test still rejects; `out_kind`
 * discriminates below-1 / finite value / above the search cap.
 *
 * # Safety
 * `dataset`, `out_kind`, and `out_gamma` must be valid pointers.
 */
enum QteStatus qte_gamma_cutoff(const struct QteDataset *dataset,
                                struct QteOptions options,
                                uintptr_t k,
                                double c,
                                enum QteTail tail,
                                double resolution,
                                enum QteCutoffKind *out_kind,
                                double *out_gamma);

/**
 * Number of quantile rows in a report.
 *
 * # Safety
 * `report` must be a valid handle.
 */
uintptr_t qte_report_len(const struct QteReport *report);

/**
 * Reads row `index`: the quantile rank, its lower confidence limit
 * (-inf when uninformative), and whether the boundary is attained under
 * the order-free default p-value.
 *
 * # Safety
 * `report` must be a valid handle and the out pointers valid.
 */
enum QteStatus qte_report_limit(const struct QteReport *report,
                                uintptr_t index,
                                uintptr_t *out_k,
                                double *out_lower,
                                uint8_t *out_included);

/**
 * Serializes the full report as JSON; free with `qte_string_free`.
 *
 * # Safety
 * `report` and `out` must be valid pointers.
 */
enum QteStatus qte_report_to_json(const struct QteReport *report, char **out);

/**
 * # Safety
 * `report` must be a handle from this library or null.
 */
void qte_report_free(struct QteReport *report);

/**
 * # Safety
 * `s` must come from `qte_report_to_json` or be null.
 */
void qte_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QTE_H */
