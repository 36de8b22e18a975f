#ifndef CASCADE_TUNER_H
#define CASCADE_TUNER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_INVALID_ARGUMENT = 2,
  CT_STATUS_PARSE = 3,
  CT_STATUS_MODEL = 4,
  CT_STATUS_OPTIMIZE = 5,
  CT_STATUS_BUFFER_TOO_SMALL = 6,
  CT_STATUS_PANIC = 7,
} CtStatus;

typedef enum CtArchitecture {
  CT_ARCHITECTURE_EARLY = 0,
  CT_ARCHITECTURE_FINAL = 1,
} CtArchitecture;

// Opaque cascade description (model costs and architecture).
typedef struct CtCascade CtCascade;

// Opaque fitted joint confidence model.
typedef struct CtModel CtModel;

typedef struct CtPerformance {
  double p_correct;
  double p_error;
  double expected_cost;
  double p_abstention;
} CtPerformance;

typedef struct CtRouteOutcome {
  // 1-based position of the deciding model.
  size_t position;
  // 1 if the query was abstained on, 0 if answered.
  int32_t abstained;
  double cumulative_cost;
} CtRouteOutcome;

typedef struct CtCostSavings {
  double total_cost_factor;
  double new_abstention_rate;
  double early_fraction;
} CtCostSavings;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ct_version(void);

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t ct_last_error_message(char *buf, size_t len);

// Parses a model from the JSON written by `cascade-tuner fit` (the
// `model` field) or by the library's model serializer.
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` must be writable.
enum CtStatus ct_model_from_json(const char *json, struct CtModel **out);

// Number of models described by `model` (0 for null).
//
// # Safety
// `model` must be null or a live handle.
size_t ct_model_k(const struct CtModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void ct_model_free(struct CtModel *model);

// Creates a cascade of `k` models with the given expected costs.
//
// # Safety
// `costs` must point to `k` doubles; `out` must be writable.
enum CtStatus ct_cascade_new(const double *costs,
                             size_t k,
                             enum CtArchitecture architecture,
                             struct CtCascade **out);

// # Safety
// `cascade` must be null or a handle not yet freed.
void ct_cascade_free(struct CtCascade *cascade);

// Validates `phi` (length k−1) and `xi` (length k) against the cascade.
//
// # Safety
// Pointers must be valid for the given lengths.
enum CtStatus ct_validate_thresholds(const struct CtCascade *cascade,
                                     const double *phi,
                                     size_t n_phi,
                                     const double *xi,
                                     size_t n_xi);

// Closed-form error, cost and abstention of a threshold vector.
//
// # Safety
// Handles must be live; arrays valid for their lengths; `out` writable.
enum CtStatus ct_analytic_performance(const struct CtModel *model,
                                      const struct CtCascade *cascade,
                                      const double *phi,
                                      size_t n_phi,
                                      const double *xi,
                                      size_t n_xi,
                                      struct CtPerformance *out);

// Gradient of the loss with respect to `[phi..., xi...]`, written to
// `grad` (length `n_phi + n_xi`).
//
// # Safety
// Handles must be live; arrays valid for their lengths.
enum CtStatus ct_loss_gradient(const struct CtModel *model,
                               const struct CtCascade *cascade,
                               const double *phi,
                               size_t n_phi,
                               const double *xi,
                               size_t n_xi,
                               double lambda_c,
                               double lambda_a,
                               double *grad,
                               size_t grad_len);

// Optimizes thresholds for one preference pair with default options and
// the given seed. Writes `k−1` deferral and `k` abstention thresholds.
//
// # Safety
// Handles must be live; `phi_out` holds `k−1`, `xi_out` holds `k` doubles.
enum CtStatus ct_optimize_thresholds(const struct CtModel *model,
                                     const struct CtCascade *cascade,
                                     double lambda_c,
                                     double lambda_a,
                                     uint64_t seed,
                                     double *phi_out,
                                     double *xi_out,
                                     double *loss_out);

// Routes one query with confidences `conf` (length k) at the cascade's
// expected costs.
//
// # Safety
// Handles must be live; arrays valid for their lengths; `out` writable.
enum CtStatus ct_route(const struct CtCascade *cascade,
                       const double *phi,
                       size_t n_phi,
                       const double *xi,
                       size_t n_xi,
                       const double *conf,
                       size_t n_conf,
                       struct CtRouteOutcome *out);

// Cost and abstention after early abstention at the given recall and
// precision.
//
// # Safety
// `out` must be writable.
enum CtStatus ct_cost_savings_estimate(double abstention_rate,
                                       double recall,
                                       double precision,
                                       double cost_ratio,
                                       struct CtCostSavings *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CASCADE_TUNER_H */
