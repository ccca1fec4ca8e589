#ifndef HALUBENCH_H
#define HALUBENCH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HbMetric {
  HB_METRIC_ACCURACY = 0,
  HB_METRIC_WEIGHTED_ACCURACY = 1,
  HB_METRIC_ABSTAIN_RATE = 2,
  HB_METRIC_HALU_BOK = 3,
  HB_METRIC_HALU_DOK = 4,
  HB_METRIC_ASSESSMENT_QD = 5,
} HbMetric;

typedef enum HbStatus {
  HB_STATUS_OK = 0,
  HB_STATUS_INVALID_ARGUMENT = 1,
  HB_STATUS_CONFIG_ERROR = 2,
  HB_STATUS_BACKEND_OUTAGE = 3,
  HB_STATUS_DATA_ERROR = 4,
  HB_STATUS_INTERNAL = 5,
} HbStatus;

/*
 Per-run reports with their cross-run aggregate.
 */
typedef struct HbReport HbReport;

/*
 A loaded weight table.
 */
typedef struct HbWeightTable HbWeightTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *hb_version(void);

/*
 Message of the last failure on this thread; empty after a success.
 Valid until the next call on the same thread.
 */
const char *hb_last_error(void);

void hb_string_free(char *s);

/*
 Question difficulty from mean relation complexity, normalised entity
 popularity and steepness `alpha`. Inputs are clamped to [0, 1].
 */
enum HbStatus hb_question_difficulty(double q_avg, double ep_norm, double alpha, double *out);

/*
 Blended entity similarity from a semantic and a token score.
 */
enum HbStatus hb_entity_similarity(double semantic, double token, double *out);

enum HbStatus hb_token_set_similarity(const char *a, const char *b, double *out);

/*
 Spearman and Kendall tau-b between `n` estimated and realised values.
 */
enum HbStatus hb_rank_correlations(const double *estimated,
                                   const double *realized,
                                   uintptr_t n,
                                   double *spearman,
                                   double *kendall);

enum HbStatus hb_weight_table_default(struct HbWeightTable **out);

enum HbStatus hb_weight_table_load(const char *path, struct HbWeightTable **out);

void hb_weight_table_free(struct HbWeightTable *table);

/*
 Difficulty of a question about an entity of `type_id` with the seven
 statistics (page views, site links, linked entities, external ids, wiki
 tokens, statements, references) and three relation weights.
 */
enum HbStatus hb_weight_table_difficulty(const struct HbWeightTable *table,
                                         const char *type_id,
                                         const uint64_t *statistics,
                                         const double *relation_weights,
                                         double *out);

enum HbStatus hb_weight_table_avg_qd(const struct HbWeightTable *table, double *out);

/*
 Reads run logs matching `pattern`. `experiment_avg_qd` non-zero uses the
 mean difficulty over all logs as the reference; `all_responses` non-zero
 divides depth hallucinations by all questions instead of aligned ones.
 */
enum HbStatus hb_report_from_logs(const char *pattern,
                                  int32_t experiment_avg_qd,
                                  int32_t all_responses,
                                  struct HbReport **out);

void hb_report_free(struct HbReport *report);

enum HbStatus hb_report_run_count(const struct HbReport *report, uintptr_t *out);

/*
 One metric of one run. `*present` is 0 when the metric is undefined for
 the run, e.g. hallucination rates when every response abstained.
 */
enum HbStatus hb_report_metric(const struct HbReport *report,
                               uintptr_t run,
                               enum HbMetric which,
                               double *value,
                               int32_t *present);

enum HbStatus hb_report_to_json(const struct HbReport *report, char **out);

/*
 Parses and validates a run config and builds every backend it names.
 */
enum HbStatus hb_validate_config(const char *path);

/*
 Runs the assessment described by a config file. `resume_token` may be
 null for a fresh output directory. `out` may be null.
 */
enum HbStatus hb_run_assessment(const char *config_path,
                                const char *resume_token,
                                struct HbReport **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HALUBENCH_H */
