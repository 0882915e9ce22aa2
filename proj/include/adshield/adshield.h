#ifndef ADSHIELD_H
#define ADSHIELD_H

#include <stddef.h>
#include <stdint.h>

#if defined(ADSHIELD_BUILDING)
#define ADS_API __attribute__((visibility("default")))
#else
#define ADS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ads_status {
  ADS_OK = 0,
  ADS_ERR_INVALID_ARGUMENT = 1,
  ADS_ERR_PARSE = 2,
  ADS_ERR_IO = 3,
  ADS_ERR_GRAPH = 4,
  ADS_ERR_LIMIT = 5,
  ADS_ERR_NUMERIC = 6,
  ADS_ERR_INTERNAL = 7
} ads_status;

typedef struct ads_graph ads_graph;
typedef struct ads_condensed ads_condensed;
typedef struct ads_policy ads_policy;

/* Message of the last failed call on this thread; empty after a success. */
ADS_API const char* ads_last_error(void);
ADS_API const char* ads_status_name(ads_status status);

/* Raw attack graphs. */
ADS_API ads_status ads_graph_generate(int computers, uint64_t seed, ads_graph** out);
ADS_API ads_status ads_graph_generate_desk(int entries, int splits, uint64_t seed, ads_graph** out);
ADS_API ads_status ads_graph_load(const char* path, ads_graph** out);
ADS_API ads_status ads_graph_save(const ads_graph* g, const char* path);
/* dist: "indep", "pos" or "neg". */
ADS_API ads_status ads_graph_assign_rates(ads_graph* g, const char* dist, uint64_t seed);
ADS_API ads_status ads_graph_assign_blockable(ads_graph* g, uint64_t seed);
ADS_API ads_status ads_graph_select_entries(ads_graph* g, uint64_t seed);
ADS_API ads_status ads_graph_counts(const ads_graph* g, size_t* nodes, size_t* edges, size_t* entries);
ADS_API void ads_graph_free(ads_graph* g);

/* Condensed (NSP) graphs. */
ADS_API ads_status ads_condense(const ads_graph* g, ads_condensed** out);
ADS_API ads_status ads_condensed_load(const char* path, ads_condensed** out);
ADS_API ads_status ads_condensed_save(const ads_condensed* cg, const char* path);
ADS_API ads_status ads_condensed_counts(const ads_condensed* cg, size_t* nodes, size_t* nsps, size_t* bw_edges);
ADS_API void ads_condensed_free(ads_condensed* cg);

/* Defense plans travel as '0'/'1' strings with one character per block-worthy edge.
 * Output buffers need at least bw_edges + 1 bytes. A NULL plan means nothing is blocked. */

/* Exact optimal attacker success probability. */
ADS_API ads_status ads_oracle_value(const ads_condensed* cg, const char* plan, double* value);
/* Exhaustive best plan blocking exactly k edges. */
ADS_API ads_status ads_oracle_best_defense(const ads_condensed* cg, size_t k, char* plan_out, size_t plan_cap,
                                           double* value);

typedef struct ads_train_options {
  int epochs;
  size_t envs;
  int hidden;
  double lr;
  size_t batch_size;
  int hook_interval;
  const char* defender; /* "cedo", "ec", "greedy" or "none" */
  size_t budget;
  size_t population;
  size_t iterations;
  uint64_t seed;
} ads_train_options;

ADS_API void ads_train_options_default(ads_train_options* options);

/* Co-trains an attacker against the chosen defender. curve_csv may be NULL.
 * best_plan receives the defender's best plan when non-NULL. */
ADS_API ads_status ads_train(const ads_condensed* cg, const ads_train_options* options, const char* curve_csv,
                             ads_policy** out, char* best_plan, size_t best_cap);

ADS_API ads_status ads_policy_save(const ads_policy* p, const char* path);
ADS_API ads_status ads_policy_load(const char* path, ads_policy** out);
ADS_API void ads_policy_free(ads_policy* p);

typedef struct ads_eval_result {
  double mean;
  double ci_low;
  double ci_high;
  size_t episodes;
} ads_eval_result;

ADS_API ads_status ads_policy_evaluate(const ads_policy* p, const ads_condensed* cg, const char* plan, size_t episodes,
                                       uint64_t seed, int greedy, ads_eval_result* out);

typedef struct ads_defend_options {
  const char* rule; /* "cedo", "ec" or "greedy" */
  size_t budget;
  size_t population;
  size_t iterations;
  uint64_t seed;
} ads_defend_options;

ADS_API void ads_defend_options_default(ads_defend_options* options);

/* Searches for a plan. Fitness comes from the critic of `critic` or, when it is NULL,
 * from the exact solver. population_csv may be NULL. fitness is -(attacker success). */
ADS_API ads_status ads_defend(const ads_condensed* cg, const ads_policy* critic, const ads_defend_options* options,
                              const char* population_csv, char* plan_out, size_t plan_cap, double* fitness);

/* Runs "setup1", "setup2" or "setup3" from a key = value spec file. output_dir may be NULL. */
ADS_API ads_status ads_experiment_run(const char* setup, const char* spec_path, const char* output_dir);

#ifdef __cplusplus
}
#endif

#endif
