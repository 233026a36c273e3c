#ifndef MMVD_H
#define MMVD_H

/* Multimodal violence detection pipeline, C interface.
 *
 * Every entry point returns an mmvd_status; MMVD_OK means success and
 * anything else is an error whose human-readable message is available from
 * mmvd_last_error() until the next call on the same thread. Returned strings
 * are heap allocations owned by the caller; release them with
 * mmvd_string_free. The library is single-threaded per handle: share nothing
 * across threads without your own locking.
 */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mmvd_status {
  MMVD_OK = 0,
  MMVD_ERR_INVALID_ARGUMENT = 1,
  MMVD_ERR_SHAPE = 2,
  MMVD_ERR_CONFIG = 3,
  MMVD_ERR_IO = 4,
  MMVD_ERR_STATE = 5,
  MMVD_ERR_NUMERIC = 6,
  MMVD_ERR_UNKNOWN = 7
} mmvd_status;

/* Opaque configuration handle covering data generation, model geometry and
 * training. Keys are dotted paths ("train.lr", "gen.n_bags", ...). */
typedef struct mmvd_config mmvd_config;

/* Message for the most recent failure on this thread. Never NULL; empty
 * before any failure. The pointer stays valid until the next library call
 * from the same thread. */
const char* mmvd_last_error(void);

/* Library version, static storage, do not free. */
const char* mmvd_version(void);

/* Releases a string returned through an out parameter. NULL is fine. */
void mmvd_string_free(char* s);

/* Fresh configuration with built-in defaults. */
mmvd_status mmvd_config_create(mmvd_config** out);

/* Defaults overlaid with a JSON config file. Unknown keys are rejected and
 * named in the error message. */
mmvd_status mmvd_config_load(const char* path, mmvd_config** out);

/* Applies one dotted override, value in JSON literal syntax (numbers,
 * true/false, quoted strings). */
mmvd_status mmvd_config_set(mmvd_config* c, const char* key, const char* value);

/* Serializes the fully resolved configuration. */
mmvd_status mmvd_config_to_json(const mmvd_config* c, char** out_json);

/* Checks every field against its documented range. */
mmvd_status mmvd_config_validate(const mmvd_config* c);

void mmvd_config_free(mmvd_config* c);

/* Generates the synthetic multimodal dataset described by the gen.* section
 * into out_dir (manifest, per-bag feature files, frame labels). Refuses an
 * existing dataset unless force is nonzero. out_summary_json (optional,
 * may be NULL) receives counts and dims. */
mmvd_status mmvd_generate(const mmvd_config* c, const char* out_dir, int force,
                          char** out_summary_json);

/* Trains on a dataset directory produced by mmvd_generate and writes the
 * resolved config, parameter checkpoint and per-iteration log into run_dir.
 * Refuses a run_dir holding a previous run unless force is nonzero.
 * out_summary_json (optional) receives final losses and held-out AP. */
mmvd_status mmvd_train(const mmvd_config* c, const char* data_dir, const char* run_dir,
                       int force, char** out_summary_json);

/* Scores bags with the checkpoint in run_dir and writes per-bag score
 * traces plus a summary into out_dir. holdout_only nonzero restricts to the
 * held-out split reproduced from the run's stored config; zero evaluates
 * every bag. out_summary_json (optional) receives the AP values. */
mmvd_status mmvd_evaluate(const char* run_dir, const char* data_dir, const char* out_dir,
                          int holdout_only, char** out_summary_json);

/* Finite-difference validation of the recorded gradients of the full
 * training objective on a tiny seeded model and batch. Checks up to
 * max_components_per_param sampled entries of every parameter (0 = all).
 * out_report_json (optional) receives per-parameter worst relative errors;
 * out_max_rel_err (optional) the overall worst. */
mmvd_status mmvd_grad_check(unsigned long long seed, int max_components_per_param,
                            double* out_max_rel_err, char** out_report_json);

#ifdef __cplusplus
}
#endif

#endif /* MMVD_H */
