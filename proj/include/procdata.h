#ifndef PROCDATA_H
#define PROCDATA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PD_API __declspec(dllexport)
#else
#define PD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pd_status {
  PD_OK = 0,
  PD_ERR_DATA = 1,      /* malformed input, failed fit, missing file */
  PD_ERR_CONFIG = 2,    /* unknown key, wrong type, value out of range */
  PD_ERR_ARGUMENT = 3,  /* null handle or bad argument to this API */
  PD_ERR_INTERNAL = 4
} pd_status;

typedef struct pd_context pd_context;
typedef struct pd_events pd_events;
typedef struct pd_hmm pd_hmm;

PD_API const char* pd_version(void);

/* Message for the last failing call on this thread; "" after a success. */
PD_API const char* pd_last_error(void);

/* Strings returned through char** outputs are released with pd_free_string. */
PD_API void pd_free_string(char* text);

/* Run context. config_json may be NULL or "" for defaults. PROCDATA_CFG_*
   environment variables are applied on creation. */
PD_API pd_status pd_context_create(const char* config_json, pd_context** out);
PD_API void pd_context_destroy(pd_context* ctx);

/* Sets a dotted key such as "hmm.restarts"; value_json falls back to a string. */
PD_API pd_status pd_context_set(pd_context* ctx, const char* key, const char* value_json);
PD_API pd_status pd_context_resolved_config(const pd_context* ctx, char** out_json);

/* Runs preprocess, indicators, ngram, dissim, mds, dif, hmm, sip or synth.
   out_dir receives the output directory when non-NULL. */
PD_API pd_status pd_run(pd_context* ctx, const char* subcommand, char** out_dir);

/* Event logs. */
PD_API pd_status pd_events_read(const char* path, pd_events** out);
PD_API size_t pd_events_count(const pd_events* events);
PD_API void pd_events_destroy(pd_events* events);

/* HMM evaluation on symbol labels; the model JSON is a saved model.json. */
PD_API pd_status pd_hmm_from_json(const char* model_json, pd_hmm** out);
PD_API pd_status pd_hmm_loglik(const pd_hmm* model, const char* const* labels, size_t length, double* out);
/* states must hold length entries; states are 0-based. */
PD_API pd_status pd_hmm_viterbi(const pd_hmm* model, const char* const* labels, size_t length, int* states,
                                double* log_prob);
PD_API void pd_hmm_destroy(pd_hmm* model);

/* Order-aware dissimilarity between two label sequences. */
PD_API pd_status pd_seq_dissimilarity(const char* const* a, size_t na, const char* const* b, size_t nb,
                                      double* out);

PD_API pd_status pd_hellinger(const double* p, const double* q, size_t n, double* out);
PD_API pd_status pd_tf_isf(size_t tf, size_t sf, size_t corpus_size, double* out);

/* strata holds k groups of (correct_ref, incorrect_ref, correct_focal, incorrect_focal). */
PD_API pd_status pd_mantel_haenszel(const double* strata, size_t k, double* alpha, double* chi2, double* p_value);

PD_API pd_status pd_chi_square_2x2(double present_correct, double present_incorrect, double absent_correct,
                                   double absent_incorrect, double* out);

#ifdef __cplusplus
}
#endif

#endif
