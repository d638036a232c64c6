#ifndef MDMX_H
#define MDMX_H

#include <stddef.h>

#if defined(MDMX_BUILDING_LIBRARY)
#define MDMX_API __attribute__((visibility("default")))
#else
#define MDMX_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mdmx_status {
    MDMX_OK = 0,
    MDMX_INVALID_INPUT,
    MDMX_RANK_DEFICIENT,
    MDMX_INSUFFICIENT_DATA,
    MDMX_BRACKET_ERROR,
    MDMX_TRAINING_DIVERGED,
    MDMX_OPTIMIZATION_FAILED,
    MDMX_DOMAIN_ERROR,
    MDMX_PARSE_ERROR,
    MDMX_DUPLICATE_KEY,
    MDMX_POOLING_ERROR,
    MDMX_EMPTY_TENSOR,
    MDMX_DECOMPOSITION_ERROR,
    MDMX_EXTRAPOLATION_ERROR,
    MDMX_NO_SUPPORT,
    MDMX_SINGLE_PROFILE_FALLBACK,
    MDMX_STRATIFICATION_ERROR,
    MDMX_MISSING_INPUT,
    MDMX_CONFIG_ERROR,
    MDMX_IO_ERROR,
    MDMX_INTERNAL_ERROR
} mdmx_status;

typedef struct mdmx_bundle mdmx_bundle;

MDMX_API const char* mdmx_version(void);
MDMX_API const char* mdmx_status_name(mdmx_status status);
/* Message of the last failure on the calling thread; empty after success. */
MDMX_API const char* mdmx_last_error(void);
/* 0 uses every core. */
MDMX_API void mdmx_set_threads(int n);

/* Strings returned through char** out-parameters are owned by the caller. */
MDMX_API void mdmx_free_string(char* s);

/* options_json: {"work": dir, "config": path | object, "overrides": object,
   "args": object}. Writes a JSON summary to *result_json on success. */
MDMX_API mdmx_status mdmx_run_stage(const char* stage, const char* options_json, char** result_json);

MDMX_API mdmx_status mdmx_bundle_open(const char* dir, mdmx_bundle** out);
MDMX_API void mdmx_bundle_close(mdmx_bundle* bundle);
MDMX_API mdmx_status mdmx_bundle_meta(const mdmx_bundle* bundle, char** result_json);
/* request_json: the query of GET /v1/schedule as a JSON object. *http_status
   receives the status the service would answer with. */
MDMX_API mdmx_status mdmx_bundle_schedule(const mdmx_bundle* bundle, const char* request_json, int* http_status,
                                          char** result_json);
MDMX_API mdmx_status mdmx_bundle_fit(const mdmx_bundle* bundle, const double* logit_qx, size_t n,
                                     char** result_json);
/* probs: 5q0 female, 5q0 male, optionally 45q15 female, 45q15 male (n = 2 or 4). */
MDMX_API mdmx_status mdmx_bundle_predict(const mdmx_bundle* bundle, const double* probs, size_t n,
                                         char** result_json);

/* Blocks serving HTTP until the process ends. */
MDMX_API mdmx_status mdmx_serve(const char* bundle_dir, const char* host, int port);

MDMX_API mdmx_status mdmx_e0_from_qx(const double* qx, size_t n, double* e0);

#ifdef __cplusplus
}
#endif

#endif
