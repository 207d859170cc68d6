/* SPDX-License-Identifier: Apache-2.0
 *
 * C API of the cmseg shared library. All work happens behind an opaque
 * context handle; functions return CMSEG_OK (0), CMSEG_ERR_VALIDATION (1)
 * for rejected inputs/configs, or CMSEG_ERR_RUNTIME (2) for failures after
 * validation. The message for the most recent failure on a context is
 * available via cmseg_last_error().
 */
#ifndef CMSEG_CMSEG_H
#define CMSEG_CMSEG_H

#include <stddef.h>

#if defined(_WIN32)
#define CMSEG_API __declspec(dllexport)
#else
#define CMSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct cmseg_ctx cmseg_ctx;

enum cmseg_status {
    CMSEG_OK = 0,
    CMSEG_ERR_VALIDATION = 1,
    CMSEG_ERR_RUNTIME = 2
};

CMSEG_API cmseg_ctx* cmseg_ctx_new(void);
CMSEG_API void cmseg_ctx_free(cmseg_ctx* ctx);

/* Message of the last failed call on this context; empty string if none.
 * The pointer stays valid until the next call on the same context. */
CMSEG_API const char* cmseg_last_error(const cmseg_ctx* ctx);

CMSEG_API const char* cmseg_version(void);

/* Each command reads a JSON config file; `overrides` is an optional array of
 * n_overrides strings of the form "section.key=value" applied on top. */
CMSEG_API int cmseg_synth(cmseg_ctx* ctx, const char* config_path,
                          const char* const* overrides, size_t n_overrides);
CMSEG_API int cmseg_train_cmft(cmseg_ctx* ctx, const char* config_path,
                               const char* const* overrides, size_t n_overrides);
CMSEG_API int cmseg_train_cmff(cmseg_ctx* ctx, const char* config_path,
                               const char* const* overrides, size_t n_overrides);
CMSEG_API int cmseg_predict(cmseg_ctx* ctx, const char* config_path,
                            const char* const* overrides, size_t n_overrides);
CMSEG_API int cmseg_evaluate(cmseg_ctx* ctx, const char* config_path,
                             const char* const* overrides, size_t n_overrides);

#ifdef __cplusplus
}
#endif

#endif
