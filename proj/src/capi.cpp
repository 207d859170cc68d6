// SPDX-License-Identifier: Apache-2.0
#include "cmseg/cmseg.h"

#include <string>
#include <vector>

#include "cmseg/commands.hpp"

struct cmseg_ctx {
    std::string last_error;
};

namespace {

constexpr const char* kVersion = "1.0.0";

int dispatch(cmseg_ctx* ctx, const char* command, const char* config_path,
             const char* const* overrides, size_t n_overrides) {
    if (!ctx) return CMSEG_ERR_VALIDATION;
    ctx->last_error.clear();
    if (!config_path) {
        ctx->last_error = "config_path must not be null";
        return CMSEG_ERR_VALIDATION;
    }
    std::vector<std::string> ovs;
    for (size_t i = 0; i < n_overrides; ++i)
        if (overrides && overrides[i]) ovs.emplace_back(overrides[i]);
    try {
        return cmseg::run_command(command, config_path, ovs, ctx->last_error);
    } catch (const std::exception& e) {
        ctx->last_error = e.what();
        return CMSEG_ERR_RUNTIME;
    }
}

}  // namespace

extern "C" {

cmseg_ctx* cmseg_ctx_new(void) { return new (std::nothrow) cmseg_ctx(); }

void cmseg_ctx_free(cmseg_ctx* ctx) { delete ctx; }

const char* cmseg_last_error(const cmseg_ctx* ctx) { return ctx ? ctx->last_error.c_str() : ""; }

const char* cmseg_version(void) { return kVersion; }

int cmseg_synth(cmseg_ctx* ctx, const char* config_path, const char* const* overrides,
                size_t n_overrides) {
    return dispatch(ctx, "synth", config_path, overrides, n_overrides);
}

int cmseg_train_cmft(cmseg_ctx* ctx, const char* config_path, const char* const* overrides,
                     size_t n_overrides) {
    return dispatch(ctx, "train-cmft", config_path, overrides, n_overrides);
}

int cmseg_train_cmff(cmseg_ctx* ctx, const char* config_path, const char* const* overrides,
                     size_t n_overrides) {
    return dispatch(ctx, "train-cmff", config_path, overrides, n_overrides);
}

int cmseg_predict(cmseg_ctx* ctx, const char* config_path, const char* const* overrides,
                  size_t n_overrides) {
    return dispatch(ctx, "predict", config_path, overrides, n_overrides);
}

int cmseg_evaluate(cmseg_ctx* ctx, const char* config_path, const char* const* overrides,
                   size_t n_overrides) {
    return dispatch(ctx, "evaluate", config_path, overrides, n_overrides);
}

}  // extern "C"
