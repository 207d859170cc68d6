// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library exclusively through the C API.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmseg/cmseg.h"

namespace {

struct CommandArgs {
    std::string config;
    std::vector<std::string> overrides;
};

using CommandFn = int (*)(cmseg_ctx*, const char*, const char* const*, size_t);

int run(CommandFn fn, cmseg_ctx* ctx, const CommandArgs& args) {
    std::vector<const char*> ovs;
    ovs.reserve(args.overrides.size());
    for (const auto& s : args.overrides) ovs.push_back(s.c_str());
    const int rc = fn(ctx, args.config.c_str(), ovs.data(), ovs.size());
    if (rc != CMSEG_OK) std::fprintf(stderr, "error: %s\n", cmseg_last_error(ctx));
    return rc;
}

void add_command(CLI::App& app, const std::string& name, const std::string& desc, CommandArgs& args,
                 CommandFn fn, cmseg_ctx* ctx, int& rc) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    cmd->add_option("-c,--config", args.config, "JSON run configuration")->required();
    cmd->add_option("--set", args.overrides,
                    "Override a config value (section.key=value); may be repeated");
    cmd->callback([&args, fn, ctx, &rc]() { rc = run(fn, ctx, args); });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modality brain tumor segmentation pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cmseg_version()));

    cmseg_ctx* ctx = cmseg_ctx_new();
    if (!ctx) {
        std::fprintf(stderr, "error: out of memory\n");
        return CMSEG_ERR_RUNTIME;
    }

    int rc = 0;
    CommandArgs synth_args, cmft_args, cmff_args, predict_args, evaluate_args;
    add_command(app, "synth", "Generate the synthetic phantom dataset", synth_args, cmseg_synth, ctx, rc);
    add_command(app, "train-cmft", "Phase 1: train the modality-pair translation networks", cmft_args,
                cmseg_train_cmft, ctx, rc);
    add_command(app, "train-cmff", "Phase 2: train the segmentation branches and fusion head", cmff_args,
                cmseg_train_cmff, ctx, rc);
    add_command(app, "predict", "Segment a dataset split with a trained phase-2 checkpoint", predict_args,
                cmseg_predict, ctx, rc);
    add_command(app, "evaluate", "Score predictions against ground truth (CSV report)", evaluate_args,
                cmseg_evaluate, ctx, rc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int parse_rc = app.exit(e);
        cmseg_ctx_free(ctx);
        return parse_rc == 0 ? 0 : CMSEG_ERR_VALIDATION;
    }
    cmseg_ctx_free(ctx);
    return rc;
}
