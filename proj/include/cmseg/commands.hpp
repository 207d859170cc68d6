// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_COMMANDS_HPP
#define CMSEG_COMMANDS_HPP

#include <string>
#include <vector>

#include "cmseg/phantom.hpp"
#include "cmseg/train_cmff.hpp"
#include "cmseg/train_cmft.hpp"

namespace cmseg {

// Full run configuration: shared keys plus one section per subcommand.
// Configs are JSON; unknown keys are rejected. A set CMSEG_OUTPUT_ROOT
// environment variable re-roots relative output_dir values.
struct RunConfig {
    std::string data_root;
    std::string output_dir;
    bool strict_deterministic = true;
    int threads = 0;  // 0: machine default (or the pinned strict-mode count)

    PhantomConfig synth;

    CmftConfig cmft;
    std::string cmft_split = "train";

    CmffConfig cmff;
    std::string cmff_split = "train";

    std::string predict_checkpoint;
    std::string predict_split = "val";

    std::string evaluate_pred_dir;
    std::string evaluate_split = "val";
    std::string evaluate_report_csv = "metrics.csv";
};

// Parses the file, applies "section.key=value" overrides, resolves the
// output root. Throws ValidationError with every problem listed.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Per-command existence/requirement validation (also exhaustive).
void validate_run_config(const RunConfig& cfg, const std::string& command);

int cmd_synth(const RunConfig& cfg);
int cmd_train_cmft(const RunConfig& cfg);
int cmd_train_cmff(const RunConfig& cfg);
int cmd_predict(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);

// Loads + validates + dispatches; maps ValidationError to 1 and runtime
// failures to 2, storing the message in error_out.
int run_command(const std::string& command, const std::string& config_path,
                const std::vector<std::string>& overrides, std::string& error_out);

}  // namespace cmseg

#endif
