// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_TRAIN_CMFT_HPP
#define CMSEG_TRAIN_CMFT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmseg/checkpoint.hpp"
#include "cmseg/data_io.hpp"
#include "cmseg/losses.hpp"
#include "cmseg/nets.hpp"
#include "cmseg/optim.hpp"
#include "cmseg/subject_bank.hpp"

namespace cmseg {

// Phase-1 trainer configuration. The objective is either the adversarial
// cycle objective ("cyclegan") or plain input reconstruction ("self_recon",
// the pretraining baseline).
struct CmftConfig {
    ModalityPairSpec pairs;
    std::array<Index, 3> patch_size{32, 32, 32};
    std::string foreground_rule = "auto";  // auto | brain_overlap | tumor_overlap
    Index base_filters = 16;
    int depth = 3;
    double lambda = 10.0;
    double lr = 1e-4;
    std::int64_t steps = 200;
    std::uint64_t seed = 1;
    std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
    bool lr_linear_decay = false;
    std::string objective = "cyclegan";
    std::string resume_from;  // checkpoint path; empty for a fresh run

    void validate() const;
};

struct CmftTrainState {
    CmftConfig cfg;
    NetworkSpec gen_spec, disc_spec;
    ParamMap g_ab, g_ba, d_a, d_b;
    Adam opt_g_ab, opt_g_ba, opt_d_a, opt_d_b;
    std::int64_t step = 0;
};

// Fresh or resumed state (resume validates config compatibility).
CmftTrainState init_cmft(const CmftConfig& cfg);

// One optimization step on an unpaired (a, b) batch: generators first on the
// combined adversarial + weighted cycle objective, then both discriminators
// on freshly generated volumes. Returns the losses observed before the
// respective updates. Aborts with the offending term named when a loss goes
// non-finite.
CmftLossReport cmft_step(CmftTrainState& state, const Volume& a, const Volume& b);

struct SelfReconReport {
    double rec_a = 0, rec_b = 0, total = 0;
};

// One reconstruction step for the self-supervised baseline (no critics).
SelfReconReport self_recon_step(CmftTrainState& state, const Volume& a, const Volume& b);

// Full phase-1 run over the subjects; writes a step log and periodic
// checkpoints when out_dir is non-empty. Subject and patch draws are pure
// functions of (seed, step), so interrupted runs resume exactly.
Checkpoint run_cmft(const CmftConfig& cfg, const std::vector<SubjectRecord>& subjects,
                    const std::string& out_dir = "", const std::string& config_hash = "");

// run_cmft with the objective forced to self-reconstruction.
Checkpoint pretrain_self_recon(CmftConfig cfg, const std::vector<SubjectRecord>& subjects,
                               const std::string& out_dir = "", const std::string& config_hash = "");

Checkpoint make_cmft_checkpoint(const CmftTrainState& state, const std::string& config_hash = "");

}  // namespace cmseg

#endif
