// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_TRAIN_CMFF_HPP
#define CMSEG_TRAIN_CMFF_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmseg/checkpoint.hpp"
#include "cmseg/data_io.hpp"
#include "cmseg/losses.hpp"
#include "cmseg/nets.hpp"
#include "cmseg/optim.hpp"
#include "cmseg/subject_bank.hpp"

namespace cmseg {

// full: both branches + fusion head. no_mask_guidance: same minus the gating
// stage. branch_*_only: train one branch, leave the rest untouched.
// average_fusion: train both branches, decode the mean of their probability
// maps (no fusion parameters exist).
enum class CmffVariant { Full, NoMaskGuidance, BranchAOnly, BranchBOnly, AverageFusion };
enum class CmffInitMode { CmftTransfer, Random, SelfReconTransfer };

std::string to_string(CmffVariant v);
CmffVariant cmff_variant_from_string(const std::string& s);
std::string to_string(CmffInitMode m);
CmffInitMode cmff_init_mode_from_string(const std::string& s);

struct CmffConfig {
    ModalityPairSpec pairs;
    std::array<Index, 3> patch_size{32, 32, 32};
    std::string foreground_rule = "auto";
    Index base_filters = 16;
    int depth = 3;
    double lr = 1e-4;
    std::int64_t steps = 200;
    std::uint64_t seed = 2;
    std::int64_t checkpoint_every = 0;
    CmffInitMode init_mode = CmffInitMode::CmftTransfer;
    CmffVariant variant = CmffVariant::Full;
    std::string cmft_checkpoint;  // required for the transfer init modes
    std::string resume_from;
    bool lr_linear_decay = false;

    void validate() const;
};

struct CmffModelState {
    CmffConfig cfg;
    NetworkSpec spec_a, spec_b, fusion_spec;
    ParamMap s_a, s_b, fusion;
    Adam opt_a, opt_b, opt_f;
    std::int64_t step = 0;

    bool has_fusion() const { return cfg.variant != CmffVariant::AverageFusion; }
};

// Builds the two branches (transferred trunks or fresh) and the fusion head.
CmffModelState init_cmff(const CmffConfig& cfg);

// One optimization step on an aligned (a, b, label) batch. Only the variant's
// parameter set is touched.
CmffLossReport cmff_step(CmffModelState& state, const Volume& a, const Volume& b,
                         const LabelVolume& y);

struct SegOutput {
    Volume probs_a, probs_b, probs_f;  // probs_f holds the variant's decoding head
    LabelVolume final_labels;
};

// Whole-volume inference: sliding windows with 50% overlap, uniform
// probability averaging, argmax decoding of the variant's head. Volumes must
// already be normalized and at least patch-sized per axis.
SegOutput predict(const CmffModelState& state, const ModalityVolumes& volumes);

Checkpoint run_cmff(const CmffConfig& cfg, const std::vector<SubjectRecord>& subjects,
                    const std::string& out_dir = "", const std::string& config_hash = "");

Checkpoint make_cmff_checkpoint(const CmffModelState& state, const std::string& config_hash = "");

// Rebuilds a model (specs + parameters + optimizer state) from a phase-2
// checkpoint, e.g. for prediction.
CmffModelState state_from_checkpoint(const Checkpoint& ckpt);

// Window origins covering [0, n) with ~50% overlap; the final window is
// clamped to end exactly at n.
std::vector<Index> tile_positions(Index n, Index window);

// Applies `fn` to every sliding window of `input` and averages the
// per-window outputs over their overlaps. fn must preserve the window's
// spatial size and emit out_channels channels.
Volume tile_apply(const Volume& input, const std::array<Index, 3>& window, Index out_channels,
                  const std::function<Volume(const Volume&)>& fn);

}  // namespace cmseg

#endif
