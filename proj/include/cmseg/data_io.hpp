// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_DATA_IO_HPP
#define CMSEG_DATA_IO_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmseg/volume.hpp"

namespace cmseg {

// One patient: four modality files plus an optional label file.
struct SubjectRecord {
    std::string subject_id;
    std::map<ModalityId, std::string> modality_paths;
    std::optional<std::string> label_path;
    std::optional<std::string> grade;  // "HGG" or "LGG" when known
    std::string split;                 // e.g. "train", "val"
};

using ModalityVolumes = std::map<ModalityId, Volume>;

struct LoadedSubject {
    ModalityVolumes volumes;
    std::optional<LabelVolume> label;
};

// Scans dataset layout <root>/<split>/<subject_id>/<subject_id>_<token>.nii[.gz]
// with tokens t1, t1ce, t2, flair and seg for labels. Subjects are returned
// sorted by id. Throws ValidationError when a subject directory is missing a
// modality file.
std::vector<SubjectRecord> scan_dataset(const std::string& root, const std::string& split);

// Loads all four modalities (and the label when present); grids must agree in
// shape and spacing across files.
LoadedSubject load_subject(const SubjectRecord& record);

// Zero-mean unit-variance over the nonzero (brain) voxels; voxels that are
// exactly zero in the input stay exactly zero. Errors on all-zero input and
// on zero variance over the nonzero set.
Volume z_normalize(const Volume& v);

enum class ForegroundRule { BrainOverlap, TumorOverlap };

std::string to_string(ForegroundRule r);
ForegroundRule foreground_rule_from_string(const std::string& s);

struct PatchSpec {
    std::array<Index, 3> size{32, 32, 32};  // (depth, height, width)
    ForegroundRule foreground_rule = ForegroundRule::BrainOverlap;
    std::uint64_t seed = 0;

    // Components must be >= 16 and divisible by 2^depth of the nets in play.
    void validate(int net_depth) const;
};

struct PatchSample {
    ModalityVolumes volumes;
    std::optional<LabelVolume> label;
    std::array<Index, 3> origin{0, 0, 0};
};

// Draws one axis-aligned window, identically placed across modalities and
// label. The window must contain at least one brain voxel (BrainOverlap) or
// one tumor voxel (TumorOverlap); placement is a pure function of spec.seed.
// Throws RuntimeError naming the attempt count when no admissible window is
// found within the attempt budget.
PatchSample sample_patch(const ModalityVolumes& vols, const std::optional<LabelVolume>& label,
                         const PatchSpec& spec);

// Concatenates the listed modalities along the channel axis, in pair order.
Volume build_pair_input(const ModalityVolumes& vols, const std::vector<ModalityId>& pair);

// Splits a multi-channel volume back into single-channel volumes.
std::vector<Volume> split_channels(const Volume& v);

}  // namespace cmseg

#endif
