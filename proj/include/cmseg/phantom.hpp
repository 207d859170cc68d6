// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_PHANTOM_HPP
#define CMSEG_PHANTOM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmseg/data_io.hpp"
#include "cmseg/volume.hpp"

namespace cmseg {

// Synthetic two-pair dataset: smooth brain ellipsoids with nested ellipsoidal
// lesions. The T2/FLAIR channels are a fixed invertible intensity transform
// of T1/T1c plus per-label contrast shifts and Gaussian noise, so the
// translation task is solvable and the solution is checkable.
struct PhantomConfig {
    std::array<Index, 3> grid_size{64, 64, 64};
    int n_subjects = 20;
    int val_count = -1;  // held-out subjects; -1 means n_subjects / 4
    int lesion_count_min = 1;
    int lesion_count_max = 3;
    std::string intensity_map = "cubic_inv";  // or "linear"
    double noise_sigma = 0.02;
    std::uint64_t seed = 7;

    void validate() const;
    int resolved_val_count() const;
};

// Writes <root>/<split>/<id>/<id>_<token>.nii.gz for every subject plus a
// manifest.json index at the root. Fully determined by cfg.seed; the same
// config writes byte-identical files. Returns the subject records.
std::vector<SubjectRecord> synth_phantom(const PhantomConfig& cfg, const std::string& root);

// The fixed pair-A -> pair-B intensity transform (no lesion shift, no noise).
double phantom_transform(const std::string& intensity_map, double x);

// Per-label additive contrast shift applied to the transformed intensity for
// a pair-B modality. `label` is a BraTS code.
double phantom_pair_b_delta(ModalityId b_modality, std::uint8_t label);

}  // namespace cmseg

#endif
