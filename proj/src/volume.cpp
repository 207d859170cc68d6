// SPDX-License-Identifier: Apache-2.0
#include "cmseg/volume.hpp"

#include <algorithm>
#include <cmath>

#include "cmseg/errors.hpp"

namespace cmseg {

Volume::Volume(Index c_, Index d_, Index h_, Index w_, Spacing sp, Scalar fill)
    : c(c_), d(d_), h(h_), w(w_), spacing(sp), data(static_cast<std::size_t>(c_ * d_ * h_ * w_), fill) {
    if (c < 1 || d < 1 || h < 1 || w < 1)
        throw ValidationError("Volume: all dimensions must be >= 1");
    if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
        throw ValidationError("Volume: spacing components must be > 0");
}

void Volume::require_finite(const std::string& what) const {
    for (const Scalar v : data) {
        if (!std::isfinite(v))
            throw RuntimeError("non-finite value produced by " + what);
    }
}

std::string to_string(ModalityId m) {
    switch (m) {
        case ModalityId::T1: return "T1";
        case ModalityId::T1c: return "T1c";
        case ModalityId::T2: return "T2";
        case ModalityId::FLAIR: return "FLAIR";
    }
    return "?";
}

ModalityId modality_from_string(const std::string& name) {
    for (ModalityId m : kAllModalities)
        if (to_string(m) == name) return m;
    throw ValidationError("unknown modality '" + name + "' (expected T1, T1c, T2 or FLAIR)");
}

std::string modality_file_token(ModalityId m) {
    switch (m) {
        case ModalityId::T1: return "t1";
        case ModalityId::T1c: return "t1ce";
        case ModalityId::T2: return "t2";
        case ModalityId::FLAIR: return "flair";
    }
    return "?";
}

void ModalityPairSpec::validate() const {
    if (pair_a.empty() || pair_a.size() > 2 || pair_a.size() != pair_b.size())
        throw ValidationError("ModalityPairSpec: each side must list 1 or 2 modalities and both sides the same count");
    std::array<int, 4> seen{};
    for (ModalityId m : pair_a) seen[static_cast<int>(m)]++;
    for (ModalityId m : pair_b) seen[static_cast<int>(m)]++;
    for (int n : seen)
        if (n > 1) throw ValidationError("ModalityPairSpec: pair sides must be disjoint");
}

LabelVolume::LabelVolume(Index d_, Index h_, Index w_, Spacing sp, std::uint8_t fill)
    : d(d_), h(h_), w(w_), spacing(sp), labels(static_cast<std::size_t>(d_ * h_ * w_), fill) {
    if (d < 1 || h < 1 || w < 1)
        throw ValidationError("LabelVolume: all dimensions must be >= 1");
}

void LabelVolume::validate() const {
    for (std::uint8_t v : labels) {
        if (v != 0 && v != 1 && v != 2 && v != 4)
            throw ValidationError("LabelVolume: voxel value " + std::to_string(int(v)) +
                                  " outside the BraTS set {0,1,2,4}");
    }
}

std::string to_string(Region r) {
    switch (r) {
        case Region::WT: return "WT";
        case Region::TC: return "TC";
        case Region::ET: return "ET";
    }
    return "?";
}

Index RegionMask::count() const {
    Index n = 0;
    for (std::uint8_t v : mask) n += v;
    return n;
}

std::tuple<RegionMask, RegionMask, RegionMask> derive_region_masks(const LabelVolume& label) {
    label.validate();
    const std::size_t n = label.labels.size();
    RegionMask wt{Region::WT, label.d, label.h, label.w, label.spacing, std::vector<std::uint8_t>(n, 0)};
    RegionMask tc{Region::TC, label.d, label.h, label.w, label.spacing, std::vector<std::uint8_t>(n, 0)};
    RegionMask et{Region::ET, label.d, label.h, label.w, label.spacing, std::vector<std::uint8_t>(n, 0)};
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t v = label.labels[i];
        wt.mask[i] = (v == 1 || v == 2 || v == 4);
        tc.mask[i] = (v == 1 || v == 4);
        et.mask[i] = (v == 4);
    }
    return {std::move(wt), std::move(tc), std::move(et)};
}

Volume one_hot(const LabelVolume& label) {
    label.validate();
    Volume out(4, label.d, label.h, label.w, label.spacing, 0.0);
    const Index n = label.voxels();
    for (Index i = 0; i < n; ++i) {
        Index ch = 0;
        switch (label.labels[static_cast<std::size_t>(i)]) {
            case 0: ch = 0; break;
            case 1: ch = 1; break;
            case 2: ch = 2; break;
            case 4: ch = 3; break;
        }
        out.data[static_cast<std::size_t>(ch * n + i)] = 1.0;
    }
    return out;
}

LabelVolume probs_to_labels(const Volume& probs) {
    if (probs.c != 4)
        throw ValidationError("probs_to_labels: expected 4 channels, got " + std::to_string(probs.c));
    const Index n = probs.voxels();
    for (Index i = 0; i < n; ++i) {
        Scalar s = 0;
        for (Index ch = 0; ch < 4; ++ch) s += probs.data[static_cast<std::size_t>(ch * n + i)];
        if (std::abs(s - 1.0) > 1e-5)
            throw ValidationError("probs_to_labels: channel values must sum to 1 within 1e-5");
    }
    LabelVolume out(probs.d, probs.h, probs.w, probs.spacing);
    for (Index i = 0; i < n; ++i) {
        Index best = 0;
        Scalar best_v = probs.data[static_cast<std::size_t>(i)];
        for (Index ch = 1; ch < 4; ++ch) {
            const Scalar v = probs.data[static_cast<std::size_t>(ch * n + i)];
            if (v > best_v) {  // strict: ties keep the lower channel
                best_v = v;
                best = ch;
            }
        }
        out.labels[static_cast<std::size_t>(i)] = kLabelCodes[static_cast<std::size_t>(best)];
    }
    return out;
}

}  // namespace cmseg
