// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_VOLUME_HPP
#define CMSEG_VOLUME_HPP

#include <array>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

namespace cmseg {

using Scalar = double;
using Index = std::int64_t;

// Voxel size in millimetres, ordered (depth, height, width) to match the
// grid axes below.
using Spacing = std::array<double, 3>;

inline constexpr Spacing kUnitSpacing{1.0, 1.0, 1.0};

// Dense scalar grid of shape (channels, depth, height, width), channel-major.
// Carries image modalities, network activations and probability maps alike.
struct Volume {
    Index c = 0, d = 0, h = 0, w = 0;
    Spacing spacing = kUnitSpacing;
    std::vector<Scalar> data;  // size c*d*h*w, x fastest

    Volume() = default;
    Volume(Index c_, Index d_, Index h_, Index w_, Spacing sp = kUnitSpacing, Scalar fill = 0.0);

    Index voxels() const { return d * h * w; }
    Index size() const { return c * d * h * w; }

    Scalar& at(Index ci, Index z, Index y, Index x) {
        return data[((ci * d + z) * h + y) * w + x];
    }
    Scalar at(Index ci, Index z, Index y, Index x) const {
        return data[((ci * d + z) * h + y) * w + x];
    }
    Scalar* channel(Index ci) { return data.data() + ci * voxels(); }
    const Scalar* channel(Index ci) const { return data.data() + ci * voxels(); }

    bool same_grid(const Volume& o) const {
        return d == o.d && h == o.h && w == o.w;
    }

    // Throws RuntimeError if any element is NaN/Inf; `what` names the producer.
    void require_finite(const std::string& what) const;
};

enum class ModalityId { T1 = 0, T1c = 1, T2 = 2, FLAIR = 3 };

inline constexpr std::array<ModalityId, 4> kAllModalities{
    ModalityId::T1, ModalityId::T1c, ModalityId::T2, ModalityId::FLAIR};

std::string to_string(ModalityId m);
ModalityId modality_from_string(const std::string& name);  // throws ValidationError
// BraTS file-name token: t1, t1ce, t2, flair.
std::string modality_file_token(ModalityId m);

// The two translation endpoints. Each side holds one modality (two-modality
// mode) or two modalities (quaternion mode); sides are disjoint.
struct ModalityPairSpec {
    std::vector<ModalityId> pair_a{ModalityId::T1, ModalityId::T1c};
    std::vector<ModalityId> pair_b{ModalityId::T2, ModalityId::FLAIR};

    void validate() const;  // throws ValidationError
    Index channels() const { return static_cast<Index>(pair_a.size()); }
};

// Ground-truth grid. Voxel codes follow the BraTS convention:
// 0 background, 1 necrotic/non-enhancing core, 2 edema, 4 enhancing tumor.
struct LabelVolume {
    Index d = 0, h = 0, w = 0;
    Spacing spacing = kUnitSpacing;
    std::vector<std::uint8_t> labels;  // size d*h*w

    LabelVolume() = default;
    LabelVolume(Index d_, Index h_, Index w_, Spacing sp = kUnitSpacing, std::uint8_t fill = 0);

    Index voxels() const { return d * h * w; }
    std::uint8_t& at(Index z, Index y, Index x) { return labels[(z * h + y) * w + x]; }
    std::uint8_t at(Index z, Index y, Index x) const { return labels[(z * h + y) * w + x]; }

    void validate() const;  // throws ValidationError on codes outside {0,1,2,4}
};

enum class Region { WT = 0, TC = 1, ET = 2 };

std::string to_string(Region r);

// Binary mask for one evaluation region.
struct RegionMask {
    Region region = Region::WT;
    Index d = 0, h = 0, w = 0;
    Spacing spacing = kUnitSpacing;
    std::vector<std::uint8_t> mask;  // 0/1, size d*h*w

    Index voxels() const { return d * h * w; }
    std::uint8_t at(Index z, Index y, Index x) const { return mask[(z * h + y) * w + x]; }
    Index count() const;
};

// Region derivation: WT = {1,2,4}, TC = {1,4}, ET = {4}. The returned masks
// are nested ET <= TC <= WT voxelwise.
std::tuple<RegionMask, RegionMask, RegionMask> derive_region_masks(const LabelVolume& label);

// Channel order (background, 1, 2, 4); exactly one channel is 1 per voxel.
Volume one_hot(const LabelVolume& label);

// Per-voxel argmax over 4 channels back to BraTS codes. Requires each voxel
// to sum to 1 within 1e-5. Ties break toward the lowest channel index.
LabelVolume probs_to_labels(const Volume& probs);

inline constexpr std::array<std::uint8_t, 4> kLabelCodes{0, 1, 2, 4};

}  // namespace cmseg

#endif
