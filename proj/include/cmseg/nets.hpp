// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_NETS_HPP
#define CMSEG_NETS_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmseg/volume.hpp"

namespace cmseg {

inline constexpr double kLeakyReluSlope = 0.2;
inline constexpr double kInstanceNormEps = 1e-5;

// Generic shaped parameter/gradient container.
struct Tensor {
    std::vector<Index> dims;
    std::vector<Scalar> v;

    Tensor() = default;
    explicit Tensor(std::vector<Index> d);
    Index size() const { return static_cast<Index>(v.size()); }
    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

// Ordered by name so iteration, serialization and optimizer updates are
// deterministic.
using ParamMap = std::map<std::string, Tensor>;

enum class LayerKind {
    Conv3d,
    TransposedConv3d,
    InstanceNorm,
    LeakyRelu,
    ConcatSkip,
    SoftmaxChannels,
    MaskGuide,  // gates features by the branch foreground probabilities
};

std::string to_string(LayerKind k);

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::Conv3d;
    std::array<Index, 3> kernel{1, 1, 1};
    Index stride = 1;
    Index padding = 0;
    Index in_channels = 0;
    Index out_channels = 0;
    std::string skip_source;  // ConcatSkip only: id of the earlier layer to concatenate
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<std::string> taps;  // layer ids whose activations are exported
    Index min_input = 1;            // minimum spatial size per axis accepted at forward

    void validate() const;  // unique ids, resolvable skips/taps, composing channels
    int layer_index(const std::string& id) const;  // -1 when absent
};

// U-Net translator: `depth` stride-2 downsamplings with channel doubling from
// base_filters, mirrored decoder with skip concatenations, linear output conv
// back to in_channels. Exports the activations of the decoder's last two
// convolutions.
NetworkSpec build_generator(Index in_channels, Index base_filters, int depth);

// Patch critic: four stride-2 conv(4^3) stages with 16/32/64/128 filters, a
// stride-1 conv(4^3) to one score channel, padding 1 throughout.
NetworkSpec build_discriminator(Index in_channels);

// Same trunk as the generator; the output conv has four kernels followed by a
// channel softmax. Trunk layer ids match the generator's so parameters
// transfer by name.
NetworkSpec build_seg_branch(Index in_channels, Index base_filters, int depth);

// Fuses the four exported branch activations (4*tap_channels input channels):
// conv(3^3) to 2*tap_channels, mask-guided gating, conv(3^3) to tap_channels,
// conv(1^3) to four classes + softmax. Pass with_mask_guidance=false to drop
// the gating stage and keep everything else.
NetworkSpec build_fusion_branch(Index tap_channels, bool with_mask_guidance = true);

// Fan-in-scaled normal weights, zero biases; a pure function of (spec, seed).
ParamMap init_params(const NetworkSpec& spec, std::uint64_t seed);

Index parameter_count(const NetworkSpec& spec);

struct ForwardResult {
    Volume output;
    std::map<std::string, Volume> taps;
};

// Auxiliary inputs for MaskGuide layers: the 4-channel probability maps
// predicted by the two single-pair branches.
struct MaskInputs {
    const Volume* mask_a = nullptr;
    const Volume* mask_b = nullptr;
};

// Pure forward evaluation. Shape violations name the offending layer id.
ForwardResult forward(const NetworkSpec& spec, const ParamMap& params, const Volume& input,
                      const MaskInputs* masks = nullptr);

// Activation record for backpropagation.
struct Tape {
    Volume input;
    std::vector<Volume> outputs;  // one per layer
    Volume mask_a, mask_b;        // retained copies when MaskGuide is present
    bool has_masks = false;
};

ForwardResult forward_tape(const NetworkSpec& spec, const ParamMap& params, const Volume& input,
                           Tape& tape, const MaskInputs* masks = nullptr);

struct MaskGradients {
    Volume d_mask_a, d_mask_b;
    bool present = false;
};

// Reverse pass over a recorded tape. `d_output` is the loss gradient at the
// network output; `tap_gradients` (optional) injects additional gradients at
// tap layers. Parameter gradients accumulate (+=) into `param_gradients`.
// Returns the gradient w.r.t. the network input.
Volume backward(const NetworkSpec& spec, const ParamMap& params, const Tape& tape,
                const Volume& d_output, const std::map<std::string, Volume>* tap_gradients,
                ParamMap& param_gradients, MaskGradients* mask_gradients = nullptr);

// Residual attention gating: m = max(1 - mask_a[0], 1 - mask_b[0]) per voxel,
// output = features * (1 + m). Masks are 4-channel probability maps at the
// feature grid size.
Volume apply_mask_guidance(const Volume& features, const Volume& mask_a, const Volume& mask_b);

// Copies every trunk parameter of a trained generator into a segmentation
// branch by layer name and freshly initializes the four-kernel head. Throws
// on shape drift between the two configurations.
ParamMap transfer_parameters(const ParamMap& generator_params, const NetworkSpec& seg_spec,
                             std::uint64_t head_seed);

}  // namespace cmseg

#endif
