// SPDX-License-Identifier: Apache-2.0
#include "cmseg/nets.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cmseg/errors.hpp"
#include "cmseg/rng.hpp"
#include "kernels.hpp"

namespace cmseg {

Tensor::Tensor(std::vector<Index> d) : dims(std::move(d)) {
    Index n = 1;
    for (Index x : dims) n *= x;
    v.assign(static_cast<std::size_t>(n), 0.0);
}

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv3d: return "conv3d";
        case LayerKind::TransposedConv3d: return "transposed_conv3d";
        case LayerKind::InstanceNorm: return "instance_norm";
        case LayerKind::LeakyRelu: return "leaky_relu";
        case LayerKind::ConcatSkip: return "concat_skip";
        case LayerKind::SoftmaxChannels: return "softmax_channels";
        case LayerKind::MaskGuide: return "mask_guide";
    }
    return "?";
}

int NetworkSpec::layer_index(const std::string& id) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].id == id) return static_cast<int>(i);
    return -1;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw ValidationError("NetworkSpec: no layers");
    std::set<std::string> ids;
    std::map<std::string, Index> out_ch;
    Index cur = layers.front().in_channels;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& L = layers[i];
        if (!ids.insert(L.id).second) throw ValidationError("NetworkSpec: duplicate layer id " + L.id);
        if (L.in_channels != cur)
            throw ValidationError("NetworkSpec: layer " + L.id + " expects " + std::to_string(L.in_channels) +
                                  " input channels but receives " + std::to_string(cur));
        switch (L.kind) {
            case LayerKind::Conv3d:
            case LayerKind::TransposedConv3d:
                if (L.in_channels < 1 || L.out_channels < 1 || L.stride < 1 || L.padding < 0 ||
                    L.kernel[0] < 1 || L.kernel[1] < 1 || L.kernel[2] < 1)
                    throw ValidationError("NetworkSpec: layer " + L.id + " has inconsistent geometry");
                break;
            case LayerKind::ConcatSkip: {
                auto it = out_ch.find(L.skip_source);
                if (it == out_ch.end())
                    throw ValidationError("NetworkSpec: layer " + L.id + " references unknown skip source '" +
                                          L.skip_source + "'");
                if (L.out_channels != L.in_channels + it->second)
                    throw ValidationError("NetworkSpec: layer " + L.id + " channel count does not compose");
                break;
            }
            default:
                if (L.out_channels != L.in_channels)
                    throw ValidationError("NetworkSpec: layer " + L.id + " must preserve channels");
        }
        out_ch[L.id] = L.out_channels;
        cur = L.out_channels;
    }
    for (const std::string& t : taps)
        if (!ids.count(t)) throw ValidationError("NetworkSpec: tap '" + t + "' names no layer");
}

namespace {

void add_conv_block(std::vector<LayerSpec>& L, const std::string& id, Index cin, Index cout,
                    Index k, Index stride, Index pad) {
    L.push_back({id, LayerKind::Conv3d, {k, k, k}, stride, pad, cin, cout, {}});
    L.push_back({id + ".in", LayerKind::InstanceNorm, {1, 1, 1}, 1, 0, cout, cout, {}});
    L.push_back({id + ".act", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, cout, cout, {}});
}

void add_tconv_block(std::vector<LayerSpec>& L, const std::string& id, Index cin, Index cout) {
    L.push_back({id, LayerKind::TransposedConv3d, {2, 2, 2}, 2, 0, cin, cout, {}});
    L.push_back({id + ".in", LayerKind::InstanceNorm, {1, 1, 1}, 1, 0, cout, cout, {}});
    L.push_back({id + ".act", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, cout, cout, {}});
}

std::vector<LayerSpec> unet_trunk(Index in_channels, Index base_filters, int depth) {
    if (in_channels != 1 && in_channels != 2)
        throw ValidationError("build_generator: in_channels must be 1 or 2");
    if (base_filters < 1) throw ValidationError("build_generator: base_filters must be >= 1");
    if (depth < 1) throw ValidationError("build_generator: depth must be >= 1");

    std::vector<LayerSpec> L;
    const auto ch = [&](int level) { return base_filters << level; };

    add_conv_block(L, "e0c1", in_channels, ch(0), 3, 1, 1);
    add_conv_block(L, "e0c2", ch(0), ch(0), 3, 1, 1);
    for (int l = 1; l <= depth; ++l) {
        add_conv_block(L, "d" + std::to_string(l), ch(l - 1), ch(l), 3, 2, 1);
        add_conv_block(L, "e" + std::to_string(l) + "c1", ch(l), ch(l), 3, 1, 1);
        add_conv_block(L, "e" + std::to_string(l) + "c2", ch(l), ch(l), 3, 1, 1);
    }
    for (int l = depth - 1; l >= 0; --l) {
        const std::string ls = std::to_string(l);
        add_tconv_block(L, "u" + ls, ch(l + 1), ch(l));
        L.push_back({"cat" + ls, LayerKind::ConcatSkip, {1, 1, 1}, 1, 0, ch(l), ch(l + 1),
                     "e" + ls + "c2.act"});
        add_conv_block(L, "r" + ls + "c1", ch(l + 1), ch(l), 3, 1, 1);
        add_conv_block(L, "r" + ls + "c2", ch(l), ch(l), 3, 1, 1);
    }
    return L;
}

}  // namespace

NetworkSpec build_generator(Index in_channels, Index base_filters, int depth) {
    NetworkSpec spec;
    spec.layers = unet_trunk(in_channels, base_filters, depth);
    spec.layers.push_back({"out", LayerKind::Conv3d, {1, 1, 1}, 1, 0, base_filters, in_channels, {}});
    spec.taps = {"r0c1.act", "r0c2.act"};
    spec.min_input = Index(1) << depth;
    spec.validate();
    return spec;
}

NetworkSpec build_seg_branch(Index in_channels, Index base_filters, int depth) {
    NetworkSpec spec;
    spec.layers = unet_trunk(in_channels, base_filters, depth);
    spec.layers.push_back({"head", LayerKind::Conv3d, {1, 1, 1}, 1, 0, base_filters, 4, {}});
    spec.layers.push_back({"head.softmax", LayerKind::SoftmaxChannels, {1, 1, 1}, 1, 0, 4, 4, {}});
    spec.taps = {"r0c1.act", "r0c2.act"};
    spec.min_input = Index(1) << depth;
    spec.validate();
    return spec;
}

NetworkSpec build_discriminator(Index in_channels) {
    if (in_channels != 1 && in_channels != 2)
        throw ValidationError("build_discriminator: in_channels must be 1 or 2");
    NetworkSpec spec;
    auto& L = spec.layers;
    L.push_back({"l1", LayerKind::Conv3d, {4, 4, 4}, 2, 1, in_channels, 16, {}});
    L.push_back({"l2", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, 16, 16, {}});
    L.push_back({"l3", LayerKind::Conv3d, {4, 4, 4}, 2, 1, 16, 32, {}});
    L.push_back({"l4", LayerKind::InstanceNorm, {1, 1, 1}, 1, 0, 32, 32, {}});
    L.push_back({"l5", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, 32, 32, {}});
    L.push_back({"l6", LayerKind::Conv3d, {4, 4, 4}, 2, 1, 32, 64, {}});
    L.push_back({"l7", LayerKind::InstanceNorm, {1, 1, 1}, 1, 0, 64, 64, {}});
    L.push_back({"l8", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, 64, 64, {}});
    L.push_back({"l9", LayerKind::Conv3d, {4, 4, 4}, 2, 1, 64, 128, {}});
    L.push_back({"l10", LayerKind::InstanceNorm, {1, 1, 1}, 1, 0, 128, 128, {}});
    L.push_back({"l11", LayerKind::LeakyRelu, {1, 1, 1}, 1, 0, 128, 128, {}});
    L.push_back({"l12", LayerKind::Conv3d, {4, 4, 4}, 1, 1, 128, 1, {}});
    spec.min_input = 16;
    spec.validate();
    return spec;
}

NetworkSpec build_fusion_branch(Index tap_channels, bool with_mask_guidance) {
    if (tap_channels < 1) throw ValidationError("build_fusion_branch: tap_channels must be >= 1");
    const Index t = tap_channels;
    NetworkSpec spec;
    auto& L = spec.layers;
    add_conv_block(L, "f1", 4 * t, 2 * t, 3, 1, 1);
    if (with_mask_guidance)
        L.push_back({"mg", LayerKind::MaskGuide, {1, 1, 1}, 1, 0, 2 * t, 2 * t, {}});
    add_conv_block(L, "f2", 2 * t, t, 3, 1, 1);
    L.push_back({"fout", LayerKind::Conv3d, {1, 1, 1}, 1, 0, t, 4, {}});
    L.push_back({"fout.softmax", LayerKind::SoftmaxChannels, {1, 1, 1}, 1, 0, 4, 4, {}});
    spec.validate();
    return spec;
}

namespace {

bool has_params(const LayerSpec& L) {
    return L.kind == LayerKind::Conv3d || L.kind == LayerKind::TransposedConv3d;
}

void init_layer_params(const LayerSpec& L, std::uint64_t seed, ParamMap& params) {
    const Index ktaps = L.kernel[0] * L.kernel[1] * L.kernel[2];
    Tensor w(L.kind == LayerKind::Conv3d
                 ? std::vector<Index>{L.out_channels, L.in_channels, L.kernel[0], L.kernel[1], L.kernel[2]}
                 : std::vector<Index>{L.in_channels, L.out_channels, L.kernel[0], L.kernel[1], L.kernel[2]});
    const double std_dev = std::sqrt(2.0 / double(L.in_channels * ktaps));
    Rng rng(derive_seed(seed, "init", fnv1a64(L.id.data(), L.id.size())));
    for (double& x : w.v) x = rng.normal(0.0, std_dev);
    params[L.id + ".w"] = std::move(w);
    params[L.id + ".b"] = Tensor({L.out_channels});
}

const Tensor& fetch(const ParamMap& params, const std::string& key, const std::vector<Index>& want) {
    auto it = params.find(key);
    if (it == params.end()) throw ValidationError("missing parameter tensor '" + key + "'");
    if (it->second.dims != want)
        throw ValidationError("parameter tensor '" + key + "' has a mismatched shape");
    return it->second;
}

std::vector<Index> weight_dims(const LayerSpec& L) {
    return L.kind == LayerKind::Conv3d
               ? std::vector<Index>{L.out_channels, L.in_channels, L.kernel[0], L.kernel[1], L.kernel[2]}
               : std::vector<Index>{L.in_channels, L.out_channels, L.kernel[0], L.kernel[1], L.kernel[2]};
}

Tensor& grad_slot(ParamMap& grads, const std::string& key, const std::vector<Index>& dims) {
    auto it = grads.find(key);
    if (it == grads.end()) it = grads.emplace(key, Tensor(dims)).first;
    return it->second;
}

[[noreturn]] void shape_fail(const std::string& layer, const std::string& why) {
    throw ValidationError("layer " + layer + ": " + why);
}

Volume run_layer(const LayerSpec& L, const ParamMap& params, const Volume& in, const Volume* skip,
                 const MaskInputs* masks) {
    switch (L.kind) {
        case LayerKind::Conv3d: {
            if (in.c != L.in_channels) shape_fail(L.id, "channel mismatch");
            const Index od = kern::conv_out_size(in.d, L.kernel[0], L.stride, L.padding);
            const Index oh = kern::conv_out_size(in.h, L.kernel[1], L.stride, L.padding);
            const Index ow = kern::conv_out_size(in.w, L.kernel[2], L.stride, L.padding);
            if (od < 1 || oh < 1 || ow < 1) shape_fail(L.id, "output would be empty (input too small)");
            Volume out(L.out_channels, od, oh, ow, in.spacing);
            kern::conv3d_forward(in, fetch(params, L.id + ".w", weight_dims(L)),
                                 fetch(params, L.id + ".b", {L.out_channels}), out, L.kernel, L.stride,
                                 L.padding);
            return out;
        }
        case LayerKind::TransposedConv3d: {
            if (in.c != L.in_channels) shape_fail(L.id, "channel mismatch");
            const Index od = kern::tconv_out_size(in.d, L.kernel[0], L.stride, L.padding);
            const Index oh = kern::tconv_out_size(in.h, L.kernel[1], L.stride, L.padding);
            const Index ow = kern::tconv_out_size(in.w, L.kernel[2], L.stride, L.padding);
            if (od < 1 || oh < 1 || ow < 1) shape_fail(L.id, "output would be empty (input too small)");
            Volume out(L.out_channels, od, oh, ow, in.spacing);
            kern::tconv3d_forward(in, fetch(params, L.id + ".w", weight_dims(L)),
                                  fetch(params, L.id + ".b", {L.out_channels}), out, L.kernel, L.stride,
                                  L.padding);
            return out;
        }
        case LayerKind::InstanceNorm: {
            Volume out(in.c, in.d, in.h, in.w, in.spacing);
            kern::instance_norm_forward(in, out, kInstanceNormEps);
            return out;
        }
        case LayerKind::LeakyRelu: {
            Volume out(in.c, in.d, in.h, in.w, in.spacing);
            kern::leaky_relu_forward(in, out, kLeakyReluSlope);
            return out;
        }
        case LayerKind::ConcatSkip: {
            if (!skip) shape_fail(L.id, "internal: skip activation unavailable");
            if (!in.same_grid(*skip))
                shape_fail(L.id, "skip connection size mismatch (input spatial size must be divisible by 2^depth)");
            Volume out(in.c + skip->c, in.d, in.h, in.w, in.spacing);
            std::copy(in.data.begin(), in.data.end(), out.data.begin());
            std::copy(skip->data.begin(), skip->data.end(), out.data.begin() + in.size());
            return out;
        }
        case LayerKind::SoftmaxChannels: {
            Volume out(in.c, in.d, in.h, in.w, in.spacing);
            kern::softmax_channels_forward(in, out);
            return out;
        }
        case LayerKind::MaskGuide: {
            if (!masks || !masks->mask_a || !masks->mask_b)
                shape_fail(L.id, "mask-guided layer requires both branch probability maps");
            const Volume& ma = *masks->mask_a;
            const Volume& mb = *masks->mask_b;
            if (ma.c != 4 || mb.c != 4) shape_fail(L.id, "attention masks must have 4 channels");
            if (!ma.same_grid(in) || !mb.same_grid(in))
                shape_fail(L.id, "attention mask spatial size mismatch");
            Volume out(in.c, in.d, in.h, in.w, in.spacing);
            kern::mask_guide_forward(in, ma, mb, out);
            return out;
        }
    }
    throw RuntimeError("unreachable layer kind");
}

// Index of the last layer that consumes each activation; -1 when unused.
std::vector<int> last_use(const NetworkSpec& spec) {
    const int n = static_cast<int>(spec.layers.size());
    std::vector<int> last(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        if (i > 0) last[static_cast<std::size_t>(i - 1)] = std::max(last[static_cast<std::size_t>(i - 1)], i);
        if (spec.layers[static_cast<std::size_t>(i)].kind == LayerKind::ConcatSkip) {
            const int s = spec.layer_index(spec.layers[static_cast<std::size_t>(i)].skip_source);
            last[static_cast<std::size_t>(s)] = std::max(last[static_cast<std::size_t>(s)], i);
        }
    }
    return last;
}

ForwardResult run_forward(const NetworkSpec& spec, const ParamMap& params, const Volume& input,
                          const MaskInputs* masks, Tape* tape) {
    spec.validate();
    if (input.c != spec.layers.front().in_channels)
        throw ValidationError("network input has " + std::to_string(input.c) + " channels, expected " +
                              std::to_string(spec.layers.front().in_channels));
    if (input.d < spec.min_input || input.h < spec.min_input || input.w < spec.min_input)
        throw ValidationError("network input must be at least " + std::to_string(spec.min_input) +
                              " voxels per axis");

    const int n = static_cast<int>(spec.layers.size());
    std::vector<Volume> outs(static_cast<std::size_t>(n));
    const std::vector<int> keep_until = tape ? std::vector<int>() : last_use(spec);
    std::set<std::string> tap_set(spec.taps.begin(), spec.taps.end());

    for (int i = 0; i < n; ++i) {
        const LayerSpec& L = spec.layers[static_cast<std::size_t>(i)];
        const Volume& in = (i == 0) ? input : outs[static_cast<std::size_t>(i - 1)];
        const Volume* skip = nullptr;
        if (L.kind == LayerKind::ConcatSkip)
            skip = &outs[static_cast<std::size_t>(spec.layer_index(L.skip_source))];
        outs[static_cast<std::size_t>(i)] = run_layer(L, params, in, skip, masks);
        if (!tape) {
            for (int j = 0; j < i; ++j) {
                if (keep_until[static_cast<std::size_t>(j)] == i &&
                    !tap_set.count(spec.layers[static_cast<std::size_t>(j)].id) && j != n - 1)
                    outs[static_cast<std::size_t>(j)] = Volume();
            }
        }
    }

    ForwardResult res;
    res.output = outs[static_cast<std::size_t>(n - 1)];
    for (const std::string& t : spec.taps)
        res.taps[t] = outs[static_cast<std::size_t>(spec.layer_index(t))];

    if (tape) {
        tape->input = input;
        tape->outputs = std::move(outs);
        if (masks && masks->mask_a && masks->mask_b) {
            tape->mask_a = *masks->mask_a;
            tape->mask_b = *masks->mask_b;
            tape->has_masks = true;
        } else {
            tape->has_masks = false;
        }
    }
    return res;
}

void accumulate(Volume& dst, const Volume& src) {
    if (dst.size() == 0) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

ParamMap init_params(const NetworkSpec& spec, std::uint64_t seed) {
    ParamMap params;
    for (const LayerSpec& L : spec.layers)
        if (has_params(L)) init_layer_params(L, seed, params);
    return params;
}

Index parameter_count(const NetworkSpec& spec) {
    Index n = 0;
    for (const LayerSpec& L : spec.layers) {
        if (!has_params(L)) continue;
        n += L.in_channels * L.out_channels * L.kernel[0] * L.kernel[1] * L.kernel[2];
        n += L.out_channels;
    }
    return n;
}

ForwardResult forward(const NetworkSpec& spec, const ParamMap& params, const Volume& input,
                      const MaskInputs* masks) {
    return run_forward(spec, params, input, masks, nullptr);
}

ForwardResult forward_tape(const NetworkSpec& spec, const ParamMap& params, const Volume& input,
                           Tape& tape, const MaskInputs* masks) {
    return run_forward(spec, params, input, masks, &tape);
}

Volume backward(const NetworkSpec& spec, const ParamMap& params, const Tape& tape,
                const Volume& d_output, const std::map<std::string, Volume>* tap_gradients,
                ParamMap& param_gradients, MaskGradients* mask_gradients) {
    const int n = static_cast<int>(spec.layers.size());
    if (static_cast<int>(tape.outputs.size()) != n)
        throw RuntimeError("backward: tape does not match the network spec");

    std::vector<Volume> act_grad(static_cast<std::size_t>(n));
    if (d_output.size() != tape.outputs.back().size())
        throw RuntimeError("backward: output gradient shape mismatch");
    act_grad[static_cast<std::size_t>(n - 1)] = d_output;

    if (tap_gradients) {
        for (const auto& [id, g] : *tap_gradients) {
            const int idx = spec.layer_index(id);
            if (idx < 0) throw RuntimeError("backward: tap gradient for unknown layer " + id);
            if (g.size() != tape.outputs[static_cast<std::size_t>(idx)].size())
                throw RuntimeError("backward: tap gradient shape mismatch at " + id);
            accumulate(act_grad[static_cast<std::size_t>(idx)], g);
        }
    }

    Volume d_input;
    Volume d_mask_a, d_mask_b;
    bool masks_touched = false;

    for (int i = n - 1; i >= 0; --i) {
        Volume dy = std::move(act_grad[static_cast<std::size_t>(i)]);
        act_grad[static_cast<std::size_t>(i)] = Volume();
        if (dy.size() == 0) continue;  // nothing downstream consumed this activation

        const LayerSpec& L = spec.layers[static_cast<std::size_t>(i)];
        const Volume& in = (i == 0) ? tape.input : tape.outputs[static_cast<std::size_t>(i - 1)];
        Volume dx(in.c, in.d, in.h, in.w, in.spacing);

        switch (L.kind) {
            case LayerKind::Conv3d: {
                Tensor& dw = grad_slot(param_gradients, L.id + ".w", weight_dims(L));
                Tensor& db = grad_slot(param_gradients, L.id + ".b", {L.out_channels});
                kern::conv3d_backward(in, fetch(params, L.id + ".w", weight_dims(L)), dy, L.kernel,
                                      L.stride, L.padding, dx, dw, db);
                break;
            }
            case LayerKind::TransposedConv3d: {
                Tensor& dw = grad_slot(param_gradients, L.id + ".w", weight_dims(L));
                Tensor& db = grad_slot(param_gradients, L.id + ".b", {L.out_channels});
                kern::tconv3d_backward(in, fetch(params, L.id + ".w", weight_dims(L)), dy, L.kernel,
                                       L.stride, L.padding, dx, dw, db);
                break;
            }
            case LayerKind::InstanceNorm:
                kern::instance_norm_backward(in, dy, dx, kInstanceNormEps);
                break;
            case LayerKind::LeakyRelu:
                kern::leaky_relu_backward(in, dy, dx, kLeakyReluSlope);
                break;
            case LayerKind::ConcatSkip: {
                const int s = spec.layer_index(L.skip_source);
                std::copy(dy.data.begin(), dy.data.begin() + dx.size(), dx.data.begin());
                const Volume& skip_out = tape.outputs[static_cast<std::size_t>(s)];
                Volume ds(skip_out.c, skip_out.d, skip_out.h, skip_out.w, skip_out.spacing);
                std::copy(dy.data.begin() + dx.size(), dy.data.end(), ds.data.begin());
                accumulate(act_grad[static_cast<std::size_t>(s)], ds);
                break;
            }
            case LayerKind::SoftmaxChannels:
                kern::softmax_channels_backward(tape.outputs[static_cast<std::size_t>(i)], dy, dx);
                break;
            case LayerKind::MaskGuide: {
                if (!tape.has_masks) throw RuntimeError("backward: tape lacks attention masks");
                if (!masks_touched) {
                    d_mask_a = Volume(tape.mask_a.c, tape.mask_a.d, tape.mask_a.h, tape.mask_a.w,
                                      tape.mask_a.spacing);
                    d_mask_b = Volume(tape.mask_b.c, tape.mask_b.d, tape.mask_b.h, tape.mask_b.w,
                                      tape.mask_b.spacing);
                    masks_touched = true;
                }
                kern::mask_guide_backward(in, tape.mask_a, tape.mask_b, dy, dx, d_mask_a, d_mask_b);
                break;
            }
        }

        if (i == 0)
            accumulate(d_input, dx);
        else
            accumulate(act_grad[static_cast<std::size_t>(i - 1)], dx);
    }

    if (mask_gradients) {
        if (masks_touched) {
            mask_gradients->d_mask_a = std::move(d_mask_a);
            mask_gradients->d_mask_b = std::move(d_mask_b);
            mask_gradients->present = true;
        } else {
            mask_gradients->present = false;
        }
    }
    if (d_input.size() == 0) d_input = Volume(tape.input.c, tape.input.d, tape.input.h, tape.input.w,
                                              tape.input.spacing);
    return d_input;
}

Volume apply_mask_guidance(const Volume& features, const Volume& mask_a, const Volume& mask_b) {
    if (mask_a.c != 4 || mask_b.c != 4)
        throw ValidationError("apply_mask_guidance: masks must be 4-channel probability maps");
    if (!mask_a.same_grid(features) || !mask_b.same_grid(features))
        throw ValidationError("apply_mask_guidance: mask spatial size differs from the features");
    Volume out(features.c, features.d, features.h, features.w, features.spacing);
    kern::mask_guide_forward(features, mask_a, mask_b, out);
    return out;
}

ParamMap transfer_parameters(const ParamMap& generator_params, const NetworkSpec& seg_spec,
                             std::uint64_t head_seed) {
    ParamMap out;
    for (const LayerSpec& L : seg_spec.layers) {
        if (!has_params(L)) continue;
        if (L.id == "head") {
            init_layer_params(L, head_seed, out);
            continue;
        }
        for (const char* suffix : {".w", ".b"}) {
            const std::string key = L.id + suffix;
            auto it = generator_params.find(key);
            if (it == generator_params.end())
                throw ValidationError("transfer_parameters: source lacks trunk tensor '" + key +
                                      "' (config drift between phases)");
            const std::vector<Index> want = (suffix == std::string(".w")) ? weight_dims(L)
                                                                          : std::vector<Index>{L.out_channels};
            if (it->second.dims != want)
                throw ValidationError("transfer_parameters: trunk tensor '" + key +
                                      "' shape mismatch (config drift between phases)");
            out[key] = it->second;
        }
    }
    return out;
}

}  // namespace cmseg
