// SPDX-License-Identifier: Apache-2.0
#include "cmseg/train_cmff.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cmseg/errors.hpp"
#include "cmseg/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace cmseg {

std::string to_string(CmffVariant v) {
    switch (v) {
        case CmffVariant::Full: return "full";
        case CmffVariant::NoMaskGuidance: return "no_mask_guidance";
        case CmffVariant::BranchAOnly: return "branch_a_only";
        case CmffVariant::BranchBOnly: return "branch_b_only";
        case CmffVariant::AverageFusion: return "average_fusion";
    }
    return "?";
}

CmffVariant cmff_variant_from_string(const std::string& s) {
    for (CmffVariant v : {CmffVariant::Full, CmffVariant::NoMaskGuidance, CmffVariant::BranchAOnly,
                          CmffVariant::BranchBOnly, CmffVariant::AverageFusion})
        if (to_string(v) == s) return v;
    throw ValidationError("unknown cmff variant '" + s + "'");
}

std::string to_string(CmffInitMode m) {
    switch (m) {
        case CmffInitMode::CmftTransfer: return "cmft_transfer";
        case CmffInitMode::Random: return "random";
        case CmffInitMode::SelfReconTransfer: return "self_recon_transfer";
    }
    return "?";
}

CmffInitMode cmff_init_mode_from_string(const std::string& s) {
    for (CmffInitMode m : {CmffInitMode::CmftTransfer, CmffInitMode::Random, CmffInitMode::SelfReconTransfer})
        if (to_string(m) == s) return m;
    throw ValidationError("unknown cmff init_mode '" + s + "'");
}

void CmffConfig::validate() const {
    pairs.validate();
    if (lr <= 0) throw ValidationError("cmff: lr must be > 0");
    if (steps < 0) throw ValidationError("cmff: steps must be >= 0");
    if (base_filters < 1) throw ValidationError("cmff: base_filters must be >= 1");
    if (depth < 1) throw ValidationError("cmff: depth must be >= 1");
    if (checkpoint_every < 0) throw ValidationError("cmff: checkpoint_every must be >= 0");
    if (init_mode != CmffInitMode::Random && cmft_checkpoint.empty() && resume_from.empty())
        throw ValidationError("cmff: init_mode " + to_string(init_mode) +
                              " requires cmft_checkpoint to be set");
    if (foreground_rule != "auto") foreground_rule_from_string(foreground_rule);
    PatchSpec probe{patch_size, ForegroundRule::BrainOverlap, 0};
    probe.validate(depth);
}

namespace {

void require_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw RuntimeError(std::string("non-finite loss term: ") + term);
}

ordered_json pair_names(const std::vector<ModalityId>& pair) {
    ordered_json arr = ordered_json::array();
    for (ModalityId m : pair) arr.push_back(to_string(m));
    return arr;
}

std::vector<ModalityId> pair_from_json(const nlohmann::ordered_json& arr) {
    std::vector<ModalityId> out;
    for (const auto& name : arr) out.push_back(modality_from_string(name.get<std::string>()));
    return out;
}

double lr_scale_at(const CmffConfig& cfg, std::int64_t step) {
    if (!cfg.lr_linear_decay || cfg.steps <= 0) return 1.0;
    return 1.0 - double(step) / double(cfg.steps);
}

Volume concat_channels(const std::vector<const Volume*>& parts) {
    Index c = 0;
    for (const Volume* p : parts) c += p->c;
    Volume out(c, parts[0]->d, parts[0]->h, parts[0]->w, parts[0]->spacing);
    Index off = 0;
    for (const Volume* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
        off += p->size();
    }
    return out;
}

Volume take_channels(const Volume& v, Index from, Index count) {
    Volume out(count, v.d, v.h, v.w, v.spacing);
    std::copy(v.data.begin() + from * v.voxels(), v.data.begin() + (from + count) * v.voxels(),
              out.data.begin());
    return out;
}

Volume crop(const Volume& v, Index z0, Index y0, Index x0, const std::array<Index, 3>& size) {
    Volume out(v.c, size[0], size[1], size[2], v.spacing);
    for (Index c = 0; c < v.c; ++c)
        for (Index z = 0; z < size[0]; ++z)
            for (Index y = 0; y < size[1]; ++y) {
                const double* src = v.data.data() + ((c * v.d + z0 + z) * v.h + y0 + y) * v.w + x0;
                double* dst = out.data.data() + ((c * size[0] + z) * size[1] + y) * size[2];
                std::copy(src, src + size[2], dst);
            }
    return out;
}

constexpr const char* kTap1 = "r0c1.act";
constexpr const char* kTap2 = "r0c2.act";

}  // namespace

CmffModelState init_cmff(const CmffConfig& cfg) {
    cfg.validate();

    if (!cfg.resume_from.empty()) {
        CmffModelState st = state_from_checkpoint(load_checkpoint(cfg.resume_from));
        if (st.cfg.variant != cfg.variant || st.cfg.base_filters != cfg.base_filters ||
            st.cfg.depth != cfg.depth || st.cfg.pairs.channels() != cfg.pairs.channels())
            throw ValidationError("cmff resume_from: checkpoint configuration does not match (config drift)");
        const std::int64_t step = st.step;
        st.cfg = cfg;
        st.step = step;
        return st;
    }

    CmffModelState st;
    st.cfg = cfg;
    const Index in_ch = cfg.pairs.channels();
    st.spec_a = build_seg_branch(in_ch, cfg.base_filters, cfg.depth);
    st.spec_b = build_seg_branch(in_ch, cfg.base_filters, cfg.depth);
    if (st.has_fusion())
        st.fusion_spec = build_fusion_branch(cfg.base_filters, cfg.variant != CmffVariant::NoMaskGuidance);
    const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    st.opt_a = Adam(adam);
    st.opt_b = Adam(adam);
    st.opt_f = Adam(adam);

    if (cfg.init_mode == CmffInitMode::Random) {
        st.s_a = init_params(st.spec_a, derive_seed(cfg.seed, "s_a"));
        st.s_b = init_params(st.spec_b, derive_seed(cfg.seed, "s_b"));
    } else {
        const Checkpoint src = load_checkpoint(cfg.cmft_checkpoint);
        if (src.meta.phase != "cmft")
            throw ValidationError("cmft_checkpoint: expected a phase-1 checkpoint, got '" + src.meta.phase + "'");
        const std::string objective = src.meta.extra.value("objective", "cyclegan");
        const std::string want =
            cfg.init_mode == CmffInitMode::SelfReconTransfer ? "self_recon" : "cyclegan";
        if (objective != want)
            throw ValidationError("cmft_checkpoint: objective '" + objective + "' does not match init_mode " +
                                  to_string(cfg.init_mode));
        if (src.meta.extra.value("in_channels", Index(-1)) != in_ch ||
            src.meta.extra.value("base_filters", Index(-1)) != cfg.base_filters ||
            src.meta.extra.value("depth", -1) != cfg.depth)
            throw ValidationError("cmft_checkpoint: trunk shape mismatch (config drift between phases)");
        st.s_a = transfer_parameters(extract_group(src.params, "g_ab/"), st.spec_a,
                                     derive_seed(cfg.seed, "head_a"));
        st.s_b = transfer_parameters(extract_group(src.params, "g_ba/"), st.spec_b,
                                     derive_seed(cfg.seed, "head_b"));
    }
    if (st.has_fusion()) st.fusion = init_params(st.fusion_spec, derive_seed(cfg.seed, "fusion"));
    return st;
}

CmffLossReport cmff_step(CmffModelState& st, const Volume& a, const Volume& b, const LabelVolume& y) {
    if (!a.same_grid(b) || a.d != y.d || a.h != y.h || a.w != y.w)
        throw ValidationError("cmff_step: inputs and label must share one grid");
    const double scale = lr_scale_at(st.cfg, st.step);
    const Volume target = one_hot(y);
    CmffLossReport rep;

    const bool train_a = st.cfg.variant != CmffVariant::BranchBOnly;
    const bool train_b = st.cfg.variant != CmffVariant::BranchAOnly;
    const bool run_fusion =
        st.cfg.variant == CmffVariant::Full || st.cfg.variant == CmffVariant::NoMaskGuidance;

    Tape tape_a, tape_b, tape_f;
    ForwardResult out_a, out_b, out_f;
    if (train_a) out_a = forward_tape(st.spec_a, st.s_a, a, tape_a);
    if (train_b) out_b = forward_tape(st.spec_b, st.s_b, b, tape_b);

    Volume f0;
    if (run_fusion) {
        f0 = concat_channels({&out_a.taps.at(kTap1), &out_a.taps.at(kTap2), &out_b.taps.at(kTap1),
                              &out_b.taps.at(kTap2)});
        MaskInputs masks{&out_a.output, &out_b.output};
        out_f = forward_tape(st.fusion_spec, st.fusion, f0, tape_f, &masks);
    }

    if (train_a) {
        rep.dice_a = soft_dice_loss(out_a.output, target);
        require_finite(rep.dice_a, "dice_a");
    }
    if (train_b) {
        rep.dice_b = soft_dice_loss(out_b.output, target);
        require_finite(rep.dice_b, "dice_b");
    }
    if (run_fusion) {
        rep.dice_f = soft_dice_loss(out_f.output, target);
        require_finite(rep.dice_f, "dice_f");
    }
    rep.total = rep.dice_a + rep.dice_b + rep.dice_f;

    // Fusion first: its input gradient feeds the branch taps, its attention
    // gradient feeds the branch probability maps.
    std::map<std::string, Volume> tap_grads_a, tap_grads_b;
    MaskGradients mask_grads;
    if (run_fusion) {
        Volume d_pf;
        soft_dice_loss_grad(out_f.output, target, d_pf);
        ParamMap grads_f;
        const Volume d_f0 = backward(st.fusion_spec, st.fusion, tape_f, d_pf, nullptr, grads_f, &mask_grads);
        const Index t = st.cfg.base_filters;
        tap_grads_a[kTap1] = take_channels(d_f0, 0, t);
        tap_grads_a[kTap2] = take_channels(d_f0, t, t);
        tap_grads_b[kTap1] = take_channels(d_f0, 2 * t, t);
        tap_grads_b[kTap2] = take_channels(d_f0, 3 * t, t);
        st.opt_f.step(st.fusion, grads_f, scale);
    }
    if (train_a) {
        Volume d_pa;
        soft_dice_loss_grad(out_a.output, target, d_pa);
        if (mask_grads.present)
            for (std::size_t i = 0; i < d_pa.data.size(); ++i) d_pa.data[i] += mask_grads.d_mask_a.data[i];
        ParamMap grads_a;
        backward(st.spec_a, st.s_a, tape_a, d_pa, run_fusion ? &tap_grads_a : nullptr, grads_a);
        st.opt_a.step(st.s_a, grads_a, scale);
    }
    if (train_b) {
        Volume d_pb;
        soft_dice_loss_grad(out_b.output, target, d_pb);
        if (mask_grads.present)
            for (std::size_t i = 0; i < d_pb.data.size(); ++i) d_pb.data[i] += mask_grads.d_mask_b.data[i];
        ParamMap grads_b;
        backward(st.spec_b, st.s_b, tape_b, d_pb, run_fusion ? &tap_grads_b : nullptr, grads_b);
        st.opt_b.step(st.s_b, grads_b, scale);
    }

    st.step += 1;
    return rep;
}

std::vector<Index> tile_positions(Index n, Index window) {
    if (window > n) throw ValidationError("tile_positions: window exceeds the volume extent");
    std::vector<Index> pos{0};
    const Index step = std::max<Index>(1, window / 2);
    for (Index p = step; p + window < n; p += step) pos.push_back(p);
    if (pos.back() != n - window) pos.push_back(n - window);
    return pos;
}

Volume tile_apply(const Volume& input, const std::array<Index, 3>& window, Index out_channels,
                  const std::function<Volume(const Volume&)>& fn) {
    const auto zs = tile_positions(input.d, window[0]);
    const auto ys = tile_positions(input.h, window[1]);
    const auto xs = tile_positions(input.w, window[2]);
    Volume sum(out_channels, input.d, input.h, input.w, input.spacing);
    Volume count(1, input.d, input.h, input.w, input.spacing);
    for (const Index z0 : zs)
        for (const Index y0 : ys)
            for (const Index x0 : xs) {
                const Volume piece = fn(crop(input, z0, y0, x0, window));
                if (piece.c != out_channels || piece.d != window[0] || piece.h != window[1] ||
                    piece.w != window[2])
                    throw RuntimeError("tile_apply: window function changed the output shape");
                for (Index c = 0; c < out_channels; ++c)
                    for (Index z = 0; z < window[0]; ++z)
                        for (Index y = 0; y < window[1]; ++y) {
                            const double* src =
                                piece.data.data() + ((c * window[0] + z) * window[1] + y) * window[2];
                            double* dst =
                                sum.data.data() + ((c * input.d + z0 + z) * input.h + y0 + y) * input.w + x0;
                            for (Index x = 0; x < window[2]; ++x) dst[x] += src[x];
                        }
                for (Index z = 0; z < window[0]; ++z)
                    for (Index y = 0; y < window[1]; ++y) {
                        double* dst = count.data.data() + ((z0 + z) * input.h + y0 + y) * input.w + x0;
                        for (Index x = 0; x < window[2]; ++x) dst[x] += 1.0;
                    }
            }
    for (Index c = 0; c < out_channels; ++c)
        for (Index i = 0; i < input.voxels(); ++i)
            sum.data[static_cast<std::size_t>(c * input.voxels() + i)] /= count.data[static_cast<std::size_t>(i)];
    return sum;
}

SegOutput predict(const CmffModelState& st, const ModalityVolumes& volumes) {
    const Volume xa = build_pair_input(volumes, st.cfg.pairs.pair_a);
    const Volume xb = build_pair_input(volumes, st.cfg.pairs.pair_b);
    const auto& patch = st.cfg.patch_size;
    if (xa.d < patch[0] || xa.h < patch[1] || xa.w < patch[2])
        throw ValidationError("predict: volume is smaller than the patch size");

    const auto zs = tile_positions(xa.d, patch[0]);
    const auto ys = tile_positions(xa.h, patch[1]);
    const auto xs = tile_positions(xa.w, patch[2]);

    Volume sum_a(4, xa.d, xa.h, xa.w, xa.spacing), sum_b = sum_a, sum_f = sum_a;
    Volume count(1, xa.d, xa.h, xa.w, xa.spacing);

    for (const Index z0 : zs)
        for (const Index y0 : ys)
            for (const Index x0 : xs) {
                const Volume wa = crop(xa, z0, y0, x0, patch);
                const Volume wb = crop(xb, z0, y0, x0, patch);
                const ForwardResult ra = forward(st.spec_a, st.s_a, wa);
                const ForwardResult rb = forward(st.spec_b, st.s_b, wb);
                Volume pf;
                switch (st.cfg.variant) {
                    case CmffVariant::Full:
                    case CmffVariant::NoMaskGuidance: {
                        const Volume f0 = concat_channels({&ra.taps.at(kTap1), &ra.taps.at(kTap2),
                                                           &rb.taps.at(kTap1), &rb.taps.at(kTap2)});
                        MaskInputs masks{&ra.output, &rb.output};
                        pf = forward(st.fusion_spec, st.fusion, f0, &masks).output;
                        break;
                    }
                    case CmffVariant::AverageFusion: {
                        pf = ra.output;
                        for (std::size_t i = 0; i < pf.data.size(); ++i)
                            pf.data[i] = 0.5 * (pf.data[i] + rb.output.data[i]);
                        break;
                    }
                    case CmffVariant::BranchAOnly: pf = ra.output; break;
                    case CmffVariant::BranchBOnly: pf = rb.output; break;
                }
                const auto add_window = [&](Volume& acc, const Volume& piece) {
                    for (Index c = 0; c < 4; ++c)
                        for (Index z = 0; z < patch[0]; ++z)
                            for (Index y = 0; y < patch[1]; ++y) {
                                const double* src =
                                    piece.data.data() + ((c * patch[0] + z) * patch[1] + y) * patch[2];
                                double* dst = acc.data.data() +
                                              ((c * xa.d + z0 + z) * xa.h + y0 + y) * xa.w + x0;
                                for (Index x = 0; x < patch[2]; ++x) dst[x] += src[x];
                            }
                };
                add_window(sum_a, ra.output);
                add_window(sum_b, rb.output);
                add_window(sum_f, pf);
                for (Index z = 0; z < patch[0]; ++z)
                    for (Index y = 0; y < patch[1]; ++y) {
                        double* dst = count.data.data() + ((z0 + z) * xa.h + y0 + y) * xa.w + x0;
                        for (Index x = 0; x < patch[2]; ++x) dst[x] += 1.0;
                    }
            }

    const Index n = xa.voxels();
    for (Volume* v : {&sum_a, &sum_b, &sum_f})
        for (Index c = 0; c < 4; ++c)
            for (Index i = 0; i < n; ++i)
                v->data[static_cast<std::size_t>(c * n + i)] /= count.data[static_cast<std::size_t>(i)];

    SegOutput out;
    out.final_labels = probs_to_labels(sum_f);
    out.probs_a = std::move(sum_a);
    out.probs_b = std::move(sum_b);
    out.probs_f = std::move(sum_f);
    return out;
}

Checkpoint make_cmff_checkpoint(const CmffModelState& st, const std::string& config_hash) {
    Checkpoint ckpt;
    ckpt.meta.phase = "cmff";
    ckpt.meta.seed = st.cfg.seed;
    ckpt.meta.step = st.step;
    ckpt.meta.config_hash = config_hash;
    ckpt.meta.extra = ordered_json{{"variant", to_string(st.cfg.variant)},
                                   {"init_mode", to_string(st.cfg.init_mode)},
                                   {"in_channels", st.cfg.pairs.channels()},
                                   {"base_filters", st.cfg.base_filters},
                                   {"depth", st.cfg.depth},
                                   {"pair_a", pair_names(st.cfg.pairs.pair_a)},
                                   {"pair_b", pair_names(st.cfg.pairs.pair_b)},
                                   {"patch_size", st.cfg.patch_size},
                                   {"foreground_rule", st.cfg.foreground_rule},
                                   {"lr", st.cfg.lr}};
    insert_group(ckpt.params, "s_a/", st.s_a);
    insert_group(ckpt.params, "s_b/", st.s_b);
    st.opt_a.export_state(ckpt.params, "s_a");
    st.opt_b.export_state(ckpt.params, "s_b");
    if (st.has_fusion()) {
        insert_group(ckpt.params, "fusion/", st.fusion);
        st.opt_f.export_state(ckpt.params, "fusion");
    }
    return ckpt;
}

CmffModelState state_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta.phase != "cmff")
        throw ValidationError("expected a phase-2 checkpoint, got '" + ckpt.meta.phase + "'");
    const auto& extra = ckpt.meta.extra;
    CmffModelState st;
    st.cfg.variant = cmff_variant_from_string(extra.at("variant").get<std::string>());
    st.cfg.init_mode = cmff_init_mode_from_string(extra.at("init_mode").get<std::string>());
    st.cfg.base_filters = extra.at("base_filters").get<Index>();
    st.cfg.depth = extra.at("depth").get<int>();
    st.cfg.pairs.pair_a = pair_from_json(extra.at("pair_a"));
    st.cfg.pairs.pair_b = pair_from_json(extra.at("pair_b"));
    st.cfg.patch_size = extra.at("patch_size").get<std::array<Index, 3>>();
    st.cfg.foreground_rule = extra.value("foreground_rule", "auto");
    st.cfg.lr = extra.value("lr", 1e-4);
    st.cfg.seed = ckpt.meta.seed;
    st.cfg.cmft_checkpoint = "unused";  // satisfied by the loaded parameters
    st.step = ckpt.meta.step;

    const Index in_ch = st.cfg.pairs.channels();
    st.spec_a = build_seg_branch(in_ch, st.cfg.base_filters, st.cfg.depth);
    st.spec_b = build_seg_branch(in_ch, st.cfg.base_filters, st.cfg.depth);
    st.s_a = extract_group(ckpt.params, "s_a/");
    st.s_b = extract_group(ckpt.params, "s_b/");
    const AdamConfig adam{st.cfg.lr, 0.9, 0.999, 1e-8};
    st.opt_a = Adam(adam);
    st.opt_b = Adam(adam);
    st.opt_f = Adam(adam);
    st.opt_a.import_state(ckpt.params, "s_a");
    st.opt_b.import_state(ckpt.params, "s_b");
    if (st.has_fusion()) {
        st.fusion_spec =
            build_fusion_branch(st.cfg.base_filters, st.cfg.variant != CmffVariant::NoMaskGuidance);
        st.fusion = extract_group(ckpt.params, "fusion/");
        st.opt_f.import_state(ckpt.params, "fusion");
    }
    return st;
}

Checkpoint run_cmff(const CmffConfig& cfg, const std::vector<SubjectRecord>& subjects,
                    const std::string& out_dir, const std::string& config_hash) {
    CmffModelState st = init_cmff(cfg);
    SubjectBank bank(subjects);
    if (cfg.steps > st.step) {
        if (bank.size() == 0) throw ValidationError("run_cmff: no training subjects");
        if (!bank.all_labeled())
            throw ValidationError("run_cmff: every training subject needs a label volume");
    }

    std::ofstream log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log.open(fs::path(out_dir) / "train_cmff_log.jsonl", std::ios::app);
        if (!log) throw RuntimeError("cannot open training log under " + out_dir);
    }

    while (st.step < cfg.steps) {
        const std::int64_t step = st.step;
        const std::size_t n = bank.size();
        const std::uint64_t epoch = static_cast<std::uint64_t>(step) / n;
        const std::size_t pos = static_cast<std::size_t>(step) % n;
        const std::size_t idx = seeded_permutation(n, derive_seed(cfg.seed, "order", epoch))[pos];
        const LoadedSubject& subj = bank.get(idx);

        PatchSpec spec;
        spec.size = cfg.patch_size;
        spec.seed = derive_seed(cfg.seed, "patch", static_cast<std::uint64_t>(step));
        spec.foreground_rule = cfg.foreground_rule == "auto"
                                   ? ForegroundRule::TumorOverlap
                                   : foreground_rule_from_string(cfg.foreground_rule);
        const PatchSample patch = sample_patch(subj.volumes, subj.label, spec);
        const Volume a = build_pair_input(patch.volumes, cfg.pairs.pair_a);
        const Volume b = build_pair_input(patch.volumes, cfg.pairs.pair_b);

        const CmffLossReport r = cmff_step(st, a, b, *patch.label);
        if (log)
            log << ordered_json{{"phase", "cmff"},     {"step", st.step},     {"dice_a", r.dice_a},
                                {"dice_b", r.dice_b},  {"dice_f", r.dice_f},  {"total", r.total}}
                       .dump()
                << "\n";
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 &&
            st.step < cfg.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_step%06lld.cmck", static_cast<long long>(st.step));
            save_checkpoint((fs::path(out_dir) / name).string(), make_cmff_checkpoint(st, config_hash));
        }
    }

    Checkpoint final = make_cmff_checkpoint(st, config_hash);
    if (!out_dir.empty()) save_checkpoint((fs::path(out_dir) / "checkpoint_final.cmck").string(), final);
    return final;
}

}  // namespace cmseg
