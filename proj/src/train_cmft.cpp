// SPDX-License-Identifier: Apache-2.0
#include "cmseg/train_cmft.hpp"

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
namespace {

void require_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw RuntimeError(std::string("non-finite loss term: ") + term);
}

ordered_json pair_names(const std::vector<ModalityId>& pair) {
    ordered_json arr = ordered_json::array();
    for (ModalityId m : pair) arr.push_back(to_string(m));
    return arr;
}

double lr_scale_at(const CmftConfig& cfg, std::int64_t step) {
    if (!cfg.lr_linear_decay || cfg.steps <= 0) return 1.0;
    return 1.0 - double(step) / double(cfg.steps);
}

}  // namespace

void CmftConfig::validate() const {
    pairs.validate();
    if (lr <= 0) throw ValidationError("cmft: lr must be > 0");
    if (steps < 0) throw ValidationError("cmft: steps must be >= 0");
    if (lambda < 0) throw ValidationError("cmft: lambda must be >= 0");
    if (base_filters < 1) throw ValidationError("cmft: base_filters must be >= 1");
    if (depth < 1) throw ValidationError("cmft: depth must be >= 1");
    if (checkpoint_every < 0) throw ValidationError("cmft: checkpoint_every must be >= 0");
    if (objective != "cyclegan" && objective != "self_recon")
        throw ValidationError("cmft: objective must be cyclegan or self_recon");
    if (foreground_rule != "auto") foreground_rule_from_string(foreground_rule);
    PatchSpec probe{patch_size, ForegroundRule::BrainOverlap, 0};
    probe.validate(depth);
}

CmftTrainState init_cmft(const CmftConfig& cfg) {
    cfg.validate();
    CmftTrainState st;
    st.cfg = cfg;
    const Index in_ch = cfg.pairs.channels();
    st.gen_spec = build_generator(in_ch, cfg.base_filters, cfg.depth);
    st.disc_spec = build_discriminator(in_ch);
    const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
    st.opt_g_ab = Adam(adam);
    st.opt_g_ba = Adam(adam);
    st.opt_d_a = Adam(adam);
    st.opt_d_b = Adam(adam);

    if (cfg.resume_from.empty()) {
        st.g_ab = init_params(st.gen_spec, derive_seed(cfg.seed, "g_ab"));
        st.g_ba = init_params(st.gen_spec, derive_seed(cfg.seed, "g_ba"));
        st.d_a = init_params(st.disc_spec, derive_seed(cfg.seed, "d_a"));
        st.d_b = init_params(st.disc_spec, derive_seed(cfg.seed, "d_b"));
        return st;
    }

    const Checkpoint ckpt = load_checkpoint(cfg.resume_from);
    if (ckpt.meta.phase != "cmft")
        throw ValidationError("resume_from: expected a phase-1 checkpoint, got '" + ckpt.meta.phase + "'");
    const auto& extra = ckpt.meta.extra;
    if (extra.value("objective", "cyclegan") != cfg.objective ||
        extra.value("in_channels", Index(-1)) != in_ch ||
        extra.value("base_filters", Index(-1)) != cfg.base_filters ||
        extra.value("depth", -1) != cfg.depth)
        throw ValidationError("resume_from: checkpoint configuration does not match (config drift)");
    st.g_ab = extract_group(ckpt.params, "g_ab/");
    st.g_ba = extract_group(ckpt.params, "g_ba/");
    if (cfg.objective == "cyclegan") {
        st.d_a = extract_group(ckpt.params, "d_a/");
        st.d_b = extract_group(ckpt.params, "d_b/");
        st.opt_d_a.import_state(ckpt.params, "d_a");
        st.opt_d_b.import_state(ckpt.params, "d_b");
    }
    st.opt_g_ab.import_state(ckpt.params, "g_ab");
    st.opt_g_ba.import_state(ckpt.params, "g_ba");
    st.step = ckpt.meta.step;
    return st;
}

CmftLossReport cmft_step(CmftTrainState& st, const Volume& a, const Volume& b) {
    const double scale = lr_scale_at(st.cfg, st.step);

    // Generator phase. Both translation directions run against the frozen
    // critics; cycle reconstructions close each loop.
    ParamMap grads_g_ab, grads_g_ba;
    double adv_g_ab = 0, adv_g_ba = 0, cyc = 0;
    {
        Tape t_gab, t_db, t_gba_cyc;
        const Volume fake_b = forward_tape(st.gen_spec, st.g_ab, a, t_gab).output;
        const Volume scores_fb = forward_tape(st.disc_spec, st.d_b, fake_b, t_db).output;
        adv_g_ab = adv_loss_generator(scores_fb);
        require_finite(adv_g_ab, "adv_g_ab");
        const Volume rec_a = forward_tape(st.gen_spec, st.g_ba, fake_b, t_gba_cyc).output;
        const double cyc_a = recon_l1(rec_a, a);
        require_finite(cyc_a, "cyc");
        cyc += cyc_a;

        Volume d_rec_a;
        recon_l1_grad(rec_a, a, d_rec_a);
        for (double& g : d_rec_a.data) g *= st.cfg.lambda;
        Volume d_fake_b = backward(st.gen_spec, st.g_ba, t_gba_cyc, d_rec_a, nullptr, grads_g_ba);

        Volume d_scores;
        adv_loss_generator_grad(scores_fb, d_scores);
        ParamMap discard;  // critic gradients from the generator objective are not applied
        const Volume d_fake_b_adv = backward(st.disc_spec, st.d_b, t_db, d_scores, nullptr, discard);
        for (std::size_t i = 0; i < d_fake_b.data.size(); ++i) d_fake_b.data[i] += d_fake_b_adv.data[i];
        backward(st.gen_spec, st.g_ab, t_gab, d_fake_b, nullptr, grads_g_ab);
    }
    {
        Tape t_gba, t_da, t_gab_cyc;
        const Volume fake_a = forward_tape(st.gen_spec, st.g_ba, b, t_gba).output;
        const Volume scores_fa = forward_tape(st.disc_spec, st.d_a, fake_a, t_da).output;
        adv_g_ba = adv_loss_generator(scores_fa);
        require_finite(adv_g_ba, "adv_g_ba");
        const Volume rec_b = forward_tape(st.gen_spec, st.g_ab, fake_a, t_gab_cyc).output;
        const double cyc_b = recon_l1(rec_b, b);
        require_finite(cyc_b, "cyc");
        cyc += cyc_b;

        Volume d_rec_b;
        recon_l1_grad(rec_b, b, d_rec_b);
        for (double& g : d_rec_b.data) g *= st.cfg.lambda;
        Volume d_fake_a = backward(st.gen_spec, st.g_ab, t_gab_cyc, d_rec_b, nullptr, grads_g_ab);

        Volume d_scores;
        adv_loss_generator_grad(scores_fa, d_scores);
        ParamMap discard;
        const Volume d_fake_a_adv = backward(st.disc_spec, st.d_a, t_da, d_scores, nullptr, discard);
        for (std::size_t i = 0; i < d_fake_a.data.size(); ++i) d_fake_a.data[i] += d_fake_a_adv.data[i];
        backward(st.gen_spec, st.g_ba, t_gba, d_fake_a, nullptr, grads_g_ba);
    }
    st.opt_g_ab.step(st.g_ab, grads_g_ab, scale);
    st.opt_g_ba.step(st.g_ba, grads_g_ba, scale);

    // Critic phase on freshly generated volumes (forward only through the
    // updated generators, so no gradient reaches them).
    double adv_d_a = 0, adv_d_b = 0;
    {
        const Volume fake_b = forward(st.gen_spec, st.g_ab, a).output;
        Tape t_real, t_fake;
        const Volume real_scores = forward_tape(st.disc_spec, st.d_b, b, t_real).output;
        const Volume fake_scores = forward_tape(st.disc_spec, st.d_b, fake_b, t_fake).output;
        adv_d_b = adv_loss_discriminator(real_scores, fake_scores);
        require_finite(adv_d_b, "adv_d_b");
        Volume d_real, d_fake;
        adv_loss_discriminator_grad(real_scores, fake_scores, d_real, d_fake);
        ParamMap grads_d_b;
        backward(st.disc_spec, st.d_b, t_real, d_real, nullptr, grads_d_b);
        backward(st.disc_spec, st.d_b, t_fake, d_fake, nullptr, grads_d_b);
        st.opt_d_b.step(st.d_b, grads_d_b, scale);
    }
    {
        const Volume fake_a = forward(st.gen_spec, st.g_ba, b).output;
        Tape t_real, t_fake;
        const Volume real_scores = forward_tape(st.disc_spec, st.d_a, a, t_real).output;
        const Volume fake_scores = forward_tape(st.disc_spec, st.d_a, fake_a, t_fake).output;
        adv_d_a = adv_loss_discriminator(real_scores, fake_scores);
        require_finite(adv_d_a, "adv_d_a");
        Volume d_real, d_fake;
        adv_loss_discriminator_grad(real_scores, fake_scores, d_real, d_fake);
        ParamMap grads_d_a;
        backward(st.disc_spec, st.d_a, t_real, d_real, nullptr, grads_d_a);
        backward(st.disc_spec, st.d_a, t_fake, d_fake, nullptr, grads_d_a);
        st.opt_d_a.step(st.d_a, grads_d_a, scale);
    }

    st.step += 1;
    return cmft_total(adv_g_ab, adv_g_ba, adv_d_a, adv_d_b, cyc, st.cfg.lambda);
}

SelfReconReport self_recon_step(CmftTrainState& st, const Volume& a, const Volume& b) {
    const double scale = lr_scale_at(st.cfg, st.step);
    SelfReconReport rep;
    {
        Tape t;
        const Volume out = forward_tape(st.gen_spec, st.g_ab, a, t).output;
        rep.rec_a = recon_l1(out, a);
        require_finite(rep.rec_a, "rec_a");
        Volume d_out;
        recon_l1_grad(out, a, d_out);
        ParamMap grads;
        backward(st.gen_spec, st.g_ab, t, d_out, nullptr, grads);
        st.opt_g_ab.step(st.g_ab, grads, scale);
    }
    {
        Tape t;
        const Volume out = forward_tape(st.gen_spec, st.g_ba, b, t).output;
        rep.rec_b = recon_l1(out, b);
        require_finite(rep.rec_b, "rec_b");
        Volume d_out;
        recon_l1_grad(out, b, d_out);
        ParamMap grads;
        backward(st.gen_spec, st.g_ba, t, d_out, nullptr, grads);
        st.opt_g_ba.step(st.g_ba, grads, scale);
    }
    st.step += 1;
    rep.total = rep.rec_a + rep.rec_b;
    return rep;
}

Checkpoint make_cmft_checkpoint(const CmftTrainState& st, const std::string& config_hash) {
    Checkpoint ckpt;
    ckpt.meta.phase = "cmft";
    ckpt.meta.seed = st.cfg.seed;
    ckpt.meta.step = st.step;
    ckpt.meta.config_hash = config_hash;
    ckpt.meta.extra = ordered_json{{"objective", st.cfg.objective},
                                   {"in_channels", st.cfg.pairs.channels()},
                                   {"base_filters", st.cfg.base_filters},
                                   {"depth", st.cfg.depth},
                                   {"pair_a", pair_names(st.cfg.pairs.pair_a)},
                                   {"pair_b", pair_names(st.cfg.pairs.pair_b)},
                                   {"lambda", st.cfg.lambda},
                                   {"lr", st.cfg.lr}};
    insert_group(ckpt.params, "g_ab/", st.g_ab);
    insert_group(ckpt.params, "g_ba/", st.g_ba);
    st.opt_g_ab.export_state(ckpt.params, "g_ab");
    st.opt_g_ba.export_state(ckpt.params, "g_ba");
    if (st.cfg.objective == "cyclegan") {
        insert_group(ckpt.params, "d_a/", st.d_a);
        insert_group(ckpt.params, "d_b/", st.d_b);
        st.opt_d_a.export_state(ckpt.params, "d_a");
        st.opt_d_b.export_state(ckpt.params, "d_b");
    }
    return ckpt;
}

namespace {

struct StepBatch {
    Volume a, b;
};

StepBatch draw_cmft_batch(const SubjectBank& bank, const CmftConfig& cfg, std::int64_t step) {
    const std::size_t n = bank.size();
    const std::uint64_t epoch = static_cast<std::uint64_t>(step) / n;
    const std::size_t pos = static_cast<std::size_t>(step) % n;
    // Unpaired: the two sides draw from independently shuffled subject orders.
    const std::size_t ia = seeded_permutation(n, derive_seed(cfg.seed, "order_a", epoch))[pos];
    const std::size_t ib = seeded_permutation(n, derive_seed(cfg.seed, "order_b", epoch))[pos];

    StepBatch batch;
    for (int side = 0; side < 2; ++side) {
        const std::size_t idx = side == 0 ? ia : ib;
        const LoadedSubject& subj = bank.get(idx);
        PatchSpec spec;
        spec.size = cfg.patch_size;
        spec.seed = derive_seed(cfg.seed, side == 0 ? "patch_a" : "patch_b", static_cast<std::uint64_t>(step));
        spec.foreground_rule = cfg.foreground_rule == "auto"
                                   ? (subj.label ? ForegroundRule::TumorOverlap : ForegroundRule::BrainOverlap)
                                   : foreground_rule_from_string(cfg.foreground_rule);
        const PatchSample patch = sample_patch(subj.volumes, subj.label, spec);
        Volume input = build_pair_input(patch.volumes, side == 0 ? cfg.pairs.pair_a : cfg.pairs.pair_b);
        (side == 0 ? batch.a : batch.b) = std::move(input);
    }
    return batch;
}

}  // namespace

Checkpoint run_cmft(const CmftConfig& cfg, const std::vector<SubjectRecord>& subjects,
                    const std::string& out_dir, const std::string& config_hash) {
    CmftTrainState st = init_cmft(cfg);
    if (cfg.steps > st.step && subjects.empty())
        throw ValidationError("run_cmft: no training subjects");

    SubjectBank bank(subjects);
    std::ofstream log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log.open(fs::path(out_dir) / "train_cmft_log.jsonl", std::ios::app);
        if (!log) throw RuntimeError("cannot open training log under " + out_dir);
    }

    while (st.step < cfg.steps) {
        const std::int64_t step = st.step;
        const StepBatch batch = draw_cmft_batch(bank, cfg, step);
        ordered_json line;
        if (cfg.objective == "cyclegan") {
            const CmftLossReport r = cmft_step(st, batch.a, batch.b);
            line = ordered_json{{"phase", "cmft"},       {"step", st.step},     {"adv_g_ab", r.adv_g_ab},
                                {"adv_g_ba", r.adv_g_ba}, {"adv_d_a", r.adv_d_a}, {"adv_d_b", r.adv_d_b},
                                {"cyc", r.cyc},           {"lambda", r.lambda},  {"total_g", r.total_g},
                                {"total_d", r.total_d}};
        } else {
            const SelfReconReport r = self_recon_step(st, batch.a, batch.b);
            line = ordered_json{{"phase", "cmft"},  {"objective", "self_recon"}, {"step", st.step},
                                {"rec_a", r.rec_a}, {"rec_b", r.rec_b},          {"total", r.total}};
        }
        if (log) log << line.dump() << "\n";
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 &&
            st.step < cfg.steps) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_step%06lld.cmck", static_cast<long long>(st.step));
            save_checkpoint((fs::path(out_dir) / name).string(), make_cmft_checkpoint(st, config_hash));
        }
    }

    Checkpoint final = make_cmft_checkpoint(st, config_hash);
    if (!out_dir.empty()) save_checkpoint((fs::path(out_dir) / "checkpoint_final.cmck").string(), final);
    return final;
}

Checkpoint pretrain_self_recon(CmftConfig cfg, const std::vector<SubjectRecord>& subjects,
                               const std::string& out_dir, const std::string& config_hash) {
    cfg.objective = "self_recon";
    return run_cmft(cfg, subjects, out_dir, config_hash);
}

}  // namespace cmseg
