// SPDX-License-Identifier: Apache-2.0
#include "cmseg/losses.hpp"

#include <cmath>
#include <string>

#include "cmseg/errors.hpp"

namespace cmseg {
namespace {

void require_nonempty(const Volume& v, const char* what) {
    if (v.size() == 0) throw ValidationError(std::string(what) + ": empty score map");
}

void require_same_shape(const Volume& a, const Volume& b, const char* what) {
    if (a.c != b.c || !a.same_grid(b)) throw ValidationError(std::string(what) + ": shape mismatch");
}

void require_simplex(const Volume& pred, const char* what) {
    if (pred.c != 4) throw ValidationError(std::string(what) + ": prediction must have 4 channels");
    const Index n = pred.voxels();
    for (Index i = 0; i < n; ++i) {
        double s = 0;
        for (Index c = 0; c < 4; ++c) {
            const double p = pred.data[static_cast<std::size_t>(c * n + i)];
            if (p < -1e-6) throw ValidationError(std::string(what) + ": negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-4)
            throw ValidationError(std::string(what) + ": prediction is not simplex-valued per voxel");
    }
}

double sign0(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

void require_finite_term(double v, const char* term) {
    if (!std::isfinite(v)) throw RuntimeError(std::string("non-finite loss term: ") + term);
}

}  // namespace

double adv_loss_discriminator(const Volume& real_scores, const Volume& fake_scores) {
    require_nonempty(real_scores, "adv_loss_discriminator");
    require_nonempty(fake_scores, "adv_loss_discriminator");
    double lr = 0, lf = 0;
    for (const double v : real_scores.data) lr += (v - 1.0) * (v - 1.0);
    for (const double v : fake_scores.data) lf += v * v;
    return lr / double(real_scores.size()) + lf / double(fake_scores.size());
}

void adv_loss_discriminator_grad(const Volume& real_scores, const Volume& fake_scores,
                                 Volume& d_real, Volume& d_fake) {
    require_nonempty(real_scores, "adv_loss_discriminator");
    require_nonempty(fake_scores, "adv_loss_discriminator");
    d_real = Volume(real_scores.c, real_scores.d, real_scores.h, real_scores.w, real_scores.spacing);
    d_fake = Volume(fake_scores.c, fake_scores.d, fake_scores.h, fake_scores.w, fake_scores.spacing);
    const double nr = double(real_scores.size()), nf = double(fake_scores.size());
    for (std::size_t i = 0; i < real_scores.data.size(); ++i)
        d_real.data[i] = 2.0 * (real_scores.data[i] - 1.0) / nr;
    for (std::size_t i = 0; i < fake_scores.data.size(); ++i)
        d_fake.data[i] = 2.0 * fake_scores.data[i] / nf;
}

double adv_loss_generator(const Volume& fake_scores) {
    require_nonempty(fake_scores, "adv_loss_generator");
    double l = 0;
    for (const double v : fake_scores.data) l += (v - 1.0) * (v - 1.0);
    return l / double(fake_scores.size());
}

void adv_loss_generator_grad(const Volume& fake_scores, Volume& d_fake) {
    require_nonempty(fake_scores, "adv_loss_generator");
    d_fake = Volume(fake_scores.c, fake_scores.d, fake_scores.h, fake_scores.w, fake_scores.spacing);
    const double n = double(fake_scores.size());
    for (std::size_t i = 0; i < fake_scores.data.size(); ++i)
        d_fake.data[i] = 2.0 * (fake_scores.data[i] - 1.0) / n;
}

double recon_l1(const Volume& pred, const Volume& target) {
    require_same_shape(pred, target, "recon_l1");
    double l = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) l += std::abs(pred.data[i] - target.data[i]);
    return l / double(pred.size());
}

void recon_l1_grad(const Volume& pred, const Volume& target, Volume& d_pred) {
    require_same_shape(pred, target, "recon_l1");
    d_pred = Volume(pred.c, pred.d, pred.h, pred.w, pred.spacing);
    const double n = double(pred.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i)
        d_pred.data[i] = sign0(pred.data[i] - target.data[i]) / n;
}

double cycle_loss(const Volume& a, const Volume& a_rec, const Volume& b, const Volume& b_rec) {
    require_same_shape(a, a_rec, "cycle_loss");
    require_same_shape(b, b_rec, "cycle_loss");
    return recon_l1(a_rec, a) + recon_l1(b_rec, b);
}

void cycle_loss_grad(const Volume& a, const Volume& a_rec, const Volume& b, const Volume& b_rec,
                     Volume& d_a_rec, Volume& d_b_rec) {
    recon_l1_grad(a_rec, a, d_a_rec);
    recon_l1_grad(b_rec, b, d_b_rec);
}

CmftLossReport cmft_total(double adv_g_ab, double adv_g_ba, double adv_d_a, double adv_d_b,
                          double cyc, double lambda) {
    require_finite_term(adv_g_ab, "adv_g_ab");
    require_finite_term(adv_g_ba, "adv_g_ba");
    require_finite_term(adv_d_a, "adv_d_a");
    require_finite_term(adv_d_b, "adv_d_b");
    require_finite_term(cyc, "cyc");
    require_finite_term(lambda, "lambda");
    if (cyc < 0) throw ValidationError("cmft_total: cycle loss must be >= 0");
    CmftLossReport r;
    r.adv_g_ab = adv_g_ab;
    r.adv_g_ba = adv_g_ba;
    r.adv_d_a = adv_d_a;
    r.adv_d_b = adv_d_b;
    r.cyc = cyc;
    r.lambda = lambda;
    r.total_g = adv_g_ab + adv_g_ba + lambda * cyc;
    r.total_d = adv_d_a + adv_d_b;
    return r;
}

double soft_dice_loss(const Volume& pred, const Volume& target) {
    require_same_shape(pred, target, "soft_dice_loss");
    require_simplex(pred, "soft_dice_loss");
    const Index n = pred.voxels();
    double loss = 0;
    for (Index c = 1; c < 4; ++c) {
        const double* p = pred.data.data() + c * n;
        const double* y = target.data.data() + c * n;
        double inter = 0, ps = 0, ys = 0;
        for (Index i = 0; i < n; ++i) {
            inter += p[i] * y[i];
            ps += p[i];
            ys += y[i];
        }
        loss += 1.0 - (2.0 * inter + kDiceEps) / (ps + ys + kDiceEps);
    }
    return loss / 3.0;
}

void soft_dice_loss_grad(const Volume& pred, const Volume& target, Volume& d_pred) {
    require_same_shape(pred, target, "soft_dice_loss");
    require_simplex(pred, "soft_dice_loss");
    const Index n = pred.voxels();
    d_pred = Volume(pred.c, pred.d, pred.h, pred.w, pred.spacing);
    for (Index c = 1; c < 4; ++c) {
        const double* p = pred.data.data() + c * n;
        const double* y = target.data.data() + c * n;
        double* g = d_pred.data.data() + c * n;
        double inter = 0, ps = 0, ys = 0;
        for (Index i = 0; i < n; ++i) {
            inter += p[i] * y[i];
            ps += p[i];
            ys += y[i];
        }
        const double denom = ps + ys + kDiceEps;
        const double numer = 2.0 * inter + kDiceEps;
        for (Index i = 0; i < n; ++i)
            g[i] = -(2.0 * y[i] * denom - numer) / (denom * denom) / 3.0;
    }
}

CmffLossReport cmff_total(const Volume& pred_a, const Volume& pred_b, const Volume& pred_f,
                          const Volume& target) {
    CmffLossReport r;
    r.dice_a = soft_dice_loss(pred_a, target);
    r.dice_b = soft_dice_loss(pred_b, target);
    r.dice_f = soft_dice_loss(pred_f, target);
    r.total = r.dice_a + r.dice_b + r.dice_f;
    return r;
}

}  // namespace cmseg
