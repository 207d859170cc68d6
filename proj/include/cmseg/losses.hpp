// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_LOSSES_HPP
#define CMSEG_LOSSES_HPP

#include "cmseg/volume.hpp"

namespace cmseg {

inline constexpr double kDiceEps = 1e-5;

// Phase-1 objective components for one step. total_g folds the two generator
// adversarial terms and the weighted cycle term; total_d the two critic terms.
struct CmftLossReport {
    double adv_g_ab = 0, adv_g_ba = 0;
    double adv_d_a = 0, adv_d_b = 0;
    double cyc = 0;
    double lambda = 10.0;
    double total_g = 0, total_d = 0;
};

// Phase-2 objective: one Dice term per head, summed with equal weights.
struct CmffLossReport {
    double dice_a = 0, dice_b = 0, dice_f = 0;
    double total = 0;
};

// Least-squares critic loss: mean((real - 1)^2) + mean(fake^2).
double adv_loss_discriminator(const Volume& real_scores, const Volume& fake_scores);
void adv_loss_discriminator_grad(const Volume& real_scores, const Volume& fake_scores,
                                 Volume& d_real, Volume& d_fake);

// Least-squares generator loss: mean((fake - 1)^2).
double adv_loss_generator(const Volume& fake_scores);
void adv_loss_generator_grad(const Volume& fake_scores, Volume& d_fake);

// Mean absolute reconstruction error in both directions.
double cycle_loss(const Volume& a, const Volume& a_rec, const Volume& b, const Volume& b_rec);
void cycle_loss_grad(const Volume& a, const Volume& a_rec, const Volume& b, const Volume& b_rec,
                     Volume& d_a_rec, Volume& d_b_rec);

// Single-direction mean absolute error (self-reconstruction pretraining).
double recon_l1(const Volume& pred, const Volume& target);
void recon_l1_grad(const Volume& pred, const Volume& target, Volume& d_pred);

CmftLossReport cmft_total(double adv_g_ab, double adv_g_ba, double adv_d_a, double adv_d_b,
                          double cyc, double lambda);

// Soft Dice loss averaged over the three tumor channels (background
// excluded): per channel 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps).
// pred must be simplex-valued per voxel; target one-hot.
double soft_dice_loss(const Volume& pred, const Volume& target);
void soft_dice_loss_grad(const Volume& pred, const Volume& target, Volume& d_pred);

CmffLossReport cmff_total(const Volume& pred_a, const Volume& pred_b, const Volume& pred_f,
                          const Volume& target);

}  // namespace cmseg

#endif
