#pragma once

#include "crfd/config.hpp"
#include "crfd/scene_model.hpp"
#include "crfd/tape.hpp"

namespace crfd {

struct LossWeights {
  double lambda_f = 0.1;
  double lambda_c = 0.1;
  double lambda_kl = 0.001;
  double beta_eps = 1e-5;

  static LossWeights from_config(const RunConfig& cfg) {
    return {cfg.lambda_f, cfg.lambda_c, cfg.lambda_kl, cfg.beta_prior_eps};
  }
};

struct LossBreakdown {
  Tensor total;  // scalar on the tape
  double l_r_fine = 0;
  double l_r_coarse = 0;
  double l_beta_fine = 0;
  double l_beta_coarse = 0;
  double l_kl = 0;
  double total_value = 0;
};

/// Sum over the ray batch of squared color error: sum_r ||I_r - I_r^gt||^2.
Tensor reconstruction_loss(Tape& t, const Tensor& pred /*[R,3]*/, const Tensor& gt /*[R,3]*/);

/// Opacity sharpening prior: sum_r (log A_r + log(1 - A_r)), with A clamped
/// to [eps, 1-eps] before the logs.
Tensor beta_prior(Tape& t, const Tensor& alphas /*[R]*/, double eps_clamp = 1e-5);

/// Closed-form KL(N(mu, diag sigma^2) || N(0, I)).
Tensor kl_loss(Tape& t, const LatentDistribution& dist);

/// total = l_r_fine + l_r_coarse + lf*l_beta_fine + lc*l_beta_coarse + lkl*l_kl.
LossBreakdown total_loss(Tape& t, const Tensor& coarse_rgb, const Tensor& coarse_alpha,
                         const Tensor& fine_rgb, const Tensor& fine_alpha, const Tensor& gt,
                         const LatentDistribution* dist, const LossWeights& weights);

}  // namespace crfd
