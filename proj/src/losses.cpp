#include "crfd/losses.hpp"

#include <stdexcept>

namespace crfd {

Tensor reconstruction_loss(Tape& t, const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape())
    throw std::invalid_argument("reconstruction_loss: prediction " + shape_str(pred.shape()) +
                                " vs ground truth " + shape_str(gt.shape()));
  Tensor diff = t.sub(pred, gt);
  return t.reduce_sum(t.mul(diff, diff));
}

Tensor beta_prior(Tape& t, const Tensor& alphas, double eps_clamp) {
  for (double a : alphas.values())
    if (a < -1e-9 || a > 1.0 + 1e-9)
      throw std::invalid_argument("beta_prior: alpha " + std::to_string(a) + " outside [0,1]");
  Tensor a = t.clamp(alphas, eps_clamp, 1.0 - eps_clamp);
  Tensor one_minus = t.add_scalar(t.mul_scalar(a, -1.0), 1.0);
  return t.add(t.reduce_sum(t.log(a)), t.reduce_sum(t.log(one_minus)));
}

Tensor kl_loss(Tape& t, const LatentDistribution& dist) {
  // 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) with sigma = exp(s):
  // 0.5 * sum(mu^2 + exp(2s) - 1 - 2s).
  Tensor mu2 = t.mul(dist.mu, dist.mu);
  Tensor two_s = t.mul_scalar(dist.log_sigma, 2.0);
  Tensor var = t.exp(two_s);
  Tensor term = t.sub(t.add_scalar(t.add(mu2, var), -1.0), two_s);
  return t.mul_scalar(t.reduce_sum(term), 0.5);
}

LossBreakdown total_loss(Tape& t, const Tensor& coarse_rgb, const Tensor& coarse_alpha,
                         const Tensor& fine_rgb, const Tensor& fine_alpha, const Tensor& gt,
                         const LatentDistribution* dist, const LossWeights& weights) {
  LossBreakdown out;
  Tensor l_r_fine = reconstruction_loss(t, fine_rgb, gt);
  Tensor l_r_coarse = reconstruction_loss(t, coarse_rgb, gt);
  Tensor l_beta_fine = beta_prior(t, fine_alpha, weights.beta_eps);
  Tensor l_beta_coarse = beta_prior(t, coarse_alpha, weights.beta_eps);
  Tensor total = t.add(l_r_fine, l_r_coarse);
  total = t.add(total, t.mul_scalar(l_beta_fine, weights.lambda_f));
  total = t.add(total, t.mul_scalar(l_beta_coarse, weights.lambda_c));
  if (dist) {
    Tensor kl = kl_loss(t, *dist);
    total = t.add(total, t.mul_scalar(kl, weights.lambda_kl));
    out.l_kl = kl.item();
  }
  out.total = total;
  out.l_r_fine = l_r_fine.item();
  out.l_r_coarse = l_r_coarse.item();
  out.l_beta_fine = l_beta_fine.item();
  out.l_beta_coarse = l_beta_coarse.item();
  out.total_value = total.item();
  return out;
}

}  // namespace crfd
