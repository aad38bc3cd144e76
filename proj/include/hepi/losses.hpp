#pragma once

#include <cstdint>
#include <vector>

#include "hepi/policy.hpp"
#include "hepi/tensor.hpp"

namespace hepi {

// Exponentially weighted advantages over one trajectory. values carries T+1
// entries, the last being the bootstrap value of the state after step T-1.
// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
// A_t     = delta_t + gamma*lambda*(1-done_t)*A_{t+1},  returns = A + V.
void compute_gae(const std::vector<double>& rewards,
                 const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double gamma, double lambda,
                 std::vector<double>& adv, std::vector<double>& ret);

// Mean 0, std 1 over the batch; degenerate spread leaves values centered only.
void normalize_advantages(std::vector<double>& adv);

struct PpoConfig {
  double clip_eps = 0.2;
  bool anneal = false;  // linear decay of clip_eps to 0 over total frames
  double critic_coeff = 0.5;
  double entropy_coeff = 0.005;
};

struct TrplConfig {
  double eps_mu = 0.05;
  double eps_sigma = 0.001;
  double alpha = 4.0;  // penalty weight tying raw params to their projection
  double critic_coeff = 0.5;
  double entropy_coeff = 0.005;
};

struct LossTerms {
  Tensor total;  // scalar, on tape
  double policy_loss = 0.0;
  double value_loss = 0.0;  // unweighted mean squared value error
  double entropy = 0.0;     // mean per-frame entropy
  double proj_rate = 0.0;   // trpl only: fraction of rows with a bound active
};

// Clipped-ratio surrogate. Per-frame tensors [B,1]; lp_old, adv, returns are
// constants (detached by the caller).
LossTerms ppo_loss(const Tensor& lp_new, const Tensor& lp_old,
                   const Tensor& adv, const Tensor& v_pred,
                   const Tensor& returns, const Tensor& entropy,
                   double clip_eps, double critic_coeff, double entropy_coeff,
                   Tape* tp);

struct TrplProjection {
  Tensor mu, sigma;      // projected parameters, on tape
  Tensor d_mu, d_sigma;  // per-row distances of the raw parameters
  double proj_rate = 0.0;
};

// Per-row trust region projection. Mean distance is Mahalanobis with respect
// to the old per-slot stds (broadcast over each slot's 3 dims); std distance
// is the squared Frobenius gap. Rows beyond a bound are pulled onto it along
// the straight path to the old parameters; the scale factors stay on the tape
// so the projection is differentiable. Rows inside both bounds pass through
// bitwise.
TrplProjection trpl_project(const Tensor& mu, const Tensor& sigma,
                            const Tensor& mu_old, const Tensor& sigma_old,
                            double eps_mu, double eps_sigma, Tape* tp);

// Surrogate evaluated on the projected distribution plus
// alpha * E_frame[ d(raw, projected) ], with critic and entropy terms as in
// ppo_loss. raw carries the unprojected forward outputs.
LossTerms trpl_loss(const PolicyOutput& raw, const Tensor& mu_old,
                    const Tensor& sigma_old, const Tensor& actions,
                    const Tensor& lp_old, const Tensor& adv,
                    const Tensor& v_pred, const Tensor& returns,
                    const TrplConfig& cfg, Tape* tp);

// Mean per-frame KL(new || old) between the masked diagonal slot Gaussians.
// Diagnostic only, no tape.
double mean_gaussian_kl(const PolicyOutput& now, const Tensor& mu_old,
                        const Tensor& sigma_old);

}  // namespace hepi
