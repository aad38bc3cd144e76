#include "hepi/losses.hpp"

#include <cmath>

namespace hepi {

void compute_gae(const std::vector<double>& rewards,
                 const std::vector<double>& values,
                 const std::vector<uint8_t>& dones, double gamma, double lambda,
                 std::vector<double>& adv, std::vector<double>& ret) {
  const size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T)
    throw NumericsError("gae: shape mismatch");
  adv.resize(T);
  ret.resize(T);
  double acc = 0.0;
  for (size_t i = T; i-- > 0;) {
    const double nonterm = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * values[i + 1] * nonterm - values[i];
    acc = delta + gamma * lambda * nonterm * acc;
    adv[i] = acc;
    ret[i] = acc + values[i];
    if (!std::isfinite(acc)) throw NumericsError("gae: non-finite advantage");
  }
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(adv.size()));
  const double inv = 1.0 / (sd + 1e-8);
  for (double& a : adv) a = (a - mean) * inv;
}

LossTerms ppo_loss(const Tensor& lp_new, const Tensor& lp_old,
                   const Tensor& adv, const Tensor& v_pred,
                   const Tensor& returns, const Tensor& entropy,
                   double clip_eps, double critic_coeff, double entropy_coeff,
                   Tape* tp) {
  Tensor rho = exp_t(sub(lp_new, lp_old, tp), tp);
  Tensor s1 = mul(rho, adv, tp);
  Tensor s2 = mul(clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps, tp), adv, tp);
  Tensor policy_term = neg(mean(minimum(s1, s2, tp), tp), tp);

  Tensor verr = mean(square(sub(v_pred, returns, tp), tp), tp);
  Tensor hmean = mean(entropy, tp);

  LossTerms out;
  out.total = add(add(policy_term, scale(verr, critic_coeff, tp), tp),
                  scale(hmean, -entropy_coeff, tp), tp);
  out.policy_loss = policy_term.item();
  out.value_loss = verr.item();
  out.entropy = hmean.item();
  return out;
}

namespace {

// sigma_old per slot expanded over each slot's 3 mean columns, as a constant.
Tensor expand_slot_cols(const Tensor& per_slot) {
  Tensor out(per_slot.rows(), per_slot.cols() * 3);
  for (int64_t r = 0; r < per_slot.rows(); ++r)
    for (int64_t s = 0; s < per_slot.cols(); ++s)
      for (int j = 0; j < 3; ++j) out.at(r, 3 * s + j) = per_slot.at(r, s);
  return out;
}

// Differentiable pull of rows beyond the bound onto it; rows inside pass
// through bitwise via the constant 0/1 mask.
Tensor project_rows(const Tensor& x, const Tensor& x_old, const Tensor& dist,
                    double bound, Tape* tp) {
  const int64_t B = x.rows();
  Tensor m(B, 1), m_inv(B, 1);
  for (int64_t r = 0; r < B; ++r) {
    const bool active = dist.at(r, 0) > bound;
    m.at(r, 0) = active ? 1.0 : 0.0;
    m_inv.at(r, 0) = active ? 0.0 : 1.0;
  }
  Tensor s = sqrt_t(divide(Tensor::full(B, 1, bound),
                           clamp_min(dist, bound, tp), tp),
                    tp);
  Tensor pulled = add(x_old, mul(sub(x, x_old, tp), s, tp), tp);
  return add(mul(x, m_inv, tp), mul(pulled, m, tp), tp);
}

}  // namespace

TrplProjection trpl_project(const Tensor& mu, const Tensor& sigma,
                            const Tensor& mu_old, const Tensor& sigma_old,
                            double eps_mu, double eps_sigma, Tape* tp) {
  if (mu.rows() != sigma.rows() || mu.cols() != 3 * sigma.cols())
    throw NumericsError("trpl: slot layout mismatch");
  if (mu_old.rows() != mu.rows() || mu_old.cols() != mu.cols() ||
      sigma_old.rows() != sigma.rows() || sigma_old.cols() != sigma.cols())
    throw NumericsError("trpl: old parameter shape mismatch");

  Tensor so_wide = expand_slot_cols(sigma_old);
  Tensor z = divide(sub(mu, mu_old, tp), so_wide, tp);
  TrplProjection out;
  out.d_mu = row_sum(square(z, tp), tp);
  out.d_sigma = row_sum(square(sub(sigma, sigma_old, tp), tp), tp);
  out.mu = project_rows(mu, mu_old, out.d_mu, eps_mu, tp);
  out.sigma = project_rows(sigma, sigma_old, out.d_sigma, eps_sigma, tp);

  int64_t active = 0;
  for (int64_t r = 0; r < mu.rows(); ++r)
    if (out.d_mu.at(r, 0) > eps_mu || out.d_sigma.at(r, 0) > eps_sigma) ++active;
  out.proj_rate = mu.rows() == 0
                      ? 0.0
                      : static_cast<double>(active) / static_cast<double>(mu.rows());
  for (int64_t i = 0; i < out.sigma.numel(); ++i)
    if (out.sigma.data()[i] <= 0.0)
      throw NumericsError("trpl: projected sigma not positive");
  return out;
}

LossTerms trpl_loss(const PolicyOutput& raw, const Tensor& mu_old,
                    const Tensor& sigma_old, const Tensor& actions,
                    const Tensor& lp_old, const Tensor& adv,
                    const Tensor& v_pred, const Tensor& returns,
                    const TrplConfig& cfg, Tape* tp) {
  TrplProjection proj = trpl_project(raw.mu, raw.sigma, mu_old, sigma_old,
                                     cfg.eps_mu, cfg.eps_sigma, tp);
  PolicyOutput projected = raw;
  projected.mu = proj.mu;
  projected.sigma = proj.sigma;

  Tensor lp_new = policy_log_prob(projected, actions, tp);
  Tensor rho = exp_t(sub(lp_new, lp_old, tp), tp);
  Tensor policy_term = neg(mean(mul(rho, adv, tp), tp), tp);

  // distance between the raw parameters and their projection, per frame
  Tensor so_wide = expand_slot_cols(sigma_old);
  Tensor pen_mu = row_sum(
      square(divide(sub(raw.mu, proj.mu, tp), so_wide, tp), tp), tp);
  Tensor pen_sig = row_sum(square(sub(raw.sigma, proj.sigma, tp), tp), tp);
  Tensor pen_rows = add(pen_mu, pen_sig, tp);
  Tensor pen_frames = segment_sum(pen_rows, raw.act_graph, raw.n_graphs, tp);
  Tensor penalty = scale(mean(pen_frames, tp), cfg.alpha, tp);

  Tensor verr = mean(square(sub(v_pred, returns, tp), tp), tp);
  Tensor hmean = mean(policy_entropy(projected, tp), tp);

  LossTerms out;
  out.total = add(add(add(policy_term, penalty, tp),
                      scale(verr, cfg.critic_coeff, tp), tp),
                  scale(hmean, -cfg.entropy_coeff, tp), tp);
  out.policy_loss = policy_term.item();
  out.value_loss = verr.item();
  out.entropy = hmean.item();
  out.proj_rate = proj.proj_rate;
  return out;
}

double mean_gaussian_kl(const PolicyOutput& now, const Tensor& mu_old,
                        const Tensor& sigma_old) {
  const double d = now.planar ? 2.0 : 3.0;
  std::vector<double> per_frame(now.n_graphs, 0.0);
  for (int64_t r = 0; r < now.mu.rows(); ++r) {
    double kl = 0.0;
    for (int s = 0; s < now.n_slots; ++s) {
      const double sn = now.sigma.at(r, s);
      const double so = sigma_old.at(r, s);
      double dm2 = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double diff = now.mu.at(r, 3 * s + j) - mu_old.at(r, 3 * s + j);
        dm2 += diff * diff;
      }
      kl += d * std::log(so / sn) + (d * sn * sn + dm2) / (2.0 * so * so) -
            0.5 * d;
    }
    per_frame[now.act_graph[r]] += kl;
  }
  double total = 0.0;
  for (double k : per_frame) total += k;
  return now.n_graphs == 0 ? 0.0 : total / static_cast<double>(now.n_graphs);
}

}  // namespace hepi
