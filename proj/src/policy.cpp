#include "hepi/policy.hpp"

#include <algorithm>
#include <cmath>

namespace hepi {

namespace {

constexpr double kLogSigmaLo = -6.907755278982137;  // ln 1e-3
constexpr double kLogSigmaHi = 0.6931471805599453;  // ln 2
constexpr double kLn2Pi = 1.8378770664093453;

Vec3 clamp_norm(const Vec3& v, double max_norm) {
  const double n = v.norm();
  if (n <= max_norm || n == 0.0) return v;
  return v * (max_norm / n);
}

}  // namespace

PolicyVariant parse_variant(const std::string& s) {
  if (s == "hepi") return PolicyVariant::hepi;
  if (s == "vnlocal") return PolicyVariant::vnlocal;
  if (s == "homogeneous") return PolicyVariant::homogeneous;
  throw NumericsError("unknown policy variant: " + s);
}

std::string variant_name(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::hepi: return "hepi";
    case PolicyVariant::vnlocal: return "vnlocal";
    default: return "homogeneous";
  }
}

Tensor slot_mask_row(int n_slots, bool planar) {
  Tensor m = Tensor::full(1, 3 * n_slots, 1.0);
  if (planar)
    for (int s = 0; s < n_slots; ++s) m.at(0, 3 * s + 2) = 0.0;
  return m;
}

PolicyModel PolicyModel::create(const PolicyConfig& cfg, Rng& rng) {
  PolicyModel m;
  m.cfg = cfg;
  m.grid = make_sphere_grid(cfg.n_ori);
  const int64_t c = cfg.channels;
  const int slots = cfg.action.n_slots;
  if (cfg.variant == PolicyVariant::homogeneous) {
    if (cfg.obj_vec_n != cfg.act_vec_n)
      throw NumericsError("homogeneous policy needs matching vector attrs");
    const int64_t uni_w = std::max(cfg.obj_scalar_w, cfg.act_scalar_w) +
                          cfg.obj_vec_n;
    m.embed_uni = MlpParams::create({{uni_w, c}, Act::gelu, false, false},
                                    m.store, "embed_uni", rng);
    m.k_uni = ConvKernel::create(c, cfg.kernel_hidden, m.store, "k_uni", rng,
                                 cfg.attention);
  } else {
    m.embed_obj = MlpParams::create(
        {{cfg.obj_scalar_w + cfg.obj_vec_n, c}, Act::gelu, false, false},
        m.store, "embed_obj", rng);
    m.embed_act = MlpParams::create(
        {{cfg.act_scalar_w + cfg.act_vec_n, c}, Act::gelu, false, false},
        m.store, "embed_act", rng);
    m.k_oo = ConvKernel::create(c, cfg.kernel_hidden, m.store, "k_oo", rng,
                                cfg.attention);
    m.k_aa = ConvKernel::create(c, cfg.kernel_hidden, m.store, "k_aa", rng,
                                cfg.attention);
    m.k_oa = ConvKernel::create(c, cfg.kernel_hidden, m.store, "k_oa", rng,
                                cfg.attention);
  }
  m.head_c = m.store.make("head_c", c, slots, rng, -1.0);
  m.head_v = m.store.make("head_v", c, slots, rng, -1.0);
  m.head_s = m.store.make("head_s", c, slots, rng, -1.0);
  Tensor b = Tensor::full(1, slots, std::log(cfg.sigma_init));
  m.bias_s = m.store.add("bias_s", b);
  return m;
}

namespace {

// c (scalar readout) times v (vector readout) per slot, contextual isotropic
// sigma clamped to [1e-3, 2].
PolicyOutput make_heads(const PolicyModel& m, const Tensor& f_act,
                        const GraphBatch& b, Tape* tp) {
  const int slots = m.cfg.action.n_slots;
  Tensor c = readout_scalar(f_act, m.head_c, m.cfg.n_ori, tp);
  Tensor v = readout_vector(f_act, m.head_v, m.grid, tp);
  std::vector<Tensor> mu_parts;
  for (int s = 0; s < slots; ++s) {
    Tensor cs = slice_cols(c, s, 1, tp);
    Tensor vs = slice_cols(v, 3 * s, 3, tp);
    mu_parts.push_back(mul(vs, cs, tp));
  }
  Tensor mu = slots == 1 ? mu_parts[0] : concat_cols(mu_parts, tp);
  if (m.cfg.action.planar) {
    Tensor mask(mu.rows(), mu.cols());
    Tensor row = slot_mask_row(slots, true);
    for (int64_t i = 0; i < mu.rows(); ++i)
      for (int64_t j = 0; j < mu.cols(); ++j) mask.at(i, j) = row.at(0, j);
    mu = mul(mu, mask, tp);
  }
  Tensor ls = readout_scalar(f_act, m.head_s, m.cfg.n_ori, tp);
  ls = add(ls, m.bias_s, tp);
  ls = clamp(ls, kLogSigmaLo, kLogSigmaHi, tp);

  PolicyOutput out;
  out.mu = mu;
  out.sigma = exp_t(ls, tp);
  out.n_slots = slots;
  out.planar = m.cfg.action.planar;
  out.act_graph = b.act_graph;
  out.n_graphs = b.n_graphs;
  for (int64_t i = 0; i < out.mu.numel(); ++i)
    if (!std::isfinite(out.mu.data()[i]))
      throw NumericsError("policy forward produced non-finite mean");
  return out;
}

}  // namespace

PolicyOutput PolicyModel::forward(const GraphBatch& batch, Tape* tp) const {
  switch (cfg.variant) {
    case PolicyVariant::hepi: return hepi_forward(batch, tp);
    case PolicyVariant::vnlocal:
      return vnlocal_forward(batch, cfg.vn_k, cfg.obj_rounds, tp);
    default: return homogeneous_forward(batch, tp);
  }
}

PolicyOutput PolicyModel::hepi_forward(const GraphBatch& batch, Tape* tp) const {
  if (batch.n_act() < 1) throw NumericsError("policy forward: no actuators");
  if (batch.e_oa.empty())
    throw NumericsError("policy forward: missing obj-act inter edges");
  EmpnOptions opt;
  opt.attention = cfg.attention;
  Tensor f_obj = lift_inputs(batch.obj_scalars, batch.obj_vectors, grid,
                             embed_obj, tp);
  Tensor f_act = lift_inputs(batch.act_scalars, batch.act_vectors, grid,
                             embed_act, tp);
  Tensor f_obj_new = conv_message_pass(f_obj, f_obj, batch.obj_pos,
                                       batch.obj_pos, batch.e_oo, grid, k_oo,
                                       opt, tp);
  Tensor f_act_new = conv_message_pass(f_act, f_act, batch.act_pos,
                                       batch.act_pos, batch.e_aa, grid, k_aa,
                                       opt, tp);
  // global stage reads the pre-update actuator fibers; its output is added to
  // the act-act update so both paths contribute residually
  Tensor f_glob = conv_message_pass(f_obj_new, f_act, batch.obj_pos,
                                    batch.act_pos, batch.e_oa, grid, k_oa, opt,
                                    tp);
  Tensor f_final = add(f_act_new, f_glob, tp);
  return make_heads(*this, f_final, batch, tp);
}

PolicyOutput PolicyModel::vnlocal_forward(const GraphBatch& batch, int k, int m,
                                          Tape* tp) const {
  if (batch.n_act() < 1) throw NumericsError("policy forward: no actuators");
  EmpnOptions opt;
  opt.attention = cfg.attention;
  EdgeList e_vn = build_bipartite_knn(batch.obj_pos, batch.obj_graph,
                                      batch.act_pos, batch.act_graph, k);
  Tensor f_obj = lift_inputs(batch.obj_scalars, batch.obj_vectors, grid,
                             embed_obj, tp);
  Tensor f_act = lift_inputs(batch.act_scalars, batch.act_vectors, grid,
                             embed_act, tp);
  // m weight-tied object rounds before the aggregation stage
  for (int round = 0; round < m; ++round)
    f_obj = conv_message_pass(f_obj, f_obj, batch.obj_pos, batch.obj_pos,
                              batch.e_oo, grid, k_oo, opt, tp);
  Tensor f_act_new = conv_message_pass(f_act, f_act, batch.act_pos,
                                       batch.act_pos, batch.e_aa, grid, k_aa,
                                       opt, tp);
  Tensor f_glob = conv_message_pass(f_obj, f_act, batch.obj_pos, batch.act_pos,
                                    e_vn, grid, k_oa, opt, tp);
  Tensor f_final = add(f_act_new, f_glob, tp);
  return make_heads(*this, f_final, batch, tp);
}

PolicyOutput PolicyModel::homogeneous_forward(const GraphBatch& batch,
                                              Tape* tp) const {
  if (batch.n_act() < 1) throw NumericsError("policy forward: no actuators");
  EmpnOptions opt;
  opt.attention = cfg.attention;
  Tensor f = lift_inputs(batch.uni_scalars, batch.uni_vectors, grid, embed_uni,
                         tp);
  for (int round = 0; round < 2; ++round)
    f = conv_message_pass(f, f, batch.uni_pos, batch.uni_pos, batch.e_uni,
                          grid, k_uni, opt, tp);
  std::vector<int> rows;
  rows.reserve(batch.n_act() * cfg.n_ori);
  for (int a : batch.act_row_in_uni)
    for (int o = 0; o < cfg.n_ori; ++o) rows.push_back(a * cfg.n_ori + o);
  Tensor f_act = gather_rows(f, rows, tp);
  return make_heads(*this, f_act, batch, tp);
}

EdgeList build_bipartite_knn(const std::vector<Vec3>& obj_pos,
                             const std::vector<int>& obj_graph,
                             const std::vector<Vec3>& act_pos,
                             const std::vector<int>& act_graph, int k) {
  if (k < 1) throw NumericsError("bipartite knn: k out of range");
  EdgeList edges;
  std::vector<std::pair<double, int>> cand;
  for (size_t v = 0; v < act_pos.size(); ++v) {
    cand.clear();
    for (size_t u = 0; u < obj_pos.size(); ++u) {
      if (obj_graph[u] != act_graph[v]) continue;
      cand.emplace_back((obj_pos[u] - act_pos[v]).norm2(), static_cast<int>(u));
    }
    if (static_cast<int>(cand.size()) < k)
      throw NumericsError("bipartite knn: k out of range");
    std::sort(cand.begin(), cand.end());
    for (int t = 0; t < k; ++t)
      edges.emplace_back(cand[t].second, static_cast<int>(v));
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

std::vector<ActCommand> decode_action(const ActionSpec& spec, const Tensor& slots,
                                      const std::vector<Vec3>& act_pos,
                                      const std::vector<Vec3>& frame_origin) {
  if (slots.cols() != 3 * spec.n_slots)
    throw NumericsError("decode_action: slot layout mismatch");
  std::vector<ActCommand> cmds;
  for (int64_t i = 0; i < slots.rows(); ++i) {
    ActCommand c;
    c.v = {slots.at(i, 0), slots.at(i, 1), slots.at(i, 2)};
    if (spec.planar) c.v.z = 0.0;
    c.v = clamp_norm(c.v, spec.clamp);
    if (spec.angular && spec.n_slots > 1) {
      Vec3 v2{slots.at(i, 3), slots.at(i, 4), slots.at(i, 5)};
      if (spec.planar) v2.z = 0.0;
      const Vec3 r = act_pos[i] - frame_origin[i];
      const double r2 = r.norm2();
      if (r2 > 1e-24) {
        const Vec3 v_par = r * (v2.dot(r) / r2);
        const Vec3 v_perp = v2 - v_par;
        c.w = clamp_norm(r.cross(v_perp) * (1.0 / r2), spec.clamp);
      }
    }
    cmds.push_back(c);
  }
  return cmds;
}

Tensor policy_log_prob(const PolicyOutput& out, const Tensor& actions, Tape* tp) {
  for (int64_t i = 0; i < actions.numel(); ++i)
    if (!std::isfinite(actions.data()[i]))
      throw NumericsError("log_prob: non-finite action");
  const double d = out.planar ? 2.0 : 3.0;
  Tensor lp_rows;
  for (int s = 0; s < out.n_slots; ++s) {
    Tensor diff = sub(slice_cols(actions, 3 * s, 3, tp),
                      slice_cols(out.mu, 3 * s, 3, tp), tp);
    Tensor q = row_sum(square(diff, tp), tp);  // masked dims are zero on both sides
    Tensor sig = slice_cols(out.sigma, s, 1, tp);
    Tensor quad = divide(q, scale(square(sig, tp), 2.0, tp), tp);
    Tensor lp = neg(add_const(add(quad, scale(log_t(sig, tp), d, tp), tp),
                              0.5 * d * kLn2Pi, tp),
                    tp);
    lp_rows = s == 0 ? lp : add(lp_rows, lp, tp);
  }
  return segment_sum(lp_rows, out.act_graph, out.n_graphs, tp);
}

Tensor policy_entropy(const PolicyOutput& out, Tape* tp) {
  const double d = out.planar ? 2.0 : 3.0;
  Tensor h_rows;
  for (int s = 0; s < out.n_slots; ++s) {
    Tensor sig = slice_cols(out.sigma, s, 1, tp);
    Tensor h = add_const(scale(log_t(sig, tp), d, tp), 0.5 * d * (1.0 + kLn2Pi),
                         tp);
    h_rows = s == 0 ? h : add(h_rows, h, tp);
  }
  return segment_sum(h_rows, out.act_graph, out.n_graphs, tp);
}

Tensor policy_sample(const PolicyOutput& out, Rng& rng) {
  Tensor a(out.mu.rows(), out.mu.cols());
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int s = 0; s < out.n_slots; ++s) {
      const double sig = out.sigma.at(i, s);
      for (int j = 0; j < 3; ++j) {
        const bool masked = out.planar && j == 2;
        a.at(i, 3 * s + j) =
            masked ? 0.0 : out.mu.at(i, 3 * s + j) + sig * rng.normal();
      }
    }
  return a;
}

}  // namespace hepi
