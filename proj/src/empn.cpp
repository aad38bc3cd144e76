#include "hepi/empn.hpp"

#include <cmath>

namespace hepi {

ConvKernel ConvKernel::create(int64_t channels, const std::vector<int64_t>& hidden,
                              ParamStore& store, const std::string& prefix,
                              Rng& rng, bool attention) {
  ConvKernel k;
  k.channels = channels;
  std::vector<int64_t> sw{5};
  sw.insert(sw.end(), hidden.begin(), hidden.end());
  sw.push_back(channels);
  k.spatial = MlpParams::create({sw, Act::gelu, false, false}, store,
                                prefix + "/spatial", rng);
  std::vector<int64_t> fw{2};
  fw.insert(fw.end(), hidden.begin(), hidden.end());
  fw.push_back(channels);
  k.fiber = MlpParams::create({fw, Act::gelu, false, false}, store,
                              prefix + "/fiber", rng);
  k.k3 = store.make(prefix + "/k3", channels, channels, rng, -1.0);
  k.ln_g = store.add(prefix + "/ln_g", Tensor::full(1, channels, 1.0));
  k.ln_b = store.add(prefix + "/ln_b", Tensor::zeros(1, channels));
  k.widen = MlpParams::create({{channels, 4 * channels, channels},
                               Act::gelu, false, false},
                              store, prefix + "/widen", rng);
  if (attention) {
    k.attn_q = store.make(prefix + "/attn_q", channels, channels, rng, -1.0);
    k.attn_k = store.make(prefix + "/attn_k", 5, channels, rng, -1.0);
  }
  return k;
}

Tensor lift_inputs(const Tensor& scalars, const std::vector<Tensor>& vectors,
                   const SphereGrid& grid, const MlpParams& embed, Tape* tp) {
  const int64_t n = scalars.rows();
  const int64_t s = scalars.cols();
  const int64_t v = static_cast<int64_t>(vectors.size());
  const int o = grid.n_ori;
  Tensor raw(n * o, s + v);
  for (int64_t i = 0; i < n; ++i)
    for (int oi = 0; oi < o; ++oi) {
      double* row = raw.data() + (i * o + oi) * (s + v);
      for (int64_t j = 0; j < s; ++j) row[j] = scalars.at(i, j);
      for (int64_t k = 0; k < v; ++k) {
        const Tensor& w = vectors[k];
        row[s + k] = grid.dirs[oi].x * w.at(i, 0) + grid.dirs[oi].y * w.at(i, 1) +
                     grid.dirs[oi].z * w.at(i, 2);
      }
    }
  check_finite(raw, "lift_inputs");
  return mlp_forward(raw, embed, tp);
}

Tensor pair_invariant_embed(const std::vector<Vec3>& src_pos,
                            const std::vector<Vec3>& dst_pos,
                            const EdgeList& edges, const SphereGrid& grid) {
  const int64_t e = static_cast<int64_t>(edges.size());
  const int o = grid.n_ori;
  Tensor z(e * o, 5);
  for (int64_t ei = 0; ei < e; ++ei) {
    const Vec3 rel = src_pos[edges[ei].first] - dst_pos[edges[ei].second];
    for (int oi = 0; oi < o; ++oi) {
      const auto [a1, a2] = pair_invariants(rel, grid.dirs[oi]);
      double* row = z.data() + (ei * o + oi) * 5;
      row[0] = a1;
      row[1] = a2;
      row[2] = a1 * a1;
      row[3] = a1 * a2;
      row[4] = a2 * a2;
    }
  }
  check_finite(z, "pair_invariant_embed");
  return z;
}

Tensor fiber_table(const ConvKernel& k, const SphereGrid& grid, Tape* tp) {
  const int o = grid.n_ori;
  Tensor d(static_cast<int64_t>(o) * o, 2);
  for (int i = 0; i < o; ++i)
    for (int j = 0; j < o; ++j) {
      const double dij = grid.dots.at(i, j);
      d.at(i * o + j, 0) = dij;
      d.at(i * o + j, 1) = dij * dij;
    }
  return mlp_forward(d, k.fiber, tp);
}

Tensor conv_message_pass(const Tensor& f_src, const Tensor& f_dst,
                         const std::vector<Vec3>& src_pos,
                         const std::vector<Vec3>& dst_pos, const EdgeList& edges,
                         const SphereGrid& grid, const ConvKernel& k,
                         const EmpnOptions& opt, Tape* tp) {
  const int o = grid.n_ori;
  const int64_t c = k.channels;
  const int64_t n_dst = f_dst.rows() / o;
  if (f_dst.rows() % o != 0 || f_src.rows() % o != 0)
    throw NumericsError("conv: fiber rows not divisible by n_ori");
  const int64_t e = static_cast<int64_t>(edges.size());

  Tensor agg;
  if (e > 0) {
    Tensor z = pair_invariant_embed(src_pos, dst_pos, edges, grid);
    Tensor k1 = mlp_forward(z, k.spatial, tp);  // [E*O, C]
    std::vector<int> src_rows(e * o), dst_rows(e * o);
    for (int64_t ei = 0; ei < e; ++ei)
      for (int oi = 0; oi < o; ++oi) {
        src_rows[ei * o + oi] = edges[ei].first * o + oi;
        dst_rows[ei * o + oi] = edges[ei].second * o + oi;
      }
    Tensor gathered = gather_rows(f_src, src_rows, tp);
    Tensor msg = mul(k1, gathered, tp);
    if (opt.attention) {
      Tensor q = matmul(f_dst, k.attn_q, tp);
      Tensor qg = gather_rows(q, dst_rows, tp);
      Tensor ke = matmul(z, k.attn_k, tp);
      Tensor score =
          scale(row_sum(mul(qg, ke, tp), tp), 1.0 / std::sqrt((double)c), tp);
      // softmax per (dst, orientation); the max shift is a constant offset
      auto shifts = segment_max_values(score, dst_rows, n_dst * o);
      Tensor shift_col(e * o, 1);
      for (int64_t i = 0; i < e * o; ++i)
        shift_col.data()[i] = shifts[dst_rows[i]];
      Tensor ex = exp_t(sub(score, shift_col, tp), tp);
      Tensor denom = segment_sum(ex, dst_rows, n_dst * o, tp);
      Tensor w = divide(ex, gather_rows(denom, dst_rows, tp), tp);
      msg = mul(msg, w, tp);
    }
    Tensor spatial_agg = segment_sum(msg, dst_rows, n_dst * o, tp);
    Tensor table = opt.fiber_table_override.defined() ? opt.fiber_table_override
                                                      : fiber_table(k, grid, tp);
    Tensor mixed = fiber_mix(spatial_agg, table, o, tp);
    agg = matmul(mixed, k.k3, tp);
  }

  Tensor x = agg.defined() ? add(f_dst, agg, tp) : f_dst;
  if (!opt.use_block) return x;
  Tensor y = layer_norm(x, k.ln_g, k.ln_b, tp);
  y = mlp_forward(y, k.widen, tp);
  return add(x, y, tp);
}

Tensor readout_scalar(const Tensor& fiber, const Tensor& head, int n_ori, Tape* tp) {
  Tensor wk = matmul(fiber, head, tp);
  const int64_t n = fiber.rows() / n_ori;
  std::vector<int> ids(fiber.rows());
  for (int64_t i = 0; i < fiber.rows(); ++i) ids[i] = static_cast<int>(i / n_ori);
  return scale(segment_sum(wk, ids, n, tp), 1.0 / n_ori, tp);
}

Tensor readout_vector(const Tensor& fiber, const Tensor& head,
                      const SphereGrid& grid, Tape* tp) {
  Tensor wk = matmul(fiber, head, tp);  // [N*O, K]
  const int o = grid.n_ori;
  const int64_t kk = wk.cols();
  const int64_t n = wk.rows() / o;
  const double inv_o = 1.0 / static_cast<double>(o);
  const bool rg = tp && wk.requires_grad();
  Tensor out(n, kk * 3, rg);
  for (int64_t nn = 0; nn < n; ++nn)
    for (int oi = 0; oi < o; ++oi) {
      const double* row = wk.data() + (nn * o + oi) * kk;
      const Vec3 d = grid.dirs[oi];
      double* dst = out.data() + nn * kk * 3;
      for (int64_t q = 0; q < kk; ++q) {
        dst[q * 3 + 0] += inv_o * row[q] * d.x;
        dst[q * 3 + 1] += inv_o * row[q] * d.y;
        dst[q * 3 + 2] += inv_o * row[q] * d.z;
      }
    }
  check_finite(out, "readout_vector");
  if (rg) {
    auto wd = wk.ptr();
    auto od = out.ptr();
    auto dirs = grid.dirs;
    tp->record([wd, od, dirs, n, o, kk, inv_o] {
      if (od->grad.empty()) return;
      if (wd->grad.empty()) wd->grad.assign(wd->val.size(), 0.0);
      for (int64_t nn = 0; nn < n; ++nn)
        for (int oi = 0; oi < o; ++oi) {
          double* grow = wd->grad.data() + (nn * o + oi) * kk;
          const double* g = od->grad.data() + nn * kk * 3;
          const Vec3 d = dirs[oi];
          for (int64_t q = 0; q < kk; ++q)
            grow[q] += inv_o * (g[q * 3] * d.x + g[q * 3 + 1] * d.y +
                                g[q * 3 + 2] * d.z);
        }
    });
  }
  return out;
}

}  // namespace hepi
