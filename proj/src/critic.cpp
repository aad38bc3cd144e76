#include "hepi/critic.hpp"

namespace hepi {

CriticModel CriticModel::create(int64_t feat_w, Rng& rng, int64_t hidden,
                                bool layer_norm) {
  CriticModel m;
  m.feat_w = feat_w;
  MlpSpec inner{{feat_w, hidden, hidden}, Act::relu, true, layer_norm};
  MlpSpec outer{{hidden, hidden, 1}, Act::relu, false, layer_norm};
  m.inner = MlpParams::create(inner, m.store, "critic_inner", rng);
  m.outer = MlpParams::create(outer, m.store, "critic_outer", rng);
  return m;
}

Tensor CriticModel::forward(const Tensor& rows, const std::vector<int>& ids,
                            int n_graphs, Tape* tp) const {
  if (rows.cols() != feat_w)
    throw NumericsError("critic: feature width mismatch");
  if (rows.rows() != static_cast<int64_t>(ids.size()))
    throw NumericsError("critic: id count mismatch");
  Tensor enc = mlp_forward(rows, inner, tp);
  Tensor pooled = segment_sum(enc, ids, n_graphs, tp);
  return mlp_forward(pooled, outer, tp);
}

}  // namespace hepi
