#pragma once

#include <vector>

#include "hepi/nn.hpp"
#include "hepi/tensor.hpp"

namespace hepi {

// Permutation-invariant set value function V = outer(sum_v inner(row_v)).
// Summation pooling, not mean, so duplicating a node changes the value.
struct CriticModel {
  ParamStore store;
  MlpParams inner, outer;
  int64_t feat_w = 0;

  static CriticModel create(int64_t feat_w, Rng& rng, int64_t hidden = 64,
                            bool layer_norm = true);

  // rows [N, F] with a graph id per row; V per graph as [n_graphs, 1].
  Tensor forward(const Tensor& rows, const std::vector<int>& ids, int n_graphs,
                 Tape* tp) const;
};

}  // namespace hepi
