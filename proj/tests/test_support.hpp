#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hepi/nn.hpp"
#include "hepi/tensor.hpp"

namespace hepi::test {

// Central finite differences against analytic gradients. `loss` must rebuild
// the graph from scratch on every call (params are mutated in place).
inline double max_grad_rel_err(std::vector<Tensor> params,
                               const std::function<Tensor(Tape*)>& loss,
                               double h = 1e-6) {
  Tape tape;
  Tensor l = loss(&tape);
  tape.backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    p.grad();
    analytic.push_back(p.ptr()->grad);
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double keep = p.data()[i];
      p.data()[i] = keep + h;
      const double fp = loss(nullptr).item();
      p.data()[i] = keep - h;
      const double fm = loss(nullptr).item();
      p.data()[i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[pi][i];
      const double rel = std::fabs(num - ana) /
                         std::max({1.0, std::fabs(num), std::fabs(ana)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline Tensor random_tensor(int64_t r, int64_t c, Rng& rng, double s = 1.0,
                            bool rg = false) {
  Tensor t(r, c, rg);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = s * rng.normal();
  return t;
}

}  // namespace hepi::test
