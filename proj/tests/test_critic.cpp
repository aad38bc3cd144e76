#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hepi/critic.hpp"
#include "test_support.hpp"

using namespace hepi;
using test::max_grad_rel_err;
using test::random_tensor;

TEST_SUITE_BEGIN("critic");

TEST_CASE("identity networks reduce to a feature sum") {
  Rng rng(5);
  CriticModel m = CriticModel::create(4, rng, 4, false);
  for (auto [name, t] : m.store.items())
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0;
  for (int l = 0; l < 2; ++l)
    for (int64_t i = 0; i < 4; ++i) {
      m.inner.w[l].data()[i * 4 + i] = 1.0;
      if (l == 0) m.outer.w[0].data()[i * 4 + i] = 1.0;
    }
  for (int64_t i = 0; i < 4; ++i) m.outer.w[1].data()[i] = 1.0;

  // positive features pass ReLU unchanged
  Tensor rows = Tensor::from({0.5, 1.5, 2.0, 0.25}, 1, 4);
  Tape tape;
  Tensor v = m.forward(rows, {0}, 1, &tape);
  CHECK(v.item() == doctest::Approx(4.25).epsilon(1e-14));

  // a second node adds its features into the pool
  Tensor two = Tensor::from({0.5, 1.5, 2.0, 0.25, 1.0, 1.0, 1.0, 1.0}, 2, 4);
  Tape t2;
  CHECK(m.forward(two, {0, 0}, 1, &t2).item() == doctest::Approx(8.25).epsilon(1e-14));
}

TEST_CASE("value is invariant under node permutations") {
  Rng rng(13);
  CriticModel m = CriticModel::create(6, rng);
  Tensor rows = random_tensor(12, 6, rng);
  std::vector<int> ids(12, 0);
  Tape tape;
  const double base = m.forward(rows, ids, 1, &tape).item();

  std::vector<int> order(12);
  std::iota(order.begin(), order.end(), 0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    for (int i = 11; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    Tensor perm(12, 6);
    for (int r = 0; r < 12; ++r)
      for (int c = 0; c < 6; ++c) perm.at(r, c) = rows.at(order[r], c);
    Tape tp;
    worst = std::max(worst,
                     std::fabs(m.forward(perm, ids, 1, &tp).item() - base));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("duplicating a node changes the pooled value") {
  Rng rng(17);
  CriticModel m = CriticModel::create(5, rng);
  Tensor rows = random_tensor(4, 5, rng);
  Tensor dup(5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) dup.at(r, c) = rows.at(std::min(r, 3), c);

  Tape t1, t2;
  const double a = m.forward(rows, {0, 0, 0, 0}, 1, &t1).item();
  const double b = m.forward(dup, {0, 0, 0, 0, 0}, 1, &t2).item();
  CHECK(std::fabs(a - b) > 1e-8);
}

TEST_CASE("batched graphs match per-graph values exactly") {
  Rng rng(19);
  CriticModel m = CriticModel::create(4, rng);
  Tensor rows = random_tensor(7, 4, rng);
  std::vector<int> ids{0, 0, 0, 1, 1, 1, 1};
  Tape tb;
  Tensor batched = m.forward(rows, ids, 2, &tb);

  Tensor a(3, 4), b(4, 4);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) a.at(r, c) = rows.at(r, c);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) b.at(r, c) = rows.at(3 + r, c);
  Tape ta, tbb;
  CHECK(batched.at(0, 0) == m.forward(a, {0, 0, 0}, 1, &ta).item());
  CHECK(batched.at(1, 0) == m.forward(b, {0, 0, 0, 0}, 1, &tbb).item());
}

TEST_CASE("gradients match finite differences") {
  Rng rng(23);
  CriticModel m = CriticModel::create(3, rng, 4);
  Tensor rows = random_tensor(5, 3, rng);
  std::vector<int> ids{0, 0, 1, 1, 1};

  std::vector<Tensor> params;
  for (auto [name, t] : m.store.items()) {
    t.set_requires_grad(true);
    params.push_back(t);
  }
  const double err = max_grad_rel_err(params, [&](Tape* tp) {
    return sum(m.forward(rows, ids, 2, tp), tp);
  });
  CHECK(err <= 1e-5);
}

TEST_CASE("feature width mismatch throws") {
  Rng rng(29);
  CriticModel m = CriticModel::create(4, rng);
  Tape tape;
  CHECK_THROWS_AS(m.forward(Tensor(2, 3), {0, 0}, 1, &tape), NumericsError);
  CHECK_THROWS_AS(m.forward(Tensor(2, 4), {0}, 1, &tape), NumericsError);
}

TEST_SUITE_END();
