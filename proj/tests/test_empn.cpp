#include <algorithm>
#include <cstdio>

#include "doctest.h"
#include "hepi/empn.hpp"
#include "test_support.hpp"

using namespace hepi;
using test::random_tensor;

namespace {

struct ToyModel {
  ParamStore store;
  MlpParams embed;
  ConvKernel kernel;
  Tensor head_w, head_c;
  int64_t channels;

  ToyModel(int64_t c, uint64_t seed, bool attention = false) : channels(c) {
    Rng rng(seed);
    embed = MlpParams::create({{4, c}, Act::gelu, false, false}, store, "embed", rng);
    kernel = ConvKernel::create(c, {64, 64}, store, "k", rng, attention);
    head_w = store.make("head_w", c, 1, rng, -1.0);
    head_c = store.make("head_c", c, 1, rng, -1.0);
  }
};

struct ToyInput {
  std::vector<Vec3> pos;
  Tensor scalars;              // [N,2]
  std::vector<Tensor> vectors; // two attrs [N,3]
};

ToyInput random_input(int n, Rng& rng) {
  ToyInput in;
  for (int i = 0; i < n; ++i)
    in.pos.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  in.scalars = Tensor(n, 2);
  for (int i = 0; i < n; ++i) {
    in.scalars.at(i, 0) = 1.0;
    in.scalars.at(i, 1) = rng.uniform(0, 1);
  }
  in.vectors.push_back(random_tensor(n, 3, rng, 0.5));
  in.vectors.push_back(random_tensor(n, 3, rng, 0.5));
  return in;
}

ToyInput rotate_input(const ToyInput& in, const Quat& R) {
  ToyInput out = in;
  for (auto& p : out.pos) p = R.rotate(p);
  for (auto& vt : out.vectors) {
    Tensor r(vt.rows(), 3);
    for (int64_t i = 0; i < vt.rows(); ++i) {
      const Vec3 v{vt.at(i, 0), vt.at(i, 1), vt.at(i, 2)};
      const Vec3 w = R.rotate(v);
      r.at(i, 0) = w.x; r.at(i, 1) = w.y; r.at(i, 2) = w.z;
    }
    vt = r;
  }
  return out;
}

// lift -> conv -> (vector readout [N,3], scalar readout [N,1])
std::pair<Tensor, Tensor> forward(const ToyModel& m, const ToyInput& in,
                                  const SphereGrid& grid,
                                  const EmpnOptions& opt = {}) {
  EdgeList edges = build_knn_edges(in.pos, 3);
  Tensor f = lift_inputs(in.scalars, in.vectors, grid, m.embed, nullptr);
  Tensor f2 = conv_message_pass(f, f, in.pos, in.pos, edges, grid, m.kernel, opt,
                                nullptr);
  return {readout_vector(f2, m.head_w, grid, nullptr),
          readout_scalar(f2, m.head_c, grid.n_ori, nullptr)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_SUITE_BEGIN("empn");

TEST_CASE("sphere grid basics") {
  CHECK_THROWS_AS(make_sphere_grid(1), NumericsError);
  for (int n : {2, 8, 16, 24}) {
    SphereGrid g = make_sphere_grid(n);
    REQUIRE(static_cast<int>(g.dirs.size()) == n);
    for (const auto& d : g.dirs) CHECK(std::fabs(d.norm() - 1.0) <= 1e-12);
    for (int i = 0; i < n; ++i) CHECK(g.dots.at(i, i) == doctest::Approx(1.0));
  }
  // near-balanced lattice for n >= 16
  for (int n : {16, 24, 32}) {
    SphereGrid g = make_sphere_grid(n);
    Vec3 m{};
    for (const auto& d : g.dirs) m += d;
    m = m * (1.0 / n);
    CHECK(m.norm() <= 0.1);
  }
}

TEST_CASE("pair invariants") {
  const Vec3 o = Vec3{0.3, -0.5, 0.9}.normalized();
  // parallel displacement: a1 = |rel|, a2 = 0
  auto [a1p, a2p] = pair_invariants(o * 2.5, o);
  CHECK(a1p == doctest::Approx(2.5));
  CHECK(a2p == doctest::Approx(0.0).epsilon(1e-12));
  // perpendicular: a1 = 0, a2 = |rel|
  Vec3 perp = o.cross({0, 0, 1}).normalized() * 1.7;
  auto [a1q, a2q] = pair_invariants(perp, o);
  CHECK(std::fabs(a1q) <= 1e-12);
  CHECK(a2q == doctest::Approx(1.7));
  // pythagoras
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Vec3 rel{rng.normal(), rng.normal(), rng.normal()};
    const Vec3 dir = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized();
    auto [a1, a2] = pair_invariants(rel, dir);
    CHECK(a1 * a1 + a2 * a2 == doctest::Approx(rel.norm2()).epsilon(1e-12));
  }
}

TEST_CASE("knn edge construction") {
  // 3 collinear points, k=1: middle links to both ends, no end-to-end edge
  std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  EdgeList e = build_knn_edges(pts, 1);
  EdgeList want{{0, 1}, {1, 0}, {1, 2}, {2, 1}};
  CHECK(e == want);
  // k = n-1 gives the complete graph; k out of range throws
  EdgeList full = build_knn_edges(pts, 2);
  CHECK(full.size() == 6);
  CHECK_THROWS_AS(build_knn_edges(pts, 3), NumericsError);
  CHECK_THROWS_AS(build_knn_edges(pts, 0), NumericsError);
  // ties break toward the lower index
  std::vector<Vec3> sq{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  EdgeList e2 = build_knn_edges(sq, 1);  // node1,node2 equidistant from 0
  CHECK(std::count(e2.begin(), e2.end(), std::make_pair(1, 0)) == 1);
}

TEST_CASE("knn edges invariant under rigid motion") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 9; ++i)
      pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    EdgeList e = build_knn_edges(pts, 3);
    const Quat R = random_rotation(rng);
    const Vec3 t3{rng.normal(), rng.normal(), rng.normal()};
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(R.rotate(p) + t3);
    CHECK(build_knn_edges(moved, 3) == e);
  }
}

TEST_CASE("bipartite complete edges") {
  CHECK(build_bipartite_complete(1, 1) == EdgeList{{0, 0}});
  CHECK(build_bipartite_complete(3, 2).size() == 6);
  CHECK(build_bipartite_complete(10, 4).size() == 40);
  CHECK(build_complete_edges(2) == EdgeList{{0, 1}, {1, 0}});
}

TEST_CASE("lift inputs") {
  SphereGrid grid = make_sphere_grid(8);
  Rng rng(3);
  ParamStore store;
  // identity-ish embed to expose raw lift values: 4 inputs -> 4 channels
  MlpParams embed = MlpParams::create({{4, 4}, Act::gelu, false, false}, store,
                                      "e", rng);
  for (int64_t i = 0; i < 16; ++i) embed.w[0].data()[i] = (i % 5 == 0) ? 1.0 : 0.0;

  Tensor scal = Tensor::from({1.0, 0.5}, 1, 2);
  std::vector<Tensor> vecs{Tensor::from({0, 0, 0}, 1, 3),
                           Tensor::from({0.2, -0.4, 0.8}, 1, 3)};
  Tensor f = lift_inputs(scal, vecs, grid, embed, nullptr);
  REQUIRE(f.rows() == 8);
  for (int o = 0; o < 8; ++o) {
    CHECK(f.at(o, 0) == 1.0);        // scalar broadcast to every orientation
    CHECK(f.at(o, 1) == 0.5);
    CHECK(f.at(o, 2) == 0.0);        // zero vector lifts to zero channel
    const Vec3 w{0.2, -0.4, 0.8};
    CHECK(f.at(o, 3) == doctest::Approx(grid.dirs[o].dot(w)));
  }
}

TEST_CASE("conv with no edges applies only the block path") {
  SphereGrid grid = make_sphere_grid(8);
  ToyModel m(16, 77);
  Rng rng(6);
  Tensor f = random_tensor(2 * 8, 16, rng);
  std::vector<Vec3> pos{{0, 0, 0}, {1, 1, 1}};
  EmpnOptions opt;
  opt.use_block = false;
  Tensor out = conv_message_pass(f, f, pos, pos, {}, grid, m.kernel, opt, nullptr);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(out.data()[i] == f.data()[i]);
  opt.use_block = true;
  Tensor out2 = conv_message_pass(f, f, pos, pos, {}, grid, m.kernel, opt, nullptr);
  // block path still transforms the features
  double diff = 0;
  for (int64_t i = 0; i < f.numel(); ++i)
    diff = std::max(diff, std::fabs(out2.data()[i] - f.data()[i]));
  CHECK(diff > 0);
}

TEST_CASE("identity kernel forwards the source fiber") {
  SphereGrid grid = make_sphere_grid(4);
  const int64_t c = 6;
  ToyModel m(c, 9);
  // spatial net == 1: zero all, set final bias to one
  for (auto& w : m.kernel.spatial.w)
    for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = 0.0;
  for (int64_t i = 0; i < c; ++i) m.kernel.spatial.b.back().data()[i] = 1.0;
  // K3 = I
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j) m.kernel.k3.at(i, j) = i == j ? 1.0 : 0.0;
  // fiber table = n_ori * delta, block off
  EmpnOptions opt;
  opt.use_block = false;
  Tensor table = Tensor::zeros(16, c);
  for (int o = 0; o < 4; ++o)
    for (int64_t j = 0; j < c; ++j) table.at(o * 4 + o, j) = 4.0;
  opt.fiber_table_override = table;

  Rng rng(10);
  Tensor f_src = random_tensor(4, c, rng);   // one src node
  Tensor f_dst = random_tensor(4, c, rng);   // one dst node
  std::vector<Vec3> sp{{0.5, 0, 0}}, dp{{0, 0, 0}};
  Tensor out = conv_message_pass(f_src, f_dst, sp, dp, {{0, 0}}, grid, m.kernel,
                                 opt, nullptr);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(f_dst.data()[i] + f_src.data()[i]));
}

TEST_CASE("attention weights sum to one and constant scores give the mean") {
  SphereGrid grid = make_sphere_grid(6);
  ToyModel plain(12, 21), attn(12, 21, true);
  // zero score params -> uniform attention
  for (int64_t i = 0; i < attn.kernel.attn_q.numel(); ++i)
    attn.kernel.attn_q.data()[i] = 0.0;
  for (int64_t i = 0; i < attn.kernel.attn_k.numel(); ++i)
    attn.kernel.attn_k.data()[i] = 0.0;
  // make attn kernel otherwise identical to plain
  auto copy_mlp = [](const MlpParams& from, MlpParams& to) {
    for (size_t l = 0; l < from.w.size(); ++l) {
      std::copy(from.w[l].data(), from.w[l].data() + from.w[l].numel(), to.w[l].data());
      std::copy(from.b[l].data(), from.b[l].data() + from.b[l].numel(), to.b[l].data());
    }
  };
  copy_mlp(plain.kernel.spatial, attn.kernel.spatial);
  copy_mlp(plain.kernel.fiber, attn.kernel.fiber);
  copy_mlp(plain.kernel.widen, attn.kernel.widen);
  std::copy(plain.kernel.k3.data(), plain.kernel.k3.data() + plain.kernel.k3.numel(),
            attn.kernel.k3.data());

  Rng rng(33);
  ToyInput in = random_input(5, rng);
  EdgeList edges = build_knn_edges(in.pos, 2);
  Tensor f_plain = lift_inputs(in.scalars, in.vectors, grid, plain.embed, nullptr);
  Tensor f_attn = lift_inputs(in.scalars, in.vectors, grid, plain.embed, nullptr);

  EmpnOptions uni;
  uni.attention = true;
  Tensor with_attn = conv_message_pass(f_attn, f_attn, in.pos, in.pos, edges, grid,
                                       attn.kernel, uni, nullptr);

  // oracle: uniform attention equals sum with per-destination 1/deg weights.
  // Single edge into a node -> weight exactly 1 (sum-to-one check).
  std::vector<int> deg(5, 0);
  for (auto [s, d] : edges) deg[d]++;
  // rebuild by scaling each message via a one-edge graph pass
  Tensor acc = f_plain;
  EmpnOptions off;
  off.use_block = false;
  Tensor base = conv_message_pass(f_plain, Tensor::zeros(f_plain.rows(), 12),
                                  in.pos, in.pos, edges, grid, plain.kernel, off,
                                  nullptr);
  // base holds the plain sum; compare against attention output reconstructed
  // from per-edge sums scaled by 1/deg. For nodes with equal-degree incident
  // edges this equals dividing the sum.
  bool alldeg_pos = true;
  for (int i = 0; i < 5; ++i) alldeg_pos = alldeg_pos && deg[i] > 0;
  REQUIRE(alldeg_pos);
  Tensor mean_agg = Tensor::zeros(base.rows(), base.cols());
  for (int node = 0; node < 5; ++node)
    for (int o = 0; o < 6; ++o)
      for (int64_t j = 0; j < 12; ++j)
        mean_agg.at(node * 6 + o, j) = base.at(node * 6 + o, j) / deg[node];
  // forward the plain kernel with block to mirror the attention output
  Tensor x = add(f_plain, mean_agg, nullptr);
  Tensor y = layer_norm(x, plain.kernel.ln_g, plain.kernel.ln_b, nullptr);
  y = mlp_forward(y, plain.kernel.widen, nullptr);
  Tensor expect = add(x, y, nullptr);
  for (int64_t i = 0; i < expect.numel(); ++i)
    CHECK(with_attn.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-9));
}

TEST_CASE("readout examples") {
  SphereGrid grid = make_sphere_grid(16);
  // constant fiber -> vector readout is the grid mean direction scaled
  Tensor f = Tensor::full(16, 1, 1.0);
  Tensor head = Tensor::from({1.0}, 1, 1);
  Tensor v = readout_vector(f, head, grid, nullptr);
  CHECK(Vec3{v.at(0, 0), v.at(0, 1), v.at(0, 2)}.norm() <= 0.1);

  // w(o) = o . e_x -> readout approximates e_x / 3 (vector spherical moment)
  Tensor fx(16, 1);
  for (int o = 0; o < 16; ++o) fx.at(o, 0) = grid.dirs[o].x;
  Tensor vx = readout_vector(fx, head, grid, nullptr);
  CHECK(std::fabs(vx.at(0, 0) - 1.0 / 3.0) <= 2e-2);
  CHECK(std::fabs(vx.at(0, 1)) <= 2e-2);
  CHECK(std::fabs(vx.at(0, 2)) <= 2e-2);

  // scalar readout of a constant fiber is exact
  Tensor s = readout_scalar(f, head, 16, nullptr);
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("joint grid rotation is exactly equivariant") {
  ToyModel m(32, 1234);
  Rng rng(55);
  double worst_vec = 0, worst_scal = 0;
  for (int trial = 0; trial < 25; ++trial) {
    SphereGrid grid = make_sphere_grid(16);
    ToyInput in = random_input(7, rng);
    const Quat R = random_rotation(rng);
    auto [v0, s0] = forward(m, in, grid);
    auto [v1, s1] = forward(m, rotate_input(in, R), grid.rotated(R));
    for (int64_t i = 0; i < v0.rows(); ++i) {
      const Vec3 a{v0.at(i, 0), v0.at(i, 1), v0.at(i, 2)};
      const Vec3 b{v1.at(i, 0), v1.at(i, 1), v1.at(i, 2)};
      worst_vec = std::max(worst_vec, (b - R.rotate(a)).norm());
      worst_scal = std::max(worst_scal, std::fabs(s1.at(i, 0) - s0.at(i, 0)));
    }
  }
  CHECK(worst_vec <= 1e-9);
  CHECK(worst_scal <= 1e-9);
}

TEST_CASE("translation invariance is exact") {
  ToyModel m(32, 99);
  Rng rng(8);
  SphereGrid grid = make_sphere_grid(12);
  ToyInput in = random_input(6, rng);
  auto [v0, s0] = forward(m, in, grid);
  ToyInput moved = in;
  const Vec3 t{12.3, -4.5, 6.7};
  for (auto& p : moved.pos) p += t;
  auto [v1, s1] = forward(m, moved, grid);
  for (int64_t i = 0; i < v0.numel(); ++i)
    CHECK(std::fabs(v1.data()[i] - v0.data()[i]) <= 1e-9);
  for (int64_t i = 0; i < s0.numel(); ++i)
    CHECK(std::fabs(s1.data()[i] - s0.data()[i]) <= 1e-9);
}

TEST_CASE("node permutation permutes outputs") {
  ToyModel m(24, 4321);
  Rng rng(17);
  SphereGrid grid = make_sphere_grid(8);
  ToyInput in = random_input(6, rng);
  std::vector<int> perm{3, 0, 5, 1, 4, 2};
  ToyInput pin;
  pin.scalars = Tensor(6, 2);
  pin.vectors = {Tensor(6, 3), Tensor(6, 3)};
  pin.pos.resize(6);
  for (int i = 0; i < 6; ++i) {
    pin.pos[perm[i]] = in.pos[i];
    for (int j = 0; j < 2; ++j) pin.scalars.at(perm[i], j) = in.scalars.at(i, j);
    for (int v = 0; v < 2; ++v)
      for (int j = 0; j < 3; ++j)
        pin.vectors[v].at(perm[i], j) = in.vectors[v].at(i, j);
  }
  auto [v0, s0] = forward(m, in, grid);
  auto [v1, s1] = forward(m, pin, grid);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 3; ++j)
      CHECK(v1.at(perm[i], j) == doctest::Approx(v0.at(i, j)).epsilon(1e-9));
    CHECK(s1.at(perm[i], 0) == doctest::Approx(s0.at(i, 0)).epsilon(1e-9));
  }
}

// err(R) = |f(Rx) - R f(x)| / |f(x)| with Frobenius norms over the full
// vector readout, one scalar per (graph, R) trial.
TEST_CASE("fixed grid equivariance error is small and improves with n_ori") {
  ToyModel m(32, 2024);
  Rng rng(314);
  std::vector<double> med;
  for (int n_ori : {8, 16, 24}) {
    SphereGrid grid = make_sphere_grid(n_ori);
    std::vector<double> errs;
    for (int trial = 0; trial < 100; ++trial) {
      ToyInput in = random_input(7, rng);
      const Quat R = random_rotation(rng);
      auto [v0, s0] = forward(m, in, grid);
      auto [v1, s1] = forward(m, rotate_input(in, R), grid);
      double num = 0, den = 0;
      for (int64_t i = 0; i < v0.rows(); ++i) {
        const Vec3 a{v0.at(i, 0), v0.at(i, 1), v0.at(i, 2)};
        const Vec3 b{v1.at(i, 0), v1.at(i, 1), v1.at(i, 2)};
        num += (b - R.rotate(a)).norm2();
        den += a.norm2();
      }
      errs.push_back(std::sqrt(num) / std::max(1e-12, std::sqrt(den)));
    }
    med.push_back(median(errs));
  }
  printf("fixed-grid medians: n8=%.4f n16=%.4f n24=%.4f\n", med[0], med[1], med[2]);
  CHECK(med[1] <= 0.05);
  CHECK(med[1] <= med[0] + 1e-12);
  CHECK(med[2] <= med[1] + 1e-12);
}

TEST_SUITE_END();
