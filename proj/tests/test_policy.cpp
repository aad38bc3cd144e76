#include <cmath>

#include "doctest.h"
#include "hepi/policy.hpp"
#include "test_support.hpp"

using namespace hepi;
using test::random_tensor;

namespace {

constexpr double kLn2Pi = 1.8378770664093453;

HeteroGeoGraph policy_graph(int n_obj, int n_act, Rng& rng) {
  HeteroGeoGraph g;
  for (int i = 0; i < n_obj; ++i)
    g.obj.pos.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  for (int i = 0; i < n_act; ++i)
    g.act.pos.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  g.obj.scalars = random_tensor(n_obj, 2, rng);
  g.act.scalars = random_tensor(n_act, 2, rng);
  g.obj.vectors.emplace_back("vel", random_tensor(n_obj, 3, rng));
  g.obj.vectors.emplace_back("d_target", random_tensor(n_obj, 3, rng));
  g.act.vectors.emplace_back("vel", random_tensor(n_act, 3, rng));
  g.act.vectors.emplace_back("d_target", random_tensor(n_act, 3, rng));
  g.e_oo = n_obj >= 2 ? build_knn_edges(g.obj.pos, std::min(3, n_obj - 1)) : EdgeList{};
  g.e_aa = n_act >= 2 ? build_complete_edges(n_act) : EdgeList{};
  g.e_oa = build_bipartite_complete(n_obj, n_act);
  return g;
}

// Graph copies alias tensor storage; tests that perturb a copy need fresh
// buffers.
HeteroGeoGraph deep_copy(const HeteroGeoGraph& g) {
  HeteroGeoGraph out = g;
  out.obj.scalars = g.obj.scalars.clone();
  out.act.scalars = g.act.scalars.clone();
  for (auto& [name, t] : out.obj.vectors) t = t.clone();
  for (auto& [name, t] : out.act.vectors) t = t.clone();
  return out;
}

HeteroGeoGraph rotate_graph(const HeteroGeoGraph& g, const Quat& R) {
  HeteroGeoGraph out = deep_copy(g);
  for (auto& p : out.obj.pos) p = R.rotate(p);
  for (auto& p : out.act.pos) p = R.rotate(p);
  for (auto* set : {&out.obj, &out.act})
    for (auto& [name, t] : set->vectors)
      for (int64_t i = 0; i < t.rows(); ++i) {
        const Vec3 w = R.rotate({t.at(i, 0), t.at(i, 1), t.at(i, 2)});
        t.at(i, 0) = w.x;
        t.at(i, 1) = w.y;
        t.at(i, 2) = w.z;
      }
  return out;
}

HeteroGeoGraph translate_graph(const HeteroGeoGraph& g, const Vec3& t) {
  HeteroGeoGraph out = g;
  for (auto& p : out.obj.pos) p += t;
  for (auto& p : out.act.pos) p += t;
  return out;
}

PolicyConfig small_config(PolicyVariant variant, int n_slots, bool planar) {
  PolicyConfig cfg;
  cfg.variant = variant;
  cfg.channels = 8;
  cfg.n_ori = 8;
  cfg.kernel_hidden = {16};
  cfg.action.n_slots = n_slots;
  cfg.action.angular = n_slots > 1;
  cfg.action.planar = planar;
  cfg.obj_scalar_w = 2;
  cfg.act_scalar_w = 2;
  cfg.obj_vec_n = 2;
  cfg.act_vec_n = 2;
  return cfg;
}

// Rotates each 3-vector slot of a [N, 3*slots] row block.
Tensor rotate_slots(const Tensor& a, const Quat& R) {
  Tensor out = a.clone();
  for (int64_t i = 0; i < a.rows(); ++i)
    for (int64_t s = 0; s < a.cols() / 3; ++s) {
      const Vec3 w = R.rotate({a.at(i, 3 * s), a.at(i, 3 * s + 1), a.at(i, 3 * s + 2)});
      out.at(i, 3 * s) = w.x;
      out.at(i, 3 * s + 1) = w.y;
      out.at(i, 3 * s + 2) = w.z;
    }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("policy");

TEST_CASE("variant names round-trip") {
  for (auto v : {PolicyVariant::hepi, PolicyVariant::vnlocal, PolicyVariant::homogeneous})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("mlp"), NumericsError);
}

TEST_CASE("bipartite knn selection, ordering, and errors") {
  std::vector<Vec3> obj{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  std::vector<int> obj_g{0, 0, 0};
  std::vector<Vec3> act{{0.9, 0, 0}};
  std::vector<int> act_g{0};

  CHECK(build_bipartite_knn(obj, obj_g, act, act_g, 1) == EdgeList{{1, 0}});
  CHECK(build_bipartite_knn(obj, obj_g, act, act_g, 2) == EdgeList{{0, 0}, {1, 0}});
  CHECK_THROWS_AS(build_bipartite_knn(obj, obj_g, act, act_g, 4), NumericsError);
  CHECK_THROWS_AS(build_bipartite_knn(obj, obj_g, act, act_g, 0), NumericsError);

  // ties go to the lower object index
  std::vector<Vec3> sym{{-1, 0, 0}, {1, 0, 0}};
  CHECK(build_bipartite_knn(sym, {0, 0}, {{0, 0, 0}}, {0}, 1) == EdgeList{{0, 0}});

  // actuators only see objects from their own graph
  std::vector<Vec3> obj2{{0, 0, 0}, {0.01, 0, 0}};
  EdgeList cross = build_bipartite_knn(obj2, {0, 1}, {{0, 0, 0}, {0, 0, 0}}, {0, 1}, 1);
  CHECK(cross == EdgeList{{0, 0}, {1, 1}});

  // k = n_obj reproduces the batched complete bipartite list
  Rng rng(7);
  HeteroGeoGraph a = policy_graph(4, 2, rng);
  HeteroGeoGraph b = policy_graph(3, 1, rng);
  GraphBatch batch = batch_graphs({a, b});
  EdgeList full = build_bipartite_knn(batch.obj_pos, batch.obj_graph,
                                      batch.act_pos, batch.act_graph, 3);
  EdgeList part;  // graph a contributes only 3 of its 4 objects per actuator
  for (auto [s, d] : full) part.emplace_back(s, d);
  CHECK(part.size() == 3u * 3u);
  EdgeList knn4a = build_bipartite_knn(
      {a.obj.pos}, {0, 0, 0, 0}, {a.act.pos}, {0, 0}, 4);
  CHECK(knn4a == a.e_oa);
}

TEST_CASE("zero heads give zero mean and the configured init sigma") {
  Rng rng(3);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 2, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  for (auto* h : {&m.head_c, &m.head_v, &m.head_s})
    for (int64_t i = 0; i < h->numel(); ++i) h->data()[i] = 0.0;

  GraphBatch batch = batch_graphs({policy_graph(5, 2, rng)});
  Tape tape;
  PolicyOutput out = m.forward(batch, &tape);
  CHECK(out.mu.rows() == 2);
  CHECK(out.mu.cols() == 6);
  for (int64_t i = 0; i < out.mu.numel(); ++i) CHECK(out.mu.data()[i] == 0.0);
  for (int64_t i = 0; i < out.sigma.numel(); ++i)
    CHECK(out.sigma.data()[i] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("mean rotates with the scene, sigma and log density do not") {
  Rng rng(17);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 2, false);
  PolicyModel m = PolicyModel::create(cfg, rng);

  double worst_mu = 0.0, worst_sig = 0.0, worst_lp = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    HeteroGeoGraph g = policy_graph(6, 2, rng);
    const Quat R = random_rotation(rng);
    GraphBatch batch = batch_graphs({g});
    GraphBatch rbatch = batch_graphs({rotate_graph(g, R)});

    PolicyModel mr = m;
    mr.grid = m.grid.rotated(R);

    Tape t1, t2;
    PolicyOutput a = m.forward(batch, &t1);
    PolicyOutput b = mr.forward(rbatch, &t2);

    Tensor expect = rotate_slots(a.mu, R);
    for (int64_t i = 0; i < a.mu.numel(); ++i)
      worst_mu = std::max(worst_mu, std::fabs(b.mu.data()[i] - expect.data()[i]));
    for (int64_t i = 0; i < a.sigma.numel(); ++i)
      worst_sig = std::max(worst_sig, std::fabs(b.sigma.data()[i] - a.sigma.data()[i]));

    Tensor act = random_tensor(2, 6, rng);
    Tensor lp_a = policy_log_prob(a, act, &t1);
    Tensor lp_b = policy_log_prob(b, rotate_slots(act, R), &t2);
    worst_lp = std::max(worst_lp, std::fabs(lp_a.item() - lp_b.item()));
  }
  CAPTURE(worst_mu);
  CAPTURE(worst_sig);
  CAPTURE(worst_lp);
  CHECK(worst_mu <= 1e-9);
  CHECK(worst_sig <= 1e-9);
  CHECK(worst_lp <= 1e-9);
}

TEST_CASE("planar policy is equivariant under yaw rotations") {
  Rng rng(29);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 2, true);
  PolicyModel m = PolicyModel::create(cfg, rng);

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    HeteroGeoGraph g = policy_graph(5, 1, rng);
    const Quat R = Quat::from_yaw(rng.uniform(-3.1, 3.1));
    Tape t1, t2;
    PolicyModel mr = m;
    mr.grid = m.grid.rotated(R);
    PolicyOutput a = m.forward(batch_graphs({g}), &t1);
    PolicyOutput b = mr.forward(batch_graphs({rotate_graph(g, R)}), &t2);
    Tensor expect = rotate_slots(a.mu, R);
    for (int64_t i = 0; i < a.mu.numel(); ++i)
      worst = std::max(worst, std::fabs(b.mu.data()[i] - expect.data()[i]));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("translating the scene leaves the policy unchanged") {
  Rng rng(31);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 2, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  HeteroGeoGraph g = policy_graph(6, 2, rng);

  Tape t1, t2;
  PolicyOutput a = m.forward(batch_graphs({g}), &t1);
  PolicyOutput b = m.forward(batch_graphs({translate_graph(g, {3.5, -2.0, 7.25})}), &t2);
  for (int64_t i = 0; i < a.mu.numel(); ++i)
    CHECK(std::fabs(a.mu.data()[i] - b.mu.data()[i]) <= 1e-9);
  for (int64_t i = 0; i < a.sigma.numel(); ++i)
    CHECK(std::fabs(a.sigma.data()[i] - b.sigma.data()[i]) <= 1e-9);
}

TEST_CASE("local variant with full neighborhoods reproduces the reference forward") {
  Rng rng(41);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 2, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  // both graphs need the same object count so a single k covers them
  GraphBatch batch = batch_graphs({policy_graph(4, 2, rng), policy_graph(4, 1, rng)});

  Tape t1, t2;
  PolicyOutput ref = m.hepi_forward(batch, &t1);
  PolicyOutput loc = m.vnlocal_forward(batch, 4, 1, &t2);
  for (int64_t i = 0; i < ref.mu.numel(); ++i)
    CHECK(ref.mu.data()[i] == loc.mu.data()[i]);
  for (int64_t i = 0; i < ref.sigma.numel(); ++i)
    CHECK(ref.sigma.data()[i] == loc.sigma.data()[i]);
}

TEST_CASE("local variant with k=1 and no object rounds sees only the nearest object") {
  Rng rng(43);
  PolicyConfig cfg = small_config(PolicyVariant::vnlocal, 1, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  HeteroGeoGraph g = policy_graph(5, 1, rng);

  int nearest = 0;
  double best = 1e300;
  for (int i = 0; i < 5; ++i) {
    const double d = (g.obj.pos[i] - g.act.pos[0]).norm2();
    if (d < best) {
      best = d;
      nearest = i;
    }
  }

  Tape t0;
  PolicyOutput base = m.vnlocal_forward(batch_graphs({g}), 1, 0, &t0);

  for (int u = 0; u < 5; ++u) {
    HeteroGeoGraph pert = deep_copy(g);
    pert.obj.vectors[0].second.at(u, 0) += 1e-3;
    pert.obj.scalars.at(u, 0) += 1e-3;
    Tape tp;
    PolicyOutput out = m.vnlocal_forward(batch_graphs({pert}), 1, 0, &tp);
    double diff = 0.0;
    for (int64_t i = 0; i < out.mu.numel(); ++i)
      diff = std::max(diff, std::fabs(out.mu.data()[i] - base.mu.data()[i]));
    if (u == nearest)
      CHECK(diff > 1e-8);
    else
      CHECK(diff <= 1e-12);
  }
}

TEST_CASE("homogeneous variant ignores object ordering") {
  Rng rng(47);
  PolicyConfig cfg = small_config(PolicyVariant::homogeneous, 1, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  HeteroGeoGraph g = policy_graph(5, 2, rng);

  HeteroGeoGraph perm = g;
  const std::vector<int> order{3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) {
    perm.obj.pos[i] = g.obj.pos[order[i]];
    for (int64_t c = 0; c < g.obj.scalars.cols(); ++c)
      perm.obj.scalars.at(i, c) = g.obj.scalars.at(order[i], c);
    for (size_t a = 0; a < g.obj.vectors.size(); ++a)
      for (int64_t c = 0; c < 3; ++c)
        perm.obj.vectors[a].second.at(i, c) = g.obj.vectors[a].second.at(order[i], c);
  }
  perm.e_oo = build_knn_edges(perm.obj.pos, 3);
  perm.e_oa = build_bipartite_complete(5, 2);

  Tape t1, t2;
  PolicyOutput a = m.forward(batch_graphs({g}), &t1);
  PolicyOutput b = m.forward(batch_graphs({perm}), &t2);
  for (int64_t i = 0; i < a.mu.numel(); ++i)
    CHECK(std::fabs(a.mu.data()[i] - b.mu.data()[i]) <= 1e-9);
}

TEST_CASE("angular decode matches the lever-arm formula") {
  ActionSpec spec;
  spec.n_slots = 2;
  spec.angular = true;
  spec.clamp = 10.0;

  Tensor slots(1, 6);
  slots.at(0, 3) = 0.0;
  slots.at(0, 4) = 1.0;
  slots.at(0, 5) = 0.0;
  auto cmds = decode_action(spec, slots, {{1, 0, 0}}, {{0, 0, 0}});
  CHECK(cmds[0].w.x == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(cmds[0].w.y == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(cmds[0].w.z == doctest::Approx(1.0).epsilon(1e-14));

  // v parallel to the lever arm produces no rotation
  Tensor par(1, 6);
  par.at(0, 3) = 2.0;
  auto cpar = decode_action(spec, par, {{1, 0, 0}}, {{0, 0, 0}});
  CHECK(cpar[0].w.norm() == 0.0);

  // zero lever arm produces no rotation
  auto czero = decode_action(spec, slots, {{0, 0, 0}}, {{0, 0, 0}});
  CHECK(czero[0].w.norm() == 0.0);

  // rotating the scene rotates the decoded command
  Rng rng(53);
  for (int trial = 0; trial < 5; ++trial) {
    const Quat R = random_rotation(rng);
    Tensor raw = random_tensor(1, 6, rng);
    Vec3 act{rng.normal(), rng.normal(), rng.normal()};
    Vec3 origin{rng.normal(), rng.normal(), rng.normal()};
    auto base = decode_action(spec, raw, {act}, {origin});
    auto rot = decode_action(spec, rotate_slots(raw, R), {R.rotate(act)}, {R.rotate(origin)});
    CHECK((rot[0].v - R.rotate(base[0].v)).norm() <= 1e-12);
    CHECK((rot[0].w - R.rotate(base[0].w)).norm() <= 1e-12);
  }

  // norm clamp applies to both commands
  ActionSpec tight = spec;
  tight.clamp = 0.25;
  Tensor big = Tensor::full(1, 6, 50.0);
  auto cbig = decode_action(tight, big, {{1, 0, 0}}, {{0, 0, 0}});
  CHECK(cbig[0].v.norm() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cbig[0].w.norm() <= 0.25 + 1e-12);

  // planar mask zeroes z before clamping
  ActionSpec planar = spec;
  planar.planar = true;
  Tensor up = Tensor::full(1, 6, 0.0);
  up.at(0, 2) = 5.0;
  up.at(0, 0) = 0.1;
  auto cup = decode_action(planar, up, {{1, 0, 0}}, {{0, 0, 0}});
  CHECK(cup[0].v.z == 0.0);
  CHECK(cup[0].v.x == doctest::Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(decode_action(spec, Tensor(1, 3), {{0, 0, 0}}, {{0, 0, 0}}),
                  NumericsError);
}

TEST_CASE("log density matches the closed form") {
  Rng rng(59);
  PolicyOutput out;
  out.n_slots = 2;
  out.planar = true;
  out.n_graphs = 2;
  out.act_graph = {0, 0, 1};
  out.mu = random_tensor(3, 6, rng);
  out.sigma = Tensor(3, 2);
  for (int64_t i = 0; i < out.sigma.numel(); ++i)
    out.sigma.data()[i] = rng.uniform(0.2, 1.5);
  for (int64_t i = 0; i < 3; ++i) {
    out.mu.at(i, 2) = 0.0;
    out.mu.at(i, 5) = 0.0;
  }

  Tensor act = random_tensor(3, 6, rng);
  for (int64_t i = 0; i < 3; ++i) {
    act.at(i, 2) = 0.0;
    act.at(i, 5) = 0.0;
  }

  Tape tape;
  Tensor lp = policy_log_prob(out, act, &tape);
  const double d = 2.0;
  std::vector<double> expect(2, 0.0);
  for (int64_t i = 0; i < 3; ++i)
    for (int s = 0; s < 2; ++s) {
      double q = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double diff = act.at(i, 3 * s + j) - out.mu.at(i, 3 * s + j);
        q += diff * diff;
      }
      const double sig = out.sigma.at(i, s);
      expect[out.act_graph[i]] -=
          q / (2.0 * sig * sig) + d * std::log(sig) + 0.5 * d * kLn2Pi;
    }
  CHECK(lp.rows() == 2);
  CHECK(lp.at(0, 0) == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(lp.at(1, 0) == doctest::Approx(expect[1]).epsilon(1e-12));

  // at the mean only the normalizer remains
  Tape t2;
  Tensor lp_mu = policy_log_prob(out, out.mu, &t2);
  double norm0 = 0.0;
  for (int64_t i = 0; i < 2; ++i)
    for (int s = 0; s < 2; ++s)
      norm0 -= d * std::log(out.sigma.at(i, s)) + 0.5 * d * kLn2Pi;
  CHECK(lp_mu.at(0, 0) == doctest::Approx(norm0).epsilon(1e-12));

  Tensor bad = act;
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(policy_log_prob(out, bad, &tape), NumericsError);
}

TEST_CASE("entropy closed form grows with sigma") {
  PolicyOutput out;
  out.n_slots = 1;
  out.planar = false;
  out.n_graphs = 1;
  out.act_graph = {0, 0};
  out.mu = Tensor(2, 3);
  out.sigma = Tensor::full(2, 1, 0.3);

  Tape tape;
  const double h = policy_entropy(out, &tape).item();
  const double expect = 2.0 * 3.0 * (std::log(0.3) + 0.5 * (1.0 + kLn2Pi));
  CHECK(h == doctest::Approx(expect).epsilon(1e-12));

  out.sigma = Tensor::full(2, 1, 0.6);
  Tape t2;
  CHECK(policy_entropy(out, &t2).item() > h);
}

TEST_CASE("sampling respects the mean, the spread, and the planar mask") {
  Rng rng(61);
  PolicyOutput out;
  out.n_slots = 1;
  out.planar = true;
  out.n_graphs = 1;
  out.act_graph = {0};
  out.mu = Tensor(1, 3);
  out.mu.at(0, 0) = 1.0;
  out.mu.at(0, 1) = -2.0;
  out.sigma = Tensor::full(1, 1, 0.5);

  const int n = 20000;
  double sx = 0.0, sy = 0.0, sxx = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor a = policy_sample(out, rng);
    CHECK(a.at(0, 2) == 0.0);
    sx += a.at(0, 0);
    sy += a.at(0, 1);
    sxx += (a.at(0, 0) - 1.0) * (a.at(0, 0) - 1.0);
  }
  const double tol = 3.0 * 0.5 / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(sx / n - 1.0) <= tol);
  CHECK(std::fabs(sy / n + 2.0) <= tol);
  CHECK(std::sqrt(sxx / n) == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("sigma honors its clamp range") {
  Rng rng(67);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 1, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  for (int64_t i = 0; i < m.head_s.numel(); ++i) m.head_s.data()[i] = 0.0;
  GraphBatch batch = batch_graphs({policy_graph(4, 1, rng)});

  m.bias_s.at(0, 0) = 10.0;
  Tape t1;
  CHECK(m.forward(batch, &t1).sigma.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

  m.bias_s.at(0, 0) = -20.0;
  Tape t2;
  CHECK(m.forward(batch, &t2).sigma.at(0, 0) == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("forward rejects actuator-free batches") {
  Rng rng(71);
  PolicyConfig cfg = small_config(PolicyVariant::hepi, 1, false);
  PolicyModel m = PolicyModel::create(cfg, rng);
  GraphBatch batch = batch_graphs({policy_graph(4, 1, rng)});
  batch.e_oa.clear();
  Tape tape;
  CHECK_THROWS_AS(m.hepi_forward(batch, &tape), NumericsError);
}

TEST_SUITE_END();
