#include "hepi/features.hpp"

#include <algorithm>
#include <numeric>

#include "hepi/tensor.hpp"

namespace hepi {

namespace {

Tensor one_hot_rows(int n, int col) {
  Tensor t = Tensor::zeros(n, TaskFeatureSpec::scalar_w);
  for (int i = 0; i < n; ++i) t.at(i, col) = 1.0;
  return t;
}

// Rigid-body point velocity at a world offset r from the center.
Vec3 point_velocity(const Vec3& v, const Vec3& w, const Vec3& r) {
  return v + w.cross(r);
}

}  // namespace

int TaskFeatureSpec::obj_vec_n(FeatureRole role) const {
  if (role == FeatureRole::critic && critic_absolute)
    return 2 + (obj_has_v ? 1 : 0) + 1;  // p, v, t_abs, i_abs
  return 1 + (obj_has_v ? 1 : 0) + 1 + (obj_has_d_initial ? 1 : 0);
}

int TaskFeatureSpec::act_vec_n() const { return 2 + (act_has_w ? 1 : 0); }

TaskFeatureSpec task_feature_spec(Task t) {
  TaskFeatureSpec s;
  switch (t) {
    case Task::sliding:
    case Task::insertion:
      s.act_has_w = true;
      break;
    case Task::pushing:
      s.act_has_w = true;
      s.obj_has_v = true;
      break;
    case Task::two_agents:
      break;
    case Task::rope_closing:
    case Task::rope_shaping:
      s.obj_has_v = true;
      break;
    case Task::cloth_hanging:
      s.obj_has_v = true;
      s.obj_has_d_initial = true;
      s.critic_absolute = true;
      s.knn_obj = 0;  // complete graph over the boundary particles
      break;
  }
  return s;
}

ActionSpec task_action_spec(Task t) {
  ActionSpec a;
  switch (t) {
    case Task::sliding:
      a = {2, true, true, 1.0};
      break;
    case Task::pushing:
      a = {1, false, true, 1.0};
      break;
    case Task::insertion:
      a = {2, true, false, 1.0};
      break;
    case Task::two_agents:
      a = {1, false, false, 1.0};
      break;
    case Task::rope_closing:
    case Task::rope_shaping:
      a = {1, false, true, 1.0};
      break;
    case Task::cloth_hanging:
      a = {1, false, false, 1.0};
      break;
  }
  return a;
}

HeteroGeoGraph assemble_features(Task task, const EnvState& s, FeatureRole role,
                                 const NoiseSpec& noise) {
  if (s.task != task)
    throw NumericsError("assemble_features: state belongs to another task");
  if (noise.pos_sigma < 0.0 || noise.vel_sigma < 0.0)
    throw NumericsError("assemble_features: negative noise sigma");
  if ((noise.pos_sigma > 0.0 || noise.vel_sigma > 0.0) && noise.rng == nullptr)
    throw NumericsError("assemble_features: noise requires an rng");

  const TaskFeatureSpec spec = task_feature_spec(task);
  const bool deformable = task == Task::rope_closing ||
                          task == Task::rope_shaping ||
                          task == Task::cloth_hanging;

  // scene frame: actuator centroid at the origin, fixed task scale
  Vec3 c{0, 0, 0};
  for (const auto& p : s.act_pos) c += p * (1.0 / s.act_pos.size());
  const double ps = 1.0 / spec.pos_scale, vs = 1.0 / spec.vel_scale;
  auto norm_p = [&](const Vec3& p) { return (p - c) * ps; };
  auto norm_v = [&](const Vec3& v) { return v * vs; };

  // raw object nodes in world coordinates, plus per-node target points
  std::vector<Vec3> opos, ovel, otarget, oinitial;
  if (!deformable) {
    const std::vector<Vec3> kw = s.keypoints_world();
    opos = kw;
    for (size_t i = 0; i < kw.size(); ++i) {
      ovel.push_back(point_velocity(s.obj_lin_vel, s.obj_ang_vel,
                                    kw[i] - s.obj_pos));
      otarget.push_back(s.goal_pos + s.goal_rot.rotate(s.keypoints_body[i]));
    }
  } else {
    std::vector<int> keep(s.msd.pos.size());
    std::iota(keep.begin(), keep.end(), 0);
    if (task == Task::cloth_hanging && role == FeatureRole::policy) {
      // the policy only looks at the particles ringing the hole
      Vec3 hc{0, 0, 0};
      for (int idx : s.hole_boundary)
        hc += s.msd.pos[idx] * (1.0 / s.hole_boundary.size());
      std::stable_sort(keep.begin(), keep.end(), [&](int a, int b) {
        return (s.msd.pos[a] - hc).norm2() < (s.msd.pos[b] - hc).norm2();
      });
      const int k = std::min<int>(spec.cloth_policy_k,
                                  static_cast<int>(keep.size()));
      keep.resize(k);
      std::sort(keep.begin(), keep.end());
    }
    for (int idx : keep) {
      opos.push_back(s.msd.pos[idx]);
      ovel.push_back(s.msd.vel[idx]);
      if (task == Task::rope_shaping)
        otarget.push_back(s.target_points[idx]);
      else
        otarget.push_back(s.hanger_center);
      if (spec.obj_has_d_initial || spec.critic_absolute)
        oinitial.push_back(s.initial_points[idx]);
    }
  }

  HeteroGeoGraph g;
  const int n_obj = static_cast<int>(opos.size());
  const int n_act = s.n_act;

  g.obj.pos.reserve(n_obj);
  for (const auto& p : opos) g.obj.pos.push_back(norm_p(p));
  for (const auto& v : ovel) g.obj.vel.push_back(norm_v(v));
  g.obj.scalars = one_hot_rows(n_obj, 0);

  g.act.pos.reserve(n_act);
  for (const auto& p : s.act_pos) g.act.pos.push_back(norm_p(p));
  for (const auto& v : s.act_vel) g.act.vel.push_back(norm_v(v));
  g.act.scalars = one_hot_rows(n_act, 1);

  // training noise perturbs the normalized object geometry before any
  // derived attribute or edge sees it
  if (noise.pos_sigma > 0.0 || noise.vel_sigma > 0.0) {
    for (auto& p : g.obj.pos) {
      p.x += noise.pos_sigma * noise.rng->normal();
      p.y += noise.pos_sigma * noise.rng->normal();
      p.z += noise.pos_sigma * noise.rng->normal();
    }
    for (auto& v : g.obj.vel) {
      v.x += noise.vel_sigma * noise.rng->normal();
      v.y += noise.vel_sigma * noise.rng->normal();
      v.z += noise.vel_sigma * noise.rng->normal();
    }
  }

  g.obj.vectors.emplace_back("p", vec3_tensor(g.obj.pos));
  if (spec.obj_has_v) g.obj.vectors.emplace_back("v", vec3_tensor(g.obj.vel));
  if (role == FeatureRole::critic && spec.critic_absolute) {
    std::vector<Vec3> tabs, iabs;
    for (int i = 0; i < n_obj; ++i) {
      tabs.push_back(norm_p(otarget[i]));
      iabs.push_back(norm_p(oinitial[i]));
    }
    g.obj.vectors.emplace_back("t_abs", vec3_tensor(tabs));
    g.obj.vectors.emplace_back("i_abs", vec3_tensor(iabs));
  } else {
    std::vector<Vec3> dt;
    for (int i = 0; i < n_obj; ++i)
      dt.push_back(norm_p(otarget[i]) - g.obj.pos[i]);
    g.obj.vectors.emplace_back("d_target", vec3_tensor(dt));
    if (spec.obj_has_d_initial) {
      std::vector<Vec3> di;
      for (int i = 0; i < n_obj; ++i)
        di.push_back(norm_p(oinitial[i]) - g.obj.pos[i]);
      g.obj.vectors.emplace_back("d_initial", vec3_tensor(di));
    }
  }

  g.act.vectors.emplace_back("p", vec3_tensor(g.act.pos));
  g.act.vectors.emplace_back("v", vec3_tensor(g.act.vel));
  if (spec.act_has_w) g.act.vectors.emplace_back("w", vec3_tensor(s.act_ang));

  // the critic pools rows without message passing, so it needs no edges
  if (role == FeatureRole::policy) {
    if (n_obj >= 2) {
      const int k = spec.knn_obj > 0 ? std::min(spec.knn_obj, n_obj - 1) : 0;
      g.e_oo = k > 0 ? build_knn_edges(g.obj.pos, k) : build_complete_edges(n_obj);
    }
    g.e_aa = build_complete_edges(n_act);
    g.e_oa = build_bipartite_complete(n_obj, n_act);
  }
  return g;
}

Tensor critic_rows(const GraphBatch& b, std::vector<int>& ids) {
  const int n = b.n_obj() + b.n_act();
  const int64_t sw = b.uni_scalars.cols();
  const int64_t width = sw + 3 * static_cast<int64_t>(b.uni_vectors.size());
  Tensor rows = Tensor::zeros(n, width);
  for (int i = 0; i < n; ++i) {
    for (int64_t j = 0; j < sw; ++j) rows.at(i, j) = b.uni_scalars.at(i, j);
    for (size_t v = 0; v < b.uni_vectors.size(); ++v)
      for (int64_t j = 0; j < 3; ++j)
        rows.at(i, sw + 3 * v + j) = b.uni_vectors[v].at(i, j);
  }
  ids.clear();
  ids.insert(ids.end(), b.obj_graph.begin(), b.obj_graph.end());
  ids.insert(ids.end(), b.act_graph.begin(), b.act_graph.end());
  return rows;
}

int64_t critic_row_width(Task t) {
  const TaskFeatureSpec spec = task_feature_spec(t);
  // union of object and actuator vector names
  int names = 2;  // p and v are always present on some set
  if (spec.act_has_w) ++names;
  if (spec.critic_absolute)
    names += 2;  // t_abs, i_abs
  else
    names += 1 + (spec.obj_has_d_initial ? 1 : 0);  // d_target, d_initial
  return TaskFeatureSpec::scalar_w + 3 * names;
}

std::vector<Vec3> decode_origins(const EnvState& s) {
  Vec3 o;
  if (s.task == Task::rope_closing || s.task == Task::rope_shaping ||
      s.task == Task::cloth_hanging) {
    Vec3 cen{0, 0, 0};
    for (const auto& p : s.msd.pos) cen += p * (1.0 / s.msd.pos.size());
    o = cen;
  } else {
    o = s.obj_pos;
  }
  return std::vector<Vec3>(s.act_pos.size(), o);
}

}  // namespace hepi
