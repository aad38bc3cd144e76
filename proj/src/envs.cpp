#include "hepi/envs.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hepi/tensor.hpp"
#include "json.hpp"

namespace hepi {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

Vec3 clamp_norm(const Vec3& v, double cap) {
  const double n = v.norm();
  return n > cap ? v * (cap / n) : v;
}

// ---------------------------------------------------------------- shapes --

struct ShapeDef {
  std::vector<Vec3> outline;  // closed polygon, traversed in order
  int n_low = 0;
  int n_high = 0;
};

std::vector<Vec3> heart_curve() {
  std::vector<Vec3> pts;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * i / n;
    const double x = 16.0 * std::pow(std::sin(t), 3);
    const double y = 13.0 * std::cos(t) - 5.0 * std::cos(2 * t) -
                     2.0 * std::cos(3 * t) - std::cos(4 * t);
    pts.push_back({x / 16.0, y / 16.0, 0.0});
  }
  return pts;
}

std::vector<Vec3> regular_polygon(int k, double phase) {
  std::vector<Vec3> pts;
  for (int i = 0; i < k; ++i) {
    const double a = phase + 2.0 * kPi * i / k;
    pts.push_back({std::cos(a), std::sin(a), 0.0});
  }
  return pts;
}

std::vector<Vec3> star_polygon() {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) {
    const double a = kPi / 2.0 + kPi * i / 5.0;
    const double r = (i % 2 == 0) ? 1.0 : 0.45;
    pts.push_back({r * std::cos(a), r * std::sin(a), 0.0});
  }
  return pts;
}

const std::map<std::string, ShapeDef>& shape_table() {
  static const std::map<std::string, ShapeDef> table = [] {
    std::map<std::string, ShapeDef> m;
    m["triangle"] = {regular_polygon(3, kPi / 2.0), 6, 1128};
    m["heart"] = {heart_curve(), 25, 1170};
    m["diamond"] = {{{1, 0, 0}, {0, 1, 0}, {-1, 0, 0}, {0, -1, 0}}, 8, 736};
    m["pentagon"] = {regular_polygon(5, kPi / 2.0), 10, 1032};
    m["hexagon"] = {regular_polygon(6, 0.0), 12, 1120};
    m["plus"] = {{{1, 1.0 / 3, 0}, {1.0 / 3, 1.0 / 3, 0}, {1.0 / 3, 1, 0},
                  {-1.0 / 3, 1, 0}, {-1.0 / 3, 1.0 / 3, 0}, {-1, 1.0 / 3, 0},
                  {-1, -1.0 / 3, 0}, {-1.0 / 3, -1.0 / 3, 0}, {-1.0 / 3, -1, 0},
                  {1.0 / 3, -1, 0}, {1.0 / 3, -1.0 / 3, 0}, {1, -1.0 / 3, 0}},
                 24, 1224};
    m["star"] = {star_polygon(), 20, 1068};
    m["a_shape"] = {{{-1, -1, 0}, {-0.6, -1, 0}, {-0.45, -0.55, 0},
                     {0.45, -0.55, 0}, {0.6, -1, 0}, {1, -1, 0}, {0.25, 1, 0},
                     {-0.25, 1, 0}},
                    23, 1660};
    m["t_shape"] = {{{1, 0.4, 0}, {1, 1, 0}, {-1, 1, 0}, {-1, 0.4, 0},
                     {-0.25, 0.4, 0}, {-0.25, -1, 0}, {0.25, -1, 0},
                     {0.25, 0.4, 0}},
                    16, 1152};
    m["e_shape"] = {{{1, 1, 0}, {-1, 1, 0}, {-1, -1, 0}, {1, -1, 0},
                     {1, -0.6, 0}, {-0.4, -0.6, 0}, {-0.4, -0.2, 0},
                     {0.6, -0.2, 0}, {0.6, 0.2, 0}, {-0.4, 0.2, 0},
                     {-0.4, 0.6, 0}, {1, 0.6, 0}},
                    24, 1972};
    return m;
  }();
  return table;
}

// Resample a polyline uniformly by arc length. Closed outlines wrap; open
// ones include both endpoints.
std::vector<Vec3> resample_polyline(const std::vector<Vec3>& v, int n,
                                    bool closed) {
  std::vector<double> cum{0.0};
  const int segs = closed ? static_cast<int>(v.size())
                          : static_cast<int>(v.size()) - 1;
  for (int i = 0; i < segs; ++i)
    cum.push_back(cum.back() + (v[(i + 1) % v.size()] - v[i]).norm());
  const double total = cum.back();
  std::vector<Vec3> out;
  out.reserve(n);
  int seg = 0;
  for (int i = 0; i < n; ++i) {
    const double s = closed ? total * i / n : total * i / (n - 1);
    while (seg + 1 < static_cast<int>(cum.size()) - 1 && cum[seg + 1] < s) ++seg;
    while (seg > 0 && cum[seg] > s) --seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 1e-15 ? (s - cum[seg]) / len : 0.0;
    const Vec3 a = v[seg % v.size()], b = v[(seg + 1) % v.size()];
    out.push_back(a + (b - a) * f);
  }
  return out;
}

// -------------------------------------------------------------- sampling --

double uni(Rng& rng, double lo, double hi) { return rng.uniform(lo, hi); }

std::string pick_object(Task task, const EnvConfig& cfg, Rng& rng,
                        const std::vector<std::string>& roster) {
  const std::vector<std::string>& pool = cfg.roster.empty() ? roster : cfg.roster;
  for (const auto& name : pool)
    if (shape_table().find(name) == shape_table().end())
      throw NumericsError("env_reset: unknown object '" + name + "'");
  if (pool.empty()) throw NumericsError("env_reset: empty object roster");
  (void)task;
  return pool[rng.uniform_int(static_cast<uint64_t>(pool.size()))];
}

// Grip the object at half the radius of its first outline point so the
// angular-velocity decoding sees a nonzero lever arm.
Vec3 grip_point(const std::vector<Vec3>& kp) { return kp[0] * 0.5; }

// The two outline points farthest apart, used as rigid attachment sites.
std::pair<int, int> farthest_pair(const std::vector<Vec3>& kp) {
  int bi = 0, bj = 1;
  double best = -1.0;
  for (size_t i = 0; i < kp.size(); ++i)
    for (size_t j = i + 1; j < kp.size(); ++j) {
      const double d = (kp[i] - kp[j]).norm2();
      if (d > best) {
        best = d;
        bi = static_cast<int>(i);
        bj = static_cast<int>(j);
      }
    }
  return {bi, bj};
}

void build_rope(EnvState& s, int n, double yaw) {
  const double length = 1.0;
  const Vec3 dir{std::cos(yaw), std::sin(yaw), 0.0};
  MassSpringSystem& m = s.msd;
  m.pos.clear();
  m.vel.assign(n, {0, 0, 0});
  for (int i = 0; i < n; ++i)
    m.pos.push_back(dir * (length * (i / double(n - 1) - 0.5)));
  m.mass = s.cfg.rope_mass;
  m.planar = true;
  const double rest = length / (n - 1);
  for (int i = 0; i + 1 < n; ++i)
    m.springs.push_back({i, i + 1, rest, s.cfg.stretch_k, s.cfg.stretch_damping});
  for (int i = 0; i + 2 < n; ++i)
    m.bend.push_back({i, i + 2, 2 * rest, s.cfg.bending_k, s.cfg.stretch_damping});
  m.pinned = {0, n - 1};
  s.n_act = 2;
  s.act_pos = {m.pos[0], m.pos[n - 1]};
  s.act_vel.assign(2, {0, 0, 0});
  s.act_ang.assign(2, {0, 0, 0});
}

// W-shaped target polyline with unit arc length, midpoint at the origin.
std::vector<Vec3> w_curve(int n, double yaw) {
  const std::vector<Vec3> verts{{0, 1, 0}, {0.25, 0, 0}, {0.5, 0.6, 0},
                                {0.75, 0, 0}, {1, 1, 0}};
  std::vector<Vec3> pts = resample_polyline(verts, n, false);
  double len = 0.0;
  for (int i = 0; i + 1 < n; ++i) len += (pts[i + 1] - pts[i]).norm();
  const Vec3 mid = (pts.front() + pts.back()) * 0.5;
  const Quat rot = Quat::from_yaw(yaw);
  for (auto& p : pts) p = rot.rotate((p - mid) * (1.0 / len));
  return pts;
}

// 9x9 particle grid with one interior particle removed. Row-major interior
// slots [2,6]x[2,6] provide the 20-entry hole roster.
void build_cloth(EnvState& s, int hole_index, double pitch) {
  const int g = 9;
  const double spacing = 1.0 / (g - 1);
  const int hi = 2 + hole_index / 5;
  const int hj = 2 + hole_index % 5;

  std::vector<int> id(g * g, -1);
  MassSpringSystem& m = s.msd;
  const Quat tilt = Quat::from_axis_angle({0, 1, 0}, pitch);
  const Vec3 base{0, 0, 1};
  int next = 0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      if (i == hi && j == hj) continue;
      id[i * g + j] = next++;
      const Vec3 body{(i - (g - 1) / 2.0) * spacing,
                      (j - (g - 1) / 2.0) * spacing, 0.0};
      m.pos.push_back(base + tilt.rotate(body));
    }
  m.vel.assign(m.pos.size(), {0, 0, 0});
  m.mass = s.cfg.cloth_mass;
  m.gravity = {0, 0, -s.cfg.gravity};

  auto link = [&](int a, int b) {
    if (a < 0 || b < 0) return;
    const double rest = (m.pos[a] - m.pos[b]).norm();
    m.springs.push_back({a, b, rest, s.cfg.cloth_k, s.cfg.cloth_damping});
  };
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const int a = id[i * g + j];
      if (a < 0) continue;
      if (i + 1 < g) link(a, id[(i + 1) * g + j]);
      if (j + 1 < g) link(a, id[i * g + j + 1]);
      if (i + 1 < g && j + 1 < g) link(a, id[(i + 1) * g + j + 1]);
      if (i + 1 < g && j - 1 >= 0) link(a, id[(i + 1) * g + j - 1]);
    }

  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      s.hole_boundary.push_back(id[(hi + di) * g + hj + dj]);
    }

  m.pinned = {id[0], id[g - 1], id[(g - 1) * g], id[g * g - 1]};
  s.n_act = 4;
  s.act_pos.clear();
  for (int p : m.pinned) s.act_pos.push_back(m.pos[p]);
  s.act_vel.assign(4, {0, 0, 0});
  s.act_ang.assign(4, {0, 0, 0});

  s.rest_init.clear();
  for (const auto& sp : m.springs) s.rest_init.push_back(sp.rest);
  s.initial_points = m.pos;
}

// ------------------------------------------------------------- dynamics --

// Convex hull of the xy projection, counter-clockwise (monotone chain).
std::vector<Vec3> convex_hull_xy(std::vector<Vec3> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  auto cross2 = [](const Vec3& o, const Vec3& a, const Vec3& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  const int n = static_cast<int>(pts.size());
  std::vector<Vec3> h(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross2(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (int i = n - 2, lo = k + 1; i >= 0; --i) {
    while (k >= lo && cross2(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

Vec3 closest_on_segment(const Vec3& a, const Vec3& b, const Vec3& p) {
  const Vec3 ab = b - a;
  const double t = ab.norm2() > 1e-18
                       ? std::clamp((p - a).dot(ab) / ab.norm2(), 0.0, 1.0)
                       : 0.0;
  return a + ab * t;
}

bool inside_hull_xy(const std::vector<Vec3>& hull, const Vec3& p) {
  const int n = static_cast<int>(hull.size());
  for (int i = 0; i < n; ++i) {
    const Vec3& a = hull[i];
    const Vec3& b = hull[(i + 1) % n];
    if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0.0) return false;
  }
  return true;
}

void pushing_substep(EnvState& s, const Vec3& v_cmd, double h) {
  s.act_pos[0] += v_cmd * h;
  s.act_vel[0] = v_cmd;

  const std::vector<Vec3> hull = convex_hull_xy(s.keypoints_world());
  const Vec3 p = s.act_pos[0];
  Vec3 closest = hull[0];
  double best = 1e300;
  const int n = static_cast<int>(hull.size());
  for (int i = 0; i < n; ++i) {
    const Vec3 c = closest_on_segment(hull[i], hull[(i + 1) % n], p);
    const double d = (c - p).norm2();
    if (d < best) {
      best = d;
      closest = c;
    }
  }
  const double dist = std::sqrt(best);
  const bool inside = inside_hull_xy(hull, p);
  const double radius = s.cfg.actuator_radius;
  const double depth = inside ? radius + dist : radius - dist;

  Vec3 force{0, 0, 0};
  double torque = 0.0;
  if (depth > 0.0 && dist > 1e-12) {
    const Vec3 u = inside ? (p - closest) * (1.0 / dist)
                          : (closest - p) * (1.0 / dist);
    const Vec3 v_contact =
        s.obj_lin_vel + s.obj_ang_vel.cross(closest - s.obj_pos);
    const double sep_speed = (v_contact - v_cmd).dot(u);
    const double mag =
        std::max(0.0, s.cfg.contact_k * depth - s.cfg.contact_damping * sep_speed);
    force = u * mag;
    torque = (closest - s.obj_pos).cross(force).z;
  }

  double inertia = 0.0;
  for (const auto& kp : s.keypoints_body)
    inertia += kp.norm2() / static_cast<double>(s.keypoints_body.size());
  inertia = std::max(inertia, 1e-6);

  const double decay = 1.0 / (1.0 + s.cfg.body_damping * h);
  s.obj_lin_vel = (s.obj_lin_vel + force * h) * decay;
  s.obj_lin_vel.z = 0.0;
  s.obj_ang_vel = Vec3{0, 0, (s.obj_ang_vel.z + torque / inertia * h) * decay};
  s.obj_pos += s.obj_lin_vel * h;
  s.obj_rot = integrate_quat(s.obj_rot, s.obj_ang_vel, h);
}

void two_agents_substep(EnvState& s, const Vec3& v0, const Vec3& v1, double h) {
  const Vec3 x0 = s.obj_pos + s.obj_rot.rotate(s.attach_body[0]);
  const Vec3 x1 = s.obj_pos + s.obj_rot.rotate(s.attach_body[1]);
  const Vec3 r = x1 - x0;
  const double r2 = std::max(r.norm2(), 1e-12);
  const Vec3 nhat = r * (1.0 / std::sqrt(r2));
  const Vec3 v_rel = v1 - v0;
  const Vec3 v_tan = v_rel - nhat * v_rel.dot(nhat);  // rigid: no stretch
  const Vec3 omega = r.cross(v_tan) * (1.0 / r2);
  const Vec3 v_avg = (v0 + v1) * 0.5;
  const Vec3 mid = (x0 + x1) * 0.5;

  s.obj_pos += (v_avg + omega.cross(s.obj_pos - mid)) * h;
  s.obj_rot = integrate_quat(s.obj_rot, omega, h);
  s.obj_lin_vel = v_avg;
  s.obj_ang_vel = omega;

  for (int i = 0; i < 2; ++i) {
    const Vec3 xi = s.obj_pos + s.obj_rot.rotate(s.attach_body[i]);
    s.act_vel[i] = v_avg + omega.cross(xi - (mid + v_avg * h));
    s.act_pos[i] = xi;
  }
}

}  // namespace

// ----------------------------------------------------------------- names --

Task parse_task(const std::string& name) {
  if (name == "sliding") return Task::sliding;
  if (name == "pushing") return Task::pushing;
  if (name == "insertion") return Task::insertion;
  if (name == "two-agents") return Task::two_agents;
  if (name == "rope-closing") return Task::rope_closing;
  if (name == "rope-shaping") return Task::rope_shaping;
  if (name == "cloth-hanging") return Task::cloth_hanging;
  throw NumericsError("unknown task '" + name + "'");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::sliding: return "sliding";
    case Task::pushing: return "pushing";
    case Task::insertion: return "insertion";
    case Task::two_agents: return "two-agents";
    case Task::rope_closing: return "rope-closing";
    case Task::rope_shaping: return "rope-shaping";
    case Task::cloth_hanging: return "cloth-hanging";
  }
  throw NumericsError("unknown task id");
}

std::vector<Vec3> shape_outline(const std::string& name, bool high_res) {
  const auto it = shape_table().find(name);
  if (it == shape_table().end())
    throw NumericsError("unknown shape '" + name + "'");
  const ShapeDef& def = it->second;
  std::vector<Vec3> pts =
      resample_polyline(def.outline, high_res ? def.n_high : def.n_low, true);
  Vec3 centroid{0, 0, 0};
  for (const auto& p : pts) centroid += p * (1.0 / pts.size());
  double max_r = 0.0;
  for (auto& p : pts) {
    p -= centroid;
    max_r = std::max(max_r, p.norm());
  }
  for (auto& p : pts) p = p * (0.15 / max_r);
  return pts;
}

const std::vector<std::string>& task_roster(Task t) {
  static const std::vector<std::string> all{
      "triangle", "heart", "diamond", "pentagon", "hexagon",
      "plus",     "star",  "a_shape", "t_shape",  "e_shape"};
  static const std::vector<std::string> insertable{
      "triangle", "heart", "diamond", "pentagon",
      "hexagon",  "plus",  "star",    "t_shape"};
  static const std::vector<std::string> rope{"rope"};
  static const std::vector<std::string> cloth{"cloth"};
  switch (t) {
    case Task::sliding:
    case Task::pushing: return all;
    case Task::insertion:
    case Task::two_agents: return insertable;
    case Task::rope_closing:
    case Task::rope_shaping: return rope;
    case Task::cloth_hanging: return cloth;
  }
  throw NumericsError("unknown task id");
}

std::vector<Vec3> EnvState::keypoints_world() const {
  std::vector<Vec3> out;
  out.reserve(keypoints_body.size());
  for (const auto& kp : keypoints_body) out.push_back(obj_pos + obj_rot.rotate(kp));
  return out;
}

// ----------------------------------------------------------------- reset --

EnvState env_reset(Task task, Rng& rng, const EnvConfig& cfg) {
  EnvState s;
  s.task = task;
  s.cfg = cfg;
  s.dt = 0.01;

  const bool deformable = task == Task::rope_closing ||
                          task == Task::rope_shaping ||
                          task == Task::cloth_hanging;
  s.decimation = deformable ? 2 : 4;
  s.horizon = (task == Task::rope_closing || task == Task::rope_shaping) ? 200 : 100;
  if (cfg.horizon > 0) s.horizon = cfg.horizon;

  const double target_yaw_hi = cfg.fixed_target_yaw ? 0.0 : kPi;

  switch (task) {
    case Task::sliding:
    case Task::pushing: {
      const double lim = task == Task::sliding ? 1.0 : 0.5;
      s.planar = true;
      s.has_angular = task == Task::sliding;
      s.scene.object = pick_object(task, cfg, rng, task_roster(task));
      s.keypoints_body = shape_outline(s.scene.object, cfg.high_res);
      const double x = uni(rng, -lim, lim), y = uni(rng, -lim, lim);
      const double yaw = uni(rng, -kPi, kPi);
      const double gyaw = uni(rng, -target_yaw_hi, target_yaw_hi);
      s.obj_pos = {x, y, 0};
      s.obj_rot = Quat::from_yaw(yaw);
      s.goal_pos = {0, 0, 0};
      s.goal_rot = Quat::from_yaw(gyaw);
      s.scene.init_params = {x, y, yaw};
      s.scene.target_params = {gyaw};
      s.n_act = 1;
      if (task == Task::sliding) {
        s.attach_body = {grip_point(s.keypoints_body)};
        s.act_pos = {s.obj_pos + s.obj_rot.rotate(s.attach_body[0])};
      } else {
        const double phi = uni(rng, -kPi, kPi);
        s.act_pos = {s.obj_pos + Vec3{0.35 * std::cos(phi), 0.35 * std::sin(phi), 0}};
        s.scene.init_params.push_back(phi);
      }
      s.act_vel.assign(1, {0, 0, 0});
      s.act_ang.assign(1, {0, 0, 0});
      break;
    }
    case Task::insertion: {
      s.planar = false;
      s.has_angular = true;
      s.scene.object = pick_object(task, cfg, rng, task_roster(task));
      s.keypoints_body = shape_outline(s.scene.object, cfg.high_res);
      const double x = uni(rng, -1, 1), y = uni(rng, -1, 1);
      const double z = uni(rng, 0, 0.5), yaw = uni(rng, -kPi, kPi);
      const double gyaw = uni(rng, -target_yaw_hi, target_yaw_hi);
      s.obj_pos = {x, y, z};
      s.obj_rot = Quat::from_yaw(yaw);
      s.goal_pos = {0, 0, 0};
      s.goal_rot = Quat::from_yaw(gyaw);
      s.scene.init_params = {x, y, z, yaw};
      s.scene.target_params = {gyaw};
      s.n_act = 1;
      s.attach_body = {grip_point(s.keypoints_body)};
      s.act_pos = {s.obj_pos + s.obj_rot.rotate(s.attach_body[0])};
      s.act_vel.assign(1, {0, 0, 0});
      s.act_ang.assign(1, {0, 0, 0});
      break;
    }
    case Task::two_agents: {
      s.planar = false;
      s.has_angular = false;
      s.scene.object = pick_object(task, cfg, rng, task_roster(task));
      s.keypoints_body = shape_outline(s.scene.object, cfg.high_res);
      const double x = uni(rng, 0.25, 0.75), y = uni(rng, -0.75, 0.75);
      const double z = uni(rng, 0.5, 1.25), roll = uni(rng, -kPi, kPi);
      const double pitch = uni(rng, -kPi / 2, 0), yaw = uni(rng, -kPi, kPi);
      s.obj_pos = {x, y, z};
      s.obj_rot = Quat::from_axis_angle({1, 0, 0}, roll);
      s.goal_pos = {0, 0, 0};
      s.goal_rot = Quat::from_yaw(yaw) * Quat::from_axis_angle({0, 1, 0}, pitch);
      s.scene.init_params = {x, y, z, roll};
      s.scene.target_params = {pitch, yaw};
      const auto [i0, i1] = farthest_pair(s.keypoints_body);
      s.attach_body = {s.keypoints_body[i0], s.keypoints_body[i1]};
      s.n_act = 2;
      s.act_pos = {s.obj_pos + s.obj_rot.rotate(s.attach_body[0]),
                   s.obj_pos + s.obj_rot.rotate(s.attach_body[1])};
      s.act_vel.assign(2, {0, 0, 0});
      s.act_ang.assign(2, {0, 0, 0});
      break;
    }
    case Task::rope_closing: {
      s.planar = true;
      s.has_angular = false;
      s.scene.object = "rope";
      const int n = cfg.rope_particles > 0 ? cfg.rope_particles : 40;
      const double yaw = uni(rng, -kPi / 4, kPi / 4);
      build_rope(s, n, yaw);
      // keep the cylinder clear of the straight rope at spawn
      double cx = 0, cy = 0, cyaw = 0;
      for (int tries = 0;; ++tries) {
        if (tries >= 10000)
          throw NumericsError("env_reset: cannot place rope-closing cylinder");
        cx = uni(rng, -0.5, 0.5);
        cy = uni(rng, -0.5, 0.5);
        cyaw = uni(rng, -kPi, kPi);
        double min_d = 1e300;
        for (const auto& p : s.msd.pos)
          min_d = std::min(min_d, std::hypot(p.x - cx, p.y - cy));
        if (min_d > cfg.cylinder_radius + 0.02) break;
      }
      s.hanger_center = {cx, cy, 0};
      s.hanger_axis = {0, 0, 1};
      s.msd.has_cylinder = true;
      s.msd.cyl_center = s.hanger_center;
      s.msd.cyl_radius = cfg.cylinder_radius;
      s.scene.init_params = {yaw};
      s.scene.target_params = {cx, cy, cyaw};
      break;
    }
    case Task::rope_shaping: {
      s.planar = true;
      s.has_angular = false;
      s.scene.object = "rope";
      const int n = cfg.rope_particles > 0 ? cfg.rope_particles : 80;
      const double mag = uni(rng, kPi / 4, kPi / 2);
      const double yaw = rng.uniform_int(2) == 0 ? mag : -mag;
      build_rope(s, n, yaw);
      const double gyaw = uni(rng, -kPi / 2, kPi / 2);
      s.target_points = w_curve(n, gyaw);
      s.target_descriptor = shape_descriptor(s.target_points);
      s.scene.init_params = {yaw};
      s.scene.target_params = {gyaw};
      break;
    }
    case Task::cloth_hanging: {
      s.planar = false;
      s.has_angular = false;
      s.scene.object = "cloth";
      const int hole = cfg.hole_index >= 0
                           ? cfg.hole_index
                           : static_cast<int>(rng.uniform_int(20));
      if (hole >= 20) throw NumericsError("cloth hole index out of range");
      const double pitch = uni(rng, -kPi, kPi);
      build_cloth(s, hole, pitch);
      // keep the hanger clear of the flat cloth at spawn
      double hx = 0, hz = 0, roll = 0, hpitch = 0, hyaw = 0;
      for (int tries = 0;; ++tries) {
        if (tries >= 10000)
          throw NumericsError("env_reset: cannot place cloth hanger");
        hx = uni(rng, -0.5, 0.5);
        hz = uni(rng, -0.5, 0.5);
        roll = uni(rng, -kPi / 4, kPi / 2);
        hpitch = uni(rng, -kPi / 2, kPi / 2);
        hyaw = uni(rng, -kPi, kPi);
        const Quat q = Quat::from_yaw(hyaw) *
                       Quat::from_axis_angle({0, 1, 0}, hpitch) *
                       Quat::from_axis_angle({1, 0, 0}, roll);
        s.hanger_center = {hx, 0, 1.0 + hz};
        s.hanger_axis = q.rotate({0, 1, 0});
        const Vec3 a = s.hanger_center - s.hanger_axis * cfg.hanger_half_len;
        const Vec3 b = s.hanger_center + s.hanger_axis * cfg.hanger_half_len;
        double min_d = 1e300;
        for (const auto& p : s.msd.pos)
          min_d = std::min(min_d, (p - closest_on_segment(a, b, p)).norm());
        if (min_d > cfg.hanger_radius + 0.01) break;
      }
      s.msd.has_capsule = true;
      s.msd.cap_a = s.hanger_center - s.hanger_axis * cfg.hanger_half_len;
      s.msd.cap_b = s.hanger_center + s.hanger_axis * cfg.hanger_half_len;
      s.msd.cap_radius = cfg.hanger_radius;
      s.scene.init_params = {pitch, static_cast<double>(hole)};
      s.scene.target_params = {hx, hz, roll, hpitch, hyaw};
      break;
    }
  }

  s.prev_action.assign(static_cast<size_t>(s.n_act) * (s.has_angular ? 6 : 3), 0.0);
  return s;
}

// --------------------------------------------------------------- dynamics --

void MassSpringSystem::substep(double dt) {
  const int n = static_cast<int>(pos.size());
  std::vector<Vec3> f(n, gravity * mass);
  auto accumulate = [&](const std::vector<SpringEdge>& edges) {
    for (const auto& e : edges) {
      const Vec3 d = pos[e.j] - pos[e.i];
      const double len = d.norm();
      if (len < 1e-12) continue;
      const Vec3 dir = d * (1.0 / len);
      const double rel = (vel[e.j] - vel[e.i]).dot(dir);
      const Vec3 force = dir * (e.k * (len - e.rest) + e.c * rel);
      f[e.i] += force;
      f[e.j] -= force;
    }
  };
  accumulate(springs);
  accumulate(bend);

  std::vector<char> is_pinned(n, 0);
  for (int p : pinned) is_pinned[p] = 1;

  for (int i = 0; i < n; ++i) {
    if (is_pinned[i]) continue;
    vel[i] += f[i] * (dt / mass);
    pos[i] += vel[i] * dt;
    if (planar) {
      pos[i].z = 0.0;
      vel[i].z = 0.0;
    }
    if (has_cylinder) {
      Vec3 d = pos[i] - cyl_center;
      d.z = 0.0;
      const double r = d.norm();
      if (r < cyl_radius && r > 1e-12) {
        const Vec3 out = d * (1.0 / r);
        pos[i] += out * (cyl_radius - r);
        const double inward = vel[i].dot(out);
        if (inward < 0.0) vel[i] -= out * inward;
      }
    }
    if (has_capsule) {
      const Vec3 c = closest_on_segment(cap_a, cap_b, pos[i]);
      const Vec3 d = pos[i] - c;
      const double r = d.norm();
      if (r < cap_radius && r > 1e-12) {
        const Vec3 out = d * (1.0 / r);
        pos[i] += out * (cap_radius - r);
        const double inward = vel[i].dot(out);
        if (inward < 0.0) vel[i] -= out * inward;
      }
    }
  }
}

double MassSpringSystem::energy() const {
  double e = 0.0;
  for (const auto& v : vel) e += 0.5 * mass * v.norm2();
  auto spring_energy = [&](const std::vector<SpringEdge>& edges) {
    for (const auto& s : edges) {
      const double stretch = (pos[s.j] - pos[s.i]).norm() - s.rest;
      e += 0.5 * s.k * stretch * stretch;
    }
  };
  spring_energy(springs);
  spring_energy(bend);
  return e;
}

std::vector<double> flatten_commands(const EnvState& s,
                                     const std::vector<ActCommand>& action) {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(s.n_act) * (s.has_angular ? 6 : 3));
  for (const auto& a : action) {
    flat.insert(flat.end(), {a.v.x, a.v.y, a.v.z});
    if (s.has_angular) flat.insert(flat.end(), {a.w.x, a.w.y, a.w.z});
  }
  return flat;
}

StepOut env_step(EnvState& s, const std::vector<ActCommand>& action) {
  if (static_cast<int>(action.size()) != s.n_act)
    throw NumericsError("env_step: expected " + std::to_string(s.n_act) +
                        " actuator commands, got " + std::to_string(action.size()));
  if (s.t >= s.horizon) throw NumericsError("env_step past the horizon");

  std::vector<ActCommand> cmd(action);
  for (auto& c : cmd) {
    if (!finite(c.v) || !finite(c.w))
      throw NumericsError("env_step: non-finite action");
    c.v = clamp_norm(c.v, s.cfg.v_max);
    c.w = clamp_norm(c.w, s.cfg.w_max);
    if (s.planar) c.v.z = 0.0;
    if (s.has_angular) c.w.x = c.w.y = 0.0;  // yaw-only tasks
  }

  const double h = s.dt;
  for (int sub = 0; sub < s.decimation; ++sub) {
    switch (s.task) {
      case Task::sliding:
      case Task::insertion: {
        s.obj_lin_vel = cmd[0].v;
        s.obj_ang_vel = cmd[0].w;
        s.obj_pos += cmd[0].v * h;
        s.obj_rot = integrate_quat(s.obj_rot, cmd[0].w, h);
        const Vec3 arm = s.obj_rot.rotate(s.attach_body[0]);
        s.act_pos[0] = s.obj_pos + arm;
        s.act_vel[0] = cmd[0].v + cmd[0].w.cross(arm);
        s.act_ang[0] = cmd[0].w;
        break;
      }
      case Task::pushing:
        pushing_substep(s, cmd[0].v, h);
        break;
      case Task::two_agents:
        two_agents_substep(s, cmd[0].v, cmd[1].v, h);
        break;
      case Task::rope_closing:
      case Task::rope_shaping:
      case Task::cloth_hanging: {
        for (int i = 0; i < s.n_act; ++i) {
          s.act_pos[i] += cmd[i].v * h;
          s.act_vel[i] = cmd[i].v;
          s.msd.pos[s.msd.pinned[i]] = s.act_pos[i];
          s.msd.vel[s.msd.pinned[i]] = cmd[i].v;
        }
        s.msd.substep(h);
        break;
      }
    }
  }

  if (!finite(s.obj_pos) || !std::isfinite(quat_diff(s.obj_rot, s.obj_rot)))
    throw NumericsError("env_step: non-finite rigid state");
  for (const auto& p : s.msd.pos)
    if (!finite(p)) throw NumericsError("env_step: non-finite particle state");

  const std::vector<double> flat = flatten_commands(s, cmd);
  const RewardTerms rt = reward_terms(s, flat);
  s.prev_action = flat;
  s.t += 1;
  return {rt.total, s.t == s.horizon};
}

// ---------------------------------------------------------------- reward --

std::vector<double> shape_descriptor(const std::vector<Vec3>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 3) throw NumericsError("shape_descriptor needs at least 3 points");

  std::vector<Vec3> seg;
  for (int i = 0; i + 1 < n; ++i) {
    const Vec3 v = pts[i + 1] - pts[i];
    if (v.norm() < 1e-12)
      throw NumericsError("shape_descriptor: zero-length segment");
    seg.push_back(v * (1.0 / v.norm()));
  }
  const Vec3 g = pts[n - 1] - pts[0];
  if (g.norm() < 1e-12)
    throw NumericsError("shape_descriptor: coincident endpoints");
  const Vec3 ghat = g * (1.0 / g.norm());
  const Vec3 mid = (pts[0] + pts[n - 1]) * 0.5;

  std::vector<double> d;
  d.reserve(6 * n - 3);
  for (int i = 0; i + 1 < n - 1; ++i)
    d.push_back(std::acos(std::clamp(seg[i].dot(seg[i + 1]), -1.0, 1.0)));
  for (int i = 0; i < n - 1; ++i)
    d.push_back(std::acos(std::clamp(seg[i].dot(ghat), -1.0, 1.0)));
  for (int i = 0; i < n; ++i) {
    const Vec3 rel = pts[i] - mid;
    d.insert(d.end(), {rel.x, rel.y, rel.z});
  }
  for (int i = 0; i < n; ++i) d.push_back((pts[i] - mid).norm());
  return d;
}

HoleAlignment hole_alignment(const std::vector<Vec3>& boundary,
                             const Vec3& hanger_center, const Vec3& axis) {
  if (boundary.size() < 3)
    throw NumericsError("hole_alignment needs at least 3 boundary points");
  Vec3 c{0, 0, 0};
  for (const auto& p : boundary) c += p * (1.0 / boundary.size());
  double m[9] = {0};
  for (const auto& p : boundary) {
    const Vec3 d = p - c;
    m[0] += d.x * d.x; m[1] += d.x * d.y; m[2] += d.x * d.z;
    m[4] += d.y * d.y; m[5] += d.y * d.z; m[8] += d.z * d.z;
  }
  m[3] = m[1]; m[6] = m[2]; m[7] = m[5];

  double evals[3];
  Vec3 evecs[3];
  sym3_eigh(m, evals, evecs);
  int lo = 0, hi = 0;
  for (int i = 1; i < 3; ++i) {
    if (evals[i] < evals[lo]) lo = i;
    if (evals[i] > evals[hi]) hi = i;
  }
  double second = 1e300;
  for (int i = 0; i < 3; ++i)
    if (i != lo) second = std::min(second, evals[i]);
  if (second <= 1e-12 * std::max(evals[hi], 1e-300))
    throw NumericsError("hole_alignment: collinear boundary");

  HoleAlignment out;
  out.centroid_dist = (c - hanger_center).norm();
  out.cos_align = std::fabs(evecs[lo].dot(axis.normalized()));
  return out;
}

RewardTerms reward_terms(const EnvState& s, const std::vector<double>& flat_action) {
  RewardTerms r;
  if (flat_action.size() != s.prev_action.size())
    throw NumericsError("reward_terms: action layout mismatch");
  double a2 = 0.0;
  for (size_t i = 0; i < flat_action.size(); ++i) {
    const double d = flat_action[i] - s.prev_action[i];
    a2 += d * d;
  }
  r.action_rate = std::sqrt(a2);

  const int T = s.horizon;
  switch (s.task) {
    case Task::sliding: {
      r.goal = (s.obj_pos - s.goal_pos).norm();
      r.rotation = quat_diff(s.obj_rot, s.goal_rot);
      r.obj_vel = s.obj_ang_vel.norm() + s.obj_lin_vel.norm();
      const bool late = s.t >= T - 2;
      r.total = (late ? -4.0 : -0.8) * r.goal + (late ? -2.0 : -0.4) * r.rotation -
                0.1 * r.obj_vel - 0.002 * r.action_rate;
      break;
    }
    case Task::pushing: {
      r.goal = (s.obj_pos - s.goal_pos).norm();
      r.rotation = quat_diff(s.obj_rot, s.goal_rot);
      r.obj_dist = (s.obj_pos - s.act_pos[0]).norm();
      const bool late = s.t >= T - 5;
      r.total = (late ? -8.0 : -0.8) * r.goal +
                (late ? -0.8 : -0.08) * r.rotation - 0.2 * r.obj_dist;
      break;
    }
    case Task::insertion: {
      r.goal = (s.obj_pos - s.goal_pos).norm();
      r.rotation = quat_diff(s.obj_rot, s.goal_rot);
      r.goal_z = std::fabs(s.obj_pos.z - s.goal_pos.z);
      const bool late = s.t >= T - 2;
      r.total = (late ? -4.0 : -0.8) * r.goal + (late ? -4.0 : -2.0) * r.rotation -
                0.4 * r.goal_z;
      break;
    }
    case Task::two_agents: {
      r.goal = (s.obj_pos - s.goal_pos).norm();
      r.rotation = quat_diff(s.obj_rot, s.goal_rot);
      const bool late = s.t >= T - 2;
      r.total = (late ? -4.0 : -0.8) * r.goal + (late ? -0.6 : -0.08) * r.rotation;
      break;
    }
    case Task::rope_closing: {
      Vec3 gap = s.act_pos[0] - s.act_pos[1];
      gap.z = 0.0;
      r.closing = gap.norm();
      Vec3 center{0, 0, 0};
      for (const auto& p : s.msd.pos) center += p * (1.0 / s.msd.pos.size());
      Vec3 wrap = s.hanger_center - center;
      wrap.z = 0.0;
      r.wrapping = wrap.norm();
      for (const auto& v : s.msd.vel) r.link_vel += v.norm() / s.msd.vel.size();
      const bool late = s.t >= T - 20;
      r.total = (late ? -2.0 * r.closing : 0.0) - 0.8 * r.wrapping -
                0.01 * r.link_vel - 0.001 * r.action_rate;
      break;
    }
    case Task::rope_shaping: {
      const std::vector<double> cur = shape_descriptor(s.msd.pos);
      if (cur.size() != s.target_descriptor.size())
        throw NumericsError("reward_terms: descriptor size mismatch");
      for (size_t i = 0; i < cur.size(); ++i) {
        const double d = cur[i] - s.target_descriptor[i];
        r.shape += d * d;
      }
      const bool late = s.t >= T - 10;
      r.total = (late ? -5.0 : -1.0) * r.shape - 0.0001 * r.action_rate;
      break;
    }
    case Task::cloth_hanging: {
      std::vector<Vec3> boundary;
      for (int idx : s.hole_boundary) boundary.push_back(s.msd.pos[idx]);
      const HoleAlignment ha =
          hole_alignment(boundary, s.hanger_center, s.hanger_axis);
      r.align_dist = ha.centroid_dist;
      r.align_cos = ha.cos_align;
      const double hole_hanger = ha.centroid_dist + 0.1 * std::fabs(ha.cos_align - 1.0);
      for (const auto& v : s.msd.vel) r.point_vel += v.norm() / s.msd.vel.size();
      for (size_t i = 0; i < s.msd.springs.size(); ++i) {
        const auto& sp = s.msd.springs[i];
        const double cur = (s.msd.pos[sp.j] - s.msd.pos[sp.i]).norm();
        r.distortion +=
            std::fabs((cur - s.rest_init[i]) / s.rest_init[i]) / s.msd.springs.size();
      }
      const bool late = s.t >= T - 2;
      r.total = (late ? -4.0 : -0.8) * hole_hanger - 0.2 * r.point_vel -
                1.0 * r.distortion - 0.002 * r.action_rate;
      break;
    }
  }
  return r;
}

std::string scene_json(const EnvState& s, uint64_t seed) {
  nlohmann::json j;
  j["task"] = task_name(s.task);
  j["seed"] = seed;
  j["object"] = s.scene.object;
  j["init"] = s.scene.init_params;
  j["target"] = s.scene.target_params;
  return j.dump();
}

}  // namespace hepi
