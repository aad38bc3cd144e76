#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hepi/action.hpp"
#include "hepi/geometry.hpp"
#include "hepi/nn.hpp"

namespace hepi {

enum class Task {
  sliding,
  pushing,
  insertion,
  two_agents,
  rope_closing,
  rope_shaping,
  cloth_hanging,
};

Task parse_task(const std::string& name);
std::string task_name(Task t);

// Tunable scene and material constants. Defaults match the shipped presets;
// everything here is exposed through the run config.
struct EnvConfig {
  std::vector<std::string> roster;  // empty = full task roster
  bool fixed_target_yaw = false;    // pin rigid target yaw to 0
  bool high_res = false;            // resample outlines to the dense node counts
  int rope_particles = 0;           // 0 = task default (40 closing, 80 shaping)
  int horizon = 0;                  // 0 = task default
  int hole_index = -1;              // cloth: fix one of the 20 hole slots

  double v_max = 1.0;   // actuator linear speed clamp
  double w_max = 2.0;   // actuator angular speed clamp

  // mass-spring material
  double stretch_k = 1000.0;
  double stretch_damping = 5.0;
  double bending_k = 10.0;
  double rope_mass = 0.5;   // per particle
  double cloth_k = 1000.0;
  double cloth_damping = 3.0;
  double cloth_mass = 0.3;  // per particle
  double gravity = 9.81;    // cloth only; planar tasks stay in-plane

  // pushing contact model
  double contact_k = 500.0;
  double contact_damping = 10.0;
  double body_damping = 2.0;     // object linear/angular velocity decay, 1/s
  double actuator_radius = 0.03;

  double cylinder_radius = 0.08;  // rope-closing collider
  double hanger_radius = 0.02;    // cloth collider capsule
  double hanger_half_len = 0.3;
};

// One damped spring between particles i and j.
struct SpringEdge {
  int i = 0, j = 0;
  double rest = 0.0, k = 0.0, c = 0.0;
};

// Particle system integrated with semi-implicit Euler. Pinned particles are
// driven kinematically by the actuators and skip force integration.
struct MassSpringSystem {
  std::vector<Vec3> pos, vel;
  double mass = 0.5;
  std::vector<SpringEdge> springs;
  std::vector<SpringEdge> bend;
  std::vector<int> pinned;  // particle index per actuator, in actuator order
  bool planar = false;      // constrain motion to the z=0 plane
  Vec3 gravity{0, 0, 0};

  bool has_cylinder = false;  // infinite vertical cylinder, rope-closing
  Vec3 cyl_center{0, 0, 0};
  double cyl_radius = 0.0;

  bool has_capsule = false;  // hanger segment, cloth
  Vec3 cap_a{0, 0, 0}, cap_b{0, 0, 0};
  double cap_radius = 0.0;

  void substep(double dt);
  double energy() const;  // kinetic + spring potential, for damping checks
};


// Sampled scene parameters, kept verbatim for the reproducibility record.
struct SceneInfo {
  std::string object;
  std::vector<double> init_params, target_params;
};

struct EnvState {
  Task task = Task::sliding;
  EnvConfig cfg;
  int t = 0;
  int horizon = 100;
  int decimation = 4;
  double dt = 0.01;
  int n_act = 1;
  bool planar = true;       // scene constrained to z=0
  bool has_angular = true;  // action layout carries an angular command

  // rigid object
  Vec3 obj_pos{0, 0, 0};
  Quat obj_rot;
  Vec3 obj_lin_vel{0, 0, 0}, obj_ang_vel{0, 0, 0};
  std::vector<Vec3> keypoints_body;
  std::vector<Vec3> attach_body;  // actuator grip points in the body frame

  // actuators, world frame
  std::vector<Vec3> act_pos, act_vel, act_ang;

  // targets
  Vec3 goal_pos{0, 0, 0};
  Quat goal_rot;
  Vec3 hanger_center{0, 0, 0};  // also the rope-closing cylinder center
  Vec3 hanger_axis{0, 1, 0};
  std::vector<double> target_descriptor;  // rope-shaping
  std::vector<Vec3> target_points;        // rope-shaping goal curve
  std::vector<Vec3> initial_points;       // cloth rest shape

  // deformables
  MassSpringSystem msd;
  std::vector<double> rest_init;   // cloth distortion denominators
  std::vector<int> hole_boundary;  // cloth hole rim particles

  std::vector<double> prev_action;  // flattened previous command
  SceneInfo scene;

  std::vector<Vec3> keypoints_world() const;
};

// Closed outline resampled uniformly by arc length to the shape's node count.
// Names: triangle, heart, diamond, pentagon, hexagon, plus, star, a_shape,
// t_shape, e_shape. Centered on the sampled centroid, z=0.
std::vector<Vec3> shape_outline(const std::string& name, bool high_res = false);
const std::vector<std::string>& task_roster(Task t);

EnvState env_reset(Task task, Rng& rng, const EnvConfig& cfg = {});

struct StepOut {
  double reward = 0.0;
  bool done = false;
};
StepOut env_step(EnvState& s, const std::vector<ActCommand>& action);

// Sub-rewards at the current state; flat_action pairs with prev_action for
// the action-rate term. Only the fields the task uses are populated.
struct RewardTerms {
  double goal = 0, rotation = 0, goal_z = 0, obj_vel = 0, obj_dist = 0;
  double closing = 0, wrapping = 0, link_vel = 0, shape = 0;
  double align_dist = 0, align_cos = 1, point_vel = 0, distortion = 0;
  double action_rate = 0;
  double total = 0;
};
RewardTerms reward_terms(const EnvState& s, const std::vector<double>& flat_action);

// Local turning angles, segment-vs-chord angles, midpoint-relative positions,
// and midpoint distances of an open polyline, concatenated.
std::vector<double> shape_descriptor(const std::vector<Vec3>& pts);

struct HoleAlignment {
  double centroid_dist = 0.0;
  double cos_align = 1.0;
};
// Plane-fit normal of the boundary ring vs. the hanger axis, plus the
// centroid-to-hanger distance.
HoleAlignment hole_alignment(const std::vector<Vec3>& boundary,
                             const Vec3& hanger_center, const Vec3& axis);

// One JSON line with the task, seed, and sampled scene parameters.
std::string scene_json(const EnvState& s, uint64_t seed);

// Flattened command layout used for prev_action and the action-rate penalty:
// per actuator [v] or [v, w] depending on the task's angular slot.
std::vector<double> flatten_commands(const EnvState& s,
                                     const std::vector<ActCommand>& action);

}  // namespace hepi
