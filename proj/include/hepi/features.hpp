#pragma once

#include <vector>

#include "hepi/envs.hpp"
#include "hepi/graph.hpp"
#include "hepi/policy.hpp"

namespace hepi {

enum class FeatureRole { policy, critic };

// Which inputs each task exposes and how its graph is wired. Vector attrs
// share names across node sets ("p", "v", "w", ...) so the union view lines
// up channels for the homogeneous variant and the critic rows.
struct TaskFeatureSpec {
  bool act_has_w = false;       // actuator angular velocity input
  bool obj_has_v = false;       // object velocity input
  bool obj_has_d_initial = false;   // cloth: vector to the rest shape
  bool critic_absolute = false;     // cloth critic: coords instead of offsets
  int knn_obj = 3;                  // obj-obj edges; 0 means complete
  int cloth_policy_k = 10;          // policy particles nearest the hole centroid
  double pos_scale = 1.0, vel_scale = 1.0;

  int obj_vec_n(FeatureRole role) const;
  int act_vec_n() const;
  static constexpr int scalar_w = 2;  // node-type one-hot: object, actuator
};
TaskFeatureSpec task_feature_spec(Task t);

// Slot layout and clamps the policy head uses for this task.
ActionSpec task_action_spec(Task t);

// Training-time feature perturbation, applied to the normalized object
// positions and velocities before derived attrs and edges are built.
struct NoiseSpec {
  double pos_sigma = 0.0, vel_sigma = 0.0;
  Rng* rng = nullptr;
};

// Builds the per-task graph: normalized geometry, node-type one-hots, named
// vector attrs, and the knn / complete / bipartite relations. The critic role
// differs from the policy role only where the spec says so (cloth).
HeteroGeoGraph assemble_features(Task task, const EnvState& s, FeatureRole role,
                                 const NoiseSpec& noise = {});

// Flattens a batch into DeepSets critic rows [n_obj + n_act, F]: union-view
// scalars followed by every union vector attr, objects first. Returns the
// per-row graph ids through `ids`.
Tensor critic_rows(const GraphBatch& b, std::vector<int>& ids);
int64_t critic_row_width(Task t);

// World-frame lever-arm origins for the angular decode, one per actuator.
std::vector<Vec3> decode_origins(const EnvState& s);

}  // namespace hepi
