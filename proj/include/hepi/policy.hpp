#pragma once

#include <string>
#include <vector>

#include "hepi/action.hpp"
#include "hepi/empn.hpp"
#include "hepi/graph.hpp"
#include "hepi/nn.hpp"
#include "hepi/sphere.hpp"

namespace hepi {

enum class PolicyVariant { hepi, vnlocal, homogeneous };

PolicyVariant parse_variant(const std::string& s);
std::string variant_name(PolicyVariant v);

// Action layout: n_slots 3-vectors per actuator. Slot 0 is a linear velocity
// passed through; slot 1 (when present) is a vector from which an angular
// velocity is decoded via the lever arm. Planar tasks zero the z component of
// every slot before density evaluation, so masked dims carry no probability.
struct ActionSpec {
  int n_slots = 1;
  bool angular = false;
  bool planar = false;
  double clamp = 1.0;  // max norm of each decoded command
};

struct PolicyConfig {
  PolicyVariant variant = PolicyVariant::hepi;
  int64_t channels = 64;
  int n_ori = 16;
  std::vector<int64_t> kernel_hidden{64, 64};
  bool attention = false;
  int vn_k = 3;        // vnlocal: object neighbors per actuator
  int obj_rounds = 1;  // vnlocal: obj-obj message rounds before aggregation
  double sigma_init = 0.5;
  ActionSpec action;
  // input widths, fixed per task by the feature spec
  int64_t obj_scalar_w = 0, act_scalar_w = 0;
  int64_t obj_vec_n = 0, act_vec_n = 0;
};

// Per-actuator Gaussian over slot vectors. mu is [N_act, 3*n_slots], sigma is
// [N_act, n_slots] (isotropic per slot). Both stay on the tape during
// training so losses can differentiate through them.
struct PolicyOutput {
  Tensor mu;
  Tensor sigma;
  int n_slots = 1;
  bool planar = false;
  std::vector<int> act_graph;  // graph id per actuator row
  int n_graphs = 0;
};

struct PolicyModel {
  PolicyConfig cfg;
  SphereGrid grid;
  ParamStore store;
  MlpParams embed_obj, embed_act, embed_uni;
  ConvKernel k_oo, k_aa, k_oa;  // hepi / vnlocal relations
  ConvKernel k_uni;             // homogeneous variant
  Tensor head_c, head_v, head_s, bias_s;

  static PolicyModel create(const PolicyConfig& cfg, Rng& rng);

  // Dispatches on cfg.variant.
  PolicyOutput forward(const GraphBatch& batch, Tape* tp) const;

  PolicyOutput hepi_forward(const GraphBatch& batch, Tape* tp) const;
  PolicyOutput vnlocal_forward(const GraphBatch& batch, int k, int m,
                               Tape* tp) const;
  PolicyOutput homogeneous_forward(const GraphBatch& batch, Tape* tp) const;
};

// Directed obj->act edges restricted to each actuator's k nearest objects
// within the same graph, ties toward the lower object index, sorted by
// (src, dst). k equal to the per-graph object count reproduces the complete
// bipartite list.
EdgeList build_bipartite_knn(const std::vector<Vec3>& obj_pos,
                             const std::vector<int>& obj_graph,
                             const std::vector<Vec3>& act_pos,
                             const std::vector<int>& act_graph, int k);

// Decodes raw slot vectors [N_act, 3*n_slots] into clamped env commands.
// frame_origin holds, per actuator row, the object-frame origin used for the
// lever arm r = act_pos - origin; |r| = 0 yields w = 0.
std::vector<ActCommand> decode_action(const ActionSpec& spec, const Tensor& slots,
                                      const std::vector<Vec3>& act_pos,
                                      const std::vector<Vec3>& frame_origin);

// Per-frame log density of the masked diagonal Gaussian: [n_graphs, 1].
Tensor policy_log_prob(const PolicyOutput& out, const Tensor& actions, Tape* tp);

// Per-frame entropy: [n_graphs, 1].
Tensor policy_entropy(const PolicyOutput& out, Tape* tp);

// Draws raw slot vectors; planar slots get no z noise.
Tensor policy_sample(const PolicyOutput& out, Rng& rng);

// The slot mask as a [1, 3*n_slots] row (planar zeroes every third column).
Tensor slot_mask_row(int n_slots, bool planar);

}  // namespace hepi
