#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hepi/geometry.hpp"
#include "hepi/tensor.hpp"

namespace hepi {

using EdgeList = std::vector<std::pair<int, int>>;  // (src, dst)

struct NodeSet {
  std::vector<Vec3> pos;   // normalized scene units
  std::vector<Vec3> vel;
  Tensor scalars;          // N x S (includes the node-type one-hot)
  std::vector<std::pair<std::string, Tensor>> vectors;  // named N x 3 attrs

  int n() const { return static_cast<int>(pos.size()); }
};

struct HeteroGeoGraph {
  NodeSet obj, act;
  EdgeList e_oo, e_aa, e_oa;  // e_oa is directed obj -> act
};

// Directed edges from each node's k nearest Euclidean neighbors into the node,
// ties broken toward the lower index, then symmetrized and deduplicated.
// Result is sorted by (src, dst). k = n-1 gives the complete graph; throws
// outside 1 <= k <= n-1.
EdgeList build_knn_edges(const std::vector<Vec3>& pts, int k);

// All (src, dst) pairs, src-major. Used for obj->act inter-edges and for
// complete act-act / obj-obj relations.
EdgeList build_bipartite_complete(int n_src, int n_dst);

// Complete directed graph on n nodes without self loops, (src, dst) sorted.
EdgeList build_complete_edges(int n);

// Adds N(0, sigma^2) to the object positions and velocities (normalized
// units). sigma 0 is the identity. Call before edge construction so edges see
// the perturbed geometry.
void inject_noise(HeteroGeoGraph& g, double pos_sigma, double vel_sigma, Rng& rng);

// Packs xyz rows into an [N, 3] tensor.
Tensor vec3_tensor(const std::vector<Vec3>& v);

// Concatenation of per-env graphs into one disjoint-union batch. Kernel row
// math keeps each graph's reductions separate, so batched outputs match
// per-graph outputs bit-for-bit.
struct GraphBatch {
  int n_graphs = 0;
  // object nodes, concatenated
  std::vector<Vec3> obj_pos;
  Tensor obj_scalars;
  std::vector<Tensor> obj_vectors;
  std::vector<int> obj_graph;
  // actuator nodes, concatenated
  std::vector<Vec3> act_pos;
  Tensor act_scalars;
  std::vector<Tensor> act_vectors;
  std::vector<int> act_graph;
  // relations, global node indices
  EdgeList e_oo, e_aa, e_oa;
  // union view for the homogeneous variant: objects first, then actuators
  Tensor uni_scalars;
  std::vector<Tensor> uni_vectors;
  std::vector<Vec3> uni_pos;
  EdgeList e_uni;
  std::vector<int> act_row_in_uni;

  int n_obj() const { return static_cast<int>(obj_pos.size()); }
  int n_act() const { return static_cast<int>(act_pos.size()); }
};

GraphBatch batch_graphs(const std::vector<HeteroGeoGraph>& graphs);

// Line-oriented debug dump (one node or edge per line).
std::string dump_graph(const HeteroGeoGraph& g);

}  // namespace hepi
