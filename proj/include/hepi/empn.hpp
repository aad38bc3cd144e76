#pragma once

#include <string>
#include <vector>

#include "hepi/graph.hpp"
#include "hepi/nn.hpp"
#include "hepi/sphere.hpp"
#include "hepi/tensor.hpp"

namespace hepi {

// One relation's separable kernel: spatial net over the degree-2 polynomial
// embedding of (a1, a2), orientation net over the degree-2 embedding of
// o . o', channel mixer K3, plus the residual block (layer norm -> widen x4
// GELU MLP -> project) that acts as the node update.
struct ConvKernel {
  int64_t channels = 0;
  MlpParams spatial;  // 5 -> hidden -> C
  MlpParams fiber;    // 2 -> hidden -> C
  Tensor k3;          // C x C
  Tensor ln_g, ln_b;
  MlpParams widen;    // C -> 4C -> C
  Tensor attn_q, attn_k;  // attention variant score nets

  static ConvKernel create(int64_t channels, const std::vector<int64_t>& hidden,
                           ParamStore& store, const std::string& prefix, Rng& rng,
                           bool attention = false);
};

struct EmpnOptions {
  bool use_block = true;
  bool attention = false;
  Tensor fiber_table_override;  // [O*O, C]; bypasses the fiber net when set
};

// Fiber features live in [N * n_ori, C] with orientation fastest.

// Raw per-(node, orientation) inputs: scalars broadcast, vectors projected as
// o . w, then one shared linear embedding to C channels.
Tensor lift_inputs(const Tensor& scalars, const std::vector<Tensor>& vectors,
                   const SphereGrid& grid, const MlpParams& embed, Tape* tp);

// [E * n_ori, 5] rows (a1, a2, a1^2, a1*a2, a2^2) per (edge, dst orientation).
Tensor pair_invariant_embed(const std::vector<Vec3>& src_pos,
                            const std::vector<Vec3>& dst_pos,
                            const EdgeList& edges, const SphereGrid& grid);

// Three-stage separable convolution plus residual block:
//   (1) per destination orientation, spatial-kernel-weighted sum over edges,
//   (2) orientation mixing with the fiber net table, normalized by n_ori,
//   (3) channel mixing with K3; then x = dst + agg, out = x + MLP(LN(x)).
// No edges leaves the aggregate at zero, so only the block path acts.
Tensor conv_message_pass(const Tensor& f_src, const Tensor& f_dst,
                         const std::vector<Vec3>& src_pos,
                         const std::vector<Vec3>& dst_pos, const EdgeList& edges,
                         const SphereGrid& grid, const ConvKernel& k,
                         const EmpnOptions& opt, Tape* tp);

// The [O*O, C] orientation-mixing table for a kernel on a given grid.
Tensor fiber_table(const ConvKernel& k, const SphereGrid& grid, Tape* tp);

// Invariant readout: mean over orientations of head-projected channels. [N, K]
Tensor readout_scalar(const Tensor& fiber, const Tensor& head, int n_ori, Tape* tp);

// Equivariant readout: (1/O) sum_o w_k(o) * o per node and head column.
// Layout [N, 3K], slot k in columns 3k..3k+2.
Tensor readout_vector(const Tensor& fiber, const Tensor& head,
                      const SphereGrid& grid, Tape* tp);

}  // namespace hepi
