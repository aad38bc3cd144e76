#pragma once

#include <vector>

#include "hepi/geometry.hpp"
#include "hepi/tensor.hpp"

namespace hepi {

// Fibonacci lattice on S^2 plus the pairwise dot-product table used by the
// orientation-mixing stage. One grid instance is shared by a whole model.
struct SphereGrid {
  int n_ori = 0;
  std::vector<Vec3> dirs;  // unit rows
  Tensor dots;             // n x n, dots[i,j] = dirs[i] . dirs[j]

  SphereGrid rotated(const Quat& R) const;
};

SphereGrid make_sphere_grid(int n_ori);  // n_ori >= 2

// Separable-kernel scalar invariants for one (edge, orientation) pair:
// a1 = o . rel, a2 = || rel - a1 * o ||, rel = p_src - p_dst.
// a1^2 + a2^2 == ||rel||^2 holds exactly up to fp rounding.
std::pair<double, double> pair_invariants(const Vec3& rel, const Vec3& o);

}  // namespace hepi
