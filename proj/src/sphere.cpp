#include "hepi/sphere.hpp"

namespace hepi {

namespace {

// The raw Fibonacci lattice has a second moment that deviates from I/3 by a
// few percent, which caps fixed-grid equivariance accuracy well above what
// the vector readout needs. A few rounds of moment whitening (map by
// (3M)^{-1/2}, renormalize) drive the deviation to ~1e-5 while keeping the
// lattice deterministic and near-uniform. Skipped for tiny grids where the
// moment matrix is rank deficient.
void whiten_second_moment(std::vector<Vec3>& dirs) {
  const int n = static_cast<int>(dirs.size());
  if (n < 6) return;
  for (int iter = 0; iter < 8; ++iter) {
    double m[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    for (const auto& d : dirs) {
      const double c[3] = {d.x, d.y, d.z};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i * 3 + j] += c[i] * c[j] / n;
    }
    double evals[3];
    Vec3 evecs[3];
    sym3_eigh(m, evals, evecs);
    double inv_sqrt[3];
    for (int i = 0; i < 3; ++i)
      inv_sqrt[i] = 1.0 / std::sqrt(3.0 * std::max(evals[i], 1e-6));
    for (auto& d : dirs) {
      Vec3 out{0, 0, 0};
      for (int i = 0; i < 3; ++i) out += inv_sqrt[i] * evecs[i].dot(d) * evecs[i];
      d = out.normalized();
    }
  }
}

}  // namespace

SphereGrid make_sphere_grid(int n_ori) {
  if (n_ori < 2) throw NumericsError("sphere grid: n_ori must be >= 2");
  SphereGrid g;
  g.n_ori = n_ori;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_ori; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / static_cast<double>(n_ori);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    g.dirs.push_back(Vec3{r * std::cos(phi), r * std::sin(phi), z}.normalized());
  }
  whiten_second_moment(g.dirs);
  g.dots = Tensor(n_ori, n_ori);
  for (int i = 0; i < n_ori; ++i)
    for (int j = 0; j < n_ori; ++j) g.dots.at(i, j) = g.dirs[i].dot(g.dirs[j]);
  return g;
}

SphereGrid SphereGrid::rotated(const Quat& R) const {
  SphereGrid g;
  g.n_ori = n_ori;
  for (const auto& d : dirs) g.dirs.push_back(R.rotate(d));
  g.dots = Tensor(n_ori, n_ori);
  for (int i = 0; i < n_ori; ++i)
    for (int j = 0; j < n_ori; ++j) g.dots.at(i, j) = g.dirs[i].dot(g.dirs[j]);
  return g;
}

std::pair<double, double> pair_invariants(const Vec3& rel, const Vec3& o) {
  const double a1 = o.dot(rel);
  const double a2 = (rel - a1 * o).norm();
  return {a1, a2};
}

}  // namespace hepi
