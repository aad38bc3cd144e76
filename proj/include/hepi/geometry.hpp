#pragma once

#include <cmath>
#include <vector>

#include "hepi/nn.hpp"

namespace hepi {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized(double fallback_eps = 1e-12) const {
    const double n = norm();
    return n < fallback_eps ? Vec3{0, 0, 0} : Vec3{x / n, y / n, z / n};
  }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Unit quaternion (w, x, y, z). Kept normalized by the callers that integrate.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quat identity() { return {}; }
  static Quat from_axis_angle(const Vec3& axis, double angle);
  static Quat from_yaw(double yaw) { return from_axis_angle({0, 0, 1}, yaw); }

  Quat operator*(const Quat& o) const;
  Quat conj() const { return {w, -x, -y, -z}; }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Quat normalized() const;
  Vec3 rotate(const Vec3& v) const;
};

// Geodesic distance on SO(3) through the double cover: 2*acos(min(1,|<q1,q2>|)).
double quat_diff(const Quat& a, const Quat& b);

// Uniform random rotation from a normalized 4-normal quaternion.
Quat random_rotation(Rng& rng);

// Integrate dq/dt = 0.5 * omega x q over dt, renormalizing.
Quat integrate_quat(const Quat& q, const Vec3& omega, double dt);

// Unit eigenvector for the smallest eigenvalue of a symmetric 3x3 matrix
// (row-major, 9 entries), via Jacobi sweeps. Deterministic.
Vec3 least_eigenvector(const double m[9]);

// Jacobi eigendecomposition of a symmetric 3x3, row-major input. Eigenpairs
// are unordered; vectors are unit and mutually orthogonal.
void sym3_eigh(const double m[9], double evals[3], Vec3 evecs[3]);

}  // namespace hepi
