#include "hepi/geometry.hpp"

#include <algorithm>

namespace hepi {

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double h = 0.5 * angle;
  const double s = std::sin(h);
  return {std::cos(h), a.x * s, a.y * s, a.z * s};
}

Quat Quat::operator*(const Quat& o) const {
  return {w * o.w - x * o.x - y * o.y - z * o.z,
          w * o.x + x * o.w + y * o.z - z * o.y,
          w * o.y - x * o.z + y * o.w + z * o.x,
          w * o.z + x * o.y - y * o.x + z * o.w};
}

Quat Quat::normalized() const {
  const double n = norm();
  if (n <= 0.0) return identity();
  return {w / n, x / n, y / n, z / n};
}

Vec3 Quat::rotate(const Vec3& v) const {
  const Vec3 u{x, y, z};
  const Vec3 t = 2.0 * u.cross(v);
  return v + w * t + u.cross(t);
}

double quat_diff(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::fabs(a.dot(b)));
  return 2.0 * std::acos(d);
}

Quat random_rotation(Rng& rng) {
  Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  if (q.norm() < 1e-9) return Quat::identity();
  return q.normalized();
}

Quat integrate_quat(const Quat& q, const Vec3& omega, double dt) {
  const Quat w{0.0, omega.x, omega.y, omega.z};
  Quat dq = w * q;
  Quat out{q.w + 0.5 * dt * dq.w, q.x + 0.5 * dt * dq.x, q.y + 0.5 * dt * dq.y,
           q.z + 0.5 * dt * dq.z};
  return out.normalized();
}

void sym3_eigh(const double m_in[9], double evals[3], Vec3 evecs[3]) {
  double a[3][3] = {{m_in[0], m_in[1], m_in[2]},
                    {m_in[3], m_in[4], m_in[5]},
                    {m_in[6], m_in[7], m_in[8]}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = std::fabs(a[0][1]) + std::fabs(a[0][2]) + std::fabs(a[1][2]);
    if (off < 1e-14) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  for (int i = 0; i < 3; ++i) {
    evals[i] = a[i][i];
    evecs[i] = Vec3{v[0][i], v[1][i], v[2][i]}.normalized();
  }
}

Vec3 least_eigenvector(const double m[9]) {
  double evals[3];
  Vec3 evecs[3];
  sym3_eigh(m, evals, evecs);
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (evals[i] < evals[best]) best = i;
  return evecs[best];
}

}  // namespace hepi
