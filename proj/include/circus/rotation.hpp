#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace circus {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Scalar-first unit quaternion, always stored with w >= 0.
///
/// Every constructing operation renormalizes and flips the sign when needed,
/// so two quaternions describing the same rotation compare equal up to
/// rounding and the geodesic angle 2*acos(w) is single valued.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  /// Normalizes and canonicalizes (w, x, y, z). Throws on a zero or
  /// non-finite input.
  UnitQuaternion(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw std::invalid_argument("UnitQuaternion: zero or non-finite norm");
    }
    const double s = (w < 0.0 ? -1.0 : 1.0) / n;
    w_ = w * s;
    x_ = x * s;
    y_ = y * s;
    z_ = z * s;
  }

  static UnitQuaternion identity() { return {}; }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  Vec3 vec() const { return {x_, y_, z_}; }
  double norm() const { return std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_); }

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Hamilton product a*b (apply b first, then a).
inline UnitQuaternion quat_compose(const UnitQuaternion& a, const UnitQuaternion& b) {
  return {a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
          a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
          a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
          a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w()};
}

inline UnitQuaternion quat_inverse(const UnitQuaternion& q) {
  return {q.w(), -q.x(), -q.y(), -q.z()};
}

/// Geodesic angle of a rotation, in [0, pi].
inline double quat_angle(const UnitQuaternion& q_diff) {
  return 2.0 * std::acos(std::clamp(q_diff.w(), -1.0, 1.0));
}

/// Exponential map of a rotation vector (axis * angle).
inline UnitQuaternion quat_exp(const Vec3& rotvec) {
  const double theta = rotvec.norm();
  const double half = 0.5 * theta;
  double s;  // sin(theta/2) / theta
  if (theta < 1e-8) {
    s = 0.5 - theta * theta / 48.0;
  } else {
    s = std::sin(half) / theta;
  }
  return {std::cos(half), rotvec.x() * s, rotvec.y() * s, rotvec.z() * s};
}

/// Inverse of quat_exp; returns the rotation vector with angle in [0, pi].
inline Vec3 quat_log(const UnitQuaternion& q) {
  const Vec3 v = q.vec();
  const double sn = v.norm();
  if (sn < 1e-12) {
    return 2.0 * v;
  }
  return v * (2.0 * std::atan2(sn, q.w()) / sn);
}

inline UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  return quat_exp(axis.normalized() * angle);
}

inline Vec3 quat_rotate(const UnitQuaternion& q, const Vec3& v) {
  const Vec3 u = q.vec();
  const Vec3 t = 2.0 * u.cross(v);
  return v + q.w() * t + u.cross(t);
}

inline Mat3 quat_to_matrix(const UnitQuaternion& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

/// Shepperd's method; picks the largest diagonal pivot for stability.
inline UnitQuaternion quat_from_matrix(const Mat3& m) {
  const double tr = m.trace();
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    return {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
            (m(1, 0) - m(0, 1)) / s};
  }
  if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    return {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s,
            (m(0, 2) + m(2, 0)) / s};
  }
  if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    return {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s,
            (m(1, 2) + m(2, 1)) / s};
  }
  const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
  return {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s,
          0.25 * s};
}

/// Geodesic distance between two orientations.
inline double quat_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  return quat_angle(quat_compose(quat_inverse(a), b));
}

/// Commanded ball angular velocity: the target advances by
/// axis * magnitude * update_period once per period.
struct AngularVelocityCommand {
  Vec3 axis = Vec3::UnitZ();
  double magnitude = 0.0;      // rad/s
  double update_period = 1.0;  // s

  static bool is_valid_period(double p) {
    return std::abs(p - 1.0) < 1e-12 || std::abs(p - 0.5) < 1e-12 ||
           std::abs(p - 0.33) < 1e-12;
  }

  void validate() const {
    if (std::abs(axis.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("AngularVelocityCommand: axis must be unit length");
    }
    if (!(magnitude >= 0.0)) {
      throw std::invalid_argument("AngularVelocityCommand: magnitude must be >= 0");
    }
    if (!is_valid_period(update_period)) {
      throw std::invalid_argument("AngularVelocityCommand: period must be 1.0, 0.5 or 0.33 s");
    }
  }
};

/// Rotation reached after turning at the commanded rate for one period,
/// applied in the world frame on top of `current_target`.
inline UnitQuaternion propagate_target(const UnitQuaternion& current_target,
                                       const AngularVelocityCommand& cmd) {
  if (cmd.magnitude == 0.0) {
    return current_target;
  }
  return quat_compose(quat_exp(cmd.axis * (cmd.magnitude * cmd.update_period)),
                      current_target);
}

}  // namespace circus
