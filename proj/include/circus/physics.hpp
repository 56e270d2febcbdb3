#pragma once

// Simplified rigid-body scene: a quadruped lying on its back (free box torso
// resting on the ground, four 3-DoF legs with decoupled joint inertias) and a
// rigid ball held by the feet. Contacts are compliant: a Hunt-Crossley normal
// force plus regularized Coulomb friction.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "circus/errors.hpp"
#include "circus/rotation.hpp"

namespace circus {

inline constexpr int kNumLegs = 4;
inline constexpr int kJointsPerLeg = 3;
inline constexpr int kNumJoints = kNumLegs * kJointsPerLeg;

/// Ordered (LF, RF, LH, RH) x (HAA, HFE, KFE).
using JointVector = Eigen::Matrix<double, kNumJoints, 1>;

enum class Leg : int { kLF = 0, kRF = 1, kLH = 2, kRH = 3 };

inline constexpr std::array<const char*, kNumLegs> kLegNames = {"LF", "RF", "LH", "RH"};

inline bool is_front(int leg) { return leg == 0 || leg == 1; }
inline bool is_left(int leg) { return leg == 0 || leg == 2; }

struct PhysicsConfig {
  double substep_dt = 0.0025;  // s
  double control_dt = 0.01;    // s
  double gravity = 9.81;       // m/s^2, along -z

  double contact_stiffness = 8000.0;       // N/m
  double friction = 0.8;                   // ball contacts
  double restitution = 0.95;               // ball contacts
  double ground_friction = 0.8;            // robot-ground contacts
  double ground_restitution = 0.5;         // robot-ground contacts
  double friction_regularization = 0.1;    // m/s

  double joint_inertia = 0.2;  // kg m^2, reflected
  double kp = 150.0;           // Nm/rad
  double kd = 4.0;             // Nm s/rad
  double torque_limit = 80.0;  // Nm

  // Leg geometry (base frame: x forward, y left, z up when standing).
  double hip_x = 0.3;
  double hip_y = 0.1;
  double hip_lateral = 0.08;
  double thigh_length = 0.25;
  double shank_length = 0.25;
  double foot_radius = 0.03;
  double knee_radius = 0.04;

  // Nominal pose of the front legs; hind legs mirror HFE/KFE.
  double nominal_haa = 0.0;
  double nominal_hfe = 0.5;
  double nominal_kfe = -1.0;
  // Joint limits are nominal +/- these half ranges.
  double haa_range = 0.5;
  double hfe_range = 0.9;
  double kfe_range = 0.9;

  Vec3 torso_half_extents{0.35, 0.15, 0.075};
  double torso_mass = 30.0;

  int substeps() const { return static_cast<int>(std::lround(control_dt / substep_dt)); }
};

inline JointVector nominal_pose(const PhysicsConfig& cfg) {
  JointVector q;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const double s = is_front(leg) ? 1.0 : -1.0;
    q(3 * leg + 0) = cfg.nominal_haa;
    q(3 * leg + 1) = s * cfg.nominal_hfe;
    q(3 * leg + 2) = s * cfg.nominal_kfe;
  }
  return q;
}

inline JointVector joint_half_ranges(const PhysicsConfig& cfg) {
  JointVector r;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    r(3 * leg + 0) = cfg.haa_range;
    r(3 * leg + 1) = cfg.hfe_range;
    r(3 * leg + 2) = cfg.kfe_range;
  }
  return r;
}

inline JointVector joint_lower_limits(const PhysicsConfig& cfg) {
  return nominal_pose(cfg) - joint_half_ranges(cfg);
}
inline JointVector joint_upper_limits(const PhysicsConfig& cfg) {
  return nominal_pose(cfg) + joint_half_ranges(cfg);
}

/// Per-leg kinematic parameters in the base frame. The shank offset shifts
/// the knee joint along the thigh frame.
struct LegGeometry {
  Vec3 hip = Vec3::Zero();
  double lateral = 0.0;  // signed, along y after HAA
  double thigh_length = 0.25;
  double shank_length = 0.25;
  Vec3 shank_offset = Vec3::Zero();
};

/// Physics parameters plus the (possibly randomized) leg geometry.
struct SimModel {
  PhysicsConfig cfg;
  std::array<LegGeometry, kNumLegs> legs;

  static SimModel nominal(const PhysicsConfig& cfg) {
    SimModel m{cfg, {}};
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const double sx = is_front(leg) ? 1.0 : -1.0;
      const double sy = is_left(leg) ? 1.0 : -1.0;
      m.legs[leg].hip = {sx * cfg.hip_x, sy * cfg.hip_y, 0.0};
      m.legs[leg].lateral = sy * cfg.hip_lateral;
      m.legs[leg].thigh_length = cfg.thigh_length;
      m.legs[leg].shank_length = cfg.shank_length;
    }
    return m;
  }

  Mat3 torso_inertia() const {
    const Vec3 h = cfg.torso_half_extents;
    const double c = cfg.torso_mass / 3.0;
    return Vec3(c * (h.y() * h.y() + h.z() * h.z()), c * (h.x() * h.x() + h.z() * h.z()),
                c * (h.x() * h.x() + h.y() * h.y()))
        .asDiagonal();
  }
};

struct RobotState {
  Vec3 base_position = Vec3::Zero();
  UnitQuaternion base_orientation;
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();  // world frame
  JointVector joints_pos = JointVector::Zero();
  JointVector joints_vel = JointVector::Zero();

  bool finite() const {
    return base_position.allFinite() && base_lin_vel.allFinite() && base_ang_vel.allFinite() &&
           joints_pos.allFinite() && joints_vel.allFinite() &&
           std::isfinite(base_orientation.w()) && std::isfinite(base_orientation.x()) &&
           std::isfinite(base_orientation.y()) && std::isfinite(base_orientation.z());
  }
};

struct BallState {
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;
  Vec3 lin_vel = Vec3::Zero();
  Vec3 ang_vel = Vec3::Zero();  // world frame
  double mass = 3.0;
  double radius = 0.4;

  // Thin spherical shell.
  double inertia() const { return 2.0 / 3.0 * mass * radius * radius; }

  bool finite() const {
    return position.allFinite() && lin_vel.allFinite() && ang_vel.allFinite() &&
           std::isfinite(orientation.w()) && std::isfinite(orientation.x()) &&
           std::isfinite(orientation.y()) && std::isfinite(orientation.z());
  }
};

enum class BodyKind { kGround, kBall, kTorso, kFoot, kKnee };

struct BodyId {
  BodyKind kind = BodyKind::kGround;
  int leg = -1;  // for feet and knees

  friend bool operator==(const BodyId&, const BodyId&) = default;
};

/// One touching pair. `normal` points from body_b towards body_a; a positive
/// normal force pushes body_a along it. Velocities are those of body_a's
/// contact point relative to body_b's.
struct ContactPoint {
  BodyId body_a;
  BodyId body_b;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double penetration = 0.0;
  double v_norm = 0.0;
  Vec3 v_tan = Vec3::Zero();

  // Filled by the force model; zero for detection-only pairs.
  bool applies_force = false;
  double normal_force = 0.0;
  Vec3 tangential_force = Vec3::Zero();

  bool is_foot_ball() const {
    return body_a.kind == BodyKind::kBall && body_b.kind == BodyKind::kFoot;
  }
  bool is_ball_robot() const {
    return body_a.kind == BodyKind::kBall &&
           (body_b.kind == BodyKind::kTorso || body_b.kind == BodyKind::kKnee ||
            body_b.kind == BodyKind::kFoot);
  }
  bool is_self_collision() const {
    const auto robot = [](BodyKind k) {
      return k == BodyKind::kTorso || k == BodyKind::kFoot || k == BodyKind::kKnee;
    };
    return robot(body_a.kind) && robot(body_b.kind);
  }
};

/// World-frame points and joint axes of one leg.
struct LegKinematics {
  Vec3 haa_origin, hfe_origin, kfe_origin, foot;
  Vec3 haa_axis, hfe_axis;  // KFE shares the HFE axis
  Eigen::Matrix3d jacobian;  // d foot / d (haa, hfe, kfe)
};

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

inline LegKinematics leg_kinematics(const SimModel& model, int leg, const JointVector& q,
                                    const RobotState& base) {
  const LegGeometry& g = model.legs[leg];
  const double haa = q(3 * leg), hfe = q(3 * leg + 1), kfe = q(3 * leg + 2);
  const Mat3 rb = quat_to_matrix(base.base_orientation);
  const Mat3 r0 = rot_x(haa);
  const Mat3 r1 = r0 * rot_y(hfe);
  const Mat3 r2 = r1 * rot_y(kfe);

  const Vec3 p_hfe = g.hip + r0 * Vec3(0.0, g.lateral, 0.0);
  const Vec3 p_kfe = p_hfe + r1 * (Vec3(0.0, 0.0, -g.thigh_length) + g.shank_offset);
  const Vec3 p_foot = p_kfe + r2 * Vec3(0.0, 0.0, -g.shank_length);

  LegKinematics k;
  const auto to_world = [&](const Vec3& p) -> Vec3 { return base.base_position + rb * p; };
  k.haa_origin = to_world(g.hip);
  k.hfe_origin = to_world(p_hfe);
  k.kfe_origin = to_world(p_kfe);
  k.foot = to_world(p_foot);
  k.haa_axis = rb * Vec3::UnitX();
  k.hfe_axis = rb * (r0 * Vec3::UnitY());
  k.jacobian.col(0) = k.haa_axis.cross(k.foot - k.haa_origin);
  k.jacobian.col(1) = k.hfe_axis.cross(k.foot - k.hfe_origin);
  k.jacobian.col(2) = k.hfe_axis.cross(k.foot - k.kfe_origin);
  return k;
}

/// World-frame centers of the four foot spheres.
inline std::array<Vec3, kNumLegs> forward_kinematics(const SimModel& model,
                                                     const JointVector& joints_pos,
                                                     const RobotState& base) {
  std::array<Vec3, kNumLegs> feet;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    feet[leg] = leg_kinematics(model, leg, joints_pos, base).foot;
  }
  return feet;
}

inline std::array<Vec3, 8> torso_corners(const SimModel& model, const RobotState& robot) {
  const Mat3 rb = quat_to_matrix(robot.base_orientation);
  const Vec3 h = model.cfg.torso_half_extents;
  std::array<Vec3, 8> c;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                     (i & 4) ? h.z() : -h.z());
    c[i] = robot.base_position + rb * local;
  }
  return c;
}

namespace detail {

struct Kinematics {
  std::array<LegKinematics, kNumLegs> legs;
  std::array<Vec3, kNumLegs> knees;
  std::array<Vec3, kNumLegs> foot_vel;
};

inline Kinematics compute_kinematics(const SimModel& model, const RobotState& robot) {
  Kinematics k;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    k.legs[leg] = leg_kinematics(model, leg, robot.joints_pos, robot);
    k.knees[leg] = k.legs[leg].kfe_origin;
    const Vec3 qd = robot.joints_vel.segment<3>(3 * leg);
    k.foot_vel[leg] = robot.base_lin_vel +
                      robot.base_ang_vel.cross(k.legs[leg].foot - robot.base_position) +
                      k.legs[leg].jacobian * qd;
  }
  return k;
}

inline Vec3 ball_point_velocity(const BallState& ball, const Vec3& p) {
  return ball.lin_vel + ball.ang_vel.cross(p - ball.position);
}

inline Vec3 base_point_velocity(const RobotState& robot, const Vec3& p) {
  return robot.base_lin_vel + robot.base_ang_vel.cross(p - robot.base_position);
}

inline ContactPoint make_contact(BodyId a, BodyId b, const Vec3& point, const Vec3& normal,
                                 double penetration, const Vec3& rel_vel) {
  ContactPoint c;
  c.body_a = a;
  c.body_b = b;
  c.point = point;
  c.normal = normal;
  c.penetration = penetration;
  c.v_norm = rel_vel.dot(normal);
  c.v_tan = rel_vel - c.v_norm * normal;
  return c;
}

// Closest point of an oriented box to p, and whether p is inside.
inline Vec3 box_closest_point(const RobotState& robot, const Vec3& half, const Vec3& p,
                              bool* inside) {
  const Mat3 rb = quat_to_matrix(robot.base_orientation);
  const Vec3 local = rb.transpose() * (p - robot.base_position);
  const Vec3 clamped = local.cwiseMax(-half).cwiseMin(half);
  *inside = (clamped - local).norm() == 0.0;
  return robot.base_position + rb * clamped;
}

// Sphere against oriented box; returns false when separated.
inline bool sphere_box(const RobotState& robot, const Vec3& half, const Vec3& center,
                       double radius, Vec3* point, Vec3* normal, double* pen) {
  bool inside = false;
  const Vec3 closest = box_closest_point(robot, half, center, &inside);
  const Vec3 d = center - closest;
  const double dist = d.norm();
  if (inside) {
    // Center inside the box: push out along the direction from the box center.
    const Vec3 away = center - robot.base_position;
    *normal = away.norm() > 0.0 ? away.normalized() : Vec3::UnitZ();
    *pen = radius;
    *point = center;
    return true;
  }
  if (dist > radius) {
    return false;
  }
  *normal = d / dist;
  *pen = radius - dist;
  *point = closest;
  return true;
}

}  // namespace detail

/// All touching pairs in the scene, each labeled with the robot link involved.
inline std::vector<ContactPoint> detect_contacts(const SimModel& model, const RobotState& robot,
                                                 const BallState& ball) {
  using detail::make_contact;
  const PhysicsConfig& cfg = model.cfg;
  const detail::Kinematics kin = detail::compute_kinematics(model, robot);
  const Vec3 up = Vec3::UnitZ();
  const BodyId ground{BodyKind::kGround, -1};
  const BodyId ball_id{BodyKind::kBall, -1};
  const BodyId torso{BodyKind::kTorso, -1};
  std::vector<ContactPoint> contacts;

  // Feet against the ball.
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 foot = kin.legs[leg].foot;
    const Vec3 d = ball.position - foot;
    const double dist = d.norm();
    const double pen = ball.radius + cfg.foot_radius - dist;
    if (pen >= 0.0 && dist > 0.0) {
      const Vec3 n = d / dist;
      const Vec3 point = foot + n * (cfg.foot_radius - 0.5 * pen);
      const Vec3 rel = detail::ball_point_velocity(ball, point) - kin.foot_vel[leg];
      contacts.push_back(make_contact(ball_id, {BodyKind::kFoot, leg}, point, n, pen, rel));
    }
  }

  // Ball against the ground plane z = 0.
  {
    const double pen = ball.radius - ball.position.z();
    if (pen >= 0.0) {
      const Vec3 point = ball.position - up * ball.radius;
      contacts.push_back(make_contact(ball_id, ground, point, up, pen,
                                      detail::ball_point_velocity(ball, point)));
    }
  }

  // Feet against the ground.
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 foot = kin.legs[leg].foot;
    const double pen = cfg.foot_radius - foot.z();
    if (pen >= 0.0) {
      contacts.push_back(make_contact({BodyKind::kFoot, leg}, ground, foot - up * cfg.foot_radius,
                                      up, pen, kin.foot_vel[leg]));
    }
  }

  // Torso corners against the ground.
  for (const Vec3& corner : torso_corners(model, robot)) {
    const double pen = -corner.z();
    if (pen >= 0.0) {
      contacts.push_back(make_contact(torso, ground, corner, up, pen,
                                      detail::base_point_velocity(robot, corner)));
    }
  }

  // Ball against the torso (detection only).
  {
    Vec3 point, n;
    double pen = 0.0;
    if (detail::sphere_box(robot, cfg.torso_half_extents, ball.position, ball.radius, &point, &n,
                           &pen)) {
      const Vec3 rel = detail::ball_point_velocity(ball, point) -
                       detail::base_point_velocity(robot, point);
      contacts.push_back(make_contact(ball_id, torso, point, n, pen, rel));
    }
  }

  // Ball against the knees (detection only).
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 d = ball.position - kin.knees[leg];
    const double dist = d.norm();
    const double pen = ball.radius + cfg.knee_radius - dist;
    if (pen >= 0.0 && dist > 0.0) {
      const Vec3 n = d / dist;
      const Vec3 point = kin.knees[leg] + n * cfg.knee_radius;
      const Vec3 rel = detail::ball_point_velocity(ball, point) -
                       detail::base_point_velocity(robot, point);
      contacts.push_back(make_contact(ball_id, {BodyKind::kKnee, leg}, point, n, pen, rel));
    }
  }

  // Self collision: foot against foot, foot against torso (detection only).
  for (int i = 0; i < kNumLegs; ++i) {
    for (int j = i + 1; j < kNumLegs; ++j) {
      const Vec3 d = kin.legs[i].foot - kin.legs[j].foot;
      const double dist = d.norm();
      const double pen = 2.0 * cfg.foot_radius - dist;
      if (pen >= 0.0) {
        const Vec3 n = dist > 0.0 ? Vec3(d / dist) : up;
        contacts.push_back(make_contact({BodyKind::kFoot, i}, {BodyKind::kFoot, j},
                                        kin.legs[j].foot + n * cfg.foot_radius, n, pen,
                                        kin.foot_vel[i] - kin.foot_vel[j]));
      }
    }
  }
  for (int leg = 0; leg < kNumLegs; ++leg) {
    Vec3 point, n;
    double pen = 0.0;
    if (detail::sphere_box(robot, cfg.torso_half_extents, kin.legs[leg].foot, cfg.foot_radius,
                           &point, &n, &pen)) {
      const Vec3 rel = kin.foot_vel[leg] - detail::base_point_velocity(robot, point);
      contacts.push_back(make_contact({BodyKind::kFoot, leg}, torso, point, n, pen, rel));
    }
  }
  return contacts;
}

/// Penalty normal force with Hunt-Crossley damping and regularized Coulomb
/// friction. Restitution e maps to the damping factor 1.5 (1 - e) s/m.
inline void apply_contact_model(ContactPoint& c, double stiffness, double mu, double restitution,
                                double regularization) {
  const double alpha = 1.5 * (1.0 - restitution);
  const double pen_rate = -c.v_norm;
  const double fn = std::max(0.0, stiffness * c.penetration * (1.0 + alpha * pen_rate));
  c.applies_force = true;
  c.normal_force = fn;
  const double vt = c.v_tan.norm();
  c.tangential_force = -mu * fn / std::sqrt(vt * vt + regularization * regularization) * c.v_tan;
}

/// Which pairs exchange forces. Ball-torso, ball-knee and self contacts are
/// terminal and never apply force.
inline bool contact_applies_force(const ContactPoint& c) {
  if (c.body_b.kind == BodyKind::kGround) {
    return true;
  }
  return c.is_foot_ball();
}

struct StepResult {
  RobotState robot;
  BallState ball;
  JointVector torque = JointVector::Zero();
  std::vector<ContactPoint> contacts;
};

/// PD torque for one substep, clamped to the actuator limit.
inline JointVector pd_torque(const PhysicsConfig& cfg, const JointVector& targets,
                             const JointVector& pos, const JointVector& vel) {
  JointVector tau = cfg.kp * (targets - pos) - cfg.kd * vel;
  return tau.cwiseMax(-cfg.torque_limit).cwiseMin(cfg.torque_limit);
}

/// Advances the scene by `dt` (a whole number of substeps) with semi-implicit
/// Euler. Returns the torque and contacts of the final substep.
inline StepResult step(const SimModel& model, const RobotState& robot_in, const BallState& ball_in,
                       const JointVector& joint_targets, const Vec3& external_force, double dt) {
  const PhysicsConfig& cfg = model.cfg;
  const int n_sub = std::max(1, static_cast<int>(std::lround(dt / cfg.substep_dt)));
  const double h = dt / n_sub;
  const Vec3 g(0.0, 0.0, -cfg.gravity);
  const Mat3 torso_inertia = model.torso_inertia();
  const Mat3 torso_inertia_inv = torso_inertia.inverse();
  const JointVector lower = joint_lower_limits(cfg);
  const JointVector upper = joint_upper_limits(cfg);

  StepResult out{robot_in, ball_in, JointVector::Zero(), {}};
  RobotState& robot = out.robot;
  BallState& ball = out.ball;

  for (int sub = 0; sub < n_sub; ++sub) {
    const detail::Kinematics kin = detail::compute_kinematics(model, robot);
    std::vector<ContactPoint> contacts = detect_contacts(model, robot, ball);

    Vec3 ball_force = ball.mass * g + external_force;
    Vec3 ball_torque = Vec3::Zero();
    Vec3 base_force = cfg.torso_mass * g;
    Vec3 base_torque = Vec3::Zero();
    std::array<Vec3, kNumLegs> foot_force;
    foot_force.fill(Vec3::Zero());

    for (ContactPoint& c : contacts) {
      if (!contact_applies_force(c)) {
        continue;
      }
      const bool ball_contact = c.body_a.kind == BodyKind::kBall;
      apply_contact_model(c, cfg.contact_stiffness, ball_contact ? cfg.friction : cfg.ground_friction,
                          ball_contact ? cfg.restitution : cfg.ground_restitution,
                          cfg.friction_regularization);
      const Vec3 f = c.normal_force * c.normal + c.tangential_force;
      switch (c.body_a.kind) {
        case BodyKind::kBall:
          ball_force += f;
          ball_torque += (c.point - ball.position).cross(f);
          break;
        case BodyKind::kFoot:
          foot_force[c.body_a.leg] += f;
          break;
        case BodyKind::kTorso:
          base_force += f;
          base_torque += (c.point - robot.base_position).cross(f);
          break;
        default:
          break;
      }
      if (c.body_b.kind == BodyKind::kFoot) {
        foot_force[c.body_b.leg] -= f;
      }
    }

    // Leg contact forces reach the joints through J^T and the torso through
    // the foot point.
    const JointVector tau = pd_torque(cfg, joint_targets, robot.joints_pos, robot.joints_vel);
    JointVector qdd = tau;
    for (int leg = 0; leg < kNumLegs; ++leg) {
      qdd.segment<3>(3 * leg) += kin.legs[leg].jacobian.transpose() * foot_force[leg];
      base_force += foot_force[leg];
      base_torque += (kin.legs[leg].foot - robot.base_position).cross(foot_force[leg]);
    }
    qdd /= cfg.joint_inertia;

    // Velocities first, then positions.
    robot.joints_vel += h * qdd;
    robot.joints_pos += h * robot.joints_vel;
    for (int j = 0; j < kNumJoints; ++j) {
      if (robot.joints_pos(j) < lower(j)) {
        robot.joints_pos(j) = lower(j);
        robot.joints_vel(j) = std::max(robot.joints_vel(j), 0.0);
      } else if (robot.joints_pos(j) > upper(j)) {
        robot.joints_pos(j) = upper(j);
        robot.joints_vel(j) = std::min(robot.joints_vel(j), 0.0);
      }
    }

    const Mat3 rb = quat_to_matrix(robot.base_orientation);
    Vec3 w_body = rb.transpose() * robot.base_ang_vel;
    const Vec3 t_body = rb.transpose() * base_torque;
    w_body += h * (torso_inertia_inv * (t_body - w_body.cross(torso_inertia * w_body)));
    robot.base_ang_vel = rb * w_body;
    robot.base_lin_vel += h * base_force / cfg.torso_mass;
    robot.base_position += h * robot.base_lin_vel;
    robot.base_orientation = quat_compose(quat_exp(robot.base_ang_vel * h), robot.base_orientation);

    ball.lin_vel += h * ball_force / ball.mass;
    ball.ang_vel += h * ball_torque / ball.inertia();
    ball.position += h * ball.lin_vel;
    ball.orientation = quat_compose(quat_exp(ball.ang_vel * h), ball.orientation);

    if (sub == n_sub - 1) {
      out.torque = tau;
      out.contacts = std::move(contacts);
    }
    if (!robot.finite() || !ball.finite()) {
      throw NonFiniteState("physics step produced a non-finite state");
    }
  }
  return out;
}

/// Kinetic + gravitational + contact spring energy of the scene.
inline double total_energy(const SimModel& model, const RobotState& robot, const BallState& ball) {
  const PhysicsConfig& cfg = model.cfg;
  const Mat3 rb = quat_to_matrix(robot.base_orientation);
  const Vec3 w_body = rb.transpose() * robot.base_ang_vel;
  double e = 0.5 * ball.mass * ball.lin_vel.squaredNorm() +
             0.5 * ball.inertia() * ball.ang_vel.squaredNorm() +
             ball.mass * cfg.gravity * ball.position.z();
  e += 0.5 * cfg.torso_mass * robot.base_lin_vel.squaredNorm() +
       0.5 * w_body.dot(model.torso_inertia() * w_body) +
       cfg.torso_mass * cfg.gravity * robot.base_position.z();
  e += 0.5 * cfg.joint_inertia * robot.joints_vel.squaredNorm();
  for (const ContactPoint& c : detect_contacts(model, robot, ball)) {
    if (contact_applies_force(c)) {
      e += 0.5 * cfg.contact_stiffness * c.penetration * c.penetration;
    }
  }
  return e;
}

/// Supine torso resting on its back at the static corner penetration.
inline RobotState supine_robot(const SimModel& model) {
  const PhysicsConfig& cfg = model.cfg;
  RobotState r;
  r.base_orientation = UnitQuaternion(0.0, 1.0, 0.0, 0.0);  // pi about x
  const double sink = cfg.torso_mass * cfg.gravity / (4.0 * cfg.contact_stiffness);
  r.base_position = {0.0, 0.0, cfg.torso_half_extents.z() - sink};
  r.joints_pos = nominal_pose(cfg);
  return r;
}

/// Ball center resting on the feet: least-squares fit of
/// |c - foot_i| = R + r_foot, then raised until no foot penetrates.
inline Vec3 cradle_position(const SimModel& model, const RobotState& robot, double radius) {
  const auto feet = forward_kinematics(model, robot.joints_pos, robot);
  const double target = radius + model.cfg.foot_radius;
  Vec3 c = Vec3::Zero();
  for (const Vec3& f : feet) {
    c += f / kNumLegs;
  }
  c.z() += 0.5 * target;
  for (int it = 0; it < 50; ++it) {
    Eigen::Matrix<double, kNumLegs, 3> jac;
    Eigen::Matrix<double, kNumLegs, 1> res;
    for (int i = 0; i < kNumLegs; ++i) {
      const Vec3 d = c - feet[i];
      const double n = d.norm();
      res(i) = n - target;
      jac.row(i) = (d / n).transpose();
    }
    const Vec3 delta = (jac.transpose() * jac).ldlt().solve(jac.transpose() * res);
    c -= delta;
    if (delta.norm() < 1e-12) {
      break;
    }
  }
  // Lowest height at which every foot is at or outside the contact distance.
  for (const Vec3& f : feet) {
    const double horiz2 = (c - f).head<2>().squaredNorm();
    if (horiz2 < target * target) {
      c.z() = std::max(c.z(), f.z() + std::sqrt(target * target - horiz2));
    }
  }
  return c;
}

}  // namespace circus
