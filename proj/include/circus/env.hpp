#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "circus/curriculum.hpp"
#include "circus/errors.hpp"
#include "circus/physics.hpp"
#include "circus/random.hpp"
#include "circus/randomize.hpp"
#include "circus/rotation.hpp"

namespace circus {

inline constexpr int kFrameSize = ObservationFrame::kSize;
inline constexpr int kHistory = 3;
inline constexpr int kObsSize = kHistory * kFrameSize + 1;  // 130

using Observation = Eigen::Matrix<double, kObsSize, 1>;

struct RewardCoefficients {
  double k_q = 1.0;
  double k_v = 0.5;
  double k_tau = 1e-4;
  double k_slip = 0.1;
  double k_collide = 0.1;

  void validate() const {
    if (!(k_q >= 0.0 && k_v >= 0.0 && k_tau >= 0.0 && k_slip >= 0.0 && k_collide >= 0.0)) {
      throw std::invalid_argument("reward coefficients must be >= 0");
    }
  }
};

struct RewardBreakdown {
  double r_q = 0.0;
  double r_v = 0.0;
  double r_tau = 0.0;
  double r_slip = 0.0;
  double r_collide = 0.0;
  double total = 0.0;
};

/// Region half-widths are multiples of the ball radius around the nominal
/// rest position of the ball.
struct TerminationConfig {
  double horizontal_region = 1.5;
  double vertical_region = 1.0;
  double max_no_contact_time = 1.0;  // s

  void validate() const {
    if (!(horizontal_region > 0.0 && vertical_region > 0.0 && max_no_contact_time > 0.0)) {
      throw std::invalid_argument("termination thresholds must be > 0");
    }
  }
};

enum class Verdict {
  kNone,
  kSelfCollision,
  kIllegalContact,
  kOutOfRegion,
  kNoContactTimeout,
  kNonFiniteState,
};

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kNone: return "none";
    case Verdict::kSelfCollision: return "self_collision";
    case Verdict::kIllegalContact: return "illegal_contact";
    case Verdict::kOutOfRegion: return "out_of_region";
    case Verdict::kNoContactTimeout: return "no_contact_timeout";
    case Verdict::kNonFiniteState: return "non_finite_state";
  }
  return "unknown";
}

/// r^q as a function of the geodesic angle.
inline double orientation_reward(double delta_q, double k_q) {
  return k_q / (std::exp(delta_q) + 2.0 + std::exp(-delta_q));
}

inline double orientation_error(const BallState& ball, const UnitQuaternion& target) {
  return quat_angle(quat_compose(quat_inverse(ball.orientation), target));
}

inline RewardBreakdown compute_reward(const RobotState& robot, const BallState& ball,
                                      const JointVector& torques,
                                      std::span<const ContactPoint> contacts,
                                      const UnitQuaternion& target,
                                      const RewardCoefficients& k) {
  RewardBreakdown r;
  r.r_q = orientation_reward(orientation_error(ball, target), k.k_q);
  r.r_v = -k.k_v * robot.base_lin_vel.norm();
  r.r_tau = -k.k_tau * torques.squaredNorm();
  double slip = 0.0;
  double collide = 0.0;
  for (const ContactPoint& c : contacts) {
    if (c.is_foot_ball()) {
      slip += c.v_tan.norm();
      collide += std::abs(c.v_norm);
    }
  }
  r.r_slip = -k.k_slip * slip;
  r.r_collide = -k.k_collide * collide;
  r.total = r.r_q + r.r_v + r.r_tau + r.r_slip + r.r_collide;
  return r;
}

inline bool has_foot_ball_contact(std::span<const ContactPoint> contacts) {
  for (const ContactPoint& c : contacts) {
    if (c.is_foot_ball()) return true;
  }
  return false;
}

/// First matching rule in order: self collision, non-foot ball contact,
/// ball outside the feasible box, ball airborne too long.
inline Verdict check_termination(const BallState& ball, std::span<const ContactPoint> contacts,
                                 double no_contact_timer, const Vec3& rest_position,
                                 const TerminationConfig& cfg) {
  for (const ContactPoint& c : contacts) {
    if (c.is_self_collision()) return Verdict::kSelfCollision;
  }
  for (const ContactPoint& c : contacts) {
    if (c.is_ball_robot() && !c.is_foot_ball()) return Verdict::kIllegalContact;
  }
  const Vec3 d = ball.position - rest_position;
  const double h = cfg.horizontal_region * ball.radius;
  if (std::abs(d.x()) > h || std::abs(d.y()) > h ||
      std::abs(d.z()) > cfg.vertical_region * ball.radius) {
    return Verdict::kOutOfRegion;
  }
  if (no_contact_timer > cfg.max_no_contact_time) return Verdict::kNoContactTimeout;
  return Verdict::kNone;
}

/// Noise-free frame from the simulated state.
inline ObservationFrame make_frame(const RobotState& robot, const BallState& ball,
                                   const UnitQuaternion& target, const JointVector& prev_action) {
  ObservationFrame f;
  f.joints_pos = robot.joints_pos;
  f.joints_vel = robot.joints_vel;
  f.ball_pos_in_base = quat_rotate(quat_inverse(robot.base_orientation),
                                   ball.position - robot.base_position);
  f.quat_diff = quat_compose(quat_inverse(ball.orientation), target);
  f.prev_action = prev_action;
  return f;
}

/// Flattens (x_t, x_{t-1}, x_{t-2}, t_remain). `history[0]` is the newest
/// frame; `t_remain_normalized` is already divided by the update period.
inline Observation build_observation(std::span<const ObservationFrame, kHistory> history,
                                     double t_remain_normalized) {
  Observation obs;
  int o = 0;
  for (const ObservationFrame& f : history) {
    obs.segment<kNumJoints>(o) = f.joints_pos;
    o += kNumJoints;
    obs.segment<kNumJoints>(o) = f.joints_vel;
    o += kNumJoints;
    obs.segment<3>(o) = f.ball_pos_in_base;
    o += 3;
    obs(o++) = f.quat_diff.w();
    obs(o++) = f.quat_diff.x();
    obs(o++) = f.quat_diff.y();
    obs(o++) = f.quat_diff.z();
    obs.segment<kNumJoints>(o) = f.prev_action;
    o += kNumJoints;
  }
  obs(o) = t_remain_normalized;
  return obs;
}

struct EnvConfig {
  PhysicsConfig physics;
  RewardCoefficients reward;
  TerminationConfig termination;
  RandomizationConfig randomization;
  DisturbanceConfig disturbance;
  bool disturbance_enabled = true;
  // Compose each new target from the measured ball orientation instead of
  // the previous target.
  bool target_from_measured = false;
  double settle_time = 0.5;        // s, upper bound
  double settle_min_time = 0.1;    // s
  double settle_speed_tol = 0.01;  // m/s

  void validate() const {
    if (!(physics.substep_dt > 0.0) || !(physics.control_dt > 0.0)) {
      throw std::invalid_argument("physics: substep_dt and control_dt must be > 0");
    }
    const double ratio = physics.control_dt / physics.substep_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) {
      throw std::invalid_argument("physics: substep_dt must divide control_dt exactly");
    }
    if (!(physics.friction >= 0.0 && physics.friction <= 2.0) ||
        !(physics.ground_friction >= 0.0 && physics.ground_friction <= 2.0)) {
      throw std::invalid_argument("physics: friction must be in [0, 2]");
    }
    if (!(physics.restitution >= 0.0 && physics.restitution <= 1.0) ||
        !(physics.ground_restitution >= 0.0 && physics.ground_restitution <= 1.0)) {
      throw std::invalid_argument("physics: restitution must be in [0, 1]");
    }
    if (!(physics.contact_stiffness > 0.0 && physics.joint_inertia > 0.0 &&
          physics.kp >= 0.0 && physics.kd >= 0.0 && physics.torque_limit > 0.0 &&
          physics.foot_radius > 0.0 && physics.torso_mass > 0.0 &&
          physics.friction_regularization > 0.0)) {
      throw std::invalid_argument("physics: stiffness, inertia, gains and sizes must be positive");
    }
    reward.validate();
    termination.validate();
    randomization.validate();
    disturbance.validate();
  }
};

/// Everything the last env_step produced, for traces and diagnostics.
struct StepInfo {
  RewardBreakdown reward;
  Verdict verdict = Verdict::kNone;
  JointVector torque = JointVector::Zero();
  std::vector<ContactPoint> contacts;
  Vec3 disturbance = Vec3::Zero();
  double delta_q = 0.0;
  bool target_updated = false;
};

/// The ball-rotation MDP for one robot. Not thread safe; one per worker.
class BallEnv {
 public:
  explicit BallEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    cfg_.disturbance.control_dt = cfg_.physics.control_dt;
    const SimModel nominal = SimModel::nominal(cfg_.physics);
    rest_position_ = cradle_position(nominal, supine_robot(nominal),
                                     cfg_.randomization.nominal_ball_radius);
    nominal_pose_ = nominal_pose(cfg_.physics);
    half_range_ = joint_half_ranges(cfg_.physics);
  }

  const EnvConfig& config() const { return cfg_; }
  const Vec3& rest_position() const { return rest_position_; }

  /// Randomized reset followed by a zero-command settle. Throws ResetFailed
  /// when the draw cannot settle into a non-terminal state.
  Observation reset(std::uint64_t seed, const CurriculumState& curriculum,
                    const AngularVelocityCommand& command) {
    command.validate();
    factor_ = curriculum.factor;
    SeedStream domain_rng(derive_seed({seed, static_cast<std::uint64_t>(Stream::kDomain)}));
    noise_rng_ = SeedStream(derive_seed({seed, static_cast<std::uint64_t>(Stream::kObservationNoise)}));
    disturbance_rng_ = SeedStream(derive_seed({seed, static_cast<std::uint64_t>(Stream::kDisturbance)}));
    disturbance_ = DisturbanceSchedule(cfg_.disturbance);

    sample_ = sample_domain(domain_rng, cfg_.randomization, factor_);
    model_ = sample_.apply(SimModel::nominal(cfg_.physics));

    robot_ = supine_robot(model_);
    robot_.base_position += sample_.init_base_offset;
    robot_.base_orientation =
        quat_compose(quat_exp(Vec3(0.0, 0.0, sample_.init_base_yaw)), robot_.base_orientation);
    robot_.joints_pos = (nominal_pose_ + sample_.init_joint_delta)
                            .cwiseMax(joint_lower_limits(cfg_.physics))
                            .cwiseMin(joint_upper_limits(cfg_.physics));

    ball_ = BallState{};
    ball_.mass = sample_.ball_mass;
    ball_.radius = sample_.ball_radius;
    ball_.position = cradle_position(model_, robot_, ball_.radius) + sample_.init_ball_offset;
    ball_.orientation = quat_exp(sample_.init_ball_rotvec);

    // Settle under the initial pose targets; no disturbance.
    const JointVector hold = robot_.joints_pos;
    const double dt = cfg_.physics.control_dt;
    double no_contact = 0.0;
    const int max_steps = static_cast<int>(std::lround(cfg_.settle_time / dt));
    const int min_steps = static_cast<int>(std::lround(cfg_.settle_min_time / dt));
    for (int i = 0; i < max_steps; ++i) {
      StepResult s;
      try {
        s = step(model_, robot_, ball_, hold, Vec3::Zero(), dt);
      } catch (const NonFiniteState&) {
        throw ResetFailed("settle produced a non-finite state");
      }
      robot_ = s.robot;
      ball_ = s.ball;
      no_contact = has_foot_ball_contact(s.contacts) ? 0.0 : no_contact + dt;
      const Verdict v = check_termination(ball_, s.contacts, no_contact, rest_position_,
                                          cfg_.termination);
      if (v != Verdict::kNone) {
        throw ResetFailed(std::string("settle ended in ") + verdict_name(v));
      }
      if (i + 1 >= min_steps && ball_.lin_vel.norm() < cfg_.settle_speed_tol &&
          robot_.base_lin_vel.norm() < cfg_.settle_speed_tol) {
        break;
      }
    }

    command_ = command;
    command_.axis = quat_rotate(robot_.base_orientation, command.axis).normalized();
    target_ = ball_.orientation;
    steps_per_update_ =
        std::max(1L, std::lround(command_.update_period / cfg_.physics.control_dt));
    steps_to_update_ = steps_per_update_;
    time_ = 0.0;
    no_contact_timer_ = 0.0;
    prev_action_ = ((hold - nominal_pose_).array() / half_range_.array()).matrix();
    last_ = StepInfo{};
    last_.delta_q = orientation_error(ball_, target_);

    const ObservationFrame frame = perturb_observation(
        make_frame(robot_, ball_, target_, prev_action_), noise_rng_, cfg_.randomization, factor_);
    history_.fill(frame);
    return observation();
  }

  /// Joint targets for a raw policy output: squashed by tanh, then mapped
  /// into nominal +/- half range.
  JointVector action_to_targets(const JointVector& action) const {
    return nominal_pose_ + half_range_.cwiseProduct(action.array().tanh().matrix());
  }

  /// Next push from this episode's disturbance schedule.
  Vec3 next_disturbance() {
    if (!cfg_.disturbance_enabled) return Vec3::Zero();
    return disturbance_.force(time_, disturbance_rng_);
  }

  Observation step_env(const JointVector& action) { return step_env(action, next_disturbance()); }

  Observation step_env(const JointVector& action, const Vec3& disturbance) {
    if (!action.allFinite()) {
      throw std::invalid_argument("env step: action must be finite");
    }
    const double dt = cfg_.physics.control_dt;
    const JointVector squashed = action.array().tanh().matrix();
    const JointVector targets = nominal_pose_ + half_range_.cwiseProduct(squashed);
    last_ = StepInfo{};
    last_.disturbance = disturbance;

    StepResult s;
    try {
      s = step(model_, robot_, ball_, targets, disturbance, dt);
    } catch (const NonFiniteState&) {
      last_.verdict = Verdict::kNonFiniteState;
      time_ += dt;
      return observation();
    }
    robot_ = s.robot;
    ball_ = s.ball;
    time_ += dt;
    no_contact_timer_ = has_foot_ball_contact(s.contacts) ? 0.0 : no_contact_timer_ + dt;

    last_.reward = compute_reward(robot_, ball_, s.torque, s.contacts, target_, cfg_.reward);
    last_.delta_q = orientation_error(ball_, target_);
    last_.torque = s.torque;
    last_.verdict = check_termination(ball_, s.contacts, no_contact_timer_, rest_position_,
                                      cfg_.termination);
    last_.contacts = std::move(s.contacts);

    if (--steps_to_update_ == 0) {
      const UnitQuaternion base = cfg_.target_from_measured ? ball_.orientation : target_;
      target_ = propagate_target(base, command_);
      steps_to_update_ = steps_per_update_;
      last_.target_updated = true;
    }
    prev_action_ = squashed;

    for (int i = kHistory - 1; i > 0; --i) {
      history_[i] = history_[i - 1];
    }
    history_[0] = perturb_observation(make_frame(robot_, ball_, target_, prev_action_),
                                      noise_rng_, cfg_.randomization, factor_);
    return observation();
  }

  Observation observation() const {
    return build_observation(std::span<const ObservationFrame, kHistory>(history_), t_remain());
  }

  double t_remain() const {
    return static_cast<double>(steps_to_update_) / static_cast<double>(steps_per_update_);
  }

  const StepInfo& last() const { return last_; }
  const RobotState& robot() const { return robot_; }
  const BallState& ball() const { return ball_; }
  const SimModel& model() const { return model_; }
  const UnitQuaternion& target() const { return target_; }
  const AngularVelocityCommand& command() const { return command_; }
  const RandomizationSample& sample() const { return sample_; }
  const std::array<ObservationFrame, kHistory>& history() const { return history_; }
  double time() const { return time_; }
  double no_contact_timer() const { return no_contact_timer_; }
  long steps_per_update() const { return steps_per_update_; }

 private:
  EnvConfig cfg_;
  Vec3 rest_position_ = Vec3::Zero();
  JointVector nominal_pose_ = JointVector::Zero();
  JointVector half_range_ = JointVector::Zero();

  double factor_ = 0.0;
  SeedStream noise_rng_;
  SeedStream disturbance_rng_;
  DisturbanceSchedule disturbance_;
  RandomizationSample sample_;
  SimModel model_;
  RobotState robot_;
  BallState ball_;
  AngularVelocityCommand command_;
  UnitQuaternion target_;
  long steps_per_update_ = 100;
  long steps_to_update_ = 100;
  double time_ = 0.0;
  double no_contact_timer_ = 0.0;
  JointVector prev_action_ = JointVector::Zero();
  std::array<ObservationFrame, kHistory> history_{};
  StepInfo last_;
};

}  // namespace circus
