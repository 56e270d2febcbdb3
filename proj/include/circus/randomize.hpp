#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "circus/physics.hpp"
#include "circus/random.hpp"
#include "circus/rotation.hpp"

namespace circus {

/// Randomization ranges at curriculum factor 1. Gaussian entries are
/// zero-mean standard deviations; relative entries are +/- fractions of the
/// nominal value; uniform ranges are [lo, hi].
struct RandomizationConfig {
  double shank_noise_std = 0.03;        // m, shank position and length
  double joint_pos_noise_std = 0.05;    // rad, observation
  double joint_vel_noise_std = 0.3;     // rad/s, observation
  double ball_mass_rel = 0.05;
  double ball_radius_rel = 0.10;
  double friction_lo = 0.5;
  double friction_hi = 1.1;
  double restitution_lo = 0.9;
  double restitution_hi = 1.0;
  double ball_pos_noise_std = 0.04;     // m, observation
  double ball_ori_noise_std = 0.03;     // rad per axis, observation

  // Initial state perturbation.
  double init_joint_pos_std = 0.05;     // rad
  double init_base_pos_std = 0.01;      // m, horizontal
  double init_base_yaw_std = 0.05;      // rad
  double init_ball_pos_std = 0.01;      // m, horizontal
  double init_ball_ori_std = 0.5;       // rad per axis

  double nominal_ball_mass = 3.0;       // kg
  double nominal_ball_radius = 0.4;     // m

  void validate() const {
    const double stds[] = {shank_noise_std,    joint_pos_noise_std, joint_vel_noise_std,
                           ball_pos_noise_std, ball_ori_noise_std,  init_joint_pos_std,
                           init_base_pos_std,  init_base_yaw_std,   init_ball_pos_std,
                           init_ball_ori_std};
    for (double s : stds) {
      if (!(s >= 0.0)) throw std::invalid_argument("randomization: standard deviations must be >= 0");
    }
    if (!(ball_mass_rel >= 0.0 && ball_mass_rel < 1.0) ||
        !(ball_radius_rel >= 0.0 && ball_radius_rel < 1.0)) {
      throw std::invalid_argument("randomization: relative ranges must be in [0, 1)");
    }
    if (!(friction_lo <= friction_hi) || friction_lo < 0.0 || friction_hi > 2.0) {
      throw std::invalid_argument("randomization: friction range must lie in [0, 2]");
    }
    if (!(restitution_lo <= restitution_hi) || restitution_lo < 0.0 || restitution_hi > 1.0) {
      throw std::invalid_argument("randomization: restitution range must lie in [0, 1]");
    }
    if (!(nominal_ball_mass > 0.0) || !(nominal_ball_radius > 0.0)) {
      throw std::invalid_argument("randomization: nominal ball mass and radius must be > 0");
    }
  }
};

/// One episode's worth of model-side randomization.
struct RandomizationSample {
  std::array<double, kNumLegs> shank_length_delta{};
  std::array<Vec3, kNumLegs> shank_offset{};
  double ball_mass = 3.0;
  double ball_radius = 0.4;
  double friction = 0.8;
  double restitution = 0.95;

  JointVector init_joint_delta = JointVector::Zero();
  Vec3 init_base_offset = Vec3::Zero();
  double init_base_yaw = 0.0;
  Vec3 init_ball_offset = Vec3::Zero();
  Vec3 init_ball_rotvec = Vec3::Zero();

  /// Applies the leg and contact perturbations to a nominal model.
  SimModel apply(SimModel model) const {
    for (int leg = 0; leg < kNumLegs; ++leg) {
      model.legs[leg].shank_length += shank_length_delta[leg];
      model.legs[leg].shank_offset += shank_offset[leg];
    }
    model.cfg.friction = friction;
    model.cfg.restitution = restitution;
    return model;
  }
};

inline void check_factor(double factor) {
  if (!(factor >= 0.0 && factor <= 1.0)) {
    throw std::invalid_argument("curriculum factor must be in [0, 1]");
  }
}

/// Gaussian stds scale with the factor; relative and uniform ranges shrink
/// linearly towards their midpoints. The number of draws does not depend on
/// the factor.
inline RandomizationSample sample_domain(SeedStream& rng, const RandomizationConfig& cfg,
                                         double factor) {
  check_factor(factor);
  RandomizationSample s;
  const double shank_std = factor * cfg.shank_noise_std;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    s.shank_length_delta[leg] = rng.normal(shank_std);
    s.shank_offset[leg] = {rng.normal(shank_std), rng.normal(shank_std), rng.normal(shank_std)};
  }
  const auto shrunk = [&](double lo, double hi) {
    const double mid = 0.5 * (lo + hi);
    return mid + factor * (rng.uniform(lo, hi) - mid);
  };
  s.ball_mass = cfg.nominal_ball_mass * (1.0 + shrunk(-cfg.ball_mass_rel, cfg.ball_mass_rel));
  s.ball_radius =
      cfg.nominal_ball_radius * (1.0 + shrunk(-cfg.ball_radius_rel, cfg.ball_radius_rel));
  s.friction = shrunk(cfg.friction_lo, cfg.friction_hi);
  s.restitution = shrunk(cfg.restitution_lo, cfg.restitution_hi);

  for (int j = 0; j < kNumJoints; ++j) {
    s.init_joint_delta(j) = rng.normal(factor * cfg.init_joint_pos_std);
  }
  s.init_base_offset = {rng.normal(factor * cfg.init_base_pos_std),
                        rng.normal(factor * cfg.init_base_pos_std), 0.0};
  s.init_base_yaw = rng.normal(factor * cfg.init_base_yaw_std);
  s.init_ball_offset = {rng.normal(factor * cfg.init_ball_pos_std),
                        rng.normal(factor * cfg.init_ball_pos_std), 0.0};
  s.init_ball_rotvec = {rng.normal(factor * cfg.init_ball_ori_std),
                        rng.normal(factor * cfg.init_ball_ori_std),
                        rng.normal(factor * cfg.init_ball_ori_std)};
  return s;
}

/// One 43-scalar observation frame.
struct ObservationFrame {
  static constexpr int kSize = 43;

  JointVector joints_pos = JointVector::Zero();
  JointVector joints_vel = JointVector::Zero();
  Vec3 ball_pos_in_base = Vec3::Zero();
  UnitQuaternion quat_diff;
  JointVector prev_action = JointVector::Zero();
};

/// Measurement noise for one frame. The previous action is never perturbed.
inline ObservationFrame perturb_observation(ObservationFrame frame, SeedStream& rng,
                                            const RandomizationConfig& cfg, double factor) {
  check_factor(factor);
  for (int j = 0; j < kNumJoints; ++j) {
    frame.joints_pos(j) += rng.normal(factor * cfg.joint_pos_noise_std);
  }
  for (int j = 0; j < kNumJoints; ++j) {
    frame.joints_vel(j) += rng.normal(factor * cfg.joint_vel_noise_std);
  }
  for (int i = 0; i < 3; ++i) {
    frame.ball_pos_in_base(i) += rng.normal(factor * cfg.ball_pos_noise_std);
  }
  const double ori_std = factor * cfg.ball_ori_noise_std;
  const Vec3 rotvec(rng.normal(ori_std), rng.normal(ori_std), rng.normal(ori_std));
  if (ori_std > 0.0) {
    frame.quat_diff = quat_compose(quat_exp(rotvec), frame.quat_diff);
  }
  return frame;
}

/// Ball push schedule parameters.
struct DisturbanceConfig {
  double magnitude = 50.0;    // N
  double duration = 0.4;      // s
  double probability = 0.2;   // per decision window
  double window = 1.0;        // s
  double control_dt = 0.01;   // s, quantization of start and duration

  void validate() const {
    if (!(magnitude >= 0.0)) throw std::invalid_argument("disturbance: magnitude must be >= 0");
    if (!(probability >= 0.0 && probability <= 1.0)) {
      throw std::invalid_argument("disturbance: probability must be in [0, 1]");
    }
    if (!(duration >= 0.0) || !(window > 0.0) || !(control_dt > 0.0)) {
      throw std::invalid_argument("disturbance: duration >= 0, window > 0 and control_dt > 0 required");
    }
  }
};

/// Per-episode disturbance state. At the start of each window a Bernoulli
/// draw decides whether a push begins at a uniformly random step inside the
/// window. A push is delayed until the previous one has finished, so every
/// activation lasts exactly `duration` in whole control steps.
class DisturbanceSchedule {
 public:
  DisturbanceSchedule() = default;
  explicit DisturbanceSchedule(const DisturbanceConfig& cfg) : cfg_(cfg) {}

  /// Force on the ball at `sim_time`. Times must be non-decreasing.
  Vec3 force(double sim_time, SeedStream& rng) {
    const long step = std::lround(sim_time / cfg_.control_dt);
    const long window_steps = std::max(1L, std::lround(cfg_.window / cfg_.control_dt));
    const long duration_steps = std::lround(cfg_.duration / cfg_.control_dt);
    while (next_window_ <= step / window_steps) {
      const long w = next_window_++;
      // Fixed draw layout per window keeps streams aligned across outcomes.
      const bool active = rng.bernoulli(cfg_.probability);
      const long offset = std::min<long>(
          window_steps - 1, static_cast<long>(rng.uniform(0.0, 1.0) * window_steps));
      const Vec3 dir = rng.unit_vector();
      if (active && duration_steps > 0) {
        const long start = std::max(w * window_steps + offset, last_end_);
        queue_.push_back({start, start + duration_steps, dir});
        last_end_ = start + duration_steps;
        ++activations_;
      }
    }
    while (!queue_.empty() && queue_.front().end <= step) {
      queue_.pop_front();
    }
    if (!queue_.empty() && queue_.front().start <= step) {
      return cfg_.magnitude * queue_.front().direction;
    }
    return Vec3::Zero();
  }

  long activations() const { return activations_; }

 private:
  struct Push {
    long start;
    long end;
    Vec3 direction;
  };

  DisturbanceConfig cfg_;
  long next_window_ = 0;
  long last_end_ = 0;
  long activations_ = 0;
  std::deque<Push> queue_;
};

/// Stateless form for a single query: disturbance force at `sim_time` for an
/// episode whose schedule is driven by `rng` from time zero.
inline Vec3 disturbance_force(double sim_time, SeedStream& rng, const DisturbanceConfig& cfg) {
  DisturbanceSchedule schedule(cfg);
  return schedule.force(sim_time, rng);
}

}  // namespace circus
