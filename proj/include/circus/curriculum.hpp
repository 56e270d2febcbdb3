#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "circus/random.hpp"
#include "circus/rotation.hpp"

namespace circus {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

/// Fixed monotone schedule over PPO iterations. Factor and speed ramp
/// linearly between their start and end milestones; the update period steps
/// down 1.0 -> 0.5 -> 0.33 s at two milestones.
struct CurriculumSchedule {
  double factor_initial = 0.0;
  double factor_final = 1.0;
  long factor_start = 2000;
  long factor_end = 6000;

  double speed_initial_deg = 0.0;
  double speed_final_deg = 15.0;
  long speed_start = 2000;
  long speed_end = 6000;

  long period_half_at = 3000;   // switch to 0.5 s
  long period_third_at = 5000;  // switch to 0.33 s

  void validate() const {
    if (!(factor_initial >= 0.0 && factor_initial <= factor_final && factor_final <= 1.0)) {
      throw std::invalid_argument("curriculum: need 0 <= factor_initial <= factor_final <= 1");
    }
    if (!(speed_initial_deg >= 0.0 && speed_initial_deg <= speed_final_deg)) {
      throw std::invalid_argument("curriculum: need 0 <= speed_initial <= speed_final");
    }
    if (factor_start < 0 || factor_end < factor_start || speed_start < 0 ||
        speed_end < speed_start || period_half_at < 0 || period_third_at < period_half_at) {
      throw std::invalid_argument("curriculum: milestones must be non-negative and ordered");
    }
  }
};

struct CurriculumState {
  double factor = 0.0;
  double target_speed = 0.0;  // rad/s
  double update_period = 1.0; // s
  long iteration = 0;
};

namespace detail {
inline double ramp(double from, double to, long start, long end, long it) {
  if (it <= start) return from;
  if (it >= end) return to;
  const double t = static_cast<double>(it - start) / static_cast<double>(end - start);
  return from + t * (to - from);
}
}  // namespace detail

inline CurriculumState curriculum_at(long iteration, const CurriculumSchedule& s) {
  CurriculumState c;
  c.iteration = iteration;
  c.factor = detail::ramp(s.factor_initial, s.factor_final, s.factor_start, s.factor_end, iteration);
  c.target_speed = kDegToRad * detail::ramp(s.speed_initial_deg, s.speed_final_deg, s.speed_start,
                                            s.speed_end, iteration);
  c.update_period = iteration >= s.period_third_at ? 0.33
                    : iteration >= s.period_half_at ? 0.5
                                                     : 1.0;
  return c;
}

/// State for the next PPO iteration.
inline CurriculumState advance(const CurriculumState& state, const CurriculumSchedule& s) {
  return curriculum_at(state.iteration + 1, s);
}

enum class RotationAxis { kRoll, kPitch, kYaw };

inline Vec3 axis_vector(RotationAxis a) {
  switch (a) {
    case RotationAxis::kRoll:
      return Vec3::UnitX();
    case RotationAxis::kPitch:
      return Vec3::UnitY();
    case RotationAxis::kYaw:
      break;
  }
  return Vec3::UnitZ();
}

/// Axis and sign drawn uniformly; magnitude and period from the curriculum.
/// The axis is expressed in the robot base frame.
inline AngularVelocityCommand sample_command(const CurriculumState& state, SeedStream& rng,
                                             const std::vector<RotationAxis>& axes) {
  if (axes.empty()) {
    throw std::invalid_argument("sample_command: axis set must not be empty");
  }
  const int idx = rng.uniform_int(0, static_cast<int>(axes.size()) - 1);
  const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  AngularVelocityCommand cmd;
  cmd.axis = sign * axis_vector(axes[idx]);
  cmd.magnitude = state.target_speed;
  cmd.update_period = state.update_period;
  return cmd;
}

}  // namespace circus
