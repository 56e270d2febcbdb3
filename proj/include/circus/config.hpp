#pragma once

// Run configuration as a JSON tree. Every field has a default; unknown keys
// are rejected; the digest identifies the settings that affect results.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "circus/checkpoint.hpp"
#include "circus/curriculum.hpp"
#include "circus/env.hpp"
#include "circus/errors.hpp"
#include "circus/nn.hpp"
#include "circus/ppo.hpp"
#include "circus/rollout.hpp"

namespace circus {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  std::uint64_t seed = 1;
  long iterations = 500;
  long checkpoint_interval = 100;
  int max_nonfinite_iterations = 5;
  std::string output_dir = "runs/default";

  rollout::RolloutConfig rollout;
  EnvConfig env;
  CurriculumSchedule curriculum;
  ppo::PpoConfig ppo;
  nn::InitScheme network;

  void validate() const {
    try {
      if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
      if (checkpoint_interval < 1) throw std::invalid_argument("checkpoint_interval must be >= 1");
      if (max_nonfinite_iterations < 0) {
        throw std::invalid_argument("max_nonfinite_iterations must be >= 0");
      }
      if (network.hidden.empty()) throw std::invalid_argument("network.hidden must not be empty");
      for (int h : network.hidden) {
        if (h < 1) throw std::invalid_argument("network.hidden sizes must be >= 1");
      }
      if (!(network.policy_output_gain > 0.0) || !(network.value_output_gain > 0.0)) {
        throw std::invalid_argument("network output gains must be > 0");
      }
      rollout.validate();
      env.validate();
      curriculum.validate();
      ppo.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("invalid config: ") + e.what());
    }
  }
};

inline const char* axis_name(RotationAxis a) {
  switch (a) {
    case RotationAxis::kRoll:
      return "roll";
    case RotationAxis::kPitch:
      return "pitch";
    case RotationAxis::kYaw:
      break;
  }
  return "yaw";
}

inline RotationAxis parse_axis(const std::string& s) {
  if (s == "roll") return RotationAxis::kRoll;
  if (s == "pitch") return RotationAxis::kPitch;
  if (s == "yaw") return RotationAxis::kYaw;
  throw ConfigError("unknown axis '" + s + "' (expected roll, pitch or yaw)");
}

namespace config_detail {

using nlohmann::json;

class Writer {
 public:
  explicit Writer(json& j) : j_(j) {}
  template <typename T>
  void operator()(const char* key, const T& v) {
    j_[key] = v;
  }
  void operator()(const char* key, const Vec3& v) { j_[key] = {v.x(), v.y(), v.z()}; }
  void operator()(const char* key, const std::vector<RotationAxis>& axes) {
    json a = json::array();
    for (RotationAxis x : axes) a.push_back(axis_name(x));
    j_[key] = a;
  }

 private:
  json& j_;
};

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  template <typename T>
  void operator()(const char* key, T& v) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      read(j_.at(key), v);
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }
  /// Marks a key as known without reading it (nested sections).
  void allow(const char* key) { seen_.insert(key); }
  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  template <typename T>
  static void read(const json& j, T& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("expected a boolean");
      v = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("expected an integer");
      v = j.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("expected a number");
      v = j.get<T>();
    } else {
      v = j.get<T>();
    }
  }
  static void read(const json& j, Vec3& v) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected an array of 3 numbers");
    for (int i = 0; i < 3; ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  }
  static void read(const json& j, std::vector<RotationAxis>& axes) {
    if (!j.is_array()) throw ConfigError("expected an array of axis names");
    axes.clear();
    for (const auto& s : j) axes.push_back(parse_axis(s.get<std::string>()));
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class V, class C>
void fields(V& v, C& c) {
  using T = std::remove_const_t<C>;
  if constexpr (std::is_same_v<T, PhysicsConfig>) {
    v("substep_dt", c.substep_dt);
    v("control_dt", c.control_dt);
    v("gravity", c.gravity);
    v("contact_stiffness", c.contact_stiffness);
    v("friction", c.friction);
    v("restitution", c.restitution);
    v("ground_friction", c.ground_friction);
    v("ground_restitution", c.ground_restitution);
    v("friction_regularization", c.friction_regularization);
    v("joint_inertia", c.joint_inertia);
    v("kp", c.kp);
    v("kd", c.kd);
    v("torque_limit", c.torque_limit);
    v("hip_x", c.hip_x);
    v("hip_y", c.hip_y);
    v("hip_lateral", c.hip_lateral);
    v("thigh_length", c.thigh_length);
    v("shank_length", c.shank_length);
    v("foot_radius", c.foot_radius);
    v("knee_radius", c.knee_radius);
    v("nominal_haa", c.nominal_haa);
    v("nominal_hfe", c.nominal_hfe);
    v("nominal_kfe", c.nominal_kfe);
    v("haa_range", c.haa_range);
    v("hfe_range", c.hfe_range);
    v("kfe_range", c.kfe_range);
    v("torso_half_extents", c.torso_half_extents);
    v("torso_mass", c.torso_mass);
  } else if constexpr (std::is_same_v<T, RewardCoefficients>) {
    v("k_q", c.k_q);
    v("k_v", c.k_v);
    v("k_tau", c.k_tau);
    v("k_slip", c.k_slip);
    v("k_collide", c.k_collide);
  } else if constexpr (std::is_same_v<T, TerminationConfig>) {
    v("horizontal_region", c.horizontal_region);
    v("vertical_region", c.vertical_region);
    v("max_no_contact_time", c.max_no_contact_time);
  } else if constexpr (std::is_same_v<T, RandomizationConfig>) {
    v("shank_noise_std", c.shank_noise_std);
    v("joint_pos_noise_std", c.joint_pos_noise_std);
    v("joint_vel_noise_std", c.joint_vel_noise_std);
    v("ball_mass_rel", c.ball_mass_rel);
    v("ball_radius_rel", c.ball_radius_rel);
    v("friction_lo", c.friction_lo);
    v("friction_hi", c.friction_hi);
    v("restitution_lo", c.restitution_lo);
    v("restitution_hi", c.restitution_hi);
    v("ball_pos_noise_std", c.ball_pos_noise_std);
    v("ball_ori_noise_std", c.ball_ori_noise_std);
    v("init_joint_pos_std", c.init_joint_pos_std);
    v("init_base_pos_std", c.init_base_pos_std);
    v("init_base_yaw_std", c.init_base_yaw_std);
    v("init_ball_pos_std", c.init_ball_pos_std);
    v("init_ball_ori_std", c.init_ball_ori_std);
    v("nominal_ball_mass", c.nominal_ball_mass);
    v("nominal_ball_radius", c.nominal_ball_radius);
  } else if constexpr (std::is_same_v<T, DisturbanceConfig>) {
    // control_dt is taken from the physics section.
    v("magnitude", c.magnitude);
    v("duration", c.duration);
    v("probability", c.probability);
    v("window", c.window);
  } else if constexpr (std::is_same_v<T, CurriculumSchedule>) {
    v("factor_initial", c.factor_initial);
    v("factor_final", c.factor_final);
    v("factor_start", c.factor_start);
    v("factor_end", c.factor_end);
    v("speed_initial_deg", c.speed_initial_deg);
    v("speed_final_deg", c.speed_final_deg);
    v("speed_start", c.speed_start);
    v("speed_end", c.speed_end);
    v("period_half_at", c.period_half_at);
    v("period_third_at", c.period_third_at);
  } else if constexpr (std::is_same_v<T, ppo::PpoConfig>) {
    v("gamma", c.gamma);
    v("clip", c.clip);
    v("learning_rate", c.learning_rate);
    v("gae_lambda", c.gae_lambda);
    v("epochs", c.epochs);
    v("minibatch_size", c.minibatch_size);
    v("value_weight", c.value_weight);
    v("max_grad_norm", c.max_grad_norm);
    v("adam_beta1", c.adam_beta1);
    v("adam_beta2", c.adam_beta2);
    v("adam_epsilon", c.adam_epsilon);
  } else if constexpr (std::is_same_v<T, nn::InitScheme>) {
    v("hidden", c.hidden);
    v("log_std_init", c.log_std_init);
    v("policy_output_gain", c.policy_output_gain);
    v("value_output_gain", c.value_output_gain);
  } else if constexpr (std::is_same_v<T, rollout::RolloutConfig>) {
    v("num_envs", c.num_envs);
    v("steps_per_env", c.steps_per_env);
    v("max_episode_steps", c.max_episode_steps);
    v("axes", c.axes);
    v("max_reseeds", c.max_reseeds);
  } else {
    static_assert(sizeof(T) == 0, "no field list for this type");
  }
}

template <class C>
json section_to_json(const C& c) {
  json j = json::object();
  Writer w(j);
  fields(w, c);
  return j;
}

template <class C>
void section_from_json(const json& root, const char* key, C& c) {
  if (!root.contains(key)) return;
  Reader r(root.at(key), key);
  fields(r, c);
  r.finish();
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using config_detail::section_to_json;
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["max_nonfinite_iterations"] = c.max_nonfinite_iterations;
  j["output_dir"] = c.output_dir;
  j["rollout"] = section_to_json(c.rollout);
  nlohmann::json env = nlohmann::json::object();
  env["disturbance_enabled"] = c.env.disturbance_enabled;
  env["target_from_measured"] = c.env.target_from_measured;
  env["settle_time"] = c.env.settle_time;
  env["settle_min_time"] = c.env.settle_min_time;
  env["settle_speed_tol"] = c.env.settle_speed_tol;
  j["env"] = env;
  j["physics"] = section_to_json(c.env.physics);
  j["reward"] = section_to_json(c.env.reward);
  j["termination"] = section_to_json(c.env.termination);
  j["randomization"] = section_to_json(c.env.randomization);
  j["disturbance"] = section_to_json(c.env.disturbance);
  j["curriculum"] = section_to_json(c.curriculum);
  j["ppo"] = section_to_json(c.ppo);
  j["network"] = section_to_json(c.network);
  return j;
}

/// Missing keys keep their defaults. Throws ConfigError on unknown keys,
/// wrong types, a schema mismatch or values that fail validation.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using config_detail::section_from_json;
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  config_detail::Reader top(j, "config");
  int schema = kConfigSchemaVersion;
  top("schema_version", schema);
  if (schema != kConfigSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + std::to_string(schema));
  }
  top("seed", c.seed);
  top("iterations", c.iterations);
  top("checkpoint_interval", c.checkpoint_interval);
  top("max_nonfinite_iterations", c.max_nonfinite_iterations);
  top("output_dir", c.output_dir);
  const char* sections[] = {"rollout",       "env",         "physics",    "reward", "termination",
                            "randomization", "disturbance", "curriculum", "ppo",    "network"};
  for (const char* s : sections) top.allow(s);
  top.finish();

  section_from_json(j, "rollout", c.rollout);
  if (j.contains("env")) {
    config_detail::Reader r(j.at("env"), "env");
    r("disturbance_enabled", c.env.disturbance_enabled);
    r("target_from_measured", c.env.target_from_measured);
    r("settle_time", c.env.settle_time);
    r("settle_min_time", c.env.settle_min_time);
    r("settle_speed_tol", c.env.settle_speed_tol);
    r.finish();
  }
  section_from_json(j, "physics", c.env.physics);
  section_from_json(j, "reward", c.env.reward);
  section_from_json(j, "termination", c.env.termination);
  section_from_json(j, "randomization", c.env.randomization);
  section_from_json(j, "disturbance", c.env.disturbance);
  section_from_json(j, "curriculum", c.curriculum);
  section_from_json(j, "ppo", c.ppo);
  section_from_json(j, "network", c.network);
  c.env.disturbance.control_dt = c.env.physics.control_dt;
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

/// Canonical text of everything that influences results. The output
/// directory is excluded so that relocating a run keeps its digest.
inline std::string canonical_config_text(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  return j.dump();
}

inline std::uint64_t config_digest(const RunConfig& c) {
  const std::string s = canonical_config_text(c);
  return nn::fnv1a64(s.data(), s.size());
}

inline std::string digest_hex(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace circus
