#pragma once

// Command implementations behind the circus executable. Every command
// returns a process exit status; nothing here calls exit().

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "circus/checkpoint.hpp"
#include "circus/config.hpp"
#include "circus/curriculum.hpp"
#include "circus/env.hpp"
#include "circus/nn.hpp"
#include "circus/ppo.hpp"
#include "circus/rollout.hpp"

namespace circus::app {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigInvalid = 2,
  kIoError = 3,
  kDiverged = 4,
  kSchemaError = 5,
};

inline constexpr const char* kWorkersEnv = "CIRCUS_WORKERS";

/// Worker count from the environment, else the hardware concurrency.
inline int worker_count() {
  if (const char* s = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v >= 1) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Shortest-safe fixed formatting; identical input gives identical text.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "iteration",        "mean_reward",     "r_q",
      "r_v",              "r_tau",           "r_slip",
      "r_collide",        "mean_episode_length", "episodes_completed",
      "loss",             "policy_loss",     "value_loss",
      "clip_fraction",    "approx_kl",       "grad_norm",
      "skipped_minibatches", "curriculum_factor", "target_speed_deg",
      "update_period",    "reseeds"};
  return cols;
}

struct IterationMetrics {
  long iteration = 0;
  RewardBreakdown mean_terms;
  double mean_episode_length = std::nan("");
  long episodes_completed = 0;
  ppo::UpdateDiagnostics update;
  CurriculumState curriculum;
  long reseeds = 0;

  std::string csv_row() const {
    const std::vector<double> v = {
        static_cast<double>(iteration), mean_terms.total,   mean_terms.r_q,
        mean_terms.r_v,                 mean_terms.r_tau,   mean_terms.r_slip,
        mean_terms.r_collide,           mean_episode_length, static_cast<double>(episodes_completed),
        update.loss,                    update.policy_loss, update.value_loss,
        update.clip_fraction,           update.approx_kl,   update.grad_norm,
        static_cast<double>(update.skipped), curriculum.factor,
        curriculum.target_speed / kDegToRad, curriculum.update_period,
        static_cast<double>(reseeds)};
    std::string row;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) row += ',';
      row += num(v[i]);
    }
    return row;
  }
};

inline IterationMetrics summarize(const rollout::RolloutBatch& b, long iteration,
                                  const CurriculumState& cur) {
  IterationMetrics m;
  m.iteration = iteration;
  m.curriculum = cur;
  double n = 0.0;
  for (const auto& env_terms : b.reward_terms) {
    for (const RewardBreakdown& r : env_terms) {
      m.mean_terms.r_q += r.r_q;
      m.mean_terms.r_v += r.r_v;
      m.mean_terms.r_tau += r.r_tau;
      m.mean_terms.r_slip += r.r_slip;
      m.mean_terms.r_collide += r.r_collide;
      m.mean_terms.total += r.total;
      n += 1.0;
    }
  }
  if (n > 0.0) {
    m.mean_terms.r_q /= n;
    m.mean_terms.r_v /= n;
    m.mean_terms.r_tau /= n;
    m.mean_terms.r_slip /= n;
    m.mean_terms.r_collide /= n;
    m.mean_terms.total /= n;
  }
  m.episodes_completed = static_cast<long>(b.episodes.size());
  if (!b.episodes.empty()) {
    double len = 0.0;
    for (const auto& e : b.episodes) len += static_cast<double>(e.length);
    m.mean_episode_length = len / static_cast<double>(b.episodes.size());
  }
  m.reseeds = static_cast<long>(b.events.size());
  return m;
}

inline std::uint64_t network_seed(std::uint64_t master) {
  return derive_seed({master, 0x6e6574ULL});  // "net"
}

struct TrainResult {
  nn::ActorCritic<float> params;
  std::vector<IterationMetrics> metrics;
  long iterations_run = 0;
  bool diverged = false;
};

/// Collect -> update loop. When `out_dir` is set, writes metrics.csv,
/// timing.csv, events.log and checkpoints there. `progress` is called once
/// per iteration on the calling thread.
inline TrainResult run_training(const RunConfig& cfg, int workers,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                const std::function<void(const IterationMetrics&)>& progress = {}) {
  cfg.validate();
  const std::uint64_t digest = config_digest(cfg);
  const std::string digest_line = "# config_digest=" + digest_hex(digest);
  const std::string config_text = canonical_config_text(cfg);

  std::ofstream metrics_file;
  std::ofstream timing_file;
  std::ofstream events_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    {
      std::ofstream f(*out_dir / "config.json");
      f << to_json(cfg).dump(2) << '\n';
      if (!f) throw std::ios_base::failure("cannot write config.json");
    }
    metrics_file.open(*out_dir / "metrics.csv", std::ios::trunc);
    timing_file.open(*out_dir / "timing.csv", std::ios::trunc);
    events_file.open(*out_dir / "events.log", std::ios::trunc);
    if (!metrics_file || !timing_file || !events_file) {
      throw std::ios_base::failure("cannot open output files in " + out_dir->string());
    }
    metrics_file << digest_line << '\n';
    for (std::size_t i = 0; i < metrics_columns().size(); ++i) {
      metrics_file << (i ? "," : "") << metrics_columns()[i];
    }
    metrics_file << '\n';
    timing_file << digest_line << "\niteration,wall_time_s\n";
    events_file << digest_line << '\n';
  }

  TrainResult res;
  res.params = nn::init<float>(network_seed(cfg.seed), kObsSize, kNumJoints, cfg.network);
  ppo::AdamState<float> adam;
  rollout::EnvPool pool(cfg.env, cfg.rollout, cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  int nonfinite_streak = 0;

  const auto save = [&](const std::string& name, long iteration) {
    if (!out_dir) return;
    nn::save_checkpoint((*out_dir / name).string(), res.params,
                        static_cast<std::uint64_t>(iteration), digest, config_text);
  };

  for (long it = 0; it < cfg.iterations; ++it) {
    const CurriculumState cur = curriculum_at(it, cfg.curriculum);
    const rollout::RolloutBatch batch =
        rollout::collect(res.params, pool, cfg.rollout.steps_per_env, cur, workers);
    IterationMetrics m = summarize(batch, it, cur);
    const ppo::TrainingBatch tb =
        ppo::make_training_batch(batch.transitions, batch.bootstrap, cfg.ppo);
    m.update = ppo::update(res.params, adam, tb, cfg.ppo,
                           derive_seed({cfg.seed, static_cast<std::uint64_t>(it),
                                        static_cast<std::uint64_t>(Stream::kShuffle)}));
    res.metrics.push_back(m);
    res.iterations_run = it + 1;

    if (out_dir) {
      metrics_file << m.csv_row() << '\n' << std::flush;
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timing_file << it << ',' << num(wall) << '\n' << std::flush;
      for (const auto& e : batch.events) events_file << "iteration " << it << ": " << e << '\n';
      events_file << std::flush;
      if (!metrics_file || !timing_file || !events_file) {
        throw std::ios_base::failure("write failed in " + out_dir->string());
      }
    }
    if (progress) progress(m);

    nonfinite_streak = (m.update.skipped == m.update.minibatches) ? nonfinite_streak + 1 : 0;
    if (nonfinite_streak > cfg.max_nonfinite_iterations) {
      res.diverged = true;
      if (out_dir) events_file << "iteration " << it << ": training diverged\n";
      return res;
    }
    if ((it + 1) % cfg.checkpoint_interval == 0 && it + 1 < cfg.iterations) {
      save("checkpoint_" + std::to_string(it + 1) + ".bin", it + 1);
    }
  }
  save("checkpoint_final.bin", cfg.iterations);
  return res;
}

struct TrainOptions {
  std::string config_path;  // empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int workers = 1;
  bool quiet = false;
};

inline int cmd_train(const TrainOptions& o, std::ostream& log = std::cerr) {
  RunConfig cfg;
  try {
    if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    cfg.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  }
  try {
    const auto progress = [&](const IterationMetrics& m) {
      if (o.quiet) return;
      log << "iter " << m.iteration << " reward " << num(m.mean_terms.total) << " ep_len "
          << num(m.mean_episode_length) << " factor " << num(m.curriculum.factor) << " speed_deg "
          << num(m.curriculum.target_speed / kDegToRad) << " period "
          << num(m.curriculum.update_period) << '\n';
    };
    const TrainResult r =
        run_training(cfg, o.workers, std::filesystem::path(cfg.output_dir), progress);
    if (r.diverged) {
      log << "training diverged: non-finite loss in more than " << cfg.max_nonfinite_iterations
          << " consecutive iterations\n";
      return kDiverged;
    }
  } catch (const std::ios_base::failure& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  }
  return kOk;
}

inline std::string trace_header() {
  std::string h =
      "time,commanded_speed_deg,target_w,target_x,target_y,target_z,ball_w,ball_x,ball_y,ball_z,"
      "delta_q,ball_px,ball_py,ball_pz,ball_wx,ball_wy,ball_wz";
  for (int j = 0; j < kNumJoints; ++j) h += ",tau_" + std::to_string(j);
  for (int j = 0; j < kNumJoints; ++j) h += ",qd_" + std::to_string(j);
  h += ",r_q,r_v,r_tau,r_slip,r_collide,reward";
  for (const char* leg : kLegNames) h += std::string(",contact_") + leg;
  h += ",push_x,push_y,push_z,verdict";
  return h;
}

inline std::string trace_line(const rollout::TraceRow& r) {
  std::vector<double> v = {r.time,
                           r.commanded_speed / kDegToRad,
                           r.target.w(), r.target.x(), r.target.y(), r.target.z(),
                           r.ball.w(), r.ball.x(), r.ball.y(), r.ball.z(),
                           r.delta_q,
                           r.ball_position.x(), r.ball_position.y(), r.ball_position.z(),
                           r.ball_ang_vel.x(), r.ball_ang_vel.y(), r.ball_ang_vel.z()};
  for (int j = 0; j < kNumJoints; ++j) v.push_back(r.torque(j));
  for (int j = 0; j < kNumJoints; ++j) v.push_back(r.joint_vel(j));
  v.insert(v.end(), {r.reward.r_q, r.reward.r_v, r.reward.r_tau, r.reward.r_slip,
                     r.reward.r_collide, r.reward.total});
  for (bool c : r.foot_contact) v.push_back(c ? 1.0 : 0.0);
  v.insert(v.end(), {r.disturbance.x(), r.disturbance.y(), r.disturbance.z()});
  std::string line;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) line += ',';
    line += num(v[i]);
  }
  line += ',';
  line += verdict_name(r.verdict);
  return line;
}

struct EvalOptions {
  std::string checkpoint;
  RotationAxis axis = RotationAxis::kYaw;
  double speed_deg = 0.0;
  int episodes = 1;
  std::uint64_t seed = 0;
  std::string out = "eval";
};

struct EpisodeSummary {
  std::uint64_t seed = 0;
  long steps = 0;
  double survival_time = 0.0;
  std::string verdict;
  double mean_delta_q = 0.0;
  double max_delta_q = 0.0;
  double mean_angular_speed_deg = 0.0;
};

inline EpisodeSummary summarize_episode(const rollout::EpisodeResult& r, double control_dt) {
  EpisodeSummary s;
  s.seed = r.seed;
  s.steps = r.length;
  s.survival_time = static_cast<double>(r.length) * control_dt;
  s.verdict = r.timeout ? "timeout" : verdict_name(r.verdict);
  for (const auto& row : r.trace) {
    s.mean_delta_q += row.delta_q;
    s.max_delta_q = std::max(s.max_delta_q, row.delta_q);
    s.mean_angular_speed_deg += row.ball_ang_vel.norm() / kDegToRad;
  }
  if (!r.trace.empty()) {
    s.mean_delta_q /= static_cast<double>(r.trace.size());
    s.mean_angular_speed_deg /= static_cast<double>(r.trace.size());
  }
  return s;
}

/// Loads a float checkpoint and its embedded config. Maps failures to exit
/// codes through the thrown exception type.
inline std::pair<nn::ActorCritic<float>, RunConfig> load_policy(const std::string& path,
                                                                nn::CheckpointMeta* meta) {
  nn::ActorCritic<float> p = nn::load_checkpoint<float>(path, meta);
  if (p.obs_size() != kObsSize || p.action_size() != kNumJoints) {
    throw CheckpointError("checkpoint shapes " + std::to_string(p.obs_size()) + "->" +
                          std::to_string(p.action_size()) + " do not match the environment " +
                          std::to_string(kObsSize) + "->" + std::to_string(kNumJoints));
  }
  RunConfig cfg;
  try {
    cfg = parse_run_config(meta->config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config: ") + e.what());
  }
  return {std::move(p), std::move(cfg)};
}

inline int cmd_eval(const EvalOptions& o, std::ostream& log = std::cerr) {
  if (o.episodes < 1 || !(o.speed_deg >= 0.0) || !std::isfinite(o.speed_deg)) {
    log << "usage error: --episodes must be >= 1 and --speed-deg finite and >= 0\n";
    return kUsage;
  }
  nn::CheckpointMeta meta;
  nn::ActorCritic<float> params;
  RunConfig cfg;
  try {
    std::tie(params, cfg) = load_policy(o.checkpoint, &meta);
  } catch (const std::ios_base::failure& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const CheckpointError& e) {
    log << "schema error: " << e.what() << '\n';
    return kSchemaError;
  }
  const std::string digest_line = "# config_digest=" + digest_hex(meta.config_digest);
  const CurriculumState cur =
      curriculum_at(static_cast<long>(meta.iteration), cfg.curriculum);
  AngularVelocityCommand cmd;
  cmd.axis = axis_vector(o.axis);
  cmd.magnitude = o.speed_deg * kDegToRad;
  cmd.update_period = cur.update_period;

  try {
    const std::filesystem::path out(o.out);
    std::filesystem::create_directories(out);
    BallEnv env(cfg.env);
    nlohmann::json summary;
    summary["config_digest"] = digest_hex(meta.config_digest);
    summary["checkpoint_iteration"] = meta.iteration;
    summary["axis"] = axis_name(o.axis);
    summary["speed_deg"] = o.speed_deg;
    summary["update_period"] = cur.update_period;
    summary["curriculum_factor"] = cur.factor;
    summary["seed"] = o.seed;
    nlohmann::json eps = nlohmann::json::array();
    double mean_dq = 0.0, max_dq = 0.0, mean_speed = 0.0, mean_survival = 0.0;
    for (int e = 0; e < o.episodes; ++e) {
      const rollout::EpisodeResult r = rollout::run_episode(
          params, env, derive_seed({o.seed, static_cast<std::uint64_t>(e)}), cur, cmd,
          cfg.rollout.max_episode_steps, true, true);
      char name[32];
      std::snprintf(name, sizeof(name), "trace_%03d.csv", e);
      std::ofstream f(out / name, std::ios::trunc);
      f << digest_line << '\n' << trace_header() << '\n';
      for (const auto& row : r.trace) f << trace_line(row) << '\n';
      if (!f) throw std::ios_base::failure(std::string("cannot write ") + name);

      const EpisodeSummary s = summarize_episode(r, cfg.env.physics.control_dt);
      eps.push_back({{"trace", name},
                     {"seed", s.seed},
                     {"steps", s.steps},
                     {"survival_time", s.survival_time},
                     {"end", s.verdict},
                     {"mean_delta_q", s.mean_delta_q},
                     {"max_delta_q", s.max_delta_q},
                     {"mean_angular_speed_deg", s.mean_angular_speed_deg}});
      mean_dq += s.mean_delta_q / o.episodes;
      max_dq = std::max(max_dq, s.max_delta_q);
      mean_speed += s.mean_angular_speed_deg / o.episodes;
      mean_survival += s.survival_time / o.episodes;
    }
    summary["episodes"] = eps;
    summary["mean_delta_q"] = mean_dq;
    summary["max_delta_q"] = max_dq;
    summary["mean_angular_speed_deg"] = mean_speed;
    summary["mean_survival_time"] = mean_survival;
    std::ofstream f(out / "summary.json", std::ios::trunc);
    f << summary.dump(2) << '\n';
    if (!f) throw std::ios_base::failure("cannot write summary.json");
    log << "eval: " << o.episodes << " episodes, mean survival " << num(mean_survival)
        << " s, mean delta_q " << num(mean_dq) << " rad\n";
  } catch (const std::ios_base::failure& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const ResetFailed& e) {
    log << "eval failed: " << e.what() << '\n';
    return kConfigInvalid;
  }
  return kOk;
}

inline std::string shape_string(const std::vector<int>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "->" : "") + std::to_string(s[i]);
  return out;
}

/// Parameter count implied by a layer-size list.
inline std::size_t mlp_param_count(const std::vector<int>& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    n += static_cast<std::size_t>(s[i]) * static_cast<std::size_t>(s[i + 1]) +
         static_cast<std::size_t>(s[i + 1]);
  }
  return n;
}

inline int cmd_inspect(const std::string& path, std::ostream& out = std::cout,
                       std::ostream& log = std::cerr) {
  nn::CheckpointMeta meta;
  nn::ActorCritic<double> p;
  try {
    p = nn::load_checkpoint<double>(path, &meta);
  } catch (const std::ios_base::failure& e) {
    log << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const CheckpointError& e) {
    log << "corrupt checkpoint: " << e.what() << '\n';
    return kSchemaError;
  }
  out << "schema_version: " << meta.version << '\n';
  out << "scalar_width: " << meta.scalar_width << '\n';
  out << "iteration: " << meta.iteration << '\n';
  out << "config_digest: " << digest_hex(meta.config_digest) << '\n';
  const std::uint64_t text_digest = nn::fnv1a64(meta.config_text.data(), meta.config_text.size());
  out << "config_digest_matches_text: " << (text_digest == meta.config_digest ? "yes" : "no")
      << '\n';
  out << "policy: " << shape_string(meta.policy_sizes) << '\n';
  out << "value: " << shape_string(meta.value_sizes) << '\n';
  out << "log_std: " << meta.log_std_size << '\n';
  out << "parameters: " << p.num_params() << '\n';
  const auto norms = [&](const char* name, const nn::Mlp<double>& m) {
    for (std::size_t k = 0; k < m.layers().size(); ++k) {
      out << name << "_layer" << k << ": |W|=" << num(m.layers()[k].weight.norm())
          << " |b|=" << num(m.layers()[k].bias.norm()) << '\n';
    }
  };
  norms("policy", p.policy);
  norms("value", p.value);
  out << "log_std_mean: " << num(p.log_std.mean()) << '\n';
  return kOk;
}

inline int cmd_defaults(std::ostream& out = std::cout) {
  out << to_json(RunConfig{}).dump(2) << '\n';
  return kOk;
}

}  // namespace circus::app
