#pragma once

// Parallel, scheduling-independent rollout collection.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "circus/curriculum.hpp"
#include "circus/env.hpp"
#include "circus/errors.hpp"
#include "circus/nn.hpp"
#include "circus/ppo.hpp"
#include "circus/random.hpp"

namespace circus::rollout {

struct RolloutConfig {
  int num_envs = 64;
  int steps_per_env = 100;
  long max_episode_steps = 1000;
  std::vector<RotationAxis> axes = {RotationAxis::kRoll, RotationAxis::kPitch, RotationAxis::kYaw};
  int max_reseeds = 50;  // per episode start, before giving up

  void validate() const {
    if (num_envs < 1 || steps_per_env < 1 || max_episode_steps < 1) {
      throw std::invalid_argument("rollout: num_envs, steps_per_env and max_episode_steps must be >= 1");
    }
    if (axes.empty()) throw std::invalid_argument("rollout: axis set must not be empty");
    if (max_reseeds < 1) throw std::invalid_argument("rollout: max_reseeds must be >= 1");
  }
};

/// One control step as exported to trace files.
struct TraceRow {
  double time = 0.0;
  double commanded_speed = 0.0;  // rad/s
  UnitQuaternion target;
  UnitQuaternion ball;
  double delta_q = 0.0;
  Vec3 ball_position = Vec3::Zero();
  Vec3 ball_ang_vel = Vec3::Zero();
  JointVector torque = JointVector::Zero();
  JointVector joint_vel = JointVector::Zero();
  RewardBreakdown reward;
  std::array<bool, kNumLegs> foot_contact{};
  Vec3 disturbance = Vec3::Zero();
  Verdict verdict = Verdict::kNone;
};

inline TraceRow make_trace_row(const BallEnv& env) {
  TraceRow r;
  r.time = env.time();
  r.commanded_speed = env.command().magnitude;
  r.target = env.target();
  r.ball = env.ball().orientation;
  r.delta_q = env.last().delta_q;
  r.ball_position = env.ball().position;
  r.ball_ang_vel = env.ball().ang_vel;
  r.torque = env.last().torque;
  r.joint_vel = env.robot().joints_vel;
  r.reward = env.last().reward;
  for (const ContactPoint& c : env.last().contacts) {
    if (c.is_foot_ball()) {
      const int leg = c.body_a.kind == BodyKind::kFoot ? c.body_a.leg : c.body_b.leg;
      r.foot_contact[static_cast<std::size_t>(leg)] = true;
    }
  }
  r.disturbance = env.last().disturbance;
  r.verdict = env.last().verdict;
  return r;
}

struct SeedLedgerEntry {
  int env = 0;
  long episode = 0;
  int attempt = 0;
  std::uint64_t seed = 0;
};

struct EpisodeStats {
  int env = 0;
  long episode = 0;
  long length = 0;
  double total_reward = 0.0;
  Verdict verdict = Verdict::kNone;
  bool timeout = false;
};

struct RolloutBatch {
  int num_envs = 0;
  int steps_per_env = 0;
  std::vector<std::vector<ppo::Transition>> transitions;  // per env, time ordered
  std::vector<std::vector<RewardBreakdown>> reward_terms;  // parallel to transitions
  std::vector<double> bootstrap;                          // V(s) after the last step, per env
  std::vector<SeedLedgerEntry> seed_ledger;               // episodes started in this batch
  std::vector<EpisodeStats> episodes;                     // episodes finished in this batch
  std::vector<std::string> events;

  std::size_t total_samples() const {
    std::size_t n = 0;
    for (const auto& t : transitions) n += t.size();
    return n;
  }
};

struct ActionSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
  double value = 0.0;
};

/// Stochastic draw from the Gaussian policy, or its mean when
/// `deterministic`. The draw always consumes one normal per action entry.
inline ActionSample sample_action(const nn::ActorCritic<float>& policy, const Observation& obs,
                                  SeedStream& rng, bool deterministic) {
  const nn::PolicyOutput out = nn::forward(policy, Eigen::VectorXd(obs));
  const Eigen::VectorXd log_std = policy.log_std.cast<double>();
  ActionSample s;
  s.action = out.mean;
  for (Eigen::Index j = 0; j < s.action.size(); ++j) {
    const double eps = rng.normal(1.0);
    if (!deterministic) s.action(j) += std::exp(log_std(j)) * eps;
  }
  s.log_prob = ppo::gaussian_log_prob(s.action, out.mean, log_std);
  s.value = out.value;
  return s;
}

inline std::uint64_t episode_seed(std::uint64_t master, int env, long episode, int attempt) {
  return derive_seed({master, static_cast<std::uint64_t>(env), static_cast<std::uint64_t>(episode),
                      static_cast<std::uint64_t>(attempt), static_cast<std::uint64_t>(Stream::kInit)});
}

inline std::uint64_t stream_seed(std::uint64_t master, int env, long episode, Stream s) {
  return derive_seed({master, static_cast<std::uint64_t>(env), static_cast<std::uint64_t>(episode),
                      static_cast<std::uint64_t>(s)});
}

/// Envs with persistent episode state across collect() calls. Each env owns
/// its substreams keyed by (master seed, env index, episode index).
class EnvPool {
 public:
  EnvPool(const EnvConfig& env_cfg, const RolloutConfig& cfg, std::uint64_t master_seed)
      : cfg_(cfg), master_(master_seed) {
    cfg_.validate();
    slots_.reserve(static_cast<std::size_t>(cfg_.num_envs));
    for (int i = 0; i < cfg_.num_envs; ++i) {
      Slot slot;
      slot.env = std::make_unique<BallEnv>(env_cfg);
      slots_.push_back(std::move(slot));
    }
  }

  int size() const { return static_cast<int>(slots_.size()); }
  const RolloutConfig& config() const { return cfg_; }
  std::uint64_t master_seed() const { return master_; }
  const BallEnv& env(int i) const { return *slots_[static_cast<std::size_t>(i)].env; }

 private:
  struct Slot {
    std::unique_ptr<BallEnv> env;
    long next_episode = 0;
    long episode = -1;
    long step = 0;
    double total_reward = 0.0;
    bool active = false;
    SeedStream action_rng{0};
    Observation obs = Observation::Zero();
  };

  struct EnvOutput {
    std::vector<ppo::Transition> transitions;
    std::vector<RewardBreakdown> terms;
    double bootstrap = 0.0;
    std::vector<SeedLedgerEntry> ledger;
    std::vector<EpisodeStats> episodes;
    std::vector<std::string> events;
  };

  // Two consecutive reset failures on one substream move the env to its
  // next episode substream.
  void start_episode(int index, const CurriculumState& cur, EnvOutput& out) {
    Slot& s = slots_[static_cast<std::size_t>(index)];
    for (int reseed = 0; reseed < cfg_.max_reseeds; ++reseed) {
      const long ep = s.next_episode++;
      SeedStream cmd_rng(stream_seed(master_, index, ep, Stream::kCommand));
      const AngularVelocityCommand cmd = sample_command(cur, cmd_rng, cfg_.axes);
      for (int attempt = 0; attempt < 2; ++attempt) {
        const std::uint64_t seed = episode_seed(master_, index, ep, attempt);
        try {
          s.obs = s.env->reset(seed, cur, cmd);
        } catch (const ResetFailed&) {
          continue;
        }
        s.episode = ep;
        s.step = 0;
        s.total_reward = 0.0;
        s.active = true;
        s.action_rng = SeedStream(stream_seed(master_, index, ep, Stream::kAction));
        out.ledger.push_back({index, ep, attempt, seed});
        return;
      }
      out.events.push_back("env " + std::to_string(index) + " failed reset twice on episode " +
                           std::to_string(ep) + "; re-seeded from the next substream");
    }
    throw ResetFailed("env " + std::to_string(index) + " could not be reset");
  }

  void run_env(int index, const nn::ActorCritic<float>& policy, int steps,
               const CurriculumState& cur, EnvOutput& out) {
    Slot& s = slots_[static_cast<std::size_t>(index)];
    out.transitions.reserve(static_cast<std::size_t>(steps));
    out.terms.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      if (!s.active) start_episode(index, cur, out);
      const ActionSample a = sample_action(policy, s.obs, s.action_rng, false);
      ppo::Transition tr;
      tr.observation = s.obs;
      tr.action = a.action;
      tr.log_prob = a.log_prob;
      tr.value = a.value;
      s.obs = s.env->step_env(JointVector(a.action));
      ++s.step;
      const StepInfo& info = s.env->last();
      tr.reward = info.reward.total;
      s.total_reward += tr.reward;
      tr.done = info.verdict != Verdict::kNone;
      if (!tr.done && s.step >= cfg_.max_episode_steps) {
        tr.timeout = true;
        tr.timeout_value = nn::forward(policy, Eigen::VectorXd(s.obs)).value;
      }
      if (tr.done || tr.timeout) {
        out.episodes.push_back({index, s.episode, s.step, s.total_reward, info.verdict, tr.timeout});
        s.active = false;
      }
      out.terms.push_back(info.reward);
      out.transitions.push_back(std::move(tr));
    }
    out.bootstrap = s.active ? nn::forward(policy, Eigen::VectorXd(s.obs)).value : 0.0;
  }

  friend RolloutBatch collect(const nn::ActorCritic<float>&, EnvPool&, int,
                              const CurriculumState&, int);

  RolloutConfig cfg_;
  std::uint64_t master_;
  std::vector<Slot> slots_;
};

/// Steps every env `steps_per_env` times under one policy snapshot. Work is
/// split into contiguous env blocks; results are merged by env index, so
/// the batch does not depend on `workers`.
inline RolloutBatch collect(const nn::ActorCritic<float>& policy, EnvPool& pool, int steps_per_env,
                            const CurriculumState& curriculum, int workers = 1) {
  if (steps_per_env < 1) throw std::invalid_argument("collect: steps_per_env must be >= 1");
  if (policy.obs_size() != kObsSize || policy.action_size() != kNumJoints) {
    throw ShapeMismatch("collect: policy shapes do not match the environment");
  }
  const int n = pool.size();
  workers = std::clamp(workers, 1, n);
  std::vector<EnvPool::EnvOutput> outputs(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));

  const auto work = [&](int w) {
    const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
    try {
      for (int i = begin; i < end; ++i) {
        pool.run_env(i, policy, steps_per_env, curriculum, outputs[static_cast<std::size_t>(i)]);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RolloutBatch b;
  b.num_envs = n;
  b.steps_per_env = steps_per_env;
  for (auto& o : outputs) {
    b.transitions.push_back(std::move(o.transitions));
    b.reward_terms.push_back(std::move(o.terms));
    b.bootstrap.push_back(o.bootstrap);
    b.seed_ledger.insert(b.seed_ledger.end(), o.ledger.begin(), o.ledger.end());
    b.episodes.insert(b.episodes.end(), o.episodes.begin(), o.episodes.end());
    b.events.insert(b.events.end(), o.events.begin(), o.events.end());
  }
  return b;
}

struct EpisodeResult {
  std::uint64_t seed = 0;
  long length = 0;
  double total_reward = 0.0;
  Verdict verdict = Verdict::kNone;
  bool timeout = false;
  std::vector<TraceRow> trace;
};

/// One full episode with a fixed command. Reset failures retry with the
/// next attempt index of `seed`.
inline EpisodeResult run_episode(const nn::ActorCritic<float>& policy, BallEnv& env,
                                 std::uint64_t seed, const CurriculumState& curriculum,
                                 const AngularVelocityCommand& command, long max_steps,
                                 bool deterministic, bool record_trace, int max_attempts = 50) {
  EpisodeResult r;
  Observation obs;
  bool ok = false;
  for (int attempt = 0; attempt < max_attempts && !ok; ++attempt) {
    r.seed = derive_seed({seed, static_cast<std::uint64_t>(attempt),
                          static_cast<std::uint64_t>(Stream::kInit)});
    try {
      obs = env.reset(r.seed, curriculum, command);
      ok = true;
    } catch (const ResetFailed&) {
    }
  }
  if (!ok) throw ResetFailed("run_episode: no successful reset");
  SeedStream rng(derive_seed({r.seed, static_cast<std::uint64_t>(Stream::kAction)}));
  while (r.length < max_steps) {
    const ActionSample a = sample_action(policy, obs, rng, deterministic);
    obs = env.step_env(JointVector(a.action));
    ++r.length;
    r.total_reward += env.last().reward.total;
    if (record_trace) r.trace.push_back(make_trace_row(env));
    if (env.last().verdict != Verdict::kNone) {
      r.verdict = env.last().verdict;
      return r;
    }
  }
  r.timeout = true;
  return r;
}

}  // namespace circus::rollout
