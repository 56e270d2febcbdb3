#pragma once

// Helpers shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "circus/nn.hpp"
#include "circus/ppo.hpp"

namespace circus::testkit {

/// Relative error ||a - b|| / max(||a|| + ||b||, floor).
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                             double floor = 1e-12) {
  return (a - b).norm() / std::max(a.norm() + b.norm(), floor);
}

/// Random small actor-critic in double precision with non-trivial log std.
inline nn::ActorCritic<double> random_net(std::uint64_t seed, int obs, std::vector<int> hidden,
                                          int act) {
  nn::InitScheme scheme;
  scheme.hidden = std::move(hidden);
  scheme.policy_output_gain = 1.0;
  nn::ActorCritic<double> p = nn::init<double>(seed, obs, act, scheme);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* m : {&p.policy, &p.value})
    for (auto& l : m->layers())
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) p.log_std(i) = -0.5 + u(rng);
  return p;
}

/// Synthetic PPO batch whose behavior log-probs sit a small random offset
/// from the current policy, so most ratios are inside the clip range and
/// none lie on a kink.
inline ppo::TrainingBatch random_batch(const nn::ActorCritic<double>& p, int n,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> off(-0.4, 0.4);
  ppo::TrainingBatch b;
  b.observations.resize(p.obs_size(), n);
  b.actions.resize(p.action_size(), n);
  b.old_log_prob.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < p.obs_size(); ++r) b.observations(r, i) = g(rng);
    const nn::PolicyOutput out = nn::forward(p, b.observations.col(i));
    for (int j = 0; j < p.action_size(); ++j) {
      b.actions(j, i) = out.mean(j) + std::exp(p.log_std(j)) * g(rng);
    }
    const double logp = ppo::gaussian_log_prob(b.actions.col(i), out.mean, p.log_std);
    double o = off(rng);
    // Keep |ratio - 1 +/- clip| away from zero so the loss is smooth here.
    while (std::abs(std::abs(std::expm1(o)) - 0.2) < 0.02) o = off(rng);
    b.old_log_prob(i) = logp - o;
    b.advantages(i) = g(rng);
    b.returns(i) = g(rng);
  }
  return b;
}

inline std::vector<Eigen::Index> all_indices(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

struct GradCheck {
  double policy = 0.0;   // relative error, policy head
  double value = 0.0;    // relative error, value head
  double log_std = 0.0;  // relative error, log std
  double worst() const { return std::max({policy, value, log_std}); }
};

/// Analytic PPO-loss gradient against central differences with step h.
inline GradCheck check_ppo_gradient(const nn::ActorCritic<double>& p,
                                    const ppo::TrainingBatch& b, const ppo::PpoConfig& cfg,
                                    double h = 1e-5) {
  const auto idx = all_indices(b.size());
  nn::ActorCritic<double> grad = p.zeros_like();
  ppo::ppo_loss(p, b, idx, cfg, &grad);
  const Eigen::VectorXd analytic = grad.to_vector();

  const Eigen::VectorXd theta = p.to_vector();
  Eigen::VectorXd fd(theta.size());
  nn::ActorCritic<double> q = p;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd t = theta;
    t(k) += h;
    q.from_vector(t);
    const double up = ppo::ppo_loss(q, b, idx, cfg).loss;
    t(k) = theta(k) - h;
    q.from_vector(t);
    const double down = ppo::ppo_loss(q, b, idx, cfg).loss;
    fd(k) = (up - down) / (2 * h);
  }
  const Eigen::Index np = static_cast<Eigen::Index>(p.policy.num_params());
  const Eigen::Index nv = static_cast<Eigen::Index>(p.value.num_params());
  const Eigen::Index nl = p.log_std.size();
  GradCheck r;
  r.policy = relative_error(analytic.head(np), fd.head(np));
  r.value = relative_error(analytic.segment(np, nv), fd.segment(np, nv));
  r.log_std = relative_error(analytic.tail(nl), fd.tail(nl));
  return r;
}

/// One-step bandit: observation is the constant 1, the raw action is scored
/// by -(a - c)^2. Returns the batch mean reward before each of `updates`
/// PPO updates plus one final measurement.
inline std::vector<double> toy_learning_curve(std::uint64_t seed, double c, int updates,
                                              int batch = 512, int minibatch = 64) {
  nn::InitScheme scheme;
  scheme.hidden = {16};
  nn::ActorCritic<double> p = nn::init<double>(seed, 1, 1, scheme);
  ppo::PpoConfig cfg;
  cfg.minibatch_size = minibatch;
  ppo::AdamState<double> adam;
  std::mt19937_64 rng(seed * 7919 + 1);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::VectorXd obs = Eigen::VectorXd::Ones(1);

  std::vector<double> curve;
  for (int u = 0; u <= updates; ++u) {
    const nn::PolicyOutput out = nn::forward(p, obs);
    std::vector<std::vector<ppo::Transition>> traj(static_cast<std::size_t>(batch));
    double mean_reward = 0.0;
    for (int i = 0; i < batch; ++i) {
      ppo::Transition t;
      t.observation = obs;
      t.action = Eigen::VectorXd::Constant(1, out.mean(0) + std::exp(p.log_std(0)) * g(rng));
      t.log_prob = ppo::gaussian_log_prob(t.action, out.mean, p.log_std);
      t.reward = -(t.action(0) - c) * (t.action(0) - c);
      t.value = out.value;
      t.done = true;
      mean_reward += t.reward / batch;
      traj[static_cast<std::size_t>(i)].push_back(std::move(t));
    }
    curve.push_back(mean_reward);
    if (u == updates) break;
    const std::vector<double> boot(static_cast<std::size_t>(batch), 0.0);
    ppo::update(p, adam, ppo::make_training_batch(traj, boot, cfg), cfg, seed * 31 + u);
  }
  return curve;
}

}  // namespace circus::testkit
