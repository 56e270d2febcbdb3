#pragma once

// PPO with clipped surrogate, GAE advantages and Adam.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "circus/errors.hpp"
#include "circus/nn.hpp"

namespace circus::ppo {

struct PpoConfig {
  double gamma = 0.998;
  double clip = 0.2;
  double learning_rate = 1e-3;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch_size = 4096;
  double value_weight = 0.5;
  double max_grad_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0, 1]");
    if (!(clip > 0.0)) throw std::invalid_argument("ppo: clip must be > 0");
    // lr = 0 is allowed so an update can be run as a pure diagnostic pass.
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("ppo: learning_rate must be >= 0");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
      throw std::invalid_argument("ppo: gae_lambda must be in [0, 1]");
    }
    if (epochs < 1 || minibatch_size < 1) {
      throw std::invalid_argument("ppo: epochs and minibatch_size must be >= 1");
    }
    if (!(value_weight >= 0.0) || !(max_grad_norm > 0.0)) {
      throw std::invalid_argument("ppo: value_weight >= 0 and max_grad_norm > 0 required");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
        !(adam_epsilon > 0.0)) {
      throw std::invalid_argument("ppo: invalid Adam hyperparameters");
    }
  }
};

struct Transition {
  Eigen::VectorXd observation;
  Eigen::VectorXd action;  // raw policy sample, before squashing
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;     // true termination: bootstrap 0
  bool timeout = false;  // truncated: bootstrap with timeout_value
  double timeout_value = 0.0;
};

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Diagonal Gaussian log density.
inline double gaussian_log_prob(const Eigen::VectorXd& action, const Eigen::VectorXd& mean,
                                const Eigen::VectorXd& log_std) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double z = (action(j) - mean(j)) * std::exp(-log_std(j));
    lp += -0.5 * z * z - log_std(j) - kLogSqrt2Pi;
  }
  return lp;
}

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Backward GAE over one env's time-ordered transitions. `bootstrap` is
/// V(s) after the last transition; it is ignored when that transition ends
/// an episode.
inline GaeResult compute_gae(std::span<const Transition> traj, double bootstrap,
                             const PpoConfig& cfg) {
  const std::size_t n = traj.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap;
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const Transition& t = traj[k];
    double delta;
    double adv;
    if (t.done) {
      delta = t.reward - t.value;
      adv = delta;
    } else if (t.timeout) {
      delta = t.reward + cfg.gamma * t.timeout_value - t.value;
      adv = delta;
    } else {
      delta = t.reward + cfg.gamma * next_value - t.value;
      adv = delta + cfg.gamma * cfg.gae_lambda * next_adv;
    }
    out.advantages[k] = adv;
    out.returns[k] = adv + t.value;
    next_adv = adv;
    next_value = t.value;
  }
  return out;
}

/// Zero mean, unit std. A constant vector maps to all zeros.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : 0.0;
}

/// Flattened, update-ready batch. Columns are samples.
struct TrainingBatch {
  Eigen::MatrixXd observations;
  Eigen::MatrixXd actions;
  Eigen::VectorXd old_log_prob;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return observations.cols(); }
};

/// GAE per trajectory, concatenation in trajectory order, then per-batch
/// advantage normalization.
inline TrainingBatch make_training_batch(const std::vector<std::vector<Transition>>& trajectories,
                                         const std::vector<double>& bootstrap,
                                         const PpoConfig& cfg, bool normalize = true) {
  if (trajectories.size() != bootstrap.size()) {
    throw ShapeMismatch("make_training_batch: one bootstrap value per trajectory required");
  }
  std::size_t total = 0;
  for (const auto& t : trajectories) total += t.size();
  if (total == 0) throw std::invalid_argument("make_training_batch: empty batch");
  Eigen::Index od = 0;
  Eigen::Index act_dim = 0;
  for (const auto& t : trajectories) {
    if (!t.empty()) {
      od = t[0].observation.size();
      act_dim = t[0].action.size();
      break;
    }
  }

  TrainingBatch b;
  b.observations.resize(od, static_cast<Eigen::Index>(total));
  b.actions.resize(act_dim, static_cast<Eigen::Index>(total));
  b.old_log_prob.resize(static_cast<Eigen::Index>(total));
  std::vector<double> adv;
  std::vector<double> ret;
  adv.reserve(total);
  ret.reserve(total);
  Eigen::Index col = 0;
  for (std::size_t e = 0; e < trajectories.size(); ++e) {
    const auto& traj = trajectories[e];
    const GaeResult g = compute_gae(traj, bootstrap[e], cfg);
    for (std::size_t k = 0; k < traj.size(); ++k) {
      if (traj[k].observation.size() != od || traj[k].action.size() != act_dim) {
        throw ShapeMismatch("make_training_batch: inconsistent transition shapes");
      }
      b.observations.col(col) = traj[k].observation;
      b.actions.col(col) = traj[k].action;
      b.old_log_prob(col) = traj[k].log_prob;
      ++col;
    }
    adv.insert(adv.end(), g.advantages.begin(), g.advantages.end());
    ret.insert(ret.end(), g.returns.begin(), g.returns.end());
  }
  if (normalize) normalize_advantages(adv);
  b.advantages = Eigen::Map<const Eigen::VectorXd>(adv.data(), static_cast<Eigen::Index>(adv.size()));
  b.returns = Eigen::Map<const Eigen::VectorXd>(ret.data(), static_cast<Eigen::Index>(ret.size()));
  return b;
}

struct LossResult {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Composite loss over the samples `idx` of `batch`. When `grad` is given it
/// receives exact gradients (same shape as params).
template <typename Scalar>
LossResult ppo_loss(const nn::ActorCritic<Scalar>& params, const TrainingBatch& batch,
                    std::span<const Eigen::Index> idx, const PpoConfig& cfg,
                    nn::ActorCritic<Scalar>* grad = nullptr) {
  using Mat = nn::Matrix<Scalar>;
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) throw std::invalid_argument("ppo_loss: minibatch must be non-empty");
  if (batch.observations.rows() != params.obs_size() ||
      batch.actions.rows() != params.action_size()) {
    throw ShapeMismatch("ppo_loss: batch shapes do not match the network");
  }
  const Eigen::Index act = params.action_size();

  Mat x(batch.observations.rows(), n);
  Mat a(act, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) = batch.observations.col(idx[i]).template cast<Scalar>();
    a.col(i) = batch.actions.col(idx[i]).template cast<Scalar>();
  }

  nn::ForwardCache<Scalar> pcache;
  nn::ForwardCache<Scalar> vcache;
  const Mat mean = params.policy.forward_batch(x, grad ? &pcache : nullptr);
  const Mat value = params.value.forward_batch(x, grad ? &vcache : nullptr);

  const nn::Vector<Scalar> inv_std = (-params.log_std.array()).exp().matrix();
  const Scalar log_std_sum = params.log_std.sum();
  const Mat z = (a - mean).array().colwise() * inv_std.array();

  Mat d_mean;
  Mat d_value;
  nn::Vector<Scalar> d_log_std;
  if (grad) {
    d_mean.resize(act, n);
    d_value.resize(1, n);
    d_log_std = nn::Vector<Scalar>::Zero(act);
  }

  const double eps = cfg.clip;
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult r;
  long clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double logp = static_cast<double>(-Scalar(0.5) * z.col(i).squaredNorm() - log_std_sum) -
                        static_cast<double>(act) * kLogSqrt2Pi;
    const double ratio = std::exp(logp - batch.old_log_prob(idx[i]));
    if (!std::isfinite(ratio)) throw NonFiniteLoss("ppo_loss: non-finite probability ratio");
    const double A = batch.advantages(idx[i]);
    const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    const bool unclipped_active = ratio * A <= clipped_ratio * A;
    r.policy_loss -= inv_n * std::min(ratio * A, clipped_ratio * A);
    if (std::abs(ratio - 1.0) > eps) ++clipped;
    r.approx_kl += inv_n * ((ratio - 1.0) - std::log(ratio));

    const double err = static_cast<double>(value(0, i)) - batch.returns(idx[i]);
    r.value_loss += inv_n * err * err;

    if (grad) {
      // d(-mean surrogate)/d logp
      const double g_logp = unclipped_active ? -ratio * A * inv_n : 0.0;
      const Scalar gl = static_cast<Scalar>(g_logp);
      d_mean.col(i) = gl * (z.col(i).array() * inv_std.array()).matrix();
      d_log_std.array() += gl * (z.col(i).array().square() - Scalar(1));
      d_value(0, i) = static_cast<Scalar>(2.0 * cfg.value_weight * err * inv_n);
    }
  }
  r.clip_fraction = static_cast<double>(clipped) * inv_n;
  r.loss = r.policy_loss + cfg.value_weight * r.value_loss;
  if (!std::isfinite(r.loss)) throw NonFiniteLoss("ppo_loss: non-finite loss");

  if (grad) {
    grad->policy = params.policy.backward(pcache, d_mean);
    grad->value = params.value.backward(vcache, d_value);
    grad->log_std = d_log_std;
    if (!grad->all_finite()) throw NonFiniteGradient("ppo_loss: non-finite gradient");
  }
  return r;
}

template <typename Scalar>
struct AdamState {
  nn::Vector<Scalar> m;
  nn::Vector<Scalar> v;
  long step = 0;
};

/// One Adam step on a flat parameter vector, in place.
template <typename Scalar>
void adam_step(nn::Vector<Scalar>& theta, const nn::Vector<Scalar>& g, AdamState<Scalar>& s,
               const PpoConfig& cfg) {
  if (s.m.size() != theta.size()) {
    s.m = nn::Vector<Scalar>::Zero(theta.size());
    s.v = nn::Vector<Scalar>::Zero(theta.size());
    s.step = 0;
  }
  ++s.step;
  const Scalar b1 = static_cast<Scalar>(cfg.adam_beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.adam_beta2);
  s.m = b1 * s.m + (Scalar(1) - b1) * g;
  s.v = b2 * s.v + (Scalar(1) - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(s.step));
  const Scalar step_size = static_cast<Scalar>(cfg.learning_rate * std::sqrt(c2) / c1);
  const Scalar eps_hat = static_cast<Scalar>(cfg.adam_epsilon * std::sqrt(c2));
  theta.array() -= step_size * s.m.array() / (s.v.array().sqrt() + eps_hat);
}

struct UpdateDiagnostics {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;  // before clipping, mean over applied minibatches
  int minibatches = 0;
  int skipped = 0;
};

/// Epochs of shuffled minibatch Adam steps. Minibatches with a non-finite
/// loss or gradient are skipped and counted.
template <typename Scalar>
UpdateDiagnostics update(nn::ActorCritic<Scalar>& params, AdamState<Scalar>& adam,
                         const TrainingBatch& batch, const PpoConfig& cfg,
                         std::uint64_t shuffle_seed) {
  cfg.validate();
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("ppo update: empty batch");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(shuffle_seed);

  UpdateDiagnostics d;
  int applied = 0;
  nn::ActorCritic<Scalar> grad = params.zeros_like();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with a portable index draw, so the order is the same on
    // every standard library.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.minibatch_size, n - start);
      std::span<const Eigen::Index> idx(order.data() + start, static_cast<std::size_t>(len));
      ++d.minibatches;
      LossResult lr;
      try {
        lr = ppo_loss(params, batch, idx, cfg, &grad);
      } catch (const NonFiniteLoss&) {
        ++d.skipped;
        continue;
      } catch (const NonFiniteGradient&) {
        ++d.skipped;
        continue;
      }
      nn::Vector<Scalar> g = grad.to_vector();
      const double norm = static_cast<double>(g.norm());
      if (norm > cfg.max_grad_norm) g *= static_cast<Scalar>(cfg.max_grad_norm / norm);
      nn::Vector<Scalar> theta = params.to_vector();
      adam_step(theta, g, adam, cfg);
      params.from_vector(theta);

      ++applied;
      d.loss += lr.loss;
      d.policy_loss += lr.policy_loss;
      d.value_loss += lr.value_loss;
      d.clip_fraction += lr.clip_fraction;
      d.approx_kl += lr.approx_kl;
      d.grad_norm += norm;
    }
  }
  if (applied > 0) {
    const double k = 1.0 / applied;
    d.loss *= k;
    d.policy_loss *= k;
    d.value_loss *= k;
    d.clip_fraction *= k;
    d.approx_kl *= k;
    d.grad_norm *= k;
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    d.loss = d.policy_loss = d.value_loss = d.clip_fraction = d.approx_kl = d.grad_norm = nan;
  }
  return d;
}

}  // namespace circus::ppo
