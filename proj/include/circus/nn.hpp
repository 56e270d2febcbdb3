#pragma once

// Tanh multi-layer perceptrons for the policy mean and the value function,
// with hand-written reverse-mode gradients.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "circus/errors.hpp"

namespace circus::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Layer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
};

/// Activations kept from a batched forward pass for backward().
template <typename Scalar>
struct ForwardCache {
  Matrix<Scalar> input;
  std::vector<Matrix<Scalar>> hidden;  // tanh outputs, one per hidden layer
};

/// affine -> tanh -> ... -> affine. `sizes` lists every layer width
/// including input and output.
template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(const std::vector<int>& sizes) {
    if (sizes.size() < 2) {
      throw ShapeMismatch("Mlp needs at least input and output sizes");
    }
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      layers_.push_back({Matrix<Scalar>::Zero(sizes[i + 1], sizes[i]),
                         Vector<Scalar>::Zero(sizes[i + 1])});
    }
  }

  std::vector<int> sizes() const {
    std::vector<int> s;
    if (layers_.empty()) return s;
    s.push_back(static_cast<int>(layers_.front().weight.cols()));
    for (const auto& l : layers_) s.push_back(static_cast<int>(l.weight.rows()));
    return s;
  }

  int input_size() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_size() const { return static_cast<int>(layers_.back().weight.rows()); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  std::vector<Layer<Scalar>>& layers() { return layers_; }
  const std::vector<Layer<Scalar>>& layers() const { return layers_; }

  Vector<Scalar> forward(const Vector<Scalar>& x) const {
    if (x.size() != input_size()) {
      throw ShapeMismatch("Mlp::forward: expected input of size " + std::to_string(input_size()) +
                          ", got " + std::to_string(x.size()));
    }
    Vector<Scalar> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Vector<Scalar> z = layers_[i].weight * h + layers_[i].bias;
      h = (i + 1 < layers_.size()) ? Vector<Scalar>(z.array().tanh()) : z;
    }
    return h;
  }

  /// Columns of `x` are samples.
  Matrix<Scalar> forward_batch(const Matrix<Scalar>& x, ForwardCache<Scalar>* cache = nullptr) const {
    if (x.rows() != input_size()) {
      throw ShapeMismatch("Mlp::forward_batch: input rows do not match the input layer");
    }
    if (cache) {
      cache->input = x;
      cache->hidden.clear();
    }
    Matrix<Scalar> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix<Scalar> z = layers_[i].weight * h;
      z.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) {
        h = z.array().tanh().matrix();
        if (cache) cache->hidden.push_back(h);
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  /// Gradients of a scalar loss given dL/d(output) for every sample in the
  /// cached batch. Returns an Mlp-shaped gradient.
  Mlp backward(const ForwardCache<Scalar>& cache, const Matrix<Scalar>& d_output) const {
    Mlp grad = zeros_like();
    Matrix<Scalar> delta = d_output;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const Matrix<Scalar>& in = k == 0 ? cache.input : cache.hidden[k - 1];
      grad.layers_[k].weight.noalias() = delta * in.transpose();
      grad.layers_[k].bias = delta.rowwise().sum();
      if (k > 0) {
        Matrix<Scalar> back = layers_[k].weight.transpose() * delta;
        const Matrix<Scalar>& act = cache.hidden[k - 1];
        delta = back.array() * (Scalar(1) - act.array().square());
      }
    }
    return grad;
  }

  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers_) {
      z.layers_.push_back({Matrix<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                           Vector<Scalar>::Zero(l.bias.size())});
    }
    return z;
  }

  bool all_finite() const {
    for (const auto& l : layers_) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (const auto& l : layers_) {
      out.layers().push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
    }
    return out;
  }

 private:
  std::vector<Layer<Scalar>> layers_;
};

/// Policy mean network, value network and a state-independent log std.
template <typename Scalar>
struct ActorCritic {
  Mlp<Scalar> policy;
  Mlp<Scalar> value;
  Vector<Scalar> log_std;

  int obs_size() const { return policy.input_size(); }
  int action_size() const { return policy.output_size(); }

  std::size_t num_params() const {
    return policy.num_params() + value.num_params() + static_cast<std::size_t>(log_std.size());
  }

  bool all_finite() const { return policy.all_finite() && value.all_finite() && log_std.allFinite(); }

  ActorCritic zeros_like() const {
    return {policy.zeros_like(), value.zeros_like(), Vector<Scalar>::Zero(log_std.size())};
  }

  /// Flat view in a fixed order: policy layers (W row-major, b), value
  /// layers, then log std.
  Vector<Scalar> to_vector() const {
    Vector<Scalar> v(static_cast<Eigen::Index>(num_params()));
    Eigen::Index o = 0;
    const auto put = [&](const Mlp<Scalar>& m) {
      for (const auto& l : m.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
          for (Eigen::Index c = 0; c < l.weight.cols(); ++c) v(o++) = l.weight(r, c);
        v.segment(o, l.bias.size()) = l.bias;
        o += l.bias.size();
      }
    };
    put(policy);
    put(value);
    v.segment(o, log_std.size()) = log_std;
    return v;
  }

  void from_vector(const Vector<Scalar>& v) {
    if (v.size() != static_cast<Eigen::Index>(num_params())) {
      throw ShapeMismatch("ActorCritic::from_vector: size mismatch");
    }
    Eigen::Index o = 0;
    const auto get = [&](Mlp<Scalar>& m) {
      for (auto& l : m.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
          for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = v(o++);
        l.bias = v.segment(o, l.bias.size());
        o += l.bias.size();
      }
    };
    get(policy);
    get(value);
    log_std = v.segment(o, log_std.size());
  }

  template <typename Other>
  ActorCritic<Other> cast() const {
    return {policy.template cast<Other>(), value.template cast<Other>(),
            log_std.template cast<Other>()};
  }
};

struct PolicyOutput {
  Eigen::VectorXd mean;
  double value = 0.0;
};

/// Action mean and state value for one observation.
template <typename Scalar>
PolicyOutput forward(const ActorCritic<Scalar>& params, const Eigen::VectorXd& input) {
  const Vector<Scalar> x = input.cast<Scalar>();
  PolicyOutput out;
  out.mean = params.policy.forward(x).template cast<double>();
  out.value = static_cast<double>(params.value.forward(x)(0));
  return out;
}

struct InitScheme {
  std::vector<int> hidden = {256, 128};
  double log_std_init = -1.2039728043259361;  // log(0.3)
  double policy_output_gain = 0.01;
  double value_output_gain = 1.0;
};

/// Fan-in scaled uniform init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero; the output layers are further multiplied by their gains.
template <typename Scalar>
ActorCritic<Scalar> init(std::uint64_t seed, int obs_size, int action_size,
                         const InitScheme& scheme = {}) {
  std::mt19937_64 rng(seed);
  const auto make = [&](int out, double gain) {
    std::vector<int> sizes{obs_size};
    sizes.insert(sizes.end(), scheme.hidden.begin(), scheme.hidden.end());
    sizes.push_back(out);
    Mlp<Scalar> m(sizes);
    for (std::size_t k = 0; k < m.layers().size(); ++k) {
      auto& l = m.layers()[k];
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
      const double g = (k + 1 == m.layers().size()) ? gain : 1.0;
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
          l.weight(r, c) = static_cast<Scalar>(g * u(rng));
    }
    return m;
  };
  ActorCritic<Scalar> p;
  p.policy = make(action_size, scheme.policy_output_gain);
  p.value = make(1, scheme.value_output_gain);
  p.log_std = Vector<Scalar>::Constant(action_size, static_cast<Scalar>(scheme.log_std_init));
  return p;
}

}  // namespace circus::nn
