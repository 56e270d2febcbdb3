#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "circus/checkpoint.hpp"
#include "circus/nn.hpp"
#include "support.hpp"

using namespace circus;
using namespace circus::nn;

namespace {

template <typename S>
bool bit_equal(const ActorCritic<S>& a, const ActorCritic<S>& b) {
  const Vector<S> x = a.to_vector();
  const Vector<S> y = b.to_vector();
  return x.size() == y.size() &&
         std::memcmp(x.data(), y.data(), sizeof(S) * static_cast<std::size_t>(x.size())) == 0;
}

}  // namespace

TEST(Forward, ZeroParamsGiveZeroOutputs) {
  ActorCritic<double> p{Mlp<double>({130, 256, 128, 12}), Mlp<double>({130, 256, 128, 1}),
                        Vector<double>::Zero(12)};
  const PolicyOutput out = forward(p, Eigen::VectorXd::Constant(130, 0.7));
  EXPECT_EQ(out.mean, Eigen::VectorXd::Zero(12));
  EXPECT_EQ(out.value, 0.0);
}

TEST(Forward, OutputBiasPassesThrough) {
  Mlp<double> m({5, 4, 3, 2});
  m.layers().back().bias << 0.3, -1.5;
  const Vector<double> y = m.forward(Vector<double>::Constant(5, 2.0));
  EXPECT_EQ(y(0), 0.3);
  EXPECT_EQ(y(1), -1.5);
}

TEST(Forward, IsPure) {
  const ActorCritic<float> p = init<float>(3, 130, 12);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(130, -1.0, 1.0);
  const PolicyOutput a = forward(p, x);
  const PolicyOutput b = forward(p, x);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.value, b.value);
}

TEST(Forward, BatchMatchesSingle) {
  const ActorCritic<double> p = testkit::random_net(4, 6, {5, 4}, 3);
  Matrix<double> x = Matrix<double>::Random(6, 7);
  const Matrix<double> y = p.policy.forward_batch(x);
  for (int i = 0; i < 7; ++i) {
    EXPECT_LT((y.col(i) - p.policy.forward(x.col(i))).norm(), 1e-14);
  }
}

TEST(Forward, WrongInputLengthThrows) {
  const ActorCritic<double> p = init<double>(1, 130, 12);
  EXPECT_THROW(forward(p, Eigen::VectorXd::Zero(129)), ShapeMismatch);
  EXPECT_THROW(p.policy.forward_batch(Matrix<double>::Zero(131, 2)), ShapeMismatch);
}

// Probe loss L = ||f(x)||^2 / 2 so dL/dy = y.
TEST(Backward, ProbeLossMatchesFiniteDifferences) {
  Mlp<double> m({3, 2, 2, 1});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& l : m.layers()) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = u(rng);
  }
  Matrix<double> x(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);

  const auto loss = [&](const Mlp<double>& net) {
    return 0.5 * net.forward_batch(x).squaredNorm();
  };
  ForwardCache<double> cache;
  const Matrix<double> y = m.forward_batch(x, &cache);
  const Mlp<double> g = m.backward(cache, y);

  const double h = 1e-5;
  Eigen::VectorXd analytic, fd;
  std::vector<double> a_vals, fd_vals;
  for (std::size_t k = 0; k < m.layers().size(); ++k) {
    auto probe = [&](double* slot, double grad_entry) {
      const double saved = *slot;
      *slot = saved + h;
      const double up = loss(m);
      *slot = saved - h;
      const double down = loss(m);
      *slot = saved;
      a_vals.push_back(grad_entry);
      fd_vals.push_back((up - down) / (2 * h));
    };
    auto& l = m.layers()[k];
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      probe(&l.weight.data()[i], g.layers()[k].weight.data()[i]);
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) probe(&l.bias(i), g.layers()[k].bias(i));
  }
  analytic = Eigen::Map<Eigen::VectorXd>(a_vals.data(), static_cast<Eigen::Index>(a_vals.size()));
  fd = Eigen::Map<Eigen::VectorXd>(fd_vals.data(), static_cast<Eigen::Index>(fd_vals.size()));
  EXPECT_LT(testkit::relative_error(analytic, fd), 1e-4);
}

TEST(Backward, PpoGradientOnRandomSmallNets) {
  ppo::PpoConfig cfg;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ActorCritic<double> p = testkit::random_net(seed, 4 + static_cast<int>(seed), {6, 5}, 3);
    const ppo::TrainingBatch b = testkit::random_batch(p, 16, seed + 100);
    const testkit::GradCheck r = testkit::check_ppo_gradient(p, b, cfg);
    EXPECT_LT(r.policy, 1e-4) << "seed " << seed;
    EXPECT_LT(r.value, 1e-4) << "seed " << seed;
    EXPECT_LT(r.log_std, 1e-4) << "seed " << seed;
  }
}

TEST(Init, SameSeedSameParams) {
  EXPECT_TRUE(bit_equal(init<float>(9, 130, 12), init<float>(9, 130, 12)));
  EXPECT_FALSE(bit_equal(init<float>(9, 130, 12), init<float>(10, 130, 12)));
}

TEST(Init, ShapesMatchContract) {
  const ActorCritic<float> p = init<float>(1, 130, 12);
  EXPECT_EQ(p.policy.sizes(), (std::vector<int>{130, 256, 128, 12}));
  EXPECT_EQ(p.value.sizes(), (std::vector<int>{130, 256, 128, 1}));
  EXPECT_EQ(p.log_std.size(), 12);
  EXPECT_EQ(p.num_params(), 130u * 256 + 256 + 256 * 128 + 128 + 128 * 12 + 12 + 130 * 256 +
                                256 + 256 * 128 + 128 + 128 + 1 + 12);
}

TEST(Init, EntriesFiniteAndWithinFanInBound) {
  const ActorCritic<double> p = init<double>(2, 130, 12);
  EXPECT_TRUE(p.all_finite());
  for (const Mlp<double>* m : {&p.policy, &p.value}) {
    for (const auto& l : m->layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
      EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
      EXPECT_EQ(l.bias, Vector<double>::Zero(l.bias.size()));
    }
  }
  EXPECT_LE(p.policy.layers().back().weight.cwiseAbs().maxCoeff(), 0.01 / std::sqrt(128.0));
  EXPECT_NEAR(std::exp(p.log_std(0)), 0.3, 1e-15);
}

TEST(Params, FlatVectorRoundTrip) {
  const ActorCritic<double> p = testkit::random_net(3, 5, {4, 3}, 2);
  ActorCritic<double> q = p.zeros_like();
  q.from_vector(p.to_vector());
  EXPECT_TRUE(bit_equal(p, q));
  EXPECT_THROW(q.from_vector(Vector<double>::Zero(3)), ShapeMismatch);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ActorCritic<float> pf = init<float>(4, 130, 12);
  CheckpointMeta meta;
  const ActorCritic<float> qf =
      deserialize_checkpoint<float>(serialize_checkpoint(pf, 17, 0xfeedULL, "{\"a\":1}"), &meta);
  EXPECT_TRUE(bit_equal(pf, qf));
  EXPECT_EQ(meta.iteration, 17u);
  EXPECT_EQ(meta.config_digest, 0xfeedULL);
  EXPECT_EQ(meta.config_text, "{\"a\":1}");
  EXPECT_EQ(meta.scalar_width, 4u);
  EXPECT_EQ(meta.policy_sizes, (std::vector<int>{130, 256, 128, 12}));

  const ActorCritic<double> pd = testkit::random_net(5, 7, {6, 5}, 3);
  EXPECT_TRUE(bit_equal(pd, deserialize_checkpoint<double>(serialize_checkpoint(pd, 0, 0, ""))));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "circus_test_nn.ckpt";
  const ActorCritic<float> p = init<float>(6, 130, 12);
  save_checkpoint(path.string(), p, 3, 1, "{}");
  EXPECT_TRUE(bit_equal(p, load_checkpoint<float>(path.string())));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<float>(path.string()), std::ios_base::failure);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const ActorCritic<float> p = init<float>(7, 10, 2, InitScheme{{8}, -1.0, 1.0, 1.0});
  const std::vector<char> good = serialize_checkpoint(p, 1, 2, "cfg");
  std::vector<char> flipped = good;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint<float>(flipped), CheckpointError);
  std::vector<char> truncated(good.begin(), good.end() - 9);
  EXPECT_THROW(deserialize_checkpoint<float>(truncated), CheckpointError);
  std::vector<char> magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint<float>(magic), CheckpointError);
}

TEST(Checkpoint, LittleEndianHeaderLayout) {
  const ActorCritic<float> p = init<float>(8, 10, 2, InitScheme{{8}, -1.0, 1.0, 1.0});
  const std::vector<char> b = serialize_checkpoint(p, 0x0102, 0, "");
  EXPECT_EQ(std::string(b.data(), 8), "CIRCUSCK");
  EXPECT_EQ(b[8], 1);   // version
  EXPECT_EQ(b[12], 4);  // scalar width
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 0x02);
  EXPECT_EQ(static_cast<unsigned char>(b[17]), 0x01);
}
