#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sail/agent.hpp"

namespace sail::agent {
namespace {

using testing::random_tensor;

TEST(Gae, OneStepTdAtLambdaZero) {
  const auto g = compute_gae({2.0}, {0.5, 3.0}, {0}, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 2.0 + 0.9 * 3.0 - 0.5);
  EXPECT_DOUBLE_EQ(g.targets[0], g.advantages[0] + 0.5);
}

TEST(Gae, ZeroRewardsZeroValues) {
  const auto g = compute_gae({0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 1}, 0.99, 0.95);
  for (double a : g.advantages) EXPECT_EQ(a, 0.0);
}

TEST(Gae, HandUnrolledThreeSteps) {
  const std::vector<double> r{1.0, -2.0, 3.0}, v{0.5, 1.0, -1.5, 2.0};
  const double gm = 0.5, lm = 0.5;
  // Episode runs off the end without a terminal flag: bootstrap from v[3].
  const std::vector<char> none{0, 0, 0};
  const auto g = compute_gae(r, {v[0], v[1], v[2]}, {v[1], v[2], v[3]}, none, none, gm, lm);
  const double d0 = r[0] + gm * v[1] - v[0];
  const double d1 = r[1] + gm * v[2] - v[1];
  const double d2 = r[2] + gm * v[3] - v[2];
  const double a2 = d2;
  const double a1 = d1 + gm * lm * a2;
  const double a0 = d0 + gm * lm * a1;
  EXPECT_DOUBLE_EQ(g.advantages[2], a2);
  EXPECT_DOUBLE_EQ(g.advantages[1], a1);
  EXPECT_DOUBLE_EQ(g.advantages[0], a0);
  // d = (1.0, -3.75, 5.5); a2 = 5.5, a1 = -2.375, a0 = 0.40625
  EXPECT_DOUBLE_EQ(g.advantages[0], 0.40625);
}

TEST(Gae, LambdaOneIsMonteCarloMinusBaseline) {
  const std::vector<double> r{1.0, 0.5, -1.0, 2.0}, v{0.3, -0.2, 0.7, 1.1, 9.0};
  const double gm = 0.9;
  const auto g = compute_gae(r, v, {0, 0, 0, 1}, gm, 1.0);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double ret = 0.0, disc = 1.0;
    for (std::size_t k = t; k < r.size(); ++k, disc *= gm) ret += disc * r[k];
    EXPECT_NEAR(g.advantages[t], ret - v[t], 1e-10);
  }
}

TEST(Gae, EpisodeBoundaryStopsRecursion) {
  const std::vector<char> dones{1, 0}, term{0, 0};
  const auto g = compute_gae({1.0, 1.0}, {0.0, 0.0}, {4.0, 2.0}, dones, term, 0.5, 0.9);
  // truncated first episode bootstraps from its own next value only
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + 0.5 * 4.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], 1.0 + 0.5 * 2.0);
}

TEST(Gae, LengthMismatchThrows) {
  EXPECT_THROW(compute_gae({1.0, 2.0}, {0.0, 0.0}, {0, 0}, 0.9, 0.9), ShapeError);
}

Policy small_policy(bool discrete, std::size_t s = 3, std::size_t a = 2) {
  PolicySpec spec;
  spec.state_dim = s;
  spec.action_dim = discrete ? 4 : a;
  spec.discrete = discrete;
  spec.hidden = {7, 5};
  spec.output_gain = 1.0;
  return Policy(spec);
}

RolloutBatch synthetic_batch(const Policy& pol, const ParamSet& p, std::size_t n, Rng& rng) {
  RolloutBatch b;
  b.states = random_tensor(rng, n, pol.spec().state_dim);
  b.actions = Tensor(n, pol.spec().action_dim);
  for (std::size_t r = 0; r < n; ++r) {
    envs::State s(b.states.row_span(r).begin(), b.states.row_span(r).end());
    const auto a = pol.act(p, s, rng, false);
    for (std::size_t j = 0; j < a.size(); ++j) b.actions(r, j) = a[j];
  }
  b.log_probs = pol.log_prob(p, b.states, b.actions);
  b.dones.assign(n, 0);
  b.terminals.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) b.advantages.push_back(normal(rng));
  b.value_targets.assign(n, 0.0);
  return b;
}

TEST(Policy, GaussianLogProbMatchesDensity) {
  const Policy pol = small_policy(false);
  Rng rng(3);
  ParamSet p = pol.init(rng);
  p.set("log_std", Tensor{{0.2, -0.5}});
  const Tensor s = random_tensor(rng, 4, 3);
  const Tensor a = random_tensor(rng, 4, 2);
  const auto lp = pol.log_prob(p, s, a);
  const Tensor mu = pol.head(p, s);
  for (std::size_t r = 0; r < 4; ++r) {
    double want = 0.0;
    const double ls[2] = {0.2, -0.5};
    for (std::size_t j = 0; j < 2; ++j) {
      const double sd = std::exp(ls[j]);
      want += -0.5 * std::pow((a(r, j) - mu(r, j)) / sd, 2) - std::log(sd) - 0.5 * std::log(2 * M_PI);
    }
    EXPECT_NEAR(lp[r], want, 1e-12);
  }
}

TEST(Policy, CategoricalLogProbIsLogSoftmax) {
  const Policy pol = small_policy(true);
  Rng rng(3);
  const ParamSet p = pol.init(rng);
  const Tensor s = random_tensor(rng, 3, 3);
  Tensor a(3, 4);
  a(0, 1) = a(1, 3) = a(2, 0) = 1.0;
  const auto lp = pol.log_prob(p, s, a);
  const Tensor logits = pol.head(p, s);
  const std::size_t pick[3] = {1, 3, 0};
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(logits(r, j));
    EXPECT_NEAR(lp[r], logits(r, pick[r]) - std::log(z), 1e-12);
  }
}

TEST(Policy, DeterministicActionIsMean) {
  const Policy pol = small_policy(false);
  Rng rng(5);
  const ParamSet p = pol.init(rng);
  const envs::State s{0.1, -0.4, 0.3};
  const auto a = pol.act(p, s, rng, true);
  const Tensor mu = pol.head(p, Tensor::row(s));
  EXPECT_EQ(a[0], mu(0, 0));
  EXPECT_EQ(a[1], mu(0, 1));
}

TEST(SurrogateKl, IdenticalPolicies) {
  for (bool discrete : {false, true}) {
    const Policy pol = small_policy(discrete);
    Rng rng(7);
    const ParamSet p = pol.init(rng);
    const RolloutBatch b = synthetic_batch(pol, p, 20, rng);
    const auto sk = surrogate_and_kl(pol, p, p, b, b.advantages);
    double mean_adv = 0.0;
    for (double a : b.advantages) mean_adv += a;
    EXPECT_NEAR(sk.surrogate, mean_adv / 20.0, 1e-12);
    EXPECT_NEAR(sk.kl, 0.0, 1e-12);
  }
}

TEST(SurrogateKl, MeanShiftClosedForm) {
  const Policy pol = small_policy(false);
  Rng rng(8);
  ParamSet p = pol.init(rng);
  p.set("log_std", Tensor{{std::log(0.5), std::log(2.0)}});
  ParamSet q = p;
  // shifting the output bias moves every mean by delta
  Tensor bias = q.at("net.l2.bias");
  bias(0, 0) += 0.3;
  bias(0, 1) -= 0.8;
  q.set("net.l2.bias", bias);
  const Tensor s = random_tensor(rng, 10, 3);
  const double want = 0.3 * 0.3 / (2 * 0.25) + 0.8 * 0.8 / (2 * 4.0);
  EXPECT_NEAR(pol.mean_kl(p, q, s), want, 1e-12);
}

TEST(SurrogateKl, PinnedTwoSampleBatch) {
  // Linear policy, one state dim, one action dim: mean = w s + b.
  PolicySpec spec;
  spec.state_dim = 1;
  spec.action_dim = 1;
  spec.hidden = {};
  const Policy pol(spec);
  ParamSet old_p, new_p;
  old_p.insert("net.l0.weight", Tensor{{1.0}});
  old_p.insert("net.l0.bias", Tensor{{0.0}});
  old_p.insert("log_std", Tensor{{0.0}});
  new_p = old_p;
  new_p.set("net.l0.bias", Tensor{{0.5}});
  RolloutBatch b;
  b.states = Tensor{{1.0}, {-1.0}};
  b.actions = Tensor{{2.0}, {0.0}};
  b.log_probs = pol.log_prob(old_p, b.states, b.actions);
  // ratio_i = exp(-(a-mu_new)^2/2 + (a-mu_old)^2/2)
  // sample 0: mu_old 1, mu_new 1.5 -> exp(-0.125 + 0.5) = exp(0.375)
  // sample 1: mu_old -1, mu_new -0.5 -> exp(-0.125 + 0.5) = exp(0.375)
  const std::vector<double> adv{1.0, -3.0};
  const auto sk = surrogate_and_kl(pol, old_p, new_p, b, adv);
  EXPECT_NEAR(sk.surrogate, 0.5 * (std::exp(0.375) - 3.0 * std::exp(0.375)), 1e-12);
  EXPECT_NEAR(sk.kl, 0.125, 1e-12);
}

TEST(SurrogateKl, NonFiniteRatioNamesSample) {
  PolicySpec spec;
  spec.state_dim = 1;
  spec.action_dim = 1;
  spec.hidden = {};
  const Policy pol(spec);
  ParamSet p;
  p.insert("net.l0.weight", Tensor{{1.0}});
  p.insert("net.l0.bias", Tensor{{0.0}});
  p.insert("log_std", Tensor{{0.0}});
  RolloutBatch b;
  b.states = Tensor{{0.0}, {0.0}};
  b.actions = Tensor{{0.0}, {0.0}};
  b.log_probs = {0.0, -1e6};
  try {
    surrogate(pol, p, b, {1.0, 1.0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(SurrogateKl, KlGradientMatchesFiniteDifferences) {
  for (bool discrete : {false, true}) {
    const Policy pol = small_policy(discrete);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const ParamSet old_p = pol.init(rng);
      ParamSet p = old_p;
      auto flat = p.flatten();
      for (double& v : flat) v += 0.1 * normal(rng);
      p = p.with_flat(flat);
      const Tensor s = random_tensor(rng, 6, 3);
      const Tensor old_head = pol.head(old_p, s);
      const Tensor old_ls = discrete ? Tensor() : old_p.at("log_std");
      auto loss = [&](const ParamSet& q) {
        diff::Tape t;
        const Bound bb = bind(t, q);
        return pol.mean_kl(bb, t, s, old_head, old_ls).value().item();
      };
      diff::Tape t;
      const Bound bb = bind(t, p);
      t.backward(pol.mean_kl(bb, t, s, old_head, old_ls));
      const auto gc = testing::check_gradients(loss, p, gradients(t, bb));
      EXPECT_LT(gc.max_rel_error, 1e-5) << gc.worst;
    }
  }
}

TEST(Fisher, GaussNewtonMatchesFiniteDifferenceHvp) {
  for (bool discrete : {false, true}) {
    const Policy pol = small_policy(discrete);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(100 + seed);
      const ParamSet p = pol.init(rng);
      const Tensor s = random_tensor(rng, 12, 3);
      ParamSet v = p.zeros_like();
      auto flat = v.flatten();
      for (double& x : flat) x = normal(rng);
      v = v.with_flat(flat);
      const auto gn = pol.fisher_vector_product(p, s, v).flatten();
      const auto fd = pol.fisher_vector_product_fd(p, s, v, 1e-4).flatten();
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < gn.size(); ++i) {
        num += (gn[i] - fd[i]) * (gn[i] - fd[i]);
        den += fd[i] * fd[i];
      }
      EXPECT_LT(std::sqrt(num / den), 1e-6) << (discrete ? "categorical" : "gaussian");
    }
  }
}

TEST(Fisher, TapeFreeJvpVjpAgreeWithTape) {
  const Mlp net(MlpSpec{3, {6, 5}, 2, Activation::kTanh, 1.0});
  Rng rng(9);
  const ParamSet p = net.init(rng);
  const Tensor x = random_tensor(rng, 4, 3);
  const ParamSet v = p.with_flat([&] {
    auto f = p.flatten();
    for (double& e : f) e = normal(rng);
    return f;
  }());
  const auto cache = net.forward_cache(p, x);
  const Tensor a = net.jvp(cache, p, v);
  const Tensor b = net.jvp(p, v, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  const Tensor seed = random_tensor(rng, 4, 2);
  diff::Tape t;
  const Bound bb = bind(t, p);
  t.backward(net.forward(bb, t.constant(x)), seed);
  const auto want = gradients(t, bb).flatten();
  const auto got = net.vjp(cache, p, seed).flatten();
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(ConjugateGradient, IdentityInOneIteration) {
  Eigen::VectorXd b(3);
  b << 1.0, -2.0, 0.5;
  const auto r = conjugate_gradient([](const Eigen::VectorXd& v) { return v; }, b, 10);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_NEAR((r.x - b).norm(), 0.0, 1e-15);
}

TEST(ConjugateGradient, DiagonalSystem) {
  Eigen::VectorXd b(2);
  b << 2.0, 4.0;
  const auto r = conjugate_gradient(
      [](const Eigen::VectorXd& v) {
        Eigen::VectorXd o(2);
        o << 2.0 * v[0], 4.0 * v[1];
        return o;
      },
      b, 10);
  EXPECT_NEAR(r.x[0], 1.0, 1e-12);
  EXPECT_NEAR(r.x[1], 1.0, 1e-12);
}

TEST(ConjugateGradient, RandomSpdMatchesDirectSolve) {
  for (int n : {6, 20, 50}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed * 31 + static_cast<std::uint64_t>(n));
      Eigen::MatrixXd m(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
      const Eigen::MatrixXd a = m * m.transpose() + n * Eigen::MatrixXd::Identity(n, n);
      Eigen::VectorXd b(n);
      for (int i = 0; i < n; ++i) b[i] = normal(rng);
      const Eigen::VectorXd direct = a.ldlt().solve(b);
      const auto r = conjugate_gradient([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, b,
                                        static_cast<std::size_t>(2 * n), 1e-12);
      EXPECT_LT((r.x - direct).norm() / direct.norm(), n == 6 ? 1e-8 : 1e-6);
      EXPECT_LT((a * r.x - b).norm() / b.norm(), 1e-6);
    }
  }
}

TEST(ConjugateGradient, NonFiniteOperatorThrows) {
  Eigen::VectorXd b = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(conjugate_gradient([](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v * NAN; }, b, 5),
               NumericError);
}

struct AgentSetup {
  Policy pol;
  ParamSet p;
  ValueFunction vf;
};

AgentSetup make_setup(const envs::EnvSpec& env, std::uint64_t seed) {
  AgentSetup s;
  Rng rng(seed);
  s.pol = Policy(PolicySpec{env.state_dim, env.action_dim, env.discrete()});
  s.p = s.pol.init(rng);
  s.vf = ValueFunction(env.state_dim, rng);
  return s;
}

TEST(Trpo, ZeroAdvantagesLeavePolicyUnchanged) {
  const auto env = envs::make_env("PointMass2D");
  AgentSetup s = make_setup(env, 1);
  Rng rng(2);
  RolloutBatch b = collect_rollouts(env, s.pol, s.p, 300, rng);
  b.rewards.assign(b.size(), 0.0);
  b.advantages.assign(b.size(), 0.0);
  b.value_targets.assign(b.size(), 0.0);
  TrpoConfig cfg;
  cfg.normalize_advantages = false;
  const ParamSet before = s.p;
  const auto st = trpo_update(s.pol, s.p, s.vf, b, cfg, rng);
  EXPECT_FALSE(st.accepted);
  EXPECT_TRUE(s.p == before);
}

TEST(Trpo, AcceptedStepsRespectTrustRegion) {
  for (const char* name : {"PointMass2D", "GridWorldRam"}) {
    const auto env = envs::make_env(name);
    AgentSetup s = make_setup(env, 3);
    Rng rng(4);
    TrpoConfig cfg;
    for (int it = 0; it < 5; ++it) {
      RolloutBatch b = collect_rollouts(env, s.pol, s.p, 500, rng);
      b.rewards = b.env_rewards;
      estimate_advantages(b, s.vf, cfg);
      const ParamSet old = s.p;
      const auto st = trpo_update(s.pol, s.p, s.vf, b, cfg, rng);
      if (!st.accepted) continue;
      EXPECT_LE(s.pol.mean_kl(old, s.p, b.states), cfg.max_kl) << name;
      EXPECT_GE(st.surrogate_after, st.surrogate_before) << name;
      EXPECT_LT(st.cg_residual, 1.0);
    }
  }
}

TEST(Trpo, FiniteDifferenceFisherTakesTheSameStep) {
  const auto env = envs::make_env("Reacher1D");
  AgentSetup a = make_setup(env, 5);
  AgentSetup b = make_setup(env, 5);
  Rng r1(6);
  RolloutBatch batch = collect_rollouts(env, a.pol, a.p, 300, r1);
  batch.rewards = batch.env_rewards;
  TrpoConfig cfg;
  estimate_advantages(batch, a.vf, cfg);
  TrpoConfig fd = cfg;
  fd.finite_difference_fvp = true;
  Rng ra(7), rb(7);
  trpo_update(a.pol, a.p, a.vf, batch, cfg, ra);
  trpo_update(b.pol, b.p, b.vf, batch, fd, rb);
  const auto x = a.p.flatten(), y = b.p.flatten();
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - y[i]));
    scale = std::max(scale, std::abs(x[i]));
  }
  EXPECT_LT(diff, 1e-5 * scale);
}

TEST(Trpo, SanityModeImprovesReturn) {
  // True env reward; compares the first and last five iterations.
  const auto env = envs::make_env("PointMass2D");
  TrpoConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    AgentSetup s = make_setup(env, seed);
    Rng rng(seed + 100);
    std::vector<double> means;
    for (int it = 0; it < 50; ++it) {
      RolloutBatch b = collect_rollouts(env, s.pol, s.p, 1000, rng);
      b.rewards = b.env_rewards;
      estimate_advantages(b, s.vf, cfg);
      trpo_update(s.pol, s.p, s.vf, b, cfg, rng);
      double m = 0.0;
      for (double r : b.episode_returns) m += r;
      means.push_back(m / static_cast<double>(b.episode_returns.size()));
    }
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 5; ++i) {
      first += means[static_cast<std::size_t>(i)];
      last += means[means.size() - 1 - static_cast<std::size_t>(i)];
    }
    EXPECT_GT(last, first) << "seed " << seed;
  }
}

TEST(Value, FitReducesError) {
  Rng rng(3);
  ValueFunction vf(2, rng, 3e-3, {16, 16});
  const Tensor x = random_tensor(rng, 256, 2);
  std::vector<double> y;
  for (std::size_t r = 0; r < 256; ++r) y.push_back(40.0 + 10.0 * (std::sin(x(r, 0)) + 0.5 * x(r, 1)));
  auto mse = [&] {
    const Tensor v = vf.predict(x);
    double e = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) e += (v[i] - y[i]) * (v[i] - y[i]);
    return e / static_cast<double>(y.size());
  };
  const double before = mse();
  TrpoConfig cfg;
  for (int i = 0; i < 20; ++i) vf.fit(x, y, cfg, rng);
  EXPECT_LT(mse(), 0.05 * before);
}

TEST(Value, RestandardizingPreservesPredictions) {
  Rng rng(4);
  ValueFunction vf(3, rng, 1e-12, {8});
  const Tensor x = random_tensor(rng, 10, 3);
  const Tensor before = vf.predict(x);
  TrpoConfig cfg;
  cfg.value_epochs = 1;
  // lr ~ 0, so only the output-preserving rescale acts
  vf.fit(x, std::vector<double>(10, 0.0), cfg, rng);
  vf.fit(x, {5, 9, 1, 3, 7, 2, 8, 4, 6, 0}, cfg, rng);
  const Tensor after = vf.predict(x);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(after[i], before[i], 1e-9);
  ValueFunction copy(3, rng, 1e-12, {8});
  copy.load(vf.state());
  EXPECT_EQ(copy.predict(x), after);
}

TEST(TrpoConfigDefaults, MatchTable) {
  const TrpoConfig c;
  EXPECT_EQ(c.gamma, 0.995);
  EXPECT_EQ(c.lam, 0.97);
  EXPECT_EQ(c.max_kl, 0.01);
  EXPECT_EQ(c.cg_iters, 10u);
  EXPECT_EQ(c.cg_damping, 0.1);
  EXPECT_EQ(c.backtrack_coef, 0.8);
  EXPECT_EQ(c.max_backtracks, 10u);
  EXPECT_EQ(c.batch_steps, 5000u);
  EXPECT_EQ(c.value_lr, 3e-4);
  EXPECT_EQ(c.value_batch, 128u);
  TrpoConfig bad;
  bad.gamma = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace sail::agent
