#include <gtest/gtest.h>

#include <cmath>

#include "discern/agent.hpp"
#include "test_util.hpp"

using namespace discern;
using testutil::max_rel_err;
using testutil::random_tensor;

namespace {

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.obs_dim = 12;
  cfg.enc_hidden = 8;
  cfg.features = 5;
  cfg.embed_dim = 3;
  cfg.hidden = 6;
  cfg.time_hidden = 3;
  cfg.actions = 5;
  return cfg;
}

Observation random_obs(Rng& rng) { return random_tensor({2, 2, 3}, rng, 0.0, 1.0); }

GoalEpisode random_episode(int T, Rng& rng, double gamma = 0.98) {
  std::vector<Observation> states;
  std::vector<int> actions;
  for (int t = 0; t < T; ++t) {
    states.push_back(random_obs(rng));
    actions.push_back(rng.uniform_int(5));
  }
  return make_episode(std::move(states), std::move(actions), random_obs(rng), rng.uniform(), gamma);
}

// Direct non-recursive expansion of the Peng Q(lambda) return:
//   G_t = sum_{k=0..N} lambda^k P_k r_{t+k}
//       + (1-lambda) sum_{k=1..N} lambda^{k-1} P_k max_a Q(s_{t+k}, a)
// with N = T-1-t and P_k the product of the first k discounts from t.
std::vector<double> peng_expansion_oracle(const std::vector<double>& rewards,
                                          const std::vector<double>& discounts,
                                          const std::vector<std::vector<double>>& q_all,
                                          double lambda) {
  const int T = static_cast<int>(rewards.size());
  std::vector<double> out(T);
  for (int t = 0; t < T; ++t) {
    const int N = T - 1 - t;
    double g = 0.0;
    for (int k = 0; k <= N; ++k) {
      double p = 1.0;
      for (int j = 0; j < k; ++j) p *= discounts[t + j];
      g += std::pow(lambda, k) * p * rewards[t + k];
      if (k >= 1) {
        double max_q = q_all[t + k][0];
        for (double v : q_all[t + k]) max_q = std::max(max_q, v);
        g += (1.0 - lambda) * std::pow(lambda, k - 1) * p * max_q;
      }
    }
    out[t] = g;
  }
  return out;
}

}  // namespace

TEST(Act, FullyRandomIsUniform) {
  Rng rng(1);
  Tensor q = Tensor::row({0.3, 0.1, 0.9, 0.2, 0.4});
  std::vector<int> counts(5, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[epsilon_greedy(q, 1.0, rng)];
  double expected = n / 5.0;
  double sigma = std::sqrt(n * 0.2 * 0.8);
  for (int a = 0; a < 5; ++a) EXPECT_NEAR(counts[a], expected, 3 * sigma);
}

TEST(Act, GreedyPicksArgmax) {
  Rng rng(2);
  EXPECT_EQ(epsilon_greedy(Tensor::row({0.1, 0.9, 0.3, 0.3, 0.2}), 0.0, rng), 1);
}

TEST(Act, TiesBreakTowardLowestIndex) {
  Rng rng(3);
  EXPECT_EQ(epsilon_greedy(Tensor::row({0.5, 0.5, 0.5, 0.5, 0.5}), 0.0, rng), 0);
  EXPECT_EQ(epsilon_greedy(Tensor::row({0.1, 0.7, 0.7, 0.1, 0.1}), 0.0, rng), 1);
}

TEST(Act, ArgmaxInvariantToConstantShift) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    Tensor q = random_tensor({5}, rng);
    Tensor shifted = q;
    double c = rng.uniform() * 10.0 - 5.0;
    for (double& v : shifted.data) v += c;
    EXPECT_EQ(epsilon_greedy(q, 0.0, rng), epsilon_greedy(shifted, 0.0, rng));
  }
}

TEST(Act, InvalidEpsilonRejected) {
  Rng rng(5);
  EXPECT_THROW(epsilon_greedy(Tensor::row({1, 2}), -0.1, rng), std::invalid_argument);
  EXPECT_THROW(epsilon_greedy(Tensor::row({1, 2}), 1.1, rng), std::invalid_argument);
}

TEST(PengTargets, LambdaZeroIsOneStep) {
  Rng rng(6);
  GoalEpisode ep = random_episode(6, rng);
  std::vector<std::vector<double>> q_all(6);
  for (auto& q : q_all) q = random_tensor({5}, rng).data;
  auto targets = peng_q_lambda_targets(ep.rewards, ep.discounts, q_all, 0.0);
  for (int t = 0; t < 5; ++t) {
    double max_q = *std::max_element(q_all[t + 1].begin(), q_all[t + 1].end());
    EXPECT_NEAR(targets[t], ep.rewards[t] + ep.discounts[t] * max_q, 1e-15);
  }
  EXPECT_DOUBLE_EQ(targets[5], ep.rewards[5]);
}

TEST(PengTargets, TerminalTargetIsTerminalReward) {
  Rng rng(7);
  for (double lambda : {0.0, 0.5, 1.0}) {
    GoalEpisode ep = random_episode(4, rng);
    std::vector<std::vector<double>> q_all(4);
    for (auto& q : q_all) q = random_tensor({5}, rng).data;
    auto targets = peng_q_lambda_targets(ep.rewards, ep.discounts, q_all, lambda);
    EXPECT_DOUBLE_EQ(targets[3], ep.rewards[3]);
  }
}

TEST(PengTargets, MatchesBruteForceExpansion) {
  Rng rng(8);
  for (double lambda : {0.0, 0.5, 0.9, 1.0}) {
    for (int episode = 0; episode < 100; ++episode) {
      int T = 2 + rng.uniform_int(7);  // lengths up to 8
      GoalEpisode ep = random_episode(T, rng);
      std::vector<std::vector<double>> q_all(T);
      for (auto& q : q_all) q = random_tensor({5}, rng).data;
      auto recursion = peng_q_lambda_targets(ep.rewards, ep.discounts, q_all, lambda);
      auto expansion = peng_expansion_oracle(ep.rewards, ep.discounts, q_all, lambda);
      for (int t = 0; t < T; ++t) EXPECT_NEAR(recursion[t], expansion[t], 1e-10);
    }
  }
}

TEST(PengTargets, MismatchedLengthsRejected) {
  std::vector<double> rewards(5, 0.0), discounts(4, 0.9);
  std::vector<std::vector<double>> q_all(5);
  EXPECT_THROW(peng_q_lambda_targets(rewards, discounts, q_all, 0.5), std::invalid_argument);
}

TEST(Episode, IntermediateRewardsZeroTerminalDiscountZero) {
  Rng rng(9);
  GoalEpisode ep = random_episode(10, rng);
  for (int t = 0; t < 9; ++t) {
    EXPECT_EQ(ep.rewards[t], 0.0);
    EXPECT_EQ(ep.discounts[t], 0.98);
  }
  EXPECT_EQ(ep.discounts[9], 0.0);
}

TEST(Hindsight, GateFailLeavesEpisodeIdentical) {
  Rng rng(10);
  HindsightConfig cfg;
  cfg.p_her = 0.0;
  GoalEpisode ep = random_episode(6, rng);
  GoalEpisode out = relabel_hindsight(ep, cfg, rng);
  EXPECT_FALSE(out.relabelled);
  EXPECT_EQ(out.goal, ep.goal);
  EXPECT_EQ(out.rewards, ep.rewards);
  EXPECT_EQ(out.states.size(), ep.states.size());
}

TEST(Hindsight, SingleFrameWindowRelabelsToTerminalState) {
  Rng rng(11);
  HindsightConfig cfg;
  cfg.p_her = 1.0;
  cfg.window = 1;
  GoalEpisode ep = random_episode(5, rng);
  GoalEpisode out = relabel_hindsight(ep, cfg, rng);
  EXPECT_TRUE(out.relabelled);
  EXPECT_EQ(out.goal, ep.states[4]);
  EXPECT_DOUBLE_EQ(out.rewards[4], 1.0);
}

TEST(Hindsight, RelabelledAlwaysCarriesUnitReward) {
  Rng rng(12);
  HindsightConfig cfg;
  for (int k = 0; k < 1000; ++k) {
    GoalEpisode out = relabel_hindsight(random_episode(5, rng), cfg, rng);
    if (out.relabelled) {
      EXPECT_DOUBLE_EQ(out.rewards[4], 1.0);
      // goal drawn from the last `window` frames
      bool member = false;
      for (int t = 5 - cfg.window; t < 5; ++t)
        if (out.states[t] == out.goal) member = true;
      EXPECT_TRUE(member);
    }
  }
}

TEST(Hindsight, RelabelFrequencyMatchesPHer) {
  Rng rng(13);
  HindsightConfig cfg;  // p_her = 0.25
  GoalEpisode ep = random_episode(6, rng);
  const int n = 100000;
  int relabelled = 0;
  for (int k = 0; k < n; ++k)
    if (relabel_hindsight(ep, cfg, rng).relabelled) ++relabelled;
  double sigma = std::sqrt(n * 0.25 * 0.75);
  EXPECT_NEAR(relabelled, n * 0.25, 3 * sigma);
}

TEST(Hindsight, WindowLargerThanEpisodeRejected) {
  Rng rng(14);
  HindsightConfig cfg;
  cfg.window = 9;
  GoalEpisode ep = random_episode(5, rng);
  EXPECT_THROW(relabel_hindsight(ep, cfg, rng), std::invalid_argument);
}

TEST(Replay, FifoKeepsOriginalGoals) {
  Rng rng(15);
  ReplayBuffer replay(3);
  std::vector<GoalEpisode> eps;
  for (int i = 0; i < 5; ++i) {
    eps.push_back(random_episode(4, rng));
    replay.push(eps.back());
  }
  EXPECT_EQ(replay.size(), 3);
  // the two oldest were evicted
  EXPECT_EQ(replay.episodes()[0].goal, eps[2].goal);
  EXPECT_EQ(replay.episodes()[2].goal, eps[4].goal);
}

TEST(TdUpdate, ZeroTdErrorGivesZeroLossAndNoMovement) {
  NetConfig cfg = tiny_config();
  Rng rng(16);
  ParamSet params = init_params(cfg, rng);
  // zero head and zero rewards with zero discounts: Q == targets == 0
  params["duel/v"] = Tensor::zeros({cfg.hidden, 1});
  params["duel/w"] = Tensor::zeros({cfg.hidden, cfg.actions});
  params["duel/b"] = Tensor::scalar(0.0);
  std::vector<GoalEpisode> batch;
  for (int b = 0; b < 2; ++b) {
    GoalEpisode ep = random_episode(3, rng, 0.9);
    ep.rewards[2] = 0.0;
    batch.push_back(ep);
  }
  std::uint64_t before = param_set_hash(params);
  RmsPropState opt;
  TdUpdateResult result = td_update(batch, params, cfg, 0.9, opt);
  EXPECT_TRUE(result.applied);
  EXPECT_DOUBLE_EQ(result.loss, 0.0);
  EXPECT_EQ(param_set_hash(params), before);
}

TEST(TdUpdate, SingleTransitionMatchesScalarOracle) {
  NetConfig cfg = tiny_config();
  Rng rng(17);
  ParamSet params = init_params(cfg, rng);
  GoalEpisode ep = random_episode(1, rng);
  ep.actions[0] = 2;
  ep.rewards[0] = 0.6;

  QSession session(cfg, params);
  session.start_episode(ep.goal);
  double q = session.q_values(ep.states[0], 1, 1).data[2];
  double expected_loss = (q - 0.6) * (q - 0.6);

  RmsPropState opt;
  TdUpdateResult result = td_update({ep}, params, cfg, 0.9, opt);
  EXPECT_TRUE(result.applied);
  EXPECT_NEAR(result.loss, expected_loss, 1e-12);
}

TEST(TdUpdate, GradientMatchesFiniteDifferences) {
  NetConfig cfg = tiny_config();
  Rng rng(18);
  ParamSet params = init_params(cfg, rng);
  std::vector<GoalEpisode> batch{random_episode(3, rng), random_episode(3, rng)};

  Graph g;
  ParamLeaves p(g, params, true);
  Var loss = build_td_loss(g, p, batch, cfg, 0.9);
  g.backward(loss);
  ParamSet grads = g.param_grads();
  for (const auto& name : {"enc/w0", "enc/b1", "gru/wr", "gru/uz", "duel/w", "duel/v", "time/w0"}) {
    Tensor fd = testutil::fd_grad_of_leaf(g, p[name], loss);
    EXPECT_LE(max_rel_err(grads[name], fd), 1e-4) << name;
  }
}

TEST(TdUpdate, RaggedBatchRejected) {
  NetConfig cfg = tiny_config();
  Rng rng(19);
  ParamSet params = init_params(cfg, rng);
  RmsPropState opt;
  std::vector<GoalEpisode> batch{random_episode(3, rng), random_episode(4, rng)};
  EXPECT_THROW(td_update(batch, params, cfg, 0.9, opt), std::invalid_argument);
}
