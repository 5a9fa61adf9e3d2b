#include <gtest/gtest.h>

#include <cmath>

#include "discern/env.hpp"
#include "discern/reward.hpp"
#include "test_util.hpp"

using namespace discern;
using testutil::fd_grad_of_leaf;
using testutil::max_rel_err;
using testutil::random_tensor;

namespace {

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.obs_dim = 12;
  cfg.enc_hidden = 10;
  cfg.features = 5;
  cfg.embed_dim = 4;
  cfg.hidden = 8;
  cfg.time_hidden = 3;
  return cfg;
}

Observation random_obs(Rng& rng) {
  Tensor t = random_tensor({2, 2, 3}, rng, 0.0, 1.0);
  return t;
}

// Plain-loop recomputation of xi(h(s))' xi(h(g)), independent of the graph.
double similarity_oracle(const ParamSet& params, const NetConfig& cfg, const Observation& a,
                         const Observation& b) {
  auto matvec = [](const Tensor& w, const std::vector<double>& x) {
    std::vector<double> y(w.shape[1], 0.0);
    for (int i = 0; i < w.shape[0]; ++i)
      for (int j = 0; j < w.shape[1]; ++j) y[j] += x[i] * w.at(i, j);
    return y;
  };
  auto embed_obs = [&](const Observation& obs) {
    std::vector<double> x = obs.data;
    for (const char* layer : {"0", "1", "2"}) {
      std::vector<double> y = matvec(params.at(std::string("enc/w") + layer), x);
      const Tensor& bias = params.at(std::string("enc/b") + layer);
      for (std::size_t j = 0; j < y.size(); ++j) {
        y[j] += bias.data[j];
        if (layer[0] != '2' && y[j] < 0.0) y[j] = 0.0;
      }
      x = y;
    }
    std::vector<double> e = matvec(params.at("phi/w"), x);
    double norm = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      e[j] = std::tanh(e[j] + params.at("phi/b").data[j]);
      norm += e[j] * e[j];
    }
    norm = std::sqrt(norm);
    for (double& v : e) v /= norm;
    return e;
  };
  auto ea = embed_obs(a), eb = embed_obs(b);
  double dot = 0.0;
  for (std::size_t j = 0; j < ea.size(); ++j) dot += ea[j] * eb[j];
  return dot;
}

}  // namespace

TEST(GoalSimilarity, SelfSimilarityIsOne) {
  NetConfig cfg = tiny_config();
  Rng rng(1);
  ParamSet params = init_params(cfg, rng);
  Observation obs = random_obs(rng);
  SimilarityResult sim = goal_similarity(params, cfg, obs, obs);
  EXPECT_FALSE(sim.degenerate);
  EXPECT_NEAR(sim.value, 1.0, 1e-10);
}

TEST(GoalSimilarity, OppositeEmbeddingsGiveMinusOne) {
  // one-dimensional embedding collapses to the sign of the pre-activation,
  // so features of opposite sign embed to exactly +1 / -1
  NetConfig cfg = tiny_config();
  cfg.embed_dim = 1;
  ParamSet params;
  params["phi/w"] = Tensor::full({cfg.features, 1}, 1.0);
  params["phi/b"] = Tensor::zeros({1});
  Graph g;
  ParamLeaves p(g, params, false);
  Var e_pos = embed(g, g.constant(Tensor::row({0.5, 0, 0, 0, 0})), p);
  Var e_neg = embed(g, g.constant(Tensor::row({-0.7, 0, 0, 0, 0})), p);
  Var dot = g.reduce_sum(g.mul(e_pos, e_neg));
  EXPECT_DOUBLE_EQ(g.scalar_value(dot), -1.0);
}

TEST(GoalSimilarity, MatchesScalarOracle) {
  NetConfig cfg = tiny_config();
  Rng rng(2);
  ParamSet params = init_params(cfg, rng);
  for (int k = 0; k < 10; ++k) {
    Observation a = random_obs(rng), b = random_obs(rng);
    EXPECT_NEAR(goal_similarity(params, cfg, a, b).value, similarity_oracle(params, cfg, a, b),
                1e-12);
  }
}

TEST(AchievementReward, Rectification) {
  EXPECT_DOUBLE_EQ(achievement_reward(-0.3), 0.0);
  EXPECT_DOUBLE_EQ(achievement_reward(0.7), 0.7);
  EXPECT_DOUBLE_EQ(achievement_reward(1.0), 1.0);
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    double r = achievement_reward(-1.0 + 2.0 * rng.uniform());
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(DiscriminatorLoss, UniformCandidatesGiveLogK1) {
  NetConfig cfg = tiny_config();
  Rng rng(4);
  ParamSet params = init_params(cfg, rng);
  Graph g;
  ParamLeaves p(g, params, true);
  Var feat = g.constant(random_tensor({cfg.features}, rng));
  // goal and all four decoys identical: q_hat is uniform over 5 candidates
  Var loss = discriminator_loss(g, feat, feat, {feat, feat, feat, feat}, p, 5.0);
  EXPECT_NEAR(g.scalar_value(loss), std::log(5.0), 1e-12);
}

TEST(DiscriminatorLoss, SeparatedCandidatesMatchScalarOracle) {
  // similarity +1 to the goal and -1 to each of 4 decoys at beta = 5
  NetConfig cfg = tiny_config();
  cfg.embed_dim = 1;
  ParamSet params;
  params["phi/w"] = Tensor::full({cfg.features, 1}, 1.0);
  params["phi/b"] = Tensor::zeros({1});
  Graph g;
  ParamLeaves p(g, params, true);
  Var pos = g.constant(Tensor::row({0.8, 0, 0, 0, 0}));
  Var neg = g.constant(Tensor::row({-0.6, 0, 0, 0, 0}));
  Var loss = discriminator_loss(g, pos, pos, {neg, neg, neg, neg}, p, 5.0);
  double q_goal = std::exp(5.0) / (std::exp(5.0) + 4.0 * std::exp(-5.0));
  EXPECT_NEAR(g.scalar_value(loss), -std::log(q_goal), 1e-12);
}

TEST(DiscriminatorLoss, QHatSumsToOne) {
  NetConfig cfg = tiny_config();
  Rng rng(5);
  ParamSet params = init_params(cfg, rng);
  Graph g;
  ParamLeaves p(g, params, false);
  std::vector<Var> embeds;
  for (int i = 0; i < 5; ++i)
    embeds.push_back(embed(g, g.constant(random_tensor({cfg.features}, rng)), p));
  std::vector<Var> sims;
  for (int i = 1; i < 5; ++i)
    sims.push_back(g.reshape(g.reduce_sum(g.mul(embeds[0], embeds[i])), {1}));
  Var q_hat = g.softmax(g.scale(g.concat(sims), 5.0));
  double sum = 0.0;
  for (double v : g.value(q_hat).data) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(DiscriminatorLoss, GradientMatchesFiniteDifferences) {
  NetConfig cfg = tiny_config();
  Rng rng(6);
  ParamSet params = init_params(cfg, rng);
  Graph g;
  ParamLeaves p(g, params, true);
  Var term = g.constant(random_tensor({cfg.features}, rng));
  Var goal = g.constant(random_tensor({cfg.features}, rng));
  Var d1 = g.constant(random_tensor({cfg.features}, rng));
  Var d2 = g.constant(random_tensor({cfg.features}, rng));
  Var loss = discriminator_loss(g, term, goal, {d1, d2}, p, 3.0);
  g.backward(loss);
  ParamSet grads = g.param_grads();
  for (const auto& name : {"phi/w", "phi/b"}) {
    Tensor fd = fd_grad_of_leaf(g, p[name], loss);
    EXPECT_LE(max_rel_err(grads[name], fd), 1e-4) << name;
  }
}

TEST(DiscriminatorLoss, RequiresAtLeastOneDecoy) {
  NetConfig cfg = tiny_config();
  Rng rng(7);
  ParamSet params = init_params(cfg, rng);
  Graph g;
  ParamLeaves p(g, params, false);
  Var feat = g.constant(random_tensor({cfg.features}, rng));
  EXPECT_THROW(discriminator_loss(g, feat, feat, {}, p, 5.0), std::invalid_argument);
}

TEST(AeLoss, PerfectAutoencoderGivesZero) {
  NetConfig cfg = tiny_config();
  Rng rng(8);
  ParamSet params = init_params(cfg, rng, true);
  Tensor h = random_tensor({cfg.features}, rng);
  // decoder that reproduces h exactly regardless of the code
  params["ae/w"] = Tensor::zeros({cfg.embed_dim, cfg.features});
  params["ae/b"] = h;
  Graph g;
  ParamLeaves p(g, params, true);
  Var loss = ae_reconstruction_loss(g, g.constant(h), p);
  EXPECT_NEAR(g.scalar_value(loss), 0.0, 1e-15);
}

TEST(AeLoss, ZeroDecoderGivesSquaredNorm) {
  NetConfig cfg = tiny_config();
  Rng rng(9);
  ParamSet params = init_params(cfg, rng, true);
  params["ae/w"] = Tensor::zeros({cfg.embed_dim, cfg.features});
  params["ae/b"] = Tensor::zeros({cfg.features});
  Tensor h = random_tensor({cfg.features}, rng);
  double sq = 0.0;
  for (double v : h.data) sq += v * v;
  Graph g;
  ParamLeaves p(g, params, true);
  EXPECT_NEAR(g.scalar_value(ae_reconstruction_loss(g, g.constant(h), p)), sq, 1e-12);
}

TEST(AeLoss, MatchesScalarOracle) {
  NetConfig cfg = tiny_config();
  Rng rng(10);
  ParamSet params = init_params(cfg, rng, true);
  Tensor h = random_tensor({cfg.features}, rng);

  // independent recomputation with plain loops
  std::vector<double> e(cfg.embed_dim, 0.0);
  double norm = 0.0;
  for (int j = 0; j < cfg.embed_dim; ++j) {
    for (int i = 0; i < cfg.features; ++i) e[j] += h.data[i] * params["phi/w"].at(i, j);
    e[j] = std::tanh(e[j] + params["phi/b"].data[j]);
    norm += e[j] * e[j];
  }
  norm = std::sqrt(norm);
  double expected = 0.0;
  for (int i = 0; i < cfg.features; ++i) {
    double recon = params["ae/b"].data[i];
    for (int j = 0; j < cfg.embed_dim; ++j) recon += (e[j] / norm) * params["ae/w"].at(j, i);
    expected += (h.data[i] - recon) * (h.data[i] - recon);
  }

  Graph g;
  ParamLeaves p(g, params, true);
  EXPECT_NEAR(g.scalar_value(ae_reconstruction_loss(g, g.constant(h), p)), expected, 1e-12);
}

TEST(PixelL2, UnitAndScaleCases) {
  Observation a = Tensor::zeros({2, 2, 3});
  EXPECT_DOUBLE_EQ(l2_pixel_reward(a, a, 4.0), 1.0);

  Observation b = a;
  b.data[0] = 1.0;
  b.data[5] = 1.0;  // two unit-intensity cells differ: ||s-g||^2 = 2
  EXPECT_NEAR(l2_pixel_reward(a, b, 2.0), std::exp(-1.0), 1e-15);

  Observation c = a;
  c.data[3] = 2.0;  // ||s-g||^2 = sigma
  EXPECT_NEAR(l2_pixel_reward(a, c, 4.0), std::exp(-1.0), 1e-15);
}

TEST(PixelL2, InvalidSigmaRejected) {
  Observation a = Tensor::zeros({2, 2, 3});
  EXPECT_THROW(l2_pixel_reward(a, a, 0.0), std::invalid_argument);
  EXPECT_THROW(l2_pixel_reward(a, a, -1.0), std::invalid_argument);
}

TEST(Provider, RewardsAlwaysInUnitInterval) {
  NetConfig cfg = tiny_config();
  Rng rng(11);
  ParamSet params = init_params(cfg, rng);
  for (auto kind : {RewardProviderKind::kDiscern, RewardProviderKind::kPixelL2,
                    RewardProviderKind::kNone}) {
    RewardProvider provider(kind, 4.0);
    for (int k = 0; k < 50; ++k) {
      double r = provider.reward(random_obs(rng), random_obs(rng), params, cfg);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(Provider, RewardIndependentOfDecoyDraws) {
  NetConfig cfg = tiny_config();
  Rng rng(12);
  ParamSet params = init_params(cfg, rng);
  RewardProvider provider(RewardProviderKind::kDiscern, 4.0);
  Observation s = random_obs(rng), goal = random_obs(rng);
  double r1 = provider.reward(s, goal, params, cfg);

  // evaluating discriminator losses under different decoy draws in between
  // must not perturb the reward path
  Graph g;
  ParamLeaves p(g, params, false);
  discriminator_loss(g, g.constant(random_tensor({cfg.features}, rng)),
                     g.constant(random_tensor({cfg.features}, rng)),
                     {g.constant(random_tensor({cfg.features}, rng))}, p, 2.0);
  double r2 = provider.reward(s, goal, params, cfg);
  EXPECT_EQ(r1, r2);
}

TEST(Provider, DegenerateEmbeddingGivesZeroAndWarns) {
  NetConfig cfg = tiny_config();
  Rng rng(13);
  ParamSet params = init_params(cfg, rng);
  for (auto& [name, t] : params)
    if (name.rfind("enc/", 0) == 0 || name.rfind("phi/", 0) == 0) t = Tensor::zeros(t.shape);
  RewardProvider provider(RewardProviderKind::kDiscern, 4.0);
  EXPECT_EQ(provider.reward(random_obs(rng), random_obs(rng), params, cfg), 0.0);
  EXPECT_EQ(provider.degenerate_warnings(), 1);
}

TEST(RewardLearner, DiscriminatorUpdateLeavesEncoderUntouched) {
  NetConfig cfg = tiny_config();
  Rng rng(14);
  ParamSet params = init_params(cfg, rng);
  ParamSet encoder_before;
  for (const auto& [name, t] : params)
    if (name.rfind("phi/", 0) != 0) encoder_before[name] = t;

  Observation s1 = random_obs(rng), s2 = random_obs(rng);
  Observation g1 = random_obs(rng), g2 = random_obs(rng);
  Observation d = random_obs(rng);
  RmsPropState opt;
  auto result = reward_learner_update(RewardProviderKind::kDiscern, {&s1, &s2}, {&g1, &g2},
                                      {{&d, &d}, {&d, &d}}, params, cfg, 3.0, opt);
  EXPECT_TRUE(result.applied);

  ParamSet encoder_after;
  for (const auto& [name, t] : params)
    if (name.rfind("phi/", 0) != 0) encoder_after[name] = t;
  EXPECT_EQ(param_set_hash(encoder_before), param_set_hash(encoder_after));
  EXPECT_NE(param_set_hash(params), param_set_hash(encoder_after));  // phi moved
}

TEST(RewardLearner, MonotoneImprovementOnSeparableSet) {
  NetConfig cfg = tiny_config();
  Rng rng(15);
  ParamSet params = init_params(cfg, rng);

  // positives are identical pairs; decoys are other fixed observations
  std::vector<Observation> obs;
  for (int i = 0; i < 8; ++i) obs.push_back(random_obs(rng));
  std::vector<const Observation*> terminals, goals;
  std::vector<std::vector<const Observation*>> decoys;
  for (int b = 0; b < 4; ++b) {
    terminals.push_back(&obs[b]);
    goals.push_back(&obs[b]);
    decoys.push_back({&obs[(b + 1) % 8], &obs[(b + 3) % 8], &obs[(b + 5) % 8], &obs[(b + 7) % 8]});
  }
  RmsPropState opt;
  opt.learning_rate = 1e-2;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 200; ++step) {
    auto result = reward_learner_update(RewardProviderKind::kDiscern, terminals, goals, decoys,
                                        params, cfg, 5.0, opt);
    ASSERT_TRUE(result.applied);
    if (step == 0) first = result.loss;
    last = result.loss;
  }
  EXPECT_LT(last, std::log(5.0));
  EXPECT_LT(last, first);
}

TEST(RewardLearner, AeUpdateTrainsDecoderAndPhiOnly) {
  NetConfig cfg = tiny_config();
  Rng rng(16);
  ParamSet params = init_params(cfg, rng, true);
  ParamSet encoder_before;
  for (const auto& [name, t] : params)
    if (name.rfind("phi/", 0) != 0 && name.rfind("ae/", 0) != 0) encoder_before[name] = t;

  Observation s = random_obs(rng), goal = random_obs(rng);
  RmsPropState opt;
  auto result = reward_learner_update(RewardProviderKind::kAe, {&s}, {&goal}, {}, params, cfg,
                                      5.0, opt);
  EXPECT_TRUE(result.applied);
  ParamSet encoder_after;
  for (const auto& [name, t] : params)
    if (name.rfind("phi/", 0) != 0 && name.rfind("ae/", 0) != 0) encoder_after[name] = t;
  EXPECT_EQ(param_set_hash(encoder_before), param_set_hash(encoder_after));
}
