#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "discern/env.hpp"

using namespace discern;

TEST(Env, ResetDeterministicGivenSeed) {
  GridWorldConfig cfg;
  GridWorld a(cfg), b(cfg);
  EXPECT_EQ(a.reset(99).data, b.reset(99).data);
  EXPECT_NE(a.reset(99).data, b.reset(100).data);
}

TEST(Env, ObservationShapeAndRange) {
  GridWorldConfig cfg;
  GridWorld env(cfg);
  Observation obs = env.reset(1);
  EXPECT_EQ(obs.shape, (std::vector<int>{8, 8, 3}));
  for (double v : obs.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Env, NoDistractorsSingleForegroundCell) {
  GridWorldConfig cfg;
  cfg.n_distractors = 0;
  GridWorld env(cfg);
  Observation obs = env.reset(5);
  int avatar_cells = 0, distractor_cells = 0;
  for (int cell = 0; cell < 64; ++cell) {
    if (obs.data[cell * 3 + 0] == 1.0) ++avatar_cells;
    if (obs.data[cell * 3 + 1] == 1.0) ++distractor_cells;
  }
  EXPECT_EQ(avatar_cells, 1);
  EXPECT_EQ(distractor_cells, 0);
}

TEST(Env, ExactlyOneAvatarCellAlways) {
  GridWorldConfig cfg;
  cfg.n_distractors = 3;
  GridWorld env(cfg);
  env.reset(7);
  for (int t = 0; t < 200; ++t) {
    Observation obs = env.step(t % kNumActions);
    int avatar_cells = 0;
    for (int cell = 0; cell < 64; ++cell)
      if (obs.data[cell * 3 + 0] == 1.0) ++avatar_cells;
    EXPECT_EQ(avatar_cells, 1);
  }
}

TEST(Env, WallClampAndNoop) {
  GridWorldConfig cfg;
  cfg.n_distractors = 0;
  GridWorld env(cfg);
  env.reset(3);
  EnvState s = env.state();
  s.avatar_x = 0;
  s.avatar_y = 3;
  env.set_state(s);
  env.step(2);  // left into the wall
  EXPECT_EQ(env.state().avatar_x, 0);
  EXPECT_EQ(env.state().avatar_y, 3);
  env.step(4);  // no-op
  EXPECT_EQ(env.state().avatar_x, 0);
  EXPECT_EQ(env.state().avatar_y, 3);
}

TEST(Env, InvalidActionRejected) {
  GridWorld env(GridWorldConfig{});
  env.reset(1);
  EXPECT_THROW(env.step(5), std::invalid_argument);
  EXPECT_THROW(env.step(-1), std::invalid_argument);
}

TEST(Env, DegenerateGridRejected) {
  GridWorldConfig cfg;
  cfg.width = 1;
  cfg.height = 1;
  EXPECT_THROW(GridWorld{cfg}, std::invalid_argument);
}

TEST(Env, ControllableStateTracksAvatarOnly) {
  GridWorldConfig cfg;
  GridWorld env(cfg);
  env.reset(11);
  EnvState s = env.state();
  s.avatar_x = 2;
  s.avatar_y = 5;
  env.set_state(s);
  EXPECT_EQ(env.controllable_state(), (std::vector<double>{2.0, 5.0}));
  // moving a distractor leaves the controllable state untouched
  s.distractors[0] = {0, 0};
  env.set_state(s);
  EXPECT_EQ(env.controllable_state(), (std::vector<double>{2.0, 5.0}));
}

TEST(Env, RepeatedRightMovesClampAtWall) {
  GridWorldConfig cfg;
  cfg.n_distractors = 0;
  GridWorld env(cfg);
  env.reset(13);
  EnvState s = env.state();
  s.avatar_x = 0;
  s.avatar_y = 0;
  env.set_state(s);
  for (int k = 1; k <= 12; ++k) {
    env.step(3);
    EXPECT_EQ(env.state().avatar_x, std::min(k, cfg.width - 1));
    EXPECT_EQ(env.state().avatar_y, 0);
  }
}

TEST(Env, RandomWalkDisplacementDistribution) {
  // away from walls each of the four moves has frequency 1/4
  GridWorldConfig cfg;
  cfg.width = 31;
  cfg.height = 31;
  cfg.n_distractors = 1;
  GridWorld env(cfg);
  env.reset(17);
  EnvState s = env.state();
  s.distractors[0] = {15, 15};
  env.set_state(s);
  std::map<std::pair<int, int>, int> moves;
  int counted = 0;
  for (int t = 0; t < 10000; ++t) {
    auto before = env.state().distractors[0];
    env.step(4);
    auto after = env.state().distractors[0];
    bool interior = before.first > 0 && before.first < 30 && before.second > 0 && before.second < 30;
    if (interior) {
      ++moves[{after.first - before.first, after.second - before.second}];
      ++counted;
    }
  }
  ASSERT_GT(counted, 5000);
  double p = 0.25;
  double sigma = std::sqrt(counted * p * (1 - p));
  for (auto [dx, dy] : {std::pair{0, -1}, {0, 1}, {-1, 0}, {1, 0}}) {
    double freq = moves[{dx, dy}];
    EXPECT_NEAR(freq, counted * p, 3 * sigma);
  }
}

TEST(Env, DistractorMotionIndependentOfActions) {
  // identical seeds, different action sequences: distractor paths coincide
  GridWorldConfig cfg;
  GridWorld a(cfg), b(cfg);
  a.reset(23);
  b.reset(23);
  Rng action_rng(5);
  for (int t = 0; t < 300; ++t) {
    a.step(action_rng.uniform_int(kNumActions));
    b.step(4);
    EXPECT_EQ(a.state().distractors, b.state().distractors);
  }
}

TEST(Env, CyclicDistractorReturnsToStart) {
  GridWorldConfig cfg;
  cfg.motion = DistractorMotion::kCyclic;
  GridWorld env(cfg);
  env.reset(29);
  auto start = env.state().distractors[0];
  std::set<std::pair<int, int>> visited;
  bool returned = false;
  for (int t = 0; t < 64; ++t) {
    env.step(4);
    visited.insert(env.state().distractors[0]);
    if (env.state().distractors[0] == start) {
      returned = true;
      break;
    }
  }
  EXPECT_TRUE(returned);
  EXPECT_GT(visited.size(), 1u);
}

TEST(Env, RenderInjectiveOnAvatarPosition) {
  GridWorldConfig cfg;
  GridWorld env(cfg);
  env.reset(31);
  std::set<std::vector<double>> images;
  EnvState s = env.state();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      s.avatar_x = x;
      s.avatar_y = y;
      env.set_state(s);
      images.insert(env.render().data);
    }
  EXPECT_EQ(images.size(), 64u);
}

TEST(Env, StepCounterContinuity) {
  GridWorld env(GridWorldConfig{});
  env.reset(37);
  for (int t = 1; t <= 130; ++t) {
    env.step(4);
    EXPECT_EQ(env.state().step_count, t);
  }
}

TEST(Env, DistractorDominantVariantCoversMorePixels) {
  GridWorldConfig cfg;
  cfg.n_distractors = 3;
  cfg.distractor_size = 2;
  GridWorld env(cfg);
  Observation obs = env.reset(41);
  int avatar_cells = 0, distractor_cells = 0;
  for (int cell = 0; cell < 64; ++cell) {
    if (obs.data[cell * 3 + 0] == 1.0) ++avatar_cells;
    if (obs.data[cell * 3 + 1] == 1.0) ++distractor_cells;
  }
  EXPECT_EQ(avatar_cells, 1);
  EXPECT_GT(distractor_cells, avatar_cells);
}
