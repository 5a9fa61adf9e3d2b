#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "discern/rng.hpp"
#include "discern/tensor.hpp"

namespace discern {

// Observations are H x W x 3 grids with values in [0,1]; goals are
// observations too.
using Observation = Tensor;

enum class DistractorMotion { kRandomWalk, kCyclic };

// Actions: 0 up, 1 down, 2 left, 3 right, 4 no-op.
inline constexpr int kNumActions = 5;

using Rgb = std::array<double, 3>;

struct GridWorldConfig {
  int width = 8;
  int height = 8;
  int n_distractors = 1;          // 0..3
  DistractorMotion motion = DistractorMotion::kRandomWalk;
  int distractor_size = 1;        // square side in cells; >1 gives the
                                  // distractor-dominant variant
  Rgb avatar_color{1.0, 0.0, 0.0};
  Rgb distractor_color{0.0, 1.0, 0.0};
  Rgb background_color{0.0, 0.0, 1.0};
  std::uint64_t seed = 0;

  int obs_dim() const { return width * height * 3; }

  void validate() const {
    if (width * height <= 1) throw std::invalid_argument("grid must have more than one cell");
    if (n_distractors < 0 || n_distractors > 3)
      throw std::invalid_argument("n_distractors must be in [0,3]");
    if (distractor_size < 1 || distractor_size > std::min(width, height))
      throw std::invalid_argument("distractor_size out of range");
    if (avatar_color == distractor_color)
      throw std::invalid_argument("avatar and distractor colors must be distinct");
  }
};

struct EnvState {
  int avatar_x = 0;
  int avatar_y = 0;
  std::vector<std::pair<int, int>> distractors;  // top-left cell of each block
  Rng rng;
  long step_count = 0;
  // cyclic mode: each distractor follows a fixed rectangular loop
  std::vector<std::vector<std::pair<int, int>>> loops;
  std::vector<int> loop_phase;
};

// Grid world with a controllable avatar and uncontrollable distractors.
// Avatar dynamics are deterministic given (state, action); distractor motion
// never depends on the action.
class GridWorld {
 public:
  explicit GridWorld(const GridWorldConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  const GridWorldConfig& config() const { return cfg_; }
  const EnvState& state() const { return state_; }
  void set_state(EnvState s) { state_ = std::move(s); }

  Observation reset(std::uint64_t seed) {
    state_ = EnvState{};
    state_.rng = Rng(mix_seed(seed, 0x456e76)); // env stream
    place_distractors();
    // avatar lands on a uniformly random cell not covered by a distractor
    std::vector<int> free;
    for (int c = 0; c < cfg_.width * cfg_.height; ++c)
      if (!covered_by_distractor(c % cfg_.width, c / cfg_.width)) free.push_back(c);
    int cell = free[state_.rng.uniform_int(static_cast<int>(free.size()))];
    state_.avatar_x = cell % cfg_.width;
    state_.avatar_y = cell / cfg_.width;
    state_.step_count = 0;
    return render();
  }

  Observation step(int action) {
    if (action < 0 || action >= kNumActions)
      throw std::invalid_argument("invalid action index " + std::to_string(action));
    switch (action) {
      case 0: state_.avatar_y = clamp_y(state_.avatar_y - 1); break;
      case 1: state_.avatar_y = clamp_y(state_.avatar_y + 1); break;
      case 2: state_.avatar_x = clamp_x(state_.avatar_x - 1); break;
      case 3: state_.avatar_x = clamp_x(state_.avatar_x + 1); break;
      default: break;  // no-op
    }
    move_distractors();
    ++state_.step_count;
    return render();
  }

  // Ground truth for evaluation only; the agent never sees this.
  std::vector<double> controllable_state() const {
    return {static_cast<double>(state_.avatar_x), static_cast<double>(state_.avatar_y)};
  }

  Observation render() const {
    Observation obs = Tensor::zeros({cfg_.height, cfg_.width, 3});
    auto paint = [&](int x, int y, const Rgb& color) {
      std::size_t base = (static_cast<std::size_t>(y) * cfg_.width + x) * 3;
      for (int c = 0; c < 3; ++c) obs.data[base + c] = color[c];
    };
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) paint(x, y, cfg_.background_color);
    for (const auto& [dx, dy] : state_.distractors)
      for (int oy = 0; oy < cfg_.distractor_size; ++oy)
        for (int ox = 0; ox < cfg_.distractor_size; ++ox)
          paint(clamp_x(dx + ox), clamp_y(dy + oy), cfg_.distractor_color);
    paint(state_.avatar_x, state_.avatar_y, cfg_.avatar_color);
    return obs;
  }

 private:
  int clamp_x(int x) const { return x < 0 ? 0 : (x >= cfg_.width ? cfg_.width - 1 : x); }
  int clamp_y(int y) const { return y < 0 ? 0 : (y >= cfg_.height ? cfg_.height - 1 : y); }

  bool covered_by_distractor(int x, int y) const {
    for (const auto& [dx, dy] : state_.distractors)
      if (x >= dx && x < dx + cfg_.distractor_size && y >= dy && y < dy + cfg_.distractor_size)
        return true;
    return false;
  }

  void place_distractors() {
    state_.distractors.clear();
    state_.loops.clear();
    state_.loop_phase.clear();
    const int max_x = cfg_.width - cfg_.distractor_size;
    const int max_y = cfg_.height - cfg_.distractor_size;
    for (int d = 0; d < cfg_.n_distractors; ++d) {
      int x = state_.rng.uniform_int(max_x + 1);
      int y = state_.rng.uniform_int(max_y + 1);
      if (cfg_.motion == DistractorMotion::kCyclic) {
        state_.loops.push_back(make_loop(x, y, max_x, max_y));
        state_.loop_phase.push_back(0);
        state_.distractors.push_back(state_.loops.back()[0]);
      } else {
        state_.distractors.emplace_back(x, y);
      }
    }
  }

  // A fixed rectangular circuit near the start cell, clamped to the grid.
  std::vector<std::pair<int, int>> make_loop(int x, int y, int max_x, int max_y) const {
    int w = std::min(2, max_x);
    int h = std::min(2, max_y);
    int x0 = std::max(0, std::min(x, max_x - w));
    int y0 = std::max(0, std::min(y, max_y - h));
    std::vector<std::pair<int, int>> loop;
    for (int i = 0; i <= w; ++i) loop.emplace_back(x0 + i, y0);
    for (int i = 1; i <= h; ++i) loop.emplace_back(x0 + w, y0 + i);
    for (int i = 1; i <= w; ++i) loop.emplace_back(x0 + w - i, y0 + h);
    for (int i = 1; i < h; ++i) loop.emplace_back(x0, y0 + h - i);
    return loop;
  }

  void move_distractors() {
    for (std::size_t d = 0; d < state_.distractors.size(); ++d) {
      auto& [dx, dy] = state_.distractors[d];
      if (cfg_.motion == DistractorMotion::kRandomWalk) {
        switch (state_.rng.uniform_int(4)) {
          case 0: dy = std::max(0, dy - 1); break;
          case 1: dy = std::min(cfg_.height - cfg_.distractor_size, dy + 1); break;
          case 2: dx = std::max(0, dx - 1); break;
          default: dx = std::min(cfg_.width - cfg_.distractor_size, dx + 1); break;
        }
      } else {
        int& phase = state_.loop_phase[d];
        phase = (phase + 1) % static_cast<int>(state_.loops[d].size());
        dx = state_.loops[d][phase].first;
        dy = state_.loops[d][phase].second;
      }
    }
  }

  GridWorldConfig cfg_;
  EnvState state_;
};

}  // namespace discern
