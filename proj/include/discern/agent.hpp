#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/env.hpp"
#include "discern/graph.hpp"
#include "discern/nets.hpp"
#include "discern/rmsprop.hpp"
#include "discern/rng.hpp"
#include "discern/tensor.hpp"

namespace discern {

// One fixed-length goal episode. Rewards are zero everywhere except the
// final step; the final discount is zero, which terminates the backup even
// though the environment itself continues.
struct GoalEpisode {
  std::vector<Observation> states;  // s_1..s_T
  std::vector<int> actions;         // a_1..a_T
  std::vector<double> rewards;      // r_1..r_T
  std::vector<double> discounts;    // gamma_1..gamma_T, gamma_T = 0
  Observation goal;
  bool relabelled = false;
  bool replayed = false;
  int actor_id = 0;
  std::uint64_t sequence = 0;

  int length() const { return static_cast<int>(states.size()); }
};

inline GoalEpisode make_episode(std::vector<Observation> states, std::vector<int> actions,
                                Observation goal, double terminal_reward, double gamma) {
  if (states.size() != actions.size() || states.empty())
    throw std::invalid_argument("make_episode: states/actions size mismatch");
  GoalEpisode ep;
  int T = static_cast<int>(states.size());
  ep.states = std::move(states);
  ep.actions = std::move(actions);
  ep.goal = std::move(goal);
  ep.rewards.assign(T, 0.0);
  ep.rewards[T - 1] = terminal_reward;
  ep.discounts.assign(T, gamma);
  ep.discounts[T - 1] = 0.0;
  return ep;
}

struct HindsightConfig {
  double p_her = 0.25;
  int window = 3;  // goals drawn from the last `window` frames

  void validate() const {
    if (p_her < 0.0 || p_her > 1.0) throw std::invalid_argument("p_her must be in [0,1]");
    if (window < 1) throw std::invalid_argument("hindsight window must be >= 1");
  }
};

// With probability p_her the goal becomes a uniformly chosen observation
// from the final `window` steps and the terminal reward becomes exactly 1;
// otherwise the episode is returned unchanged.
inline GoalEpisode relabel_hindsight(GoalEpisode ep, const HindsightConfig& cfg, Rng& rng) {
  cfg.validate();
  const int T = ep.length();
  if (T < cfg.window) throw std::invalid_argument("relabel_hindsight: episode shorter than window");
  if (rng.uniform() < cfg.p_her) {
    int index = T - cfg.window + rng.uniform_int(cfg.window);
    ep.goal = ep.states[index];
    ep.rewards[T - 1] = 1.0;
    ep.relabelled = true;
  }
  return ep;
}

inline int argmax_lowest(const std::vector<double>& values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// Epsilon-greedy over a Q row; ties break toward the lowest action index.
inline int epsilon_greedy(const Tensor& q, double epsilon, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("epsilon must be in [0,1]");
  if (rng.uniform() < epsilon) return rng.uniform_int(q.numel());
  return argmax_lowest(q.data);
}

inline int act(QSession& session, const Observation& obs, int t, int T, double epsilon, Rng& rng) {
  return epsilon_greedy(session.q_values(obs, t, T), epsilon, rng);
}

// Peng's Q(lambda) targets:
//   G_T = r_T
//   G_t = r_t + gamma_t * ((1-lambda) * max_a Q(s_{t+1}, a) + lambda * G_{t+1})
// q_all[t] holds Q(s_{t+1}, .) at index t+1, i.e. one row per step of the
// episode under the current parameters.
inline std::vector<double> peng_q_lambda_targets(const std::vector<double>& rewards,
                                                 const std::vector<double>& discounts,
                                                 const std::vector<std::vector<double>>& q_all,
                                                 double lambda) {
  const int T = static_cast<int>(rewards.size());
  if (static_cast<int>(discounts.size()) != T || static_cast<int>(q_all.size()) != T)
    throw std::invalid_argument("peng_q_lambda_targets: length mismatch");
  std::vector<double> targets(T);
  targets[T - 1] = rewards[T - 1];
  for (int t = T - 2; t >= 0; --t) {
    double max_next = q_all[t + 1][argmax_lowest(q_all[t + 1])];
    targets[t] = rewards[t] + discounts[t] * ((1.0 - lambda) * max_next + lambda * targets[t + 1]);
  }
  return targets;
}

// Actor-local FIFO of past episodes, stored with their original goals;
// relabelling happens when a sample is emitted, not here.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("replay capacity must be >= 1");
  }

  void push(GoalEpisode ep) {
    episodes_.push_back(std::move(ep));
    if (static_cast<int>(episodes_.size()) > capacity_) episodes_.pop_front();
  }

  const GoalEpisode& sample(Rng& rng) const {
    if (episodes_.empty()) throw std::out_of_range("replay buffer is empty");
    return episodes_[rng.uniform_int(static_cast<int>(episodes_.size()))];
  }

  int size() const { return static_cast<int>(episodes_.size()); }
  bool empty() const { return episodes_.empty(); }
  const std::deque<GoalEpisode>& episodes() const { return episodes_; }

 private:
  int capacity_;
  std::deque<GoalEpisode> episodes_;
};

struct TdUpdateResult {
  double loss = 0.0;
  bool applied = false;
};

// Mean squared TD error over a batch: the recurrent network is re-evaluated
// along each trajectory, and Peng targets are formed from the re-evaluated Q
// values. Targets enter as constants (semi-gradient).
inline Var build_td_loss(Graph& g, const ParamLeaves& p, const std::vector<GoalEpisode>& batch,
                         const NetConfig& cfg, double lambda) {
  if (batch.empty()) throw std::invalid_argument("td loss: empty batch");
  const int B = static_cast<int>(batch.size());
  const int T = batch[0].length();
  for (const auto& ep : batch)
    if (ep.length() != T) throw std::invalid_argument("td loss: ragged batch");

  std::vector<const Observation*> goals;
  goals.reserve(B);
  for (const auto& ep : batch) goals.push_back(&ep.goal);
  Var goal_feats = encode(g, g.constant(stack_observations(goals)), p);
  Var ones_col = g.constant(Tensor::full({B, 1}, 1.0));

  Var h = g.constant(Tensor::zeros({B, cfg.hidden}));
  std::vector<Var> q_steps;
  q_steps.reserve(T);
  for (int t = 0; t < T; ++t) {
    std::vector<const Observation*> obs;
    obs.reserve(B);
    for (const auto& ep : batch) obs.push_back(&ep.states[t]);
    Var state_feats = encode(g, g.constant(stack_observations(obs)), p);
    auto [sin_t, cos_t] = time_features(t + 1, T);
    Var tf = time_mlp(g, g.constant(Tensor::row({sin_t, cos_t})), p);
    Var tf_rows = g.matmul(ones_col, g.reshape(tf, {1, cfg.time_hidden}));
    Var x = g.concat({state_feats, goal_feats, tf_rows});
    h = gru_cell(g, x, h, p);
    q_steps.push_back(dueling_q(g, h, p, cfg.actions));
  }

  // Peng targets from the re-evaluated Q values, per episode.
  std::vector<std::vector<double>> targets(B);
  for (int b = 0; b < B; ++b) {
    std::vector<std::vector<double>> q_all(T, std::vector<double>(cfg.actions));
    for (int t = 0; t < T; ++t)
      for (int a = 0; a < cfg.actions; ++a) q_all[t][a] = g.value(q_steps[t]).at(b, a);
    targets[b] = peng_q_lambda_targets(batch[b].rewards, batch[b].discounts, q_all, lambda);
  }

  Var total = g.constant_scalar(0.0);
  for (int t = 0; t < T; ++t) {
    std::vector<int> acts(B);
    Tensor target_col = Tensor::zeros({B});
    for (int b = 0; b < B; ++b) {
      acts[b] = batch[b].actions[t];
      target_col.data[b] = targets[b][t];
    }
    Var diff = g.sub(g.gather(q_steps[t], acts), g.constant(target_col));
    total = g.add(total, g.reduce_sum(g.mul(diff, diff)));
  }
  return g.scale(total, 1.0 / (static_cast<double>(B) * T));
}

// One Q-learning step on theta. A non-finite loss refuses the step and
// leaves parameters untouched.
inline TdUpdateResult td_update(const std::vector<GoalEpisode>& batch, ParamSet& params,
                                const NetConfig& cfg, double lambda, RmsPropState& opt) {
  Graph g;
  ParamLeaves p(g, params, true);
  Var loss = build_td_loss(g, p, batch, cfg, lambda);
  double loss_value = g.scalar_value(loss);
  if (!std::isfinite(loss_value)) return {loss_value, false};
  g.backward(loss);
  ParamSet grads;
  for (auto& [name, grad] : g.param_grads())
    if (name.rfind("phi/", 0) != 0 && name.rfind("ae/", 0) != 0) grads[name] = std::move(grad);
  rmsprop_step(params, grads, opt);
  return {loss_value, true};
}

}  // namespace discern
