#pragma once

#include <atomic>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/env.hpp"
#include "discern/graph.hpp"
#include "discern/nets.hpp"
#include "discern/rmsprop.hpp"
#include "discern/tensor.hpp"

namespace discern {

enum class RewardProviderKind { kDiscern, kAe, kPixelL2, kNone };

struct SimilarityResult {
  double value = 0.0;       // l_g in [-1, 1]
  bool degenerate = false;  // a zero embedding was hit
};

// l_g = xi(h(s_T))' xi(h(g)), the dot product of the two unit embeddings.
inline SimilarityResult goal_similarity(const ParamSet& params, const NetConfig& cfg,
                                        const Observation& terminal, const Observation& goal) {
  Graph g;
  ParamLeaves p(g, params, false);
  Var e_t = embed(g, encode(g, g.constant(flatten_obs(terminal)), p), p);
  Var e_g = embed(g, encode(g, g.constant(flatten_obs(goal)), p), p);
  Var dot = g.reduce_sum(g.mul(e_t, e_g));
  return SimilarityResult{g.scalar_value(dot), g.zero_norm_flagged()};
}

inline double achievement_reward(double goal_sim) { return goal_sim > 0.0 ? goal_sim : 0.0; }

// -log q_hat(g | s_T) where q_hat is the softmax over the goal and decoy
// similarities scaled by beta. terminal/goal features are [F] or [B,F];
// decoys is one matrix per decoy index. Features are treated as fixed:
// gradient reaches phi only.
inline Var discriminator_loss(Graph& g, Var terminal_features, Var goal_features,
                              const std::vector<Var>& decoy_features, const ParamLeaves& p,
                              double beta) {
  if (decoy_features.empty()) throw std::invalid_argument("discriminator_loss: K must be >= 1");
  auto as_batch = [&](Var v) {
    const Tensor& t = g.value(v);
    return t.rank() == 1 ? g.reshape(v, {1, t.shape[0]}) : v;
  };
  Var e_terminal = embed(g, g.stop_gradient(as_batch(terminal_features)), p);
  const int batch = g.value(e_terminal).shape[0];
  auto similarity_col = [&](Var features) {
    Var e = embed(g, g.stop_gradient(as_batch(features)), p);
    Var sims = g.matmul(g.mul(e_terminal, e), g.constant(Tensor::full({g.value(e).shape[1]}, 1.0)));
    return g.reshape(sims, {batch, 1});
  };
  std::vector<Var> columns{similarity_col(goal_features)};
  for (Var d : decoy_features) columns.push_back(similarity_col(d));
  Var logits = g.scale(g.concat(columns), beta);
  Var q_hat = g.softmax(logits);
  Var goal_prob = g.gather(q_hat, std::vector<int>(batch, 0));
  return g.scale(g.reduce_mean(g.log(goal_prob)), -1.0);
}

// Reconstruction criterion || h - dec(xi(h)) ||^2, averaged over rows.
// The decoder has its own parameters; h is treated as fixed.
inline Var ae_reconstruction_loss(Graph& g, Var features, const ParamLeaves& p) {
  const Tensor& t = g.value(features);
  Var f = t.rank() == 1 ? g.reshape(features, {1, t.shape[0]}) : features;
  f = g.stop_gradient(f);
  const int batch = g.value(f).shape[0];
  Var recon = g.add(g.matmul(embed(g, f, p), p["ae/w"]), p["ae/b"]);
  Var diff = g.sub(f, recon);
  return g.scale(g.reduce_sum(g.mul(diff, diff)), 1.0 / batch);
}

inline double l2_pixel_reward(const Observation& s, const Observation& goal, double sigma_pixel) {
  if (sigma_pixel <= 0.0) throw std::invalid_argument("sigma_pixel must be positive");
  if (!s.same_shape(goal)) throw std::invalid_argument("l2_pixel_reward: shape mismatch");
  double sq = 0.0;
  for (int i = 0; i < s.numel(); ++i) {
    double d = s.data[i] - goal.data[i];
    sq += d * d;
  }
  return std::exp(-sq / sigma_pixel);
}

// Actor-facing terminal reward r(s_T; g) in [0,1] under one parameter
// snapshot. Degenerate zero embeddings yield reward 0 and are counted.
class RewardProvider {
 public:
  RewardProvider(RewardProviderKind kind, double sigma_pixel)
      : kind_(kind), sigma_pixel_(sigma_pixel) {}

  RewardProviderKind kind() const { return kind_; }

  double reward(const Observation& terminal, const Observation& goal, const ParamSet& params,
                const NetConfig& cfg) const {
    switch (kind_) {
      case RewardProviderKind::kDiscern:
      case RewardProviderKind::kAe: {
        SimilarityResult sim = goal_similarity(params, cfg, terminal, goal);
        if (sim.degenerate) {
          ++degenerate_warnings_;
          return 0.0;
        }
        return achievement_reward(sim.value);
      }
      case RewardProviderKind::kPixelL2:
        return l2_pixel_reward(terminal, goal, sigma_pixel_);
      case RewardProviderKind::kNone:
        return 0.0;
    }
    return 0.0;
  }

  long degenerate_warnings() const { return degenerate_warnings_.load(); }

 private:
  RewardProviderKind kind_;
  double sigma_pixel_;
  mutable std::atomic<long> degenerate_warnings_{0};
};

struct RewardUpdateResult {
  double loss = 0.0;
  bool applied = false;
};

// One reward-learner step on phi (and the AE decoder for the AE baseline).
// Encoder parameters are never touched: gradients are filtered by prefix on
// top of the stop_gradient in the loss graphs.
inline RewardUpdateResult reward_learner_update(
    RewardProviderKind kind, const std::vector<const Observation*>& terminals,
    const std::vector<const Observation*>& goals,
    const std::vector<std::vector<const Observation*>>& decoys, ParamSet& params,
    const NetConfig& cfg, double beta, RmsPropState& opt) {
  if (kind != RewardProviderKind::kDiscern && kind != RewardProviderKind::kAe)
    return {0.0, false};
  Graph g;
  ParamLeaves p(g, params, true);
  Var loss;
  if (kind == RewardProviderKind::kDiscern) {
    const int k = static_cast<int>(decoys[0].size());
    Var term_feats = encode(g, g.constant(stack_observations(terminals)), p);
    Var goal_feats = encode(g, g.constant(stack_observations(goals)), p);
    std::vector<Var> decoy_feats;
    for (int j = 0; j < k; ++j) {
      std::vector<const Observation*> column;
      column.reserve(decoys.size());
      for (const auto& row : decoys) column.push_back(row[j]);
      decoy_feats.push_back(encode(g, g.constant(stack_observations(column)), p));
    }
    loss = discriminator_loss(g, term_feats, goal_feats, decoy_feats, p, beta);
  } else {
    std::vector<const Observation*> all = terminals;
    all.insert(all.end(), goals.begin(), goals.end());
    loss = ae_reconstruction_loss(g, encode(g, g.constant(stack_observations(all)), p), p);
  }
  double loss_value = g.scalar_value(loss);
  if (!std::isfinite(loss_value)) return {loss_value, false};
  g.backward(loss);
  ParamSet grads;
  for (auto& [name, grad] : g.param_grads())
    if (name.rfind("phi/", 0) == 0 || (kind == RewardProviderKind::kAe && name.rfind("ae/", 0) == 0))
      grads[name] = std::move(grad);
  rmsprop_step(params, grads, opt);
  return {loss_value, true};
}

}  // namespace discern
