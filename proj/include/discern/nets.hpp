#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/graph.hpp"
#include "discern/rng.hpp"
#include "discern/tensor.hpp"

namespace discern {

inline Tensor flatten_obs(const Tensor& obs) { return Tensor({obs.numel()}, obs.data); }

inline Tensor stack_observations(const std::vector<const Tensor*>& obs) {
  int n = static_cast<int>(obs.size());
  int d = obs[0]->numel();
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    std::copy(obs[i]->data.begin(), obs[i]->data.end(),
              out.data.begin() + static_cast<std::size_t>(i) * d);
  return out;
}

// Layer sizes for the policy and embedding networks. The observation is a
// flattened pixel grid; both the current state and the goal pass through the
// same encoder.
struct NetConfig {
  int obs_dim = 0;
  int enc_hidden = 128;  // width of the two encoder hidden layers
  int features = 64;     // encoder output h(s)
  int embed_dim = 32;    // goal embedding
  int hidden = 128;      // recurrent state
  int time_hidden = 16;  // hidden layer over the periodic time features
  int actions = 5;

  int gru_input() const { return 2 * features + time_hidden; }
};

// Weight matrices are stored [in, out] so a batch of row vectors multiplies
// from the left. Initialization: truncated normal with stddev 1/sqrt(fan_in),
// zero biases.
inline ParamSet init_params(const NetConfig& cfg, Rng& rng, bool with_ae_decoder = false) {
  ParamSet p;
  auto w = [&](const std::string& name, int in, int out) {
    Tensor t = Tensor::zeros({in, out});
    double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : t.data) v = rng.truncated_normal(stddev);
    p[name] = std::move(t);
  };
  auto b = [&](const std::string& name, int out) { p[name] = Tensor::zeros({out}); };

  w("enc/w0", cfg.obs_dim, cfg.enc_hidden);
  b("enc/b0", cfg.enc_hidden);
  w("enc/w1", cfg.enc_hidden, cfg.enc_hidden);
  b("enc/b1", cfg.enc_hidden);
  w("enc/w2", cfg.enc_hidden, cfg.features);
  b("enc/b2", cfg.features);

  w("time/w0", 2, cfg.time_hidden);
  b("time/b0", cfg.time_hidden);

  const int gi = cfg.gru_input();
  for (const char* gate : {"z", "r", "n"}) {
    w(std::string("gru/w") + gate, gi, cfg.hidden);
    w(std::string("gru/u") + gate, cfg.hidden, cfg.hidden);
    b(std::string("gru/b") + gate, cfg.hidden);
  }

  w("duel/v", cfg.hidden, 1);
  w("duel/w", cfg.hidden, cfg.actions);
  p["duel/b"] = Tensor::scalar(0.0);

  w("phi/w", cfg.features, cfg.embed_dim);
  b("phi/b", cfg.embed_dim);

  if (with_ae_decoder) {
    w("ae/w", cfg.embed_dim, cfg.features);
    b("ae/b", cfg.features);
  }
  return p;
}

// Leaf handles for one parameter set inside a graph. Built once per graph;
// the same leaves are reused across time steps so gradients accumulate.
class ParamLeaves {
 public:
  ParamLeaves(Graph& g, const ParamSet& params, bool trainable) {
    for (const auto& [name, t] : params) vars_[name] = g.leaf(t, trainable, name);
  }

  Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::invalid_argument("no parameter leaf: " + name);
    return it->second;
  }

 private:
  std::map<std::string, Var> vars_;
};

// h(s): flatten -> 128 relu -> 128 relu -> features. Accepts a single
// observation row [obs_dim] or a batch [B, obs_dim].
inline Var encode(Graph& g, Var obs, const ParamLeaves& p) {
  Var h0 = g.relu(g.add(g.matmul(obs, p["enc/w0"]), p["enc/b0"]));
  Var h1 = g.relu(g.add(g.matmul(h0, p["enc/w1"]), p["enc/b1"]));
  return g.add(g.matmul(h1, p["enc/w2"]), p["enc/b2"]);
}

// xi_phi(h): single affine layer of tanh units followed by L2 normalization.
inline Var embed(Graph& g, Var features, const ParamLeaves& p) {
  return g.l2_normalize(g.tanh(g.add(g.matmul(features, p["phi/w"]), p["phi/b"])));
}

// Periodic representation of the step index, 1 <= t <= T.
inline std::pair<double, double> time_features(int t, int T) {
  if (t < 1 || t > T) throw std::out_of_range("time_features: step " + std::to_string(t) +
                                              " outside [1," + std::to_string(T) + "]");
  double phase = 2.0 * M_PI * static_cast<double>(t) / static_cast<double>(T);
  return {std::sin(phase), std::cos(phase)};
}

inline Var time_mlp(Graph& g, Var sincos, const ParamLeaves& p) {
  return g.relu(g.add(g.matmul(sincos, p["time/w0"]), p["time/b0"]));
}

// Single gated recurrent cell over x_t = [h(s_t), h(s_g), time features].
inline Var gru_cell(Graph& g, Var x, Var h, const ParamLeaves& p) {
  Var z = g.sigmoid(g.add(g.add(g.matmul(x, p["gru/wz"]), g.matmul(h, p["gru/uz"])), p["gru/bz"]));
  Var r = g.sigmoid(g.add(g.add(g.matmul(x, p["gru/wr"]), g.matmul(h, p["gru/ur"])), p["gru/br"]));
  Var n = g.tanh(
      g.add(g.add(g.matmul(x, p["gru/wn"]), g.mul(r, g.matmul(h, p["gru/un"]))), p["gru/bn"]));
  Var one_minus_z = g.shift(g.scale(z, -1.0), 1.0);
  return g.add(g.mul(one_minus_z, h), g.mul(z, n));
}

// Q(a|psi) = psi'v + (psi'w_a - mean_a' psi'w_a') + b. The mean-centering is
// a matmul with the constant matrix I - 11'/n, so it differentiates like any
// other product. Accepts psi as [hidden] or [B, hidden].
inline Var dueling_q(Graph& g, Var psi, const ParamLeaves& p, int n_actions) {
  Tensor center = Tensor::zeros({n_actions, n_actions});
  for (int i = 0; i < n_actions; ++i)
    for (int j = 0; j < n_actions; ++j)
      center.at(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / n_actions;
  Var advantages = g.matmul(g.matmul(psi, p["duel/w"]), g.constant(center));
  Var value = g.matmul(psi, p["duel/v"]);  // [B,1] or [1]
  const Tensor& psi_val = g.value(psi);
  Var value_b;
  if (psi_val.rank() == 2) {
    value_b = g.matmul(value, g.constant(Tensor::full({1, n_actions}, 1.0)));
  } else {
    value_b = g.matmul(g.reshape(value, {1, 1}), g.constant(Tensor::full({1, n_actions}, 1.0)));
    value_b = g.reshape(value_b, {n_actions});
  }
  return g.add(g.add(advantages, value_b), p["duel/b"]);
}

// Per-step greedy/exploratory evaluation of the goal-conditioned Q network.
// Holds the recurrent state for one goal episode; goal features are computed
// once per episode and reused. The single-step graph is built once per
// episode and re-driven through its leaves, so parameters are copied into
// leaves once per episode rather than once per step.
class QSession {
 public:
  QSession(const NetConfig& cfg, const ParamSet& params) : cfg_(cfg), params_(&params) {}

  void start_episode(const Tensor& goal_obs) {
    Graph goal_graph;
    ParamLeaves gp(goal_graph, *params_, false);
    goal_features_ = goal_graph.value(encode(goal_graph, goal_graph.constant(flatten_obs(goal_obs)), gp));
    state_ = Tensor::zeros({cfg_.hidden});

    graph_ = std::make_unique<Graph>();
    Graph& g = *graph_;
    ParamLeaves p(g, *params_, false);
    obs_leaf_ = g.leaf(Tensor::zeros({cfg_.obs_dim}));
    time_leaf_ = g.leaf(Tensor::zeros({2}));
    state_leaf_ = g.leaf(Tensor::zeros({cfg_.hidden}));
    Var hs = encode(g, obs_leaf_, p);
    Var tf = time_mlp(g, time_leaf_, p);
    Var x = g.concat({hs, g.constant(goal_features_), tf});
    next_state_ = gru_cell(g, x, state_leaf_, p);
    q_out_ = dueling_q(g, next_state_, p, cfg_.actions);
  }

  // Q values for observation at step t (1-based within the episode).
  Tensor q_values(const Tensor& obs, int t, int T) {
    if (!graph_) throw std::logic_error("QSession: q_values before start_episode");
    auto [s, c] = time_features(t, T);
    graph_->set_leaf(obs_leaf_, flatten_obs(obs));
    graph_->set_leaf(time_leaf_, Tensor::row({s, c}));
    graph_->set_leaf(state_leaf_, state_);
    graph_->recompute();
    state_ = graph_->value(next_state_);
    return graph_->value(q_out_);
  }

  void rebind(const ParamSet& params) { params_ = &params; }
  const Tensor& goal_features() const { return goal_features_; }
  const Tensor& recurrent_state() const { return state_; }

 private:
  NetConfig cfg_;
  const ParamSet* params_;
  Tensor goal_features_;
  Tensor state_;
  std::unique_ptr<Graph> graph_;
  Var obs_leaf_, time_leaf_, state_leaf_, next_state_, q_out_;
};

}  // namespace discern
