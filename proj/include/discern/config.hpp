#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/agent.hpp"
#include "discern/env.hpp"
#include "discern/goal_buffer.hpp"
#include "discern/nets.hpp"
#include "discern/reward.hpp"

namespace discern {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Everything one training run needs. Mirrors the flat `key = value` config
// file; see config_keys() for the full key list.
struct ExperimentConfig {
  GridWorldConfig env;
  RewardProviderKind provider = RewardProviderKind::kDiscern;
  double sigma_pixel = 4.0;
  GoalBufferConfig goal_buffer;
  HindsightConfig hindsight;

  int episode_steps = 50;    // T
  int decoys = 4;            // K
  double beta = 0.0;         // 0 = auto (K + 1)
  double gamma = 0.98;
  double lambda = 0.9;
  int batch = 32;            // B
  double learning_rate = 1e-4;
  int replay_capacity = 256;

  int enc_hidden = 128;
  int features = 64;
  int embed_dim = 32;
  int hidden = 128;
  int time_hidden = 16;

  int actors = 1;
  long total_frames = 2000000;
  long eval_every = 100000;
  long checkpoint_every = 0;  // frames; 0 disables periodic checkpoints
  int eval_goals = 100;
  int eval_trials = 20;
  int eval_workers = 2;
  std::uint64_t seed = 1;
  int broadcast_every = 10;   // learner updates per snapshot broadcast
  int poll_episodes = 2;      // actor episodes per snapshot poll
  int queue_capacity = 64;
  double eps_max = 0.4;
  double eps_min = 0.05;

  double effective_beta() const { return beta == 0.0 ? decoys + 1.0 : beta; }

  NetConfig net_config() const {
    NetConfig n;
    n.obs_dim = env.obs_dim();
    n.enc_hidden = enc_hidden;
    n.features = features;
    n.embed_dim = embed_dim;
    n.hidden = hidden;
    n.time_hidden = time_hidden;
    n.actions = kNumActions;
    return n;
  }

  // Geometric epsilon schedule across actors.
  double actor_epsilon(int actor_id) const {
    if (actors <= 1) return eps_max;
    double t = static_cast<double>(actor_id) / (actors - 1);
    return eps_max * std::pow(eps_min / eps_max, t);
  }

  void validate() const {
    try {
      env.validate();
      hindsight.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    auto probability = [](double p, const char* what) {
      if (p < 0.0 || p > 1.0) throw ConfigError(std::string(what) + " must be in [0,1]");
    };
    probability(goal_buffer.p_replace, "goalbuf.p_replace");
    probability(goal_buffer.p_add_non_diverse, "goalbuf.p_add_non_diverse");
    probability(eps_max, "run.eps_max");
    probability(eps_min, "run.eps_min");
    if (actors < 1) throw ConfigError("run.actors must be >= 1");
    if (episode_steps < 1) throw ConfigError("agent.episode_steps must be >= 1");
    if (hindsight.window > episode_steps)
      throw ConfigError("agent.her_window must not exceed agent.episode_steps");
    if (decoys < 1) throw ConfigError("agent.decoys must be >= 1");
    if (beta != 0.0 && beta != decoys + 1.0 && !beta_override)
      throw ConfigError("agent.beta must equal decoys+1 unless agent.beta_override = true");
    if (batch < 1) throw ConfigError("agent.batch must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("agent.learning_rate must be positive");
    if (sigma_pixel <= 0.0) throw ConfigError("reward.sigma_pixel must be positive");
    if (total_frames < 1) throw ConfigError("run.frames must be >= 1");
    if (eval_every < 1) throw ConfigError("run.eval_every must be >= 1");
    if (queue_capacity < 1) throw ConfigError("run.queue_capacity must be >= 1");
    if (broadcast_every < 1 || poll_episodes < 1)
      throw ConfigError("run.broadcast_every and run.poll_episodes must be >= 1");
  }

  bool beta_override = false;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_color(const Rgb& c) {
  return format_double(c[0]) + "," + format_double(c[1]) + "," + format_double(c[2]);
}

inline Rgb parse_color(const std::string& s) {
  Rgb c{};
  std::istringstream is(s);
  std::string part;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(is, part, ',')) throw ConfigError("color needs three comma-separated values");
    c[i] = std::stod(part);
  }
  return c;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Key table shared by the parser and the canonical serializer. Getter
// renders the current value; setter parses a value string.
struct ConfigKey {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::map<std::string, ConfigKey>& config_keys() {
  using detail::format_double;
  static const std::map<std::string, ConfigKey> keys = [] {
    std::map<std::string, ConfigKey> m;
    auto add_int = [&m](const std::string& key, auto member) {
      m[key] = {[member](const ExperimentConfig& c) { return std::to_string(c.*member); },
                [member, key](ExperimentConfig& c, const std::string& v) {
                  try {
                    c.*member = static_cast<std::decay_t<decltype(std::declval<ExperimentConfig>().*member)>>(std::stoll(v));
                  } catch (const std::exception&) {
                    throw ConfigError("invalid integer for " + key + ": " + v);
                  }
                }};
    };
    auto add_double = [&m](const std::string& key, auto member) {
      m[key] = {[member](const ExperimentConfig& c) { return format_double(c.*member); },
                [member, key](ExperimentConfig& c, const std::string& v) {
                  try {
                    c.*member = std::stod(v);
                  } catch (const std::exception&) {
                    throw ConfigError("invalid number for " + key + ": " + v);
                  }
                }};
    };

    m["env.width"] = {[](const ExperimentConfig& c) { return std::to_string(c.env.width); },
                      [](ExperimentConfig& c, const std::string& v) { c.env.width = std::stoi(v); }};
    m["env.height"] = {[](const ExperimentConfig& c) { return std::to_string(c.env.height); },
                       [](ExperimentConfig& c, const std::string& v) { c.env.height = std::stoi(v); }};
    m["env.distractors"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.env.n_distractors); },
        [](ExperimentConfig& c, const std::string& v) { c.env.n_distractors = std::stoi(v); }};
    m["env.distractor_size"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.env.distractor_size); },
        [](ExperimentConfig& c, const std::string& v) { c.env.distractor_size = std::stoi(v); }};
    m["env.distractor_motion"] = {
        [](const ExperimentConfig& c) {
          return c.env.motion == DistractorMotion::kRandomWalk ? "random-walk" : "cyclic";
        },
        [](ExperimentConfig& c, const std::string& v) {
          if (v == "random-walk") c.env.motion = DistractorMotion::kRandomWalk;
          else if (v == "cyclic") c.env.motion = DistractorMotion::kCyclic;
          else throw ConfigError("env.distractor_motion must be random-walk or cyclic");
        }};
    m["env.avatar_color"] = {
        [](const ExperimentConfig& c) { return detail::format_color(c.env.avatar_color); },
        [](ExperimentConfig& c, const std::string& v) { c.env.avatar_color = detail::parse_color(v); }};
    m["env.distractor_color"] = {
        [](const ExperimentConfig& c) { return detail::format_color(c.env.distractor_color); },
        [](ExperimentConfig& c, const std::string& v) {
          c.env.distractor_color = detail::parse_color(v);
        }};
    m["env.background_color"] = {
        [](const ExperimentConfig& c) { return detail::format_color(c.env.background_color); },
        [](ExperimentConfig& c, const std::string& v) {
          c.env.background_color = detail::parse_color(v);
        }};

    m["reward.provider"] = {
        [](const ExperimentConfig& c) {
          switch (c.provider) {
            case RewardProviderKind::kDiscern: return std::string("discern");
            case RewardProviderKind::kAe: return std::string("ae");
            case RewardProviderKind::kPixelL2: return std::string("l2");
            case RewardProviderKind::kNone: return std::string("none");
          }
          return std::string("discern");
        },
        [](ExperimentConfig& c, const std::string& v) {
          if (v == "discern") c.provider = RewardProviderKind::kDiscern;
          else if (v == "ae") c.provider = RewardProviderKind::kAe;
          else if (v == "l2") c.provider = RewardProviderKind::kPixelL2;
          else if (v == "none") c.provider = RewardProviderKind::kNone;
          else throw ConfigError("reward.provider must be discern, ae, l2 or none");
        }};
    add_double("reward.sigma_pixel", &ExperimentConfig::sigma_pixel);

    m["goalbuf.capacity"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.goal_buffer.capacity); },
        [](ExperimentConfig& c, const std::string& v) { c.goal_buffer.capacity = std::stoi(v); }};
    m["goalbuf.warmup"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.goal_buffer.warmup); },
        [](ExperimentConfig& c, const std::string& v) { c.goal_buffer.warmup = std::stoi(v); }};
    m["goalbuf.strategy"] = {
        [](const ExperimentConfig& c) {
          return c.goal_buffer.strategy == BufferStrategy::kUniform ? "uniform" : "diverse";
        },
        [](ExperimentConfig& c, const std::string& v) {
          if (v == "uniform") c.goal_buffer.strategy = BufferStrategy::kUniform;
          else if (v == "diverse") c.goal_buffer.strategy = BufferStrategy::kDiverse;
          else throw ConfigError("goalbuf.strategy must be uniform or diverse");
        }};
    m["goalbuf.p_replace"] = {
        [](const ExperimentConfig& c) { return format_double(c.goal_buffer.p_replace); },
        [](ExperimentConfig& c, const std::string& v) { c.goal_buffer.p_replace = std::stod(v); }};
    m["goalbuf.p_add_non_diverse"] = {
        [](const ExperimentConfig& c) { return format_double(c.goal_buffer.p_add_non_diverse); },
        [](ExperimentConfig& c, const std::string& v) {
          c.goal_buffer.p_add_non_diverse = std::stod(v);
        }};

    m["agent.p_her"] = {
        [](const ExperimentConfig& c) { return format_double(c.hindsight.p_her); },
        [](ExperimentConfig& c, const std::string& v) { c.hindsight.p_her = std::stod(v); }};
    m["agent.her_window"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.hindsight.window); },
        [](ExperimentConfig& c, const std::string& v) { c.hindsight.window = std::stoi(v); }};
    add_int("agent.episode_steps", &ExperimentConfig::episode_steps);
    add_int("agent.decoys", &ExperimentConfig::decoys);
    m["agent.beta"] = {
        [](const ExperimentConfig& c) { return c.beta == 0.0 ? "auto" : format_double(c.beta); },
        [](ExperimentConfig& c, const std::string& v) {
          c.beta = v == "auto" ? 0.0 : std::stod(v);
        }};
    m["agent.beta_override"] = {
        [](const ExperimentConfig& c) { return c.beta_override ? "true" : "false"; },
        [](ExperimentConfig& c, const std::string& v) {
          if (v == "true") c.beta_override = true;
          else if (v == "false") c.beta_override = false;
          else throw ConfigError("agent.beta_override must be true or false");
        }};
    add_double("agent.gamma", &ExperimentConfig::gamma);
    add_double("agent.lambda", &ExperimentConfig::lambda);
    add_int("agent.batch", &ExperimentConfig::batch);
    add_double("agent.learning_rate", &ExperimentConfig::learning_rate);
    add_int("agent.replay_capacity", &ExperimentConfig::replay_capacity);

    add_int("nets.enc_hidden", &ExperimentConfig::enc_hidden);
    add_int("nets.features", &ExperimentConfig::features);
    add_int("nets.embed_dim", &ExperimentConfig::embed_dim);
    add_int("nets.hidden", &ExperimentConfig::hidden);
    add_int("nets.time_hidden", &ExperimentConfig::time_hidden);

    add_int("run.actors", &ExperimentConfig::actors);
    add_int("run.frames", &ExperimentConfig::total_frames);
    add_int("run.eval_every", &ExperimentConfig::eval_every);
    add_int("run.checkpoint_every", &ExperimentConfig::checkpoint_every);
    add_int("run.eval_goals", &ExperimentConfig::eval_goals);
    add_int("run.eval_trials", &ExperimentConfig::eval_trials);
    add_int("run.eval_workers", &ExperimentConfig::eval_workers);
    m["run.seed"] = {
        [](const ExperimentConfig& c) { return std::to_string(c.seed); },
        [](ExperimentConfig& c, const std::string& v) { c.seed = std::stoull(v); }};
    add_int("run.broadcast_every", &ExperimentConfig::broadcast_every);
    add_int("run.poll_episodes", &ExperimentConfig::poll_episodes);
    add_int("run.queue_capacity", &ExperimentConfig::queue_capacity);
    add_double("run.eps_max", &ExperimentConfig::eps_max);
    add_double("run.eps_min", &ExperimentConfig::eps_min);
    return m;
  }();
  return keys;
}

// Parses the flat `key = value` format; `#` starts a comment. Unknown keys
// are errors.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    auto it = config_keys().find(key);
    if (it == config_keys().end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": bad value for " + key + ": " +
                        e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// Canonical form: sorted keys, one per line. Hash and checkpoint compatibility
// are defined over this text.
inline std::string canonical_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, handlers] : config_keys())
    out += key + " = " + handlers.get(cfg) + "\n";
  return out;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::string text = canonical_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace discern
