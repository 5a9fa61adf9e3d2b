#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "discern/agent.hpp"
#include "discern/checkpoint.hpp"
#include "discern/config.hpp"
#include "discern/env.hpp"
#include "discern/eval.hpp"
#include "discern/goal_buffer.hpp"
#include "discern/nets.hpp"
#include "discern/queue.hpp"
#include "discern/reward.hpp"
#include "discern/rmsprop.hpp"

namespace discern {

struct ParamSnapshot {
  std::uint64_t version = 0;
  std::shared_ptr<const ParamSet> params;
};

// Atomically swapped immutable snapshot, learner -> actors. Versions are
// strictly increasing.
class SnapshotSlot {
 public:
  void publish(ParamSet params) {
    std::lock_guard lock(mu_);
    current_ = {current_.version + 1, std::make_shared<const ParamSet>(std::move(params))};
  }

  void restore(std::uint64_t version, ParamSet params) {
    std::lock_guard lock(mu_);
    current_ = {version, std::make_shared<const ParamSet>(std::move(params))};
  }

  ParamSnapshot get() const {
    std::lock_guard lock(mu_);
    return current_;
  }

 private:
  ParamSnapshot current_;
  mutable std::mutex mu_;
};

// One experience-gathering actor: owns its environment (never reset between
// goal episodes), RNG, replay buffer and parameter snapshot. Emits each goal
// episode through the hindsight gate, plus one gated replay of a previous
// trajectory, to the sink.
class Actor {
 public:
  using Sink = std::function<void(GoalEpisode)>;

  Actor(const ExperimentConfig& cfg, int id, GoalBuffer& buffer, SnapshotSlot& slot, Sink sink,
        std::atomic<long>& frames)
      : cfg_(cfg),
        id_(id),
        buffer_(buffer),
        slot_(slot),
        sink_(std::move(sink)),
        frames_(frames),
        net_(cfg.net_config()),
        env_(cfg.env),
        rng_(mix_seed(cfg.seed, 0xAC0000 + id)),
        replay_(cfg.replay_capacity),
        provider_(cfg.provider, cfg.sigma_pixel),
        epsilon_(cfg.actor_epsilon(id)) {
    obs_ = env_.reset(mix_seed(cfg.seed, 0xE50000 + id));
    snapshot_ = slot_.get();
    session_.emplace(net_, *snapshot_.params);
  }

  // One scheduling quantum: a warm-up contribution chunk while the goal
  // buffer is cold, otherwise one goal episode.
  void run_cycle() {
    if (!buffer_.warm()) {
      for (int i = 0; i < 16 && !buffer_.warm(); ++i) {
        buffer_.propose_substitution(obs_, rng_);
        obs_ = env_.step(rng_.uniform_int(kNumActions));
        count_frame();
      }
      return;
    }
    if (episodes_ % cfg_.poll_episodes == 0) poll_snapshot();
    run_episode();
  }

  void loop(const std::atomic<bool>& stop) {
    while (!stop.load(std::memory_order_relaxed) &&
           frames_.load(std::memory_order_relaxed) < cfg_.total_frames)
      run_cycle();
  }

  long episodes() const { return episodes_; }
  long frames_taken() const { return frames_taken_; }
  std::uint64_t emitted() const { return sequence_; }
  std::uint64_t snapshot_version() const { return snapshot_.version; }
  double epsilon() const { return epsilon_; }

  // checkpoint plumbing
  void save_state(Checkpoint& cp) const {
    std::string prefix = "actor" + std::to_string(id_) + "/";
    std::vector<double> state;
    state.push_back(static_cast<double>(episodes_));
    codec::put_u64(state, sequence_);
    codec::put_rng(state, rng_);
    codec::put_env_state(state, env_.state());
    state.push_back(static_cast<double>(frames_taken_));
    cp.sections[prefix + "state"] = std::move(state);
    std::vector<double> replay;
    replay.push_back(replay_.size());
    for (const auto& ep : replay_.episodes()) codec::put_episode(replay, ep);
    cp.sections[prefix + "replay"] = std::move(replay);
    std::vector<double> snap_version;
    codec::put_u64(snap_version, snapshot_.version);
    cp.sections[prefix + "snapshot_version"] = std::move(snap_version);
    put_param_set(cp, "actorsnap" + std::to_string(id_) + "/", *snapshot_.params);
  }

  void restore_state(const Checkpoint& cp) {
    std::string prefix = "actor" + std::to_string(id_) + "/";
    codec::Cursor c{cp.section(prefix + "state")};
    episodes_ = c.next_long();
    sequence_ = c.next_u64();
    rng_ = codec::get_rng(c);
    env_.set_state(codec::get_env_state(c));
    frames_taken_ = c.next_long();
    obs_ = env_.render();
    codec::Cursor rc{cp.section(prefix + "replay")};
    int count = rc.next_int();
    replay_ = ReplayBuffer(cfg_.replay_capacity);
    for (int i = 0; i < count; ++i) replay_.push(codec::get_episode(rc));
    codec::Cursor vc{cp.section(prefix + "snapshot_version")};
    std::uint64_t version = vc.next_u64();
    snapshot_ = {version, std::make_shared<const ParamSet>(
                              get_param_set(cp, "actorsnap" + std::to_string(id_) + "/"))};
    session_.emplace(net_, *snapshot_.params);
  }

 private:
  void count_frame() {
    frames_.fetch_add(1, std::memory_order_relaxed);
    ++frames_taken_;
  }

  void poll_snapshot() {
    ParamSnapshot latest = slot_.get();
    if (latest.version > snapshot_.version) {
      snapshot_ = std::move(latest);
      session_.emplace(net_, *snapshot_.params);
    }
  }

  void run_episode() {
    const int T = cfg_.episode_steps;
    Observation goal = buffer_.sample_goal(rng_);
    session_->start_episode(goal);
    std::vector<Observation> states;
    std::vector<int> actions;
    states.reserve(T);
    actions.reserve(T);
    for (int t = 1; t <= T; ++t) {
      states.push_back(obs_);
      buffer_.propose_substitution(obs_, rng_);
      int a = act(*session_, obs_, t, T, epsilon_, rng_);
      actions.push_back(a);
      obs_ = env_.step(a);
      count_frame();
    }
    double terminal_reward = provider_.reward(states.back(), goal, *snapshot_.params, net_);
    GoalEpisode pristine =
        make_episode(std::move(states), std::move(actions), std::move(goal), terminal_reward,
                     cfg_.gamma);
    pristine.actor_id = id_;

    GoalEpisode fresh = relabel_hindsight(pristine, cfg_.hindsight, rng_);
    fresh.sequence = sequence_++;
    std::optional<GoalEpisode> replayed;
    if (!replay_.empty()) {
      GoalEpisode sampled = relabel_hindsight(replay_.sample(rng_), cfg_.hindsight, rng_);
      sampled.replayed = true;
      sampled.sequence = sequence_++;
      replayed = std::move(sampled);
    }
    replay_.push(std::move(pristine));
    sink_(std::move(fresh));
    if (replayed) sink_(std::move(*replayed));
    ++episodes_;
  }

  ExperimentConfig cfg_;
  int id_;
  GoalBuffer& buffer_;
  SnapshotSlot& slot_;
  Sink sink_;
  std::atomic<long>& frames_;
  NetConfig net_;
  GridWorld env_;
  Rng rng_;
  ReplayBuffer replay_;
  RewardProvider provider_;
  double epsilon_;
  Observation obs_;
  ParamSnapshot snapshot_;
  std::optional<QSession> session_;
  long episodes_ = 0;
  long frames_taken_ = 0;
  std::uint64_t sequence_ = 0;
};

// Rolling sums for the metrics rows, reset at every evaluation point.
struct MetricsAccumulator {
  double td_sum = 0.0, disc_sum = 0.0, reward_sum = 0.0;
  long td_count = 0, disc_count = 0, reward_count = 0;

  double td_mean() const { return td_count ? td_sum / td_count : 0.0; }
  double disc_mean() const { return disc_count ? disc_sum / disc_count : 0.0; }
  double reward_mean() const { return reward_count ? reward_sum / reward_count : 0.0; }
  void reset() { *this = MetricsAccumulator{}; }
};

// Single learner: assembles batches in arrival order, runs the Q-learning
// update on theta and the reward-learner update on phi, and broadcasts
// parameter snapshots.
class Learner {
 public:
  Learner(const ExperimentConfig& cfg, GoalBuffer& buffer, SnapshotSlot& slot)
      : cfg_(cfg),
        net_(cfg.net_config()),
        buffer_(buffer),
        slot_(slot),
        rng_(mix_seed(cfg.seed, 0x1EA200)) {
    Rng init_rng(mix_seed(cfg.seed, 0x171200));
    params_ = init_params(net_, init_rng, cfg.provider == RewardProviderKind::kAe);
    opt_.learning_rate = cfg.learning_rate;
    slot_.publish(params_);
  }

  void enqueue(GoalEpisode ep) {
    auto [it, inserted] = audit_.try_emplace(ep.actor_id, 0);
    it->second += 1;
    pending_.push_back(std::move(ep));
  }

  // Runs one update if a full batch is pending.
  bool try_update() {
    if (static_cast<int>(pending_.size()) < cfg_.batch) return false;
    std::vector<GoalEpisode> batch(std::make_move_iterator(pending_.begin()),
                                   std::make_move_iterator(pending_.begin() + cfg_.batch));
    pending_.erase(pending_.begin(), pending_.begin() + cfg_.batch);

    double batch_reward = 0.0;
    for (const auto& ep : batch) batch_reward += ep.rewards.back();

    TdUpdateResult td = td_update(batch, params_, net_, cfg_.lambda, opt_);
    if (!td.applied) {
      ++refused_steps_;
      std::cerr << "learner: refused TD step with non-finite loss at update " << updates_ << "\n";
    }

    RewardUpdateResult reward_result;
    if (cfg_.provider == RewardProviderKind::kDiscern ||
        cfg_.provider == RewardProviderKind::kAe) {
      std::vector<const Observation*> terminals, goals;
      std::vector<std::vector<Observation>> decoy_storage(batch.size());
      std::vector<std::vector<const Observation*>> decoys(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        terminals.push_back(&batch[b].states.back());
        goals.push_back(&batch[b].goal);
        if (cfg_.provider == RewardProviderKind::kDiscern) {
          decoy_storage[b] = buffer_.sample_decoys(cfg_.decoys, rng_, &batch[b].goal);
          for (const auto& d : decoy_storage[b]) decoys[b].push_back(&d);
        }
      }
      reward_result = reward_learner_update(cfg_.provider, terminals, goals, decoys, params_,
                                            net_, cfg_.effective_beta(), opt_);
    }

    {
      std::lock_guard lock(metrics_mu_);
      metrics_.reward_sum += batch_reward;
      metrics_.reward_count += cfg_.batch;
      if (td.applied) {
        metrics_.td_sum += td.loss;
        ++metrics_.td_count;
      }
      if (reward_result.applied) {
        metrics_.disc_sum += reward_result.loss;
        ++metrics_.disc_count;
      }
    }

    ++updates_;
    consumed_ += cfg_.batch;
    if (updates_ % cfg_.broadcast_every == 0) slot_.publish(params_);
    return true;
  }

  const ParamSet& params() const { return params_; }
  long updates() const { return updates_; }
  long consumed_episodes() const { return consumed_; }
  long refused_steps() const { return refused_steps_; }
  int pending() const { return static_cast<int>(pending_.size()); }
  const std::map<int, long>& received_per_actor() const { return audit_; }

  MetricsAccumulator take_metrics() {
    std::lock_guard lock(metrics_mu_);
    MetricsAccumulator out = metrics_;
    metrics_.reset();
    return out;
  }
  MetricsAccumulator peek_metrics() const {
    std::lock_guard lock(metrics_mu_);
    return metrics_;
  }
  void restore_metrics(const MetricsAccumulator& m) {
    std::lock_guard lock(metrics_mu_);
    metrics_ = m;
  }

  void save_state(Checkpoint& cp) const {
    put_param_set(cp, "params/", params_);
    put_param_set(cp, "opt/", opt_.accumulators);
    std::vector<double> state;
    state.push_back(static_cast<double>(updates_));
    state.push_back(static_cast<double>(consumed_));
    state.push_back(static_cast<double>(refused_steps_));
    codec::put_rng(state, rng_);
    state.push_back(static_cast<double>(audit_.size()));
    for (const auto& [actor, count] : audit_) {
      state.push_back(actor);
      state.push_back(static_cast<double>(count));
    }
    cp.sections["learner/state"] = std::move(state);
    std::vector<double> pending;
    pending.push_back(static_cast<double>(pending_.size()));
    for (const auto& ep : pending_) codec::put_episode(pending, ep);
    cp.sections["learner/pending"] = std::move(pending);
  }

  void restore_state(const Checkpoint& cp) {
    params_ = get_param_set(cp, "params/");
    opt_.accumulators = get_param_set(cp, "opt/");
    codec::Cursor c{cp.section("learner/state")};
    updates_ = c.next_long();
    consumed_ = c.next_long();
    refused_steps_ = c.next_long();
    rng_ = codec::get_rng(c);
    audit_.clear();
    int n = c.next_int();
    for (int i = 0; i < n; ++i) {
      int actor = c.next_int();
      audit_[actor] = c.next_long();
    }
    codec::Cursor pc{cp.section("learner/pending")};
    int count = pc.next_int();
    pending_.clear();
    for (int i = 0; i < count; ++i) pending_.push_back(codec::get_episode(pc));
  }

 private:
  ExperimentConfig cfg_;
  NetConfig net_;
  GoalBuffer& buffer_;
  SnapshotSlot& slot_;
  Rng rng_;
  ParamSet params_;
  RmsPropState opt_;
  std::vector<GoalEpisode> pending_;
  MetricsAccumulator metrics_;
  mutable std::mutex metrics_mu_;
  std::map<int, long> audit_;
  long updates_ = 0;
  long consumed_ = 0;
  long refused_steps_ = 0;
};

// Orchestrates training. actors == 1 runs a deterministic lockstep schedule
// on the calling thread (the byte-reproducibility contract); actors > 1 runs
// N actor threads, one learner thread and one evaluation thread.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::string out_dir)
      : cfg_(validated(std::move(cfg))),
        out_dir_(std::move(out_dir)),
        buffer_(cfg_.goal_buffer),
        learner_(cfg_, buffer_, slot_),
        goal_set_(build_goal_set(cfg_.env, cfg_.eval_goals, mix_seed(cfg_.seed, 0x907A15))) {
    std::filesystem::create_directories(out_dir_);
    next_eval_ = cfg_.eval_every;
    if (cfg_.checkpoint_every > 0) next_checkpoint_ = cfg_.checkpoint_every;
  }

  // Resume from a checkpoint written by an earlier run with an identical
  // config. Refused on config-hash mismatch.
  void resume_from(const std::string& checkpoint_path) {
    Checkpoint cp = Checkpoint::load(checkpoint_path);
    if (cp.config_hash != config_hash(cfg_))
      throw std::runtime_error("checkpoint config hash mismatch: refusing to resume");
    frames_.store(static_cast<long>(cp.section("frames")[0]));
    codec::Cursor mc{cp.section("metrics")};
    MetricsAccumulator m;
    m.td_sum = mc.next();
    m.td_count = mc.next_long();
    m.disc_sum = mc.next();
    m.disc_count = mc.next_long();
    m.reward_sum = mc.next();
    m.reward_count = mc.next_long();
    learner_.restore_metrics(m);
    codec::Cursor bc{cp.section("broadcast/version")};
    slot_.restore(bc.next_u64(), get_param_set(cp, "broadcast/"));
    learner_.restore_state(cp);
    codec::Cursor gc{cp.section("goalbuf")};
    int filled = gc.next_int();
    std::vector<Observation> slots;
    slots.reserve(filled);
    for (int i = 0; i < filled; ++i) slots.push_back(codec::get_tensor(gc));
    buffer_.restore(std::move(slots));
    resume_checkpoint_ = cp;  // actors restore on construction in run()
    next_eval_ = (frames_.load() / cfg_.eval_every + 1) * cfg_.eval_every;
    if (cfg_.checkpoint_every > 0)
      next_checkpoint_ = (frames_.load() / cfg_.checkpoint_every + 1) * cfg_.checkpoint_every;
  }

  void run() {
    start_time_ = std::chrono::steady_clock::now();
    metrics_out_.open(metrics_path(), std::ios::trunc);
    if (!metrics_out_) throw std::runtime_error("cannot open metrics file");
    metrics_out_ << metrics_header(2) << "\n";
    metrics_out_.flush();
    if (cfg_.actors == 1) run_lockstep();
    else run_threaded();
    save_checkpoint(checkpoint_path());
  }

  void set_echo(bool v) { echo_ = v; }

  // Stop the run early once an evaluation row reaches this achievement.
  void set_achievement_stop(double threshold) { stop_achievement_ = threshold; }

  long frames() const { return frames_.load(); }
  const Learner& learner() const { return learner_; }
  const std::vector<MetricsRow>& rows() const { return rows_; }

  std::vector<long> actor_frames() const {
    std::vector<long> out;
    for (const auto& a : actors_) out.push_back(a->frames_taken());
    return out;
  }
  std::vector<std::uint64_t> actor_emitted() const {
    std::vector<std::uint64_t> out;
    for (const auto& a : actors_) out.push_back(a->emitted());
    return out;
  }
  std::string metrics_path() const { return out_dir_ + "/metrics.csv"; }
  std::string checkpoint_path() const { return out_dir_ + "/checkpoint.dsrn"; }
  std::uint64_t emitted_episodes() const { return emitted_total_; }
  const GoalBuffer& goal_buffer() const { return buffer_; }

  void save_checkpoint(const std::string& path) const {
    Checkpoint cp;
    cp.config_hash = config_hash(cfg_);
    cp.config_text = canonical_config(cfg_);
    cp.sections["frames"] = {static_cast<double>(frames_.load())};
    std::vector<double> metrics;
    MetricsAccumulator m = learner_.peek_metrics();
    metrics.push_back(m.td_sum);
    metrics.push_back(static_cast<double>(m.td_count));
    metrics.push_back(m.disc_sum);
    metrics.push_back(static_cast<double>(m.disc_count));
    metrics.push_back(m.reward_sum);
    metrics.push_back(static_cast<double>(m.reward_count));
    cp.sections["metrics"] = std::move(metrics);
    ParamSnapshot snap = slot_.get();
    std::vector<double> version;
    codec::put_u64(version, snap.version);
    cp.sections["broadcast/version"] = std::move(version);
    put_param_set(cp, "broadcast/", *snap.params);
    learner_.save_state(cp);
    std::vector<double> goalbuf;
    std::vector<Observation> slots = buffer_.snapshot();
    goalbuf.push_back(static_cast<double>(slots.size()));
    for (const auto& s : slots) codec::put_tensor(goalbuf, s);
    cp.sections["goalbuf"] = std::move(goalbuf);
    for (const auto& actor : actors_) actor->save_state(cp);
    cp.save(path);
  }

 private:
  static ExperimentConfig validated(ExperimentConfig cfg) {
    cfg.validate();
    return cfg;
  }

  void make_actors(const Actor::Sink& sink) {
    actors_.clear();
    for (int i = 0; i < cfg_.actors; ++i)
      actors_.push_back(std::make_unique<Actor>(cfg_, i, buffer_, slot_, sink, frames_));
    if (resume_checkpoint_) {
      for (auto& actor : actors_) actor->restore_state(*resume_checkpoint_);
      resume_checkpoint_.reset();
    }
  }

  void run_lockstep() {
    make_actors([this](GoalEpisode ep) { learner_.enqueue(std::move(ep)); });
    Actor& actor = *actors_[0];
    while (frames_.load() < cfg_.total_frames && !stop_requested_.load()) {
      actor.run_cycle();
      while (learner_.try_update()) {
      }
      while (frames_.load() >= next_eval_) emit_row(/*deterministic=*/true);
      if (next_checkpoint_ > 0 && frames_.load() >= next_checkpoint_) {
        save_checkpoint(out_dir_ + "/checkpoint_" + std::to_string(next_checkpoint_) + ".dsrn");
        next_checkpoint_ += cfg_.checkpoint_every;
      }
    }
    emitted_total_ = actor.emitted();
  }

  void run_threaded() {
    BoundedQueue<GoalEpisode> queue(cfg_.queue_capacity);
    make_actors([&queue](GoalEpisode ep) { queue.push(std::move(ep)); });

    std::atomic<int> actors_running{cfg_.actors};
    std::vector<std::thread> actor_threads;
    for (auto& actor : actors_) {
      actor_threads.emplace_back([&, a = actor.get()] {
        a->loop(stop_requested_);
        if (actors_running.fetch_sub(1) == 1) queue.close();
      });
    }

    std::atomic<bool> learner_done{false};
    std::thread learner_thread([&] {
      while (auto item = queue.pop()) {
        learner_.enqueue(std::move(*item));
        while (learner_.try_update()) {
        }
      }
      learner_done.store(true);
    });

    std::thread eval_thread([&] {
      while (!learner_done.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        while (frames_.load() >= next_eval_) emit_row(/*deterministic=*/false);
      }
      while (frames_.load() >= next_eval_) emit_row(false);
    });

    for (auto& t : actor_threads) t.join();
    learner_thread.join();
    eval_thread.join();
    for (const auto& actor : actors_) emitted_total_ += actor->emitted();
  }

  void emit_row(bool deterministic) {
    ParamSnapshot snap = slot_.get();
    AchievementReport report = evaluate(
        [&] { return std::make_unique<GreedyQPolicy>(cfg_.net_config(), *snap.params); },
        goal_set_, cfg_.env, cfg_.eval_trials, cfg_.episode_steps, mix_seed(cfg_.seed, 0xE7A1),
        cfg_.eval_workers);
    MetricsRow row;
    row.frames = next_eval_;
    row.wall_seconds =
        deterministic
            ? 0.0
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time_).count();
    MetricsAccumulator m = learner_.take_metrics();
    row.td_loss = m.td_mean();
    row.disc_loss = m.disc_mean();
    row.mean_reward = m.reward_mean();
    row.achievement_overall = report.overall();
    row.achievement_dim = {report.dim_fraction(0), report.dim_fraction(1)};
    rows_.push_back(row);
    {
      std::lock_guard lock(metrics_mu_);
      metrics_out_ << format_metrics_row(row) << "\n";
      metrics_out_.flush();
    }
    if (echo_) std::cerr << "[eval] " << format_metrics_row(row) << "\n";
    if (stop_achievement_ >= 0.0 && row.achievement_overall >= stop_achievement_)
      stop_requested_.store(true);
    next_eval_ += cfg_.eval_every;
  }

  ExperimentConfig cfg_;
  std::string out_dir_;
  GoalBuffer buffer_;
  SnapshotSlot slot_;
  Learner learner_;
  GoalSet goal_set_;
  std::vector<std::unique_ptr<Actor>> actors_;
  std::atomic<long> frames_{0};
  long next_eval_ = 0;
  long next_checkpoint_ = 0;
  std::vector<MetricsRow> rows_;
  std::ofstream metrics_out_;
  std::mutex metrics_mu_;
  std::optional<Checkpoint> resume_checkpoint_;
  std::uint64_t emitted_total_ = 0;
  bool echo_ = false;
  double stop_achievement_ = -1.0;
  std::atomic<bool> stop_requested_{false};
  std::chrono::steady_clock::time_point start_time_;
};

}  // namespace discern
