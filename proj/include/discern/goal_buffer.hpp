#pragma once

#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/env.hpp"
#include "discern/rng.hpp"
#include "discern/tensor.hpp"

namespace discern {

enum class BufferStrategy { kUniform, kDiverse };

// Mean pixel-space L2 distance from obs to every slot except excluded_slot.
inline double mean_l2_to_rest(const std::vector<Observation>& slots, const Observation& obs,
                              int excluded_slot) {
  double sum = 0.0;
  int count = 0;
  for (int j = 0; j < static_cast<int>(slots.size()); ++j) {
    if (j == excluded_slot) continue;
    sum += l2_distance(obs, slots[j]);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

struct GoalBufferConfig {
  int capacity = 1024;
  BufferStrategy strategy = BufferStrategy::kUniform;
  double p_replace = 1e-3;
  double p_add_non_diverse = 1e-3;
  int warmup = 64;  // minimum filled slots before goals may be sampled
};

struct ColdBufferError : std::runtime_error {
  ColdBufferError() : std::runtime_error("goal buffer is cold: not enough slots filled") {}
};

// Fixed-size evolving buffer of past observations, shared between all actor
// threads. All access is serialized by a mutex; sampling copies a slot under
// the lock.
class GoalBuffer {
 public:
  explicit GoalBuffer(const GoalBufferConfig& cfg) : cfg_(cfg) {
    if (cfg.capacity < 1) throw std::invalid_argument("goal buffer capacity must be >= 1");
    if (cfg.warmup < 1 || cfg.warmup > cfg.capacity)
      throw std::invalid_argument("goal buffer warmup must be in [1, capacity]");
    slots_.reserve(cfg.capacity);
  }

  int capacity() const { return cfg_.capacity; }

  int size() const {
    std::lock_guard lock(mu_);
    return static_cast<int>(slots_.size());
  }

  bool warm() const {
    std::lock_guard lock(mu_);
    return static_cast<int>(slots_.size()) >= cfg_.warmup;
  }

  // Empty slots fill unconditionally; afterwards the configured substitution
  // strategy decides, gated by p_replace.
  void propose_substitution(const Observation& obs, Rng& rng) {
    std::lock_guard lock(mu_);
    if (static_cast<int>(slots_.size()) < cfg_.capacity) {
      slots_.push_back(obs);
      return;
    }
    if (rng.uniform() >= cfg_.p_replace) return;
    if (cfg_.strategy == BufferStrategy::kUniform) {
      replace_slot(rng.uniform_int(cfg_.capacity), obs);
      return;
    }
    // diverse: replace s_r with s if s_r is closer to the rest of the buffer
    int r = rng.uniform_int(cfg_.capacity);
    double d_removal = mean_l2_to_rest(slots_, slots_[r], r);
    double d_candidate = mean_l2_to_rest(slots_, obs, r);
    if (d_removal < d_candidate || rng.uniform() < cfg_.p_add_non_diverse) replace_slot(r, obs);
  }

  Observation sample_goal(Rng& rng) const {
    std::lock_guard lock(mu_);
    if (static_cast<int>(slots_.size()) < cfg_.warmup) throw ColdBufferError();
    return slots_[rng.uniform_int(static_cast<int>(slots_.size()))];
  }

  // K independent uniform draws with replacement. A decoy that compares
  // bit-equal to avoid is redrawn once, then kept.
  std::vector<Observation> sample_decoys(int k, Rng& rng, const Observation* avoid = nullptr) const {
    if (k < 1) throw std::invalid_argument("sample_decoys: K must be >= 1");
    std::lock_guard lock(mu_);
    if (static_cast<int>(slots_.size()) < cfg_.warmup) throw ColdBufferError();
    std::vector<Observation> out;
    out.reserve(k);
    int n = static_cast<int>(slots_.size());
    for (int i = 0; i < k; ++i) {
      const Observation* pick = &slots_[rng.uniform_int(n)];
      if (avoid && *pick == *avoid) pick = &slots_[rng.uniform_int(n)];
      out.push_back(*pick);
    }
    return out;
  }

  long replacements() const {
    std::lock_guard lock(mu_);
    return replacements_;
  }

  std::vector<long> replacement_counts() const {
    std::lock_guard lock(mu_);
    return replace_counts_;
  }

  std::vector<Observation> snapshot() const {
    std::lock_guard lock(mu_);
    return slots_;
  }

  void restore(std::vector<Observation> slots) {
    std::lock_guard lock(mu_);
    if (static_cast<int>(slots.size()) > cfg_.capacity)
      throw std::invalid_argument("goal buffer restore exceeds capacity");
    slots_ = std::move(slots);
  }

  // Inspection dump: u64 header (capacity, filled, H, W, C) followed by the
  // filled slots as row-major little-endian f64 scalars.
  void dump(const std::string& path) const {
    std::lock_guard lock(mu_);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open goal dump for writing: " + path);
    auto u64 = [&out](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    u64(static_cast<std::uint64_t>(cfg_.capacity));
    u64(slots_.size());
    std::vector<int> shape = slots_.empty() ? std::vector<int>{0, 0, 0} : slots_[0].shape;
    for (int d : shape) u64(static_cast<std::uint64_t>(d));
    for (const auto& s : slots_)
      out.write(reinterpret_cast<const char*>(s.data.data()),
                static_cast<std::streamsize>(s.data.size() * 8));
    if (!out) throw std::runtime_error("short write to goal dump: " + path);
  }

 private:
  void replace_slot(int i, const Observation& obs) {
    slots_[i] = obs;
    ++replacements_;
    if (replace_counts_.empty()) replace_counts_.assign(cfg_.capacity, 0);
    ++replace_counts_[i];
  }

  GoalBufferConfig cfg_;
  std::vector<Observation> slots_;
  long replacements_ = 0;
  std::vector<long> replace_counts_;
  mutable std::mutex mu_;
};

}  // namespace discern
