#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "discern/agent.hpp"
#include "discern/env.hpp"
#include "discern/rng.hpp"
#include "discern/tensor.hpp"

namespace discern {

struct CheckpointError : std::runtime_error {
  CheckpointError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")") {}
};

// Versioned binary container: magic "DSRN", format version, config hash, the
// canonical config text, then named length-prefixed little-endian f64 arrays.
// Everything the runtime needs to resume bit-identically is packed into the
// named sections.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::string config_text;
  std::map<std::string, std::vector<double>> sections;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write("DSRN", 4);
    write_u32(out, kVersion);
    write_u64(out, config_hash);
    write_u64(out, config_text.size());
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u64(out, sections.size());
    for (const auto& [name, data] : sections) {
      write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, data.size());
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("short write to checkpoint: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    Reader r{in, 0};
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "DSRN", 4) != 0) throw CheckpointError("bad magic bytes", 0);
    Checkpoint cp;
    std::uint32_t version = r.u32("format version");
    if (version != kVersion)
      throw CheckpointError("unsupported format version " + std::to_string(version), r.offset);
    cp.config_hash = r.u64("config hash");
    std::uint64_t text_len = r.u64("config text length");
    cp.config_text.resize(text_len);
    r.bytes(cp.config_text.data(), text_len, "config text");
    std::uint64_t n_sections = r.u64("section count");
    for (std::uint64_t i = 0; i < n_sections; ++i) {
      std::uint32_t name_len = r.u32("section name length");
      if (name_len > 4096) throw CheckpointError("implausible section name length", r.offset);
      std::string name(name_len, '\0');
      r.bytes(name.data(), name_len, "section name");
      std::uint64_t count = r.u64("section element count");
      std::vector<double> data(count);
      r.bytes(reinterpret_cast<char*>(data.data()), count * sizeof(double), "section data");
      cp.sections[name] = std::move(data);
    }
    return cp;
  }

  const std::vector<double>& section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw std::runtime_error("checkpoint missing section: " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return sections.count(name) > 0; }

 private:
  struct Reader {
    std::ifstream& in;
    std::size_t offset;

    void bytes(char* dst, std::size_t n, const char* what) {
      in.read(dst, static_cast<std::streamsize>(n));
      if (static_cast<std::size_t>(in.gcount()) != n)
        throw CheckpointError(std::string("truncated while reading ") + what, offset);
      offset += n;
    }
    std::uint32_t u32(const char* what) {
      std::uint32_t v;
      bytes(reinterpret_cast<char*>(&v), sizeof(v), what);
      return v;
    }
    std::uint64_t u64(const char* what) {
      std::uint64_t v;
      bytes(reinterpret_cast<char*>(&v), sizeof(v), what);
      return v;
    }
  };

  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
};

// f64-array codecs for the structured state stuffed into checkpoint sections.
namespace codec {

inline void put_u64(std::vector<double>& out, std::uint64_t v) {
  out.push_back(static_cast<double>(v >> 32));
  out.push_back(static_cast<double>(v & 0xffffffffULL));
}

struct Cursor {
  const std::vector<double>& data;
  std::size_t pos = 0;

  double next() {
    if (pos >= data.size()) throw std::runtime_error("checkpoint section cursor overrun");
    return data[pos++];
  }
  int next_int() { return static_cast<int>(next()); }
  long next_long() { return static_cast<long>(next()); }
  std::uint64_t next_u64() {
    auto hi = static_cast<std::uint64_t>(next());
    auto lo = static_cast<std::uint64_t>(next());
    return (hi << 32) | lo;
  }
};

inline void put_rng(std::vector<double>& out, const Rng& rng) {
  for (std::uint64_t w : rng.state()) put_u64(out, w);
}

inline Rng get_rng(Cursor& c) {
  std::array<std::uint64_t, 4> state;
  for (auto& w : state) w = c.next_u64();
  Rng rng;
  rng.set_state(state);
  return rng;
}

inline void put_tensor(std::vector<double>& out, const Tensor& t) {
  out.push_back(t.rank());
  for (int d : t.shape) out.push_back(d);
  out.insert(out.end(), t.data.begin(), t.data.end());
}

inline Tensor get_tensor(Cursor& c) {
  int rank = c.next_int();
  std::vector<int> shape(rank);
  for (int& d : shape) d = c.next_int();
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data) v = c.next();
  return t;
}

inline void put_episode(std::vector<double>& out, const GoalEpisode& ep) {
  out.push_back(ep.length());
  put_tensor(out, ep.goal);
  for (const auto& s : ep.states) put_tensor(out, s);
  for (int a : ep.actions) out.push_back(a);
  for (double r : ep.rewards) out.push_back(r);
  for (double d : ep.discounts) out.push_back(d);
  out.push_back(ep.relabelled ? 1.0 : 0.0);
  out.push_back(ep.replayed ? 1.0 : 0.0);
  out.push_back(ep.actor_id);
  put_u64(out, ep.sequence);
}

inline GoalEpisode get_episode(Cursor& c) {
  GoalEpisode ep;
  int T = c.next_int();
  ep.goal = get_tensor(c);
  ep.states.reserve(T);
  for (int t = 0; t < T; ++t) ep.states.push_back(get_tensor(c));
  ep.actions.resize(T);
  for (int& a : ep.actions) a = c.next_int();
  ep.rewards.resize(T);
  for (double& r : ep.rewards) r = c.next();
  ep.discounts.resize(T);
  for (double& d : ep.discounts) d = c.next();
  ep.relabelled = c.next() != 0.0;
  ep.replayed = c.next() != 0.0;
  ep.actor_id = c.next_int();
  ep.sequence = c.next_u64();
  return ep;
}

inline void put_env_state(std::vector<double>& out, const EnvState& s) {
  out.push_back(s.avatar_x);
  out.push_back(s.avatar_y);
  out.push_back(static_cast<double>(s.step_count));
  put_rng(out, s.rng);
  out.push_back(static_cast<double>(s.distractors.size()));
  for (const auto& [x, y] : s.distractors) {
    out.push_back(x);
    out.push_back(y);
  }
  out.push_back(static_cast<double>(s.loops.size()));
  for (std::size_t i = 0; i < s.loops.size(); ++i) {
    out.push_back(static_cast<double>(s.loops[i].size()));
    for (const auto& [x, y] : s.loops[i]) {
      out.push_back(x);
      out.push_back(y);
    }
    out.push_back(s.loop_phase[i]);
  }
}

inline EnvState get_env_state(Cursor& c) {
  EnvState s;
  s.avatar_x = c.next_int();
  s.avatar_y = c.next_int();
  s.step_count = c.next_long();
  s.rng = get_rng(c);
  int nd = c.next_int();
  for (int i = 0; i < nd; ++i) {
    int x = c.next_int();
    int y = c.next_int();
    s.distractors.emplace_back(x, y);
  }
  int nl = c.next_int();
  for (int i = 0; i < nl; ++i) {
    int len = c.next_int();
    std::vector<std::pair<int, int>> loop;
    for (int j = 0; j < len; ++j) {
      int x = c.next_int();
      int y = c.next_int();
      loop.emplace_back(x, y);
    }
    s.loops.push_back(std::move(loop));
    s.loop_phase.push_back(c.next_int());
  }
  return s;
}

}  // namespace codec

inline void put_param_set(Checkpoint& cp, const std::string& prefix, const ParamSet& params) {
  for (const auto& [name, t] : params) {
    std::vector<double> data;
    codec::put_tensor(data, t);
    cp.sections[prefix + name] = std::move(data);
  }
}

inline ParamSet get_param_set(const Checkpoint& cp, const std::string& prefix) {
  ParamSet params;
  for (const auto& [name, data] : cp.sections) {
    if (name.rfind(prefix, 0) != 0) continue;
    codec::Cursor c{data};
    params[name.substr(prefix.size())] = codec::get_tensor(c);
  }
  return params;
}

}  // namespace discern
