#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "discern/agent.hpp"
#include "discern/config.hpp"
#include "discern/env.hpp"
#include "discern/nets.hpp"
#include "discern/rng.hpp"

namespace discern {

struct GoalEntry {
  Observation obs;
  std::vector<double> ground_truth;  // controllable state at rollout end
};

struct GoalSet {
  std::vector<int> obs_shape;
  std::vector<GoalEntry> entries;
};

// Goals come from fixed-seed random rollouts of 25 steps from a fresh reset.
// The seed stream is independent of the training streams.
inline GoalSet build_goal_set(const GridWorldConfig& env_cfg, int n_goals, std::uint64_t seed) {
  if (n_goals < 1) throw std::invalid_argument("build_goal_set: n_goals must be >= 1");
  GoalSet set;
  GridWorld env(env_cfg);
  for (int i = 0; i < n_goals; ++i) {
    Observation obs = env.reset(mix_seed(seed, 0x60A15E7 + i));
    Rng rng(mix_seed(seed, 0xAC7104 + i));
    for (int t = 0; t < 25; ++t) obs = env.step(rng.uniform_int(kNumActions));
    if (set.obs_shape.empty()) set.obs_shape = obs.shape;
    set.entries.push_back({obs, env.controllable_state()});
  }
  return set;
}

// Binary layout: u64 header (count, H, W, C, dim) then per entry the
// observation scalars followed by the ground-truth vector, all little-endian
// 64-bit floats.
inline void save_goal_set(const GoalSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open goal set for writing: " + path);
  auto u64 = [&out](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  u64(set.entries.size());
  for (int d : set.obs_shape) u64(static_cast<std::uint64_t>(d));
  u64(set.entries.empty() ? 0 : set.entries[0].ground_truth.size());
  for (const auto& e : set.entries) {
    out.write(reinterpret_cast<const char*>(e.obs.data.data()),
              static_cast<std::streamsize>(e.obs.data.size() * 8));
    out.write(reinterpret_cast<const char*>(e.ground_truth.data()),
              static_cast<std::streamsize>(e.ground_truth.size() * 8));
  }
  if (!out) throw std::runtime_error("short write to goal set: " + path);
}

inline GoalSet load_goal_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open goal set: " + path);
  auto u64 = [&in]() {
    std::uint64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (in.gcount() != 8) throw std::runtime_error("truncated goal set header");
    return v;
  };
  GoalSet set;
  std::uint64_t count = u64();
  set.obs_shape = {static_cast<int>(u64()), static_cast<int>(u64()), static_cast<int>(u64())};
  std::uint64_t dim = u64();
  int obs_numel = shape_numel(set.obs_shape);
  for (std::uint64_t i = 0; i < count; ++i) {
    GoalEntry e;
    e.obs = Tensor::zeros(set.obs_shape);
    in.read(reinterpret_cast<char*>(e.obs.data.data()), obs_numel * 8);
    e.ground_truth.resize(dim);
    in.read(reinterpret_cast<char*>(e.ground_truth.data()), static_cast<std::streamsize>(dim * 8));
    if (!in) throw std::runtime_error("truncated goal set entry");
    set.entries.push_back(std::move(e));
  }
  return set;
}

// Fractions are exact rational counts; the division happens only on read-out.
struct AchievementReport {
  long frames = 0;
  int trials_per_goal = 0;
  long total_trials = 0;
  long achieved_overall = 0;
  std::vector<long> achieved_dim;

  double overall() const { return total_trials ? static_cast<double>(achieved_overall) / total_trials : 0.0; }
  double dim_fraction(int d) const {
    return total_trials ? static_cast<double>(achieved_dim[d]) / total_trials : 0.0;
  }
};

// Policy interface for evaluation rollouts. Each worker owns one instance.
class EvalPolicy {
 public:
  virtual ~EvalPolicy() = default;
  virtual void begin_episode(const Observation& goal) = 0;
  virtual int select_action(const Observation& obs, int t, int T) = 0;
};

// Greedy (epsilon = 0) goal-conditioned Q policy over one parameter snapshot.
class GreedyQPolicy : public EvalPolicy {
 public:
  GreedyQPolicy(const NetConfig& cfg, const ParamSet& params) : session_(cfg, params) {}
  void begin_episode(const Observation& goal) override { session_.start_episode(goal); }
  int select_action(const Observation& obs, int t, int T) override {
    return argmax_lowest(session_.q_values(obs, t, T).data);
  }

 private:
  QSession session_;
};

using PolicyFactory = std::function<std::unique_ptr<EvalPolicy>()>;

// Runs `trials` fresh-reset episodes per goal and applies the 10% criterion
// per controllable dimension: dimension d is achieved iff
// |x_d - g_d| <= 0.1 * range_d with range_d the full grid extent. A goal
// counts as achieved only when every dimension is. Trials may be spread over
// a worker pool; the merged counts do not depend on worker interleaving.
inline AchievementReport evaluate(const PolicyFactory& make_policy, const GoalSet& goal_set,
                                  const GridWorldConfig& env_cfg, int trials, int T,
                                  std::uint64_t eval_seed, int workers = 1) {
  if (trials < 1) throw std::invalid_argument("evaluate: trials must be >= 1");
  const int n_goals = static_cast<int>(goal_set.entries.size());
  const std::vector<double> ranges{0.1 * (env_cfg.width - 1), 0.1 * (env_cfg.height - 1)};

  struct Counts {
    long overall = 0;
    std::array<long, 2> dims{0, 0};
  };
  std::vector<Counts> per_goal(n_goals);

  auto run_goal = [&](GridWorld& env, EvalPolicy& policy, int gi) {
    const GoalEntry& goal = goal_set.entries[gi];
    Counts counts;
    for (int trial = 0; trial < trials; ++trial) {
      Observation obs = env.reset(mix_seed(eval_seed, 0xEAA1 + gi * 100003ULL + trial));
      policy.begin_episode(goal.obs);
      for (int t = 1; t <= T; ++t) obs = env.step(policy.select_action(obs, t, T));
      std::vector<double> final_state = env.controllable_state();
      bool all = true;
      for (std::size_t d = 0; d < final_state.size(); ++d) {
        bool hit = std::fabs(final_state[d] - goal.ground_truth[d]) <= ranges[d];
        if (hit) ++counts.dims[d];
        all = all && hit;
      }
      if (all) ++counts.overall;
    }
    per_goal[gi] = counts;
  };

  workers = std::max(1, std::min(workers, n_goals));
  std::vector<std::future<void>> futures;
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      GridWorld env(env_cfg);
      std::unique_ptr<EvalPolicy> policy = make_policy();
      for (int gi = w; gi < n_goals; gi += workers) run_goal(env, *policy, gi);
    }));
  }
  for (auto& f : futures) f.get();

  AchievementReport report;
  report.trials_per_goal = trials;
  report.total_trials = static_cast<long>(n_goals) * trials;
  report.achieved_dim.assign(2, 0);
  for (const Counts& c : per_goal) {
    report.achieved_overall += c.overall;
    report.achieved_dim[0] += c.dims[0];
    report.achieved_dim[1] += c.dims[1];
  }
  return report;
}

// ---- metrics rows and report emission ----

struct MetricsRow {
  long frames = 0;
  double wall_seconds = 0.0;
  double td_loss = 0.0;
  double disc_loss = 0.0;
  double mean_reward = 0.0;
  double achievement_overall = 0.0;
  std::vector<double> achievement_dim;
};

inline std::string metrics_header(int dims) {
  std::string h = "frames,wall_seconds,td_loss,disc_loss,mean_reward,achievement_overall";
  for (int d = 0; d < dims; ++d) h += ",achievement_dim_" + std::to_string(d);
  return h;
}

inline std::string format_metrics_row(const MetricsRow& row) {
  std::string out = std::to_string(row.frames);
  for (double v : {row.wall_seconds, row.td_loss, row.disc_loss, row.mean_reward,
                   row.achievement_overall}) {
    out += ",";
    out += detail::format_double(v);
  }
  for (double v : row.achievement_dim) {
    out += ",";
    out += detail::format_double(v);
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<MetricsRow> rows;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6) throw std::runtime_error("metrics row with too few columns: " + line);
    MetricsRow row;
    row.frames = std::stol(cells[0]);
    row.wall_seconds = std::stod(cells[1]);
    row.td_loss = std::stod(cells[2]);
    row.disc_loss = std::stod(cells[3]);
    row.mean_reward = std::stod(cells[4]);
    row.achievement_overall = std::stod(cells[5]);
    for (std::size_t i = 6; i < cells.size(); ++i) row.achievement_dim.push_back(std::stod(cells[i]));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Simple SVG line chart of achievement vs frames, one polyline per series.
inline void write_curve_svg(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& series,
                            const std::string& path) {
  if (series.empty()) throw std::invalid_argument("write_curve_svg: no series");
  const int width = 640, height = 400, margin = 48;
  long max_frames = 1;
  for (const auto& [_, rows] : series)
    for (const auto& r : rows) max_frames = std::max(max_frames, r.frames);
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">frames</text>\n";
  svg << "<text x=\"14\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " << height / 2
      << ")\">achievement</text>\n";

  int color = 0;
  int legend_y = margin;
  for (const auto& [name, rows] : series) {
    const char* stroke = palette[color % 6];
    std::ostringstream points;
    for (const auto& r : rows) {
      double x = margin + (width - 2.0 * margin) * static_cast<double>(r.frames) / max_frames;
      double y = height - margin - (height - 2.0 * margin) * r.achievement_overall;
      points << x << "," << y << " ";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\""
        << points.str() << "\"/>\n";
    svg << "<text x=\"" << width - margin + 4 << "\" y=\"" << legend_y << "\" font-size=\"11\" fill=\""
        << stroke << "\">" << name << "</text>\n";
    legend_y += 14;
    ++color;
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write SVG: " + path);
  out << svg.str();
}

// Per-dimension heat strip: one row per (series, dimension), one cell per
// evaluation point, shaded by the fraction achieved.
inline void write_heatstrip_svg(
    const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& series,
    const std::string& path) {
  if (series.empty()) throw std::invalid_argument("write_heatstrip_svg: no series");
  const int cell_w = 18, cell_h = 18, label_w = 150, margin = 30;
  int dims = 0, max_points = 0;
  for (const auto& [_, rows] : series) {
    max_points = std::max(max_points, static_cast<int>(rows.size()));
    for (const auto& r : rows) dims = std::max(dims, static_cast<int>(r.achievement_dim.size()));
  }
  int total_rows = static_cast<int>(series.size()) * dims;
  int width = label_w + max_points * cell_w + margin;
  int height = margin + total_rows * (cell_h + 2) + margin;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  int row_index = 0;
  for (const auto& [name, rows] : series) {
    for (int d = 0; d < dims; ++d) {
      int y = margin + row_index * (cell_h + 2);
      svg << "<text x=\"4\" y=\"" << y + cell_h - 4 << "\" font-size=\"11\">" << name << " dim "
          << d << "</text>\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double frac = d < static_cast<int>(rows[i].achievement_dim.size())
                          ? rows[i].achievement_dim[d]
                          : 0.0;
        int shade = static_cast<int>(255.0 * (1.0 - frac));
        svg << "<rect x=\"" << label_w + static_cast<int>(i) * cell_w << "\" y=\"" << y
            << "\" width=\"" << cell_w - 1 << "\" height=\"" << cell_h << "\" fill=\"rgb(" << shade
            << "," << shade << ",255)\"/>\n";
      }
      ++row_index;
    }
  }
  svg << "</svg>\n";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write SVG: " + path);
  out << svg.str();
}

// ---- experiment presets ----

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"discern-uniform", "discern-diverse", "ae",
                                              "l2",              "her-only",        "no-her"};
  return names;
}

// All presets share the base env, seed and frame budget; they differ only in
// the reward provider, the buffer strategy and the hindsight rate.
inline ExperimentConfig apply_preset(ExperimentConfig base, const std::string& name) {
  base.goal_buffer.strategy = BufferStrategy::kUniform;
  if (name == "discern-uniform") {
    base.provider = RewardProviderKind::kDiscern;
  } else if (name == "discern-diverse") {
    base.provider = RewardProviderKind::kDiscern;
    base.goal_buffer.strategy = BufferStrategy::kDiverse;
  } else if (name == "ae") {
    base.provider = RewardProviderKind::kAe;
  } else if (name == "l2") {
    base.provider = RewardProviderKind::kPixelL2;
  } else if (name == "her-only") {
    base.provider = RewardProviderKind::kNone;  // policy learns from hindsight alone
    base.hindsight.p_her = 1.0;
  } else if (name == "no-her") {
    base.provider = RewardProviderKind::kDiscern;
    base.hindsight.p_her = 0.0;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "'; known presets: " + known);
  }
  base.validate();
  return base;
}

}  // namespace discern
