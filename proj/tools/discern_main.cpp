#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "discern/checkpoint.hpp"
#include "discern/config.hpp"
#include "discern/eval.hpp"
#include "discern/goal_buffer.hpp"
#include "discern/runtime.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

discern::ExperimentConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    discern::ExperimentConfig cfg;
    cfg.validate();
    return cfg;
  }
  return discern::parse_config(read_file(path));
}

void apply_overrides(discern::ExperimentConfig& cfg, long seed, int actors, long frames) {
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (actors > 0) cfg.actors = actors;
  if (frames > 0) cfg.total_frames = frames;
  cfg.validate();
}

int run_training(const discern::ExperimentConfig& cfg, const std::string& out_dir,
                 const std::string& resume) {
  discern::Trainer trainer(cfg, out_dir);
  trainer.set_echo(true);
  if (!resume.empty()) trainer.resume_from(resume);
  trainer.run();
  std::cout << "frames: " << trainer.frames() << "\n";
  if (!trainer.rows().empty()) {
    const auto& last = trainer.rows().back();
    std::cout << "final achievement: " << last.achievement_overall << " (dims "
              << last.achievement_dim[0] << ", " << last.achievement_dim[1] << ")\n";
  }
  std::cout << "metrics: " << trainer.metrics_path() << "\n";
  std::cout << "checkpoint: " << trainer.checkpoint_path() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DISCERN: unsupervised goal-conditioned control on grid worlds"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run the actor/learner training loop");
  std::string train_config, train_out, train_resume;
  long train_seed = -1, train_frames = -1;
  int train_actors = -1;
  train->add_option("--config", train_config, "experiment config file");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--seed", train_seed, "override run.seed");
  train->add_option("--actors", train_actors, "override run.actors");
  train->add_option("--frames", train_frames, "override run.frames");
  train->add_option("--resume", train_resume, "resume from a checkpoint");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against a goal set");
  std::string eval_checkpoint, eval_goals, eval_out;
  int eval_trials = 20;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--goals", eval_goals, "goal set file")->required();
  eval_cmd->add_option("--trials", eval_trials, "trials per goal");
  eval_cmd->add_option("--out", eval_out, "output CSV")->required();

  // dump-goals
  auto* dump = app.add_subcommand("dump-goals", "dump the goal buffer from a checkpoint");
  std::string dump_checkpoint, dump_out;
  dump->add_option("--checkpoint", dump_checkpoint, "checkpoint file")->required();
  dump->add_option("--out", dump_out, "output file")->required();

  // make-goals
  auto* make = app.add_subcommand("make-goals", "build a fixed goal set from random rollouts");
  std::string make_config, make_out;
  int make_n = 100;
  long make_seed = -1;
  make->add_option("--config", make_config, "experiment config file");
  make->add_option("--out", make_out, "output goal set file")->required();
  make->add_option("--n", make_n, "number of goals");
  make->add_option("--seed", make_seed, "override run.seed");

  // preset
  auto* preset = app.add_subcommand("preset", "train one of the named experiment presets");
  std::string preset_name, preset_config, preset_out;
  long preset_seed = -1, preset_frames = -1;
  int preset_actors = -1;
  bool preset_list = false;
  preset->add_option("--name", preset_name, "preset name");
  preset->add_flag("--list", preset_list, "list preset names");
  preset->add_option("--config", preset_config, "base experiment config file");
  preset->add_option("--out", preset_out, "output directory");
  preset->add_option("--seed", preset_seed, "override run.seed");
  preset->add_option("--actors", preset_actors, "override run.actors");
  preset->add_option("--frames", preset_frames, "override run.frames");

  // report
  auto* report = app.add_subcommand("report", "emit CSV/SVG reports from metrics files");
  std::vector<std::string> report_series;
  std::string report_out;
  report->add_option("--series", report_series, "name=metrics.csv, repeatable")->required();
  report->add_option("--out", report_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      discern::ExperimentConfig cfg = load_config_or_default(train_config);
      apply_overrides(cfg, train_seed, train_actors, train_frames);
      return run_training(cfg, train_out, train_resume);
    }

    if (*eval_cmd) {
      discern::Checkpoint cp = discern::Checkpoint::load(eval_checkpoint);
      discern::ExperimentConfig cfg = discern::parse_config(cp.config_text);
      discern::ParamSet params = discern::get_param_set(cp, "params/");
      discern::GoalSet goals = discern::load_goal_set(eval_goals);
      long frames = static_cast<long>(cp.section("frames")[0]);
      discern::AchievementReport rep = discern::evaluate(
          [&] { return std::make_unique<discern::GreedyQPolicy>(cfg.net_config(), params); },
          goals, cfg.env, eval_trials, cfg.episode_steps, discern::mix_seed(cfg.seed, 0xE7A1),
          cfg.eval_workers);
      std::ofstream out(eval_out, std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open output CSV: " + eval_out);
      out << "frames,goals,trials_per_goal,achievement_overall,achievement_dim_0,achievement_dim_1\n"
          << frames << "," << goals.entries.size() << "," << eval_trials << ","
          << discern::detail::format_double(rep.overall()) << ","
          << discern::detail::format_double(rep.dim_fraction(0)) << ","
          << discern::detail::format_double(rep.dim_fraction(1)) << "\n";
      std::cout << "overall achievement: " << rep.overall() << "\n";
      return 0;
    }

    if (*dump) {
      discern::Checkpoint cp = discern::Checkpoint::load(dump_checkpoint);
      discern::ExperimentConfig cfg = discern::parse_config(cp.config_text);
      discern::GoalBuffer buffer(cfg.goal_buffer);
      discern::codec::Cursor c{cp.section("goalbuf")};
      int filled = c.next_int();
      std::vector<discern::Observation> slots;
      for (int i = 0; i < filled; ++i) slots.push_back(discern::codec::get_tensor(c));
      buffer.restore(std::move(slots));
      buffer.dump(dump_out);
      std::cout << "dumped " << filled << " goal slots to " << dump_out << "\n";
      return 0;
    }

    if (*make) {
      discern::ExperimentConfig cfg = load_config_or_default(make_config);
      if (make_seed >= 0) cfg.seed = static_cast<std::uint64_t>(make_seed);
      discern::GoalSet set =
          discern::build_goal_set(cfg.env, make_n, discern::mix_seed(cfg.seed, 0x907A15));
      discern::save_goal_set(set, make_out);
      std::cout << "wrote " << set.entries.size() << " goals to " << make_out << "\n";
      return 0;
    }

    if (*preset) {
      if (preset_list) {
        for (const auto& name : discern::preset_names()) std::cout << name << "\n";
        return 0;
      }
      if (preset_name.empty() || preset_out.empty())
        throw discern::ConfigError("preset requires --name and --out (or --list)");
      discern::ExperimentConfig cfg =
          discern::apply_preset(load_config_or_default(preset_config), preset_name);
      apply_overrides(cfg, preset_seed, preset_actors, preset_frames);
      return run_training(cfg, preset_out, "");
    }

    if (*report) {
      std::vector<std::pair<std::string, std::vector<discern::MetricsRow>>> series;
      for (const auto& spec : report_series) {
        std::size_t eq = spec.find('=');
        if (eq == std::string::npos)
          throw std::runtime_error("--series expects name=path, got: " + spec);
        series.emplace_back(spec.substr(0, eq),
                            discern::parse_metrics_csv(read_file(spec.substr(eq + 1))));
      }
      std::filesystem::create_directories(report_out);
      discern::write_curve_svg(series, report_out + "/achievement_curves.svg");
      discern::write_heatstrip_svg(series, report_out + "/per_dimension.svg");
      std::cout << "wrote " << report_out << "/achievement_curves.svg and per_dimension.svg\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
