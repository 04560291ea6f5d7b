// cfdlab command line: gen-data | train | evaluate | sweep.
// Exit code 0 iff every requested output was written.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfdlab/harness.hpp"

namespace {

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    grid.push_back(std::stod(item));
  }
  return grid;
}

cfdlab::RunConfig resolve_config(const std::string& config_path,
                                 const std::string& preset,
                                 const std::string& data_dir,
                                 std::uint64_t seed, bool seed_set,
                                 const std::string& out) {
  cfdlab::RunConfig cfg;
  if (!config_path.empty()) {
    cfg = cfdlab::load_config(config_path);
    if (seed_set) {
      cfg.seed = seed;
      cfg.data_seed = seed;
    }
    if (!out.empty()) cfg.out_dir = cfdlab::resolve_out(out);
  } else if (!preset.empty()) {
    if (data_dir.empty())
      throw std::invalid_argument("--preset requires --data (gen-data output dir)");
    cfg = cfdlab::preset_config(preset, cfdlab::resolve_out(data_dir),
                                seed_set ? seed : 0, cfdlab::resolve_out(out));
  } else {
    throw std::invalid_argument("either --config or --preset is required");
  }
  if (cfg.out_dir.empty()) cfg.out_dir = cfdlab::resolve_out("run");
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"demonstration-calibrated RL laboratory"};
  app.require_subcommand(1);

  std::string config_path, preset, out, data_dir, checkpoint, parameter = "alpha";
  std::string grid_csv, objective;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int n_pairs = 2000;
  int steps = -1;
  double beta = -1.0;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", config_path, "config JSON");
    cmd->add_option("--preset", preset,
                    "uc1_likelihood | uc2_lexicon | uc3_composite");
    cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--out", out, "output directory (under CFDLAB_OUT_ROOT if relative)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a demonstration dataset");
  add_common(gen, false);
  gen->add_option("--n-pairs", n_pairs, "number of prompt/demo pairs");

  CLI::App* train_cmd = app.add_subcommand("train", "run one training job");
  add_common(train_cmd, true);
  train_cmd->add_option("--data", data_dir, "gen-data output dir (with --preset)");
  train_cmd->add_option("--objective", objective,
                        "vanilla | kl_shaped | composite | cfd | cfd_composite | sft");
  train_cmd->add_option("--steps", steps, "override training step count");
  train_cmd->add_option("--beta", beta, "override the KL coefficient");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--data", data_dir, "gen-data output dir (with --preset)");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "grid sweep over beta or alpha");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--data", data_dir, "gen-data output dir (with --preset)");
  sweep_cmd->add_option("--parameter", parameter, "beta | alpha");
  sweep_cmd->add_option("--grid", grid_csv, "comma separated values")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (preset.empty()) throw std::invalid_argument("gen-data requires --preset");
      const auto result = cfdlab::cmd_gen_data(seed, preset, n_pairs,
                                               out.empty() ? "data" : out);
      std::printf("dataset: %s\n", result.dataset_path.c_str());
      std::printf("frozen model: %s\n", result.markov_path.c_str());
      if (!result.lexicon_path.empty())
        std::printf("lexicon: %s\n", result.lexicon_path.c_str());
      return 0;
    }
    cfdlab::RunConfig cfg =
        resolve_config(config_path, preset, data_dir, seed, seed_set, out);
    if (!objective.empty()) cfg.objective = cfdlab::parse_objective(objective);
    if (steps >= 0) cfg.steps = steps;
    if (beta >= 0) cfg.ppo.beta = beta;
    if (train_cmd->parsed()) {
      const auto result = cfdlab::cmd_train(cfg);
      std::printf("trained %ld steps, outputs in %s\n", result.state.step,
                  cfg.out_dir.c_str());
      return 0;
    }
    if (eval_cmd->parsed()) {
      const std::string dir = cfg.out_dir;
      cfdlab::cmd_evaluate(cfg, checkpoint, dir);
      std::printf("report written to %s\n", dir.c_str());
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto result =
          cfdlab::cmd_sweep(cfg, parameter, parse_grid(grid_csv), cfg.out_dir);
      int failed = 0;
      for (const auto& row : result.rows) failed += row.failed ? 1 : 0;
      std::printf("sweep finished, %d/%zu runs failed, outputs in %s\n", failed,
                  result.rows.size(), cfg.out_dir.c_str());
      return failed == static_cast<int>(result.rows.size()) ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
