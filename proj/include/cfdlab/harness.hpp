#ifndef CFDLAB_HARNESS_HPP_
#define CFDLAB_HARNESS_HPP_

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfdlab/config.hpp"
#include "cfdlab/core.hpp"
#include "cfdlab/report.hpp"
#include "cfdlab/trainers.hpp"

namespace cfdlab {

constexpr const char* kToolVersion = "1.0.0";

// Experiment presets pin every hyperparameter of the three use cases so each
// figure analog is a single command.
struct ExperimentPreset {
  std::string name;
  RunConfig config;
  int prompt_length = 8;
  double demo_filter_fraction = 0.0;  // >0: keep top fraction by lexicon score
};

inline ExperimentPreset preset_by_name(const std::string& name) {
  ExperimentPreset p;
  p.name = name;
  RunConfig& c = p.config;
  c.vocab_size = 16;
  c.context_window = 4;
  c.embedding_dim = 8;
  c.hidden_dim = 32;
  c.init_scale = 0.1;
  c.ppo.clip_epsilon = 0.3;
  c.ppo.epochs = 4;
  c.ppo.accum_steps = 1;
  c.eval_sampling.kind = "stochastic";
  c.val_fraction = 0.25;

  if (name == "uc1_likelihood") {
    c.t_train = 64;
    c.t_eval = 256;
    c.embedding_dim = 12;
    c.hidden_dim = 64;
    c.rewards = {{RewardKind::kLikelihood, 1.0, ""}};
    c.objective = ObjectiveKind::kCfd;
    c.warmup_sft_steps = 24000;
    c.warmup_learning_rate = 0.01;
    c.warmup_batch_size = 64;
    c.ppo.batch_size = 256;
    c.ppo.learning_rate = 2e-4;
    c.ppo.epochs = 1;
    c.steps = 60;
    c.eval_every = 5;
    c.eval_prompts = 2000;
    // The supervised fit carries slightly more entropy than the reference
    // (the usual MLE excess), which biases its samples' reference likelihood
    // low; mild sharpening at evaluation time cancels that bias.
    c.eval_sampling.kind = "temperature";
    c.eval_sampling.tau = 0.93;
  } else if (name == "uc2_lexicon") {
    c.t_train = 32;
    c.t_eval = 64;
    c.rewards = {{RewardKind::kLexicon, 1.0, ""}};
    c.objective = ObjectiveKind::kCfd;
    c.warmup_sft_steps = 8000;
    c.warmup_learning_rate = 0.01;
    c.warmup_batch_size = 64;
    c.ppo.batch_size = 256;
    c.ppo.learning_rate = 5e-3;
    c.ppo.epochs = 1;
    c.steps = 1000;
    c.eval_every = 50;
    c.eval_prompts = 500;
    // Filtered demos have a truncated reward distribution; at ~500 eval
    // samples a coarse histogram keeps the KL estimate stable.
    c.alignment_bins = 8;
    p.demo_filter_fraction = 0.3;
  } else if (name == "uc3_composite") {
    c.t_train = 48;
    c.t_eval = 96;
    c.rewards = {{RewardKind::kLexicon, 1.0, ""}, {RewardKind::kLength, 0.01, ""}};
    c.objective = ObjectiveKind::kCfdComposite;
    c.ppo.batch_size = 32;
    c.ppo.learning_rate = 0.01;
    c.steps = 250;
    c.eval_every = 50;
    c.eval_prompts = 400;
    p.demo_filter_fraction = 0.3;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  return p;
}

inline std::string out_root() {
  const char* env = std::getenv("CFDLAB_OUT_ROOT");
  return env ? std::string(env) : std::string(".");
}

inline std::string resolve_out(const std::string& path) {
  if (path.empty()) return out_root();
  if (std::filesystem::path(path).is_absolute()) return path;
  const std::string root = out_root();
  return root == "." ? path : root + "/" + path;
}

inline void write_manifest(const RunConfig& config,
                           const std::vector<std::string>& outputs,
                           const std::string& path) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  j["data_seed"] = config.data_seed;
  j["outputs"] = outputs;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("manifest write failed: " + path);
}

// ---------------------------------------------------------------------------
// gen-data: frozen chain + prompt/demonstration pairs (+ lexicon when the
// preset filters demos by lexicon score).
// ---------------------------------------------------------------------------

inline std::vector<DemoPair> generate_pairs(const FrozenMarkovModel& markov,
                                            int n_pairs, int prompt_length,
                                            int demo_max_len, RngStream rng) {
  std::vector<DemoPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    RngStream pair_rng = rng.substream(static_cast<std::uint64_t>(i));
    DemoPair p;
    p.prompt = sample_markov(markov, TokenSequence{}, prompt_length, pair_rng,
                             /*exclude_eos=*/true);
    p.demo = sample_markov(markov, p.prompt, demo_max_len, pair_rng);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// Rejection filtering: sample a pool of 1/fraction times the requested size
// and keep the highest-scoring pairs (stable under score ties).
inline std::vector<DemoPair> filter_top_fraction(std::vector<DemoPair> pool,
                                                 const RewardModel& lexicon,
                                                 int n_keep) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> scores(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    scores[i] = score(lexicon, pool[i].prompt, pool[i].demo);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<DemoPair> kept;
  kept.reserve(static_cast<std::size_t>(n_keep));
  for (int i = 0; i < n_keep; ++i) kept.push_back(std::move(pool[order[static_cast<std::size_t>(i)]]));
  return kept;
}

struct GenDataResult {
  std::string dataset_path;
  std::string markov_path;
  std::string lexicon_path;  // empty unless the preset uses a lexicon
};

inline GenDataResult cmd_gen_data(std::uint64_t seed, const std::string& preset_name,
                                  int n_pairs, const std::string& out_path) {
  if (n_pairs < 10) throw std::invalid_argument("gen-data: n_pairs >= 10 required");
  const ExperimentPreset preset = preset_by_name(preset_name);
  const std::string dir = resolve_out(out_path);
  std::filesystem::create_directories(dir);

  Vocab vocab;
  vocab.size = preset.config.vocab_size;
  const FrozenMarkovModel markov = make_markov_model(vocab, RngStream(seed, 0));

  const bool uses_lexicon =
      std::any_of(preset.config.rewards.begin(), preset.config.rewards.end(),
                  [](const RewardSpecConfig& r) { return r.kind == RewardKind::kLexicon; });

  std::vector<DemoPair> pairs;
  if (preset.demo_filter_fraction > 0) {
    const int pool_size = static_cast<int>(
        std::ceil(n_pairs / preset.demo_filter_fraction));
    std::vector<DemoPair> pool =
        generate_pairs(markov, pool_size, preset.prompt_length,
                       preset.config.t_train, RngStream(seed, 10));
    const RewardModel lexicon = make_seed_lexicon(vocab, RngStream(seed, 1));
    pairs = filter_top_fraction(std::move(pool), lexicon, n_pairs);
  } else {
    pairs = generate_pairs(markov, n_pairs, preset.prompt_length,
                           preset.config.t_train, RngStream(seed, 10));
  }

  GenDataResult result;
  result.dataset_path = dir + "/dataset.jsonl";
  result.markov_path = dir + "/markov.json";
  save_pairs_jsonl(pairs, result.dataset_path);
  save_markov_model(markov, result.markov_path);
  std::vector<std::string> outputs = {result.dataset_path, result.markov_path};
  if (uses_lexicon) {
    result.lexicon_path = dir + "/lexicon.json";
    save_lexicon(make_seed_lexicon(vocab, RngStream(seed, 1)), result.lexicon_path);
    outputs.push_back(result.lexicon_path);
  }

  RunConfig manifest_cfg = preset.config;
  manifest_cfg.seed = seed;
  manifest_cfg.data_seed = seed;
  write_manifest(manifest_cfg, outputs, dir + "/manifest.json");
  return result;
}

// Resolves the preset into a runnable config wired to a gen-data directory.
inline RunConfig preset_config(const std::string& preset_name,
                               const std::string& data_dir, std::uint64_t seed,
                               const std::string& out_dir) {
  const ExperimentPreset preset = preset_by_name(preset_name);
  RunConfig c = preset.config;
  c.seed = seed;
  c.data_seed = seed;
  c.dataset_path = data_dir + "/dataset.jsonl";
  c.frozen_model_path = data_dir + "/markov.json";
  for (RewardSpecConfig& r : c.rewards)
    if (r.kind == RewardKind::kLexicon)
      r.lexicon_path = data_dir + "/lexicon.json";
  c.out_dir = out_dir;
  c.validate();
  return c;
}

inline std::shared_ptr<const FrozenMarkovModel> load_or_derive_markov(
    const RunConfig& config) {
  if (!config.frozen_model_path.empty())
    return std::make_shared<FrozenMarkovModel>(
        load_markov_model(config.frozen_model_path));
  Vocab vocab;
  vocab.size = config.vocab_size;
  return std::make_shared<FrozenMarkovModel>(
      make_markov_model(vocab, RngStream(config.data_seed, 0)));
}

// ---------------------------------------------------------------------------
// train / evaluate / sweep
// ---------------------------------------------------------------------------

inline TrainResult cmd_train(const RunConfig& config) {
  std::filesystem::create_directories(config.out_dir);
  const std::vector<DemoPair> pairs = load_pairs_jsonl(config.dataset_path);
  auto markov = load_or_derive_markov(config);
  TrainResult result = train(config, pairs, markov);
  write_manifest(config,
                 {config.out_dir + "/metrics.csv",
                  config.out_dir + "/checkpoint.json",
                  config.out_dir + "/checkpoint_best.json"},
                 config.out_dir + "/manifest.json");
  return result;
}

inline MetricsReport cmd_evaluate(const RunConfig& config,
                                  const std::string& checkpoint_path,
                                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<DemoPair> pairs = load_pairs_jsonl(config.dataset_path);
  auto markov = load_or_derive_markov(config);
  TrainState state = load_checkpoint(checkpoint_path, config);
  state.vocab = markov->vocab;

  auto [train_split, val_split] =
      split_dataset(pairs, config.val_fraction, RngStream(config.data_seed, 2));
  RewardSuite suite = build_reward_suite(config, markov->vocab, markov);
  const auto val_targets = suite_demo_targets(suite, val_split);
  EvalContext ectx{markov, &suite, &val_split, &val_targets};

  MetricsReport report = evaluate_policy(state.params, config, ectx,
                                         RngStream(config.seed, 4),
                                         /*with_curve=*/true);
  write_report_csv(report, out_dir + "/report.csv");
  write_curve_csv(report.curve, out_dir + "/curve.csv");

  // Demo curve alongside the policy curve.
  std::vector<TokenSequence> prompts, demos;
  const std::size_t n = std::min<std::size_t>(
      val_split.pairs.size(), static_cast<std::size_t>(config.eval_prompts));
  for (std::size_t i = 0; i < n; ++i) {
    prompts.push_back(val_split.pairs[i].prompt);
    demos.push_back(val_split.pairs[i].demo);
  }
  const LikelihoodLengthCurve demo_curve = curve_from_sequences(
      *markov, prompts, demos, default_length_grid(config.t_eval));

  SvgSeries policy_series{"policy", "#d62728", false, {}, {}};
  for (std::size_t i = 0; i < report.curve.lengths.size(); ++i) {
    policy_series.x.push_back(report.curve.lengths[i]);
    policy_series.y.push_back(report.curve.values[i]);
  }
  SvgSeries demo_series{"demos", "#2ca02c", false, {}, {}};
  for (std::size_t i = 0; i < demo_curve.lengths.size(); ++i) {
    demo_series.x.push_back(demo_curve.lengths[i]);
    demo_series.y.push_back(demo_curve.values[i]);
  }
  write_svg_plot({policy_series, demo_series},
                 "Mean log-likelihood vs generation length", "length",
                 "nats/token", out_dir + "/curve.svg");
  write_manifest(config,
                 {out_dir + "/report.csv", out_dir + "/curve.csv",
                  out_dir + "/curve.svg"},
                 out_dir + "/manifest.json");
  return report;
}

struct SweepRow {
  double value = 0.0;
  bool failed = false;
  std::vector<double> mean_reward;     // per component
  std::vector<double> alignment;       // per component
  double mean_length = 0.0;
};

struct SweepResult {
  std::string parameter;
  std::vector<SweepRow> rows;
  std::vector<double> demo_mean;  // demo reward coordinate, per component
  double demo_mean_length = 0.0;
};

// One full training run per grid point, shared seeds otherwise. Per-run
// failures are recorded and the sweep continues.
inline SweepResult cmd_sweep(const RunConfig& base_config,
                             const std::string& parameter,
                             const std::vector<double>& grid,
                             const std::string& out_dir) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  if (parameter != "beta" && parameter != "alpha")
    throw std::invalid_argument("sweep: parameter must be beta or alpha");
  std::filesystem::create_directories(out_dir);

  SweepResult result;
  result.parameter = parameter;
  for (double value : grid) {
    RunConfig cfg = base_config;
    if (parameter == "beta") {
      cfg.objective = ObjectiveKind::kKlShaped;
      cfg.ppo.beta = value;
    } else {
      if (cfg.rewards.size() < 2)
        throw std::invalid_argument("sweep over alpha needs two reward components");
      cfg.objective = ObjectiveKind::kComposite;
      cfg.rewards[1].alpha = value;
    }
    cfg.out_dir = out_dir + "/" + parameter + "_" + fmt_double(value);
    std::filesystem::create_directories(cfg.out_dir);

    SweepRow row;
    row.value = value;
    try {
      const TrainResult tr = cmd_train(cfg);
      row.mean_reward = tr.final_report.policy_mean;
      row.alignment = tr.final_report.alignment_per_reward;
      row.mean_length = tr.final_report.evaluator_policy[2];
      if (result.demo_mean.empty()) {
        result.demo_mean = tr.final_report.demo_mean;
        result.demo_mean_length = tr.final_report.evaluator_demo[2];
      }
    } catch (const std::exception&) {
      row.failed = true;
    }
    result.rows.push_back(std::move(row));
  }

  // sweep CSV: one row per grid point plus the demo coordinate row.
  const std::size_t n_rewards = base_config.rewards.size();
  std::ofstream out(out_dir + "/sweep.csv");
  if (!out) throw std::runtime_error("cannot write sweep csv");
  out << parameter;
  for (std::size_t r = 0; r < n_rewards; ++r) out << ",mean_reward_" << r;
  for (std::size_t r = 0; r < n_rewards; ++r) out << ",alignment_" << r;
  out << ",mean_length,failed\n";
  for (const SweepRow& row : result.rows) {
    out << fmt_double(row.value);
    if (row.failed) {
      for (std::size_t r = 0; r < 2 * n_rewards; ++r) out << ",";
      out << ",,1\n";
      continue;
    }
    for (double v : row.mean_reward) out << "," << fmt_double(v);
    for (double v : row.alignment) out << "," << fmt_double(v);
    out << "," << fmt_double(row.mean_length) << ",0\n";
  }
  out << "demo";
  for (double v : result.demo_mean) out << "," << fmt_double(v);
  for (std::size_t r = 0; r < n_rewards; ++r) out << ",";
  out << "," << fmt_double(result.demo_mean_length) << ",0\n";
  out.close();

  // Pareto scatter: first-reward mean vs mean length.
  SvgSeries front{"swept front", "#1f77b4", true, {}, {}};
  for (const SweepRow& row : result.rows) {
    if (row.failed || row.mean_reward.empty()) continue;
    front.x.push_back(row.mean_reward[0]);
    front.y.push_back(row.mean_length);
  }
  SvgSeries demo{"demonstrations", "#2ca02c", true, {}, {}};
  if (!result.demo_mean.empty()) {
    demo.x.push_back(result.demo_mean[0]);
    demo.y.push_back(result.demo_mean_length);
  }
  write_svg_plot({front, demo}, "Reward / length trade-off", "mean reward",
                 "mean length", out_dir + "/pareto.svg");
  write_manifest(base_config, {out_dir + "/sweep.csv", out_dir + "/pareto.svg"},
                 out_dir + "/manifest.json");
  return result;
}

// pareto_sweep per the eval contract: alpha sweep returning
// (alpha, mean R_RM, mean -R_length, per-reward alignment) rows.
inline SweepResult pareto_sweep(const RunConfig& config,
                                const std::vector<double>& alpha_grid,
                                const std::string& out_dir) {
  return cmd_sweep(config, "alpha", alpha_grid, out_dir);
}

}  // namespace cfdlab

#endif  // CFDLAB_HARNESS_HPP_
