#ifndef CFDLAB_TRAINERS_HPP_
#define CFDLAB_TRAINERS_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfdlab/config.hpp"
#include "cfdlab/core.hpp"
#include "cfdlab/eval.hpp"
#include "cfdlab/grad.hpp"
#include "cfdlab/objectives.hpp"
#include "cfdlab/policy.hpp"
#include "cfdlab/report.hpp"
#include "cfdlab/rewards.hpp"

namespace cfdlab {

// ---------------------------------------------------------------------------
// Reward suite: the configured reward models, composite weights, and cached
// per-pair demonstration targets.
// ---------------------------------------------------------------------------

struct RewardSuite {
  std::vector<RewardModel> models;
  std::vector<double> alphas;
  std::vector<std::string> names;
};

// Seed-derived lexicon: zero weight on EOS/BOS, unit-scale Gaussian weights
// elsewhere. Stands in for a pretrained classifier head.
inline RewardModel make_seed_lexicon(const Vocab& vocab, RngStream rng) {
  std::vector<double> w(static_cast<std::size_t>(vocab.size), 0.0);
  for (int t = 0; t < vocab.size; ++t) {
    const double g = rng.next_gaussian();
    if (t != vocab.eos_id && t != vocab.bos_id) w[static_cast<std::size_t>(t)] = g;
  }
  return RewardModel::lexicon(std::move(w), 0.0);
}

inline RewardSuite build_reward_suite(
    const RunConfig& config, const Vocab& vocab,
    std::shared_ptr<const FrozenMarkovModel> markov) {
  RewardSuite suite;
  for (const RewardSpecConfig& spec : config.rewards) {
    switch (spec.kind) {
      case RewardKind::kLikelihood:
        suite.models.push_back(RewardModel::likelihood(markov));
        suite.names.push_back("likelihood");
        break;
      case RewardKind::kLexicon:
        if (!spec.lexicon_path.empty())
          suite.models.push_back(load_lexicon(spec.lexicon_path, vocab.size));
        else
          suite.models.push_back(
              make_seed_lexicon(vocab, RngStream(config.data_seed, 1)));
        suite.names.push_back("lexicon");
        break;
      case RewardKind::kLength:
        suite.models.push_back(RewardModel::length());
        suite.names.push_back("length");
        break;
    }
    suite.alphas.push_back(spec.alpha);
  }
  if (!suite.alphas.empty()) suite.alphas[0] = 1.0;  // first weight fixed to 1
  return suite;
}

inline std::vector<std::vector<double>> suite_demo_targets(
    const RewardSuite& suite, const Dataset& dataset) {
  std::vector<std::vector<double>> targets;
  targets.reserve(suite.models.size());
  for (const RewardModel& rm : suite.models)
    targets.push_back(demo_targets(rm, dataset));
  return targets;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct RolloutSeq {
  std::size_t pair_index = 0;
  TokenSequence prompt;
  TokenSequence continuation;
  std::vector<double> behavior_logps;  // per token, frozen at sampling time
  double behavior_total = 0.0;
  double ref_total = 0.0;              // under pi_theta0, kl_shaped only
};

struct RolloutBatch {
  std::vector<RolloutSeq> seqs;
  std::vector<std::vector<double>> raws;  // [reward component][sequence]
  std::vector<double> shaped;
  std::vector<double> advantages;
  WhitenStats advantage_stats;
};

struct TrainState {
  RunConfig config;
  Vocab vocab;
  PolicyParams params;
  PolicyParams ref_params;  // frozen at init, KL reference
  AdamState adam;
  long step = 0;
};

// Samples one continuation with temperature 1, recording the chosen token's
// log-prob at every position.
inline RolloutSeq sample_rollout(const PolicyParams& params,
                                 const TokenSequence& prompt, int max_len,
                                 RngStream& rng, const Vocab& vocab) {
  ForwardWorkspace ws;
  RolloutSeq seq;
  seq.prompt = prompt;
  while (static_cast<int>(seq.continuation.size()) < max_len) {
    const auto ctx = context_window(prompt.tokens, seq.continuation.tokens,
                                    params.shape.context_window, vocab.bos_id);
    next_token_logits(params, ctx, ws);
    log_softmax_inplace(ws.logits);
    std::vector<double> probs(ws.logits.size());
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(ws.logits[i]);
    const TokenId t = detail::sample_index(probs, rng);
    seq.behavior_logps.push_back(ws.logits[static_cast<std::size_t>(t)]);
    seq.behavior_total += ws.logits[static_cast<std::size_t>(t)];
    seq.continuation.tokens.push_back(t);
    if (t == vocab.eos_id) break;
  }
  return seq;
}

inline RolloutBatch collect_rollouts(
    const TrainState& state, const Dataset& train_split,
    const RewardSuite& suite,
    const std::vector<std::vector<double>>& train_targets, int batch_size,
    int t_train, RngStream rng) {
  if (batch_size < 2) throw std::invalid_argument("collect_rollouts: batch_size >= 2");
  const RunConfig& cfg = state.config;
  RolloutBatch batch;
  batch.seqs.reserve(static_cast<std::size_t>(batch_size));
  batch.raws.assign(suite.models.size(), {});

  for (int b = 0; b < batch_size; ++b) {
    const std::size_t idx =
        static_cast<std::size_t>(rng.next_below(train_split.pairs.size()));
    RngStream seq_rng = rng.substream(static_cast<std::uint64_t>(b) + 1);
    RolloutSeq seq = sample_rollout(state.params, train_split.pairs[idx].prompt,
                                    t_train, seq_rng, state.vocab);
    seq.pair_index = idx;
    if (cfg.objective == ObjectiveKind::kKlShaped)
      seq.ref_total = sequence_log_prob(state.ref_params, seq.prompt,
                                        seq.continuation, state.vocab.bos_id);
    for (std::size_t r = 0; r < suite.models.size(); ++r) {
      double raw = score(suite.models[r], seq.prompt, seq.continuation);
      if (is_impossible(raw)) raw = cfg.sentinel_floor;
      batch.raws[r].push_back(raw);
    }
    batch.seqs.push_back(std::move(seq));
  }

  const std::size_t n = batch.seqs.size();
  batch.shaped.resize(n);
  switch (cfg.objective) {
    case ObjectiveKind::kVanilla:
      for (std::size_t s = 0; s < n; ++s)
        batch.shaped[s] = shape_vanilla(batch.raws[0][s]);
      break;
    case ObjectiveKind::kKlShaped:
      for (std::size_t s = 0; s < n; ++s)
        batch.shaped[s] = shape_kl(batch.raws[0][s], batch.seqs[s].behavior_total,
                                   batch.seqs[s].ref_total, cfg.ppo.beta);
      break;
    case ObjectiveKind::kComposite:
      for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> raws(suite.models.size());
        for (std::size_t r = 0; r < suite.models.size(); ++r)
          raws[r] = batch.raws[r][s];
        batch.shaped[s] = shape_composite(raws, suite.alphas);
      }
      break;
    case ObjectiveKind::kCfd:
      for (std::size_t s = 0; s < n; ++s)
        batch.shaped[s] =
            shape_cfd(batch.raws[0][s], train_targets[0][batch.seqs[s].pair_index],
                      cfg.sentinel_floor);
      break;
    case ObjectiveKind::kCfdComposite: {
      std::vector<std::vector<double>> targets(suite.models.size());
      for (std::size_t r = 0; r < suite.models.size(); ++r) {
        targets[r].reserve(n);
        for (std::size_t s = 0; s < n; ++s)
          targets[r].push_back(train_targets[r][batch.seqs[s].pair_index]);
      }
      batch.shaped =
          shape_cfd_composite(batch.raws, targets, cfg.sentinel_floor);
      break;
    }
    case ObjectiveKind::kSft:
      throw std::logic_error("collect_rollouts: sft objective has no rollouts");
  }

  auto [adv, stats] = whiten(batch.shaped);
  batch.advantages = std::move(adv);
  batch.advantage_stats = stats;
  return batch;
}

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

struct PpoEpochStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double surrogate = 0.0;
  long dropped = 0;  // sequences skipped for non-finite ratios
};

struct PpoStats {
  std::vector<PpoEpochStats> epochs;
};

// Clipped-surrogate ascent. Gradients are accumulated over `accum_steps`
// micro-batches in a fixed order, then applied in one Adam step per epoch;
// a batch whose accumulated gradient is exactly zero leaves the parameters
// untouched (moments carry history, so stepping would move them).
inline PpoStats ppo_update(TrainState& state, const RolloutBatch& batch,
                           double epsilon, int epochs, int accum_steps = 1) {
  if (!(epsilon > 0)) throw std::invalid_argument("ppo_update: epsilon > 0");
  if (epochs < 1) throw std::invalid_argument("ppo_update: epochs >= 1");
  if (accum_steps < 1) throw std::invalid_argument("ppo_update: accum_steps >= 1");

  PpoStats stats;
  GradVector grad(state.params.shape);
  BackwardWorkspace bws;
  const std::size_t n = batch.seqs.size();
  const std::size_t per_micro =
      (n + static_cast<std::size_t>(accum_steps) - 1) /
      static_cast<std::size_t>(accum_steps);

  long total_tokens = 0;
  for (const RolloutSeq& s : batch.seqs)
    total_tokens += static_cast<long>(s.continuation.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    grad.reset();
    PpoEpochStats es;
    double ratio_sum = 0.0, surrogate_sum = 0.0;
    long token_count = 0, clip_count = 0;

    for (std::size_t micro = 0; micro < n; micro += per_micro) {
      const std::size_t end = std::min(n, micro + per_micro);
      for (std::size_t s = micro; s < end; ++s) {
        const RolloutSeq& seq = batch.seqs[s];
        const double adv = batch.advantages[s];
        std::vector<TokenId> prefix;
        bool finite = true;
        // First scan: every ratio must be finite before this sequence may
        // contribute gradient.
        std::vector<double> logps(seq.continuation.size());
        {
          ForwardWorkspace fws;
          for (std::size_t t = 0; t < seq.continuation.size(); ++t) {
            const auto ctx =
                context_window(seq.prompt.tokens, prefix,
                               state.params.shape.context_window,
                               state.vocab.bos_id);
            next_token_logits(state.params, ctx, fws);
            log_softmax_inplace(fws.logits);
            logps[t] = fws.logits[static_cast<std::size_t>(
                seq.continuation.tokens[t])];
            if (!std::isfinite(std::exp(logps[t] - seq.behavior_logps[t])))
              finite = false;
            prefix.push_back(seq.continuation.tokens[t]);
          }
        }
        if (!finite) {
          ++es.dropped;
          continue;
        }
        prefix.clear();
        for (std::size_t t = 0; t < seq.continuation.size(); ++t) {
          const double ratio = std::exp(logps[t] - seq.behavior_logps[t]);
          const double lo = 1.0 - epsilon, hi = 1.0 + epsilon;
          const double clipped = std::clamp(ratio, lo, hi);
          surrogate_sum += std::min(ratio * adv, clipped * adv);
          ratio_sum += ratio;
          ++token_count;
          const bool clip_active =
              (adv > 0 && ratio > hi) || (adv < 0 && ratio < lo);
          if (clip_active) ++clip_count;
          if (!clip_active && adv != 0.0) {
            const auto ctx =
                context_window(seq.prompt.tokens, prefix,
                               state.params.shape.context_window,
                               state.vocab.bos_id);
            accumulate_logprob_grad(state.params, ctx,
                                    seq.continuation.tokens[t],
                                    ratio * adv, grad, bws);
          }
          prefix.push_back(seq.continuation.tokens[t]);
        }
      }
    }

    es.mean_ratio = token_count ? ratio_sum / static_cast<double>(token_count) : 1.0;
    es.clip_fraction =
        token_count ? static_cast<double>(clip_count) / static_cast<double>(token_count)
                    : 0.0;
    es.surrogate =
        token_count ? surrogate_sum / static_cast<double>(token_count) : 0.0;
    stats.epochs.push_back(es);

    if (token_count > 0) {
      grad.scale(1.0 / static_cast<double>(token_count));
      bool zero = true;
      for (double v : grad.values)
        if (v != 0.0) { zero = false; break; }
      if (!zero) adam_step(state.adam, state.params, grad);
    }
  }
  (void)total_tokens;
  return stats;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning baseline
// ---------------------------------------------------------------------------

// One accumulated Adam step on the mean per-token log-likelihood of the
// demos given their prompts (ascent = NLL descent).
inline double sft_update(TrainState& state, const std::vector<DemoPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("sft_update: empty batch");
  GradVector grad(state.params.shape);
  BackwardWorkspace bws;
  ForwardWorkspace fws;
  double logp_sum = 0.0;
  long token_count = 0;
  for (const DemoPair& pair : pairs) {
    std::vector<TokenId> prefix;
    for (TokenId target : pair.demo.tokens) {
      const auto ctx = context_window(pair.prompt.tokens, prefix,
                                      state.params.shape.context_window,
                                      state.vocab.bos_id);
      next_token_logits(state.params, ctx, fws);
      log_softmax_inplace(fws.logits);
      logp_sum += fws.logits[static_cast<std::size_t>(target)];
      accumulate_logprob_grad(state.params, ctx, target, 1.0, grad, bws);
      ++token_count;
      prefix.push_back(target);
    }
  }
  grad.scale(1.0 / static_cast<double>(token_count));
  adam_step(state.adam, state.params, grad);
  return logp_sum / static_cast<double>(token_count);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const RunConfig& c) {
  return fnv1a_hash(config_to_json(c).dump());
}

inline void save_checkpoint(const TrainState& state, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["step"] = state.step;
  j["config_hash"] = config_hash(state.config);
  j["params"] = params_to_json(state.params);
  j["ref_params"] = params_to_json(state.ref_params);
  j["adam"] = {{"lr", state.adam.lr},
               {"beta1", state.adam.beta1},
               {"beta2", state.adam.beta2},
               {"eps", state.adam.eps},
               {"step", state.adam.step},
               {"m", state.adam.m},
               {"v", state.adam.v}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline TrainState load_checkpoint(const std::string& path, const RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported version");
  TrainState state;
  state.config = config;
  state.vocab.size = config.vocab_size;
  state.params = params_from_json(j.at("params"));
  state.ref_params = params_from_json(j.at("ref_params"));
  state.step = j.at("step").get<long>();
  const auto& a = j.at("adam");
  state.adam.lr = a.at("lr").get<double>();
  state.adam.beta1 = a.at("beta1").get<double>();
  state.adam.beta2 = a.at("beta2").get<double>();
  state.adam.eps = a.at("eps").get<double>();
  state.adam.step = a.at("step").get<long>();
  state.adam.m = a.at("m").get<std::vector<double>>();
  state.adam.v = a.at("v").get<std::vector<double>>();
  return state;
}

// ---------------------------------------------------------------------------
// Evaluation snapshots
// ---------------------------------------------------------------------------

struct EvalContext {
  std::shared_ptr<const FrozenMarkovModel> markov;
  const RewardSuite* suite = nullptr;
  const Dataset* val_split = nullptr;
  const std::vector<std::vector<double>>* val_targets = nullptr;
};

inline MetricsReport evaluate_policy(const PolicyParams& params,
                                     const RunConfig& config,
                                     const EvalContext& ctx, RngStream rng,
                                     bool with_curve = false) {
  const RewardSuite& suite = *ctx.suite;
  const Dataset& val = *ctx.val_split;
  const Vocab& vocab = ctx.markov->vocab;
  const std::size_t n_prompts =
      std::min<std::size_t>(val.pairs.size(),
                            static_cast<std::size_t>(config.eval_prompts));
  const SamplingStrategy strategy = parse_sampling(
      config.eval_sampling.kind, config.eval_sampling.tau, config.eval_sampling.p);

  std::vector<TokenSequence> prompts, continuations, demos;
  prompts.reserve(n_prompts);
  for (std::size_t i = 0; i < n_prompts; ++i) {
    prompts.push_back(val.pairs[i].prompt);
    demos.push_back(val.pairs[i].demo);
    RngStream sub = rng.substream(i);
    continuations.push_back(sample_continuation(params, prompts[i], strategy,
                                                config.t_train, sub, vocab));
  }

  MetricsReport report;
  report.reward_names = suite.names;
  for (std::size_t r = 0; r < suite.models.size(); ++r) {
    std::vector<double> policy_rewards(n_prompts);
    std::vector<double> demo_rewards((*ctx.val_targets)[r].begin(),
                                     (*ctx.val_targets)[r].begin() +
                                         static_cast<long>(n_prompts));
    for (std::size_t i = 0; i < n_prompts; ++i) {
      double raw = score(suite.models[r], prompts[i], continuations[i]);
      if (is_impossible(raw)) raw = config.sentinel_floor;
      policy_rewards[i] = raw;
    }
    auto mean_std = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::pair<double, double>(m, std::sqrt(ss / static_cast<double>(v.size())));
    };
    const auto [pm, ps] = mean_std(policy_rewards);
    const auto [dm, ds] = mean_std(demo_rewards);
    report.policy_mean.push_back(pm);
    report.policy_std.push_back(ps);
    report.demo_mean.push_back(dm);
    report.demo_std.push_back(ds);
    report.alignment_per_reward.push_back(
        alignment(policy_rewards, demo_rewards, config.alignment_bins,
                  config.alignment_reversed));
  }

  report.evaluator_policy = evaluators(prompts, continuations, *ctx.markov);
  report.evaluator_demo = evaluators(prompts, demos, *ctx.markov);
  report.delta_demo_value = delta_demo(report.evaluator_policy, report.evaluator_demo);

  // The curve characterizes the policy's own sampling distribution at
  // growing horizons, so it always uses plain stochastic draws regardless
  // of the eval sampling used for the behavioral metrics above.
  if (with_curve)
    report.curve = likelihood_length_curve(params, *ctx.markov, prompts,
                                           SamplingStrategy::stochastic(),
                                           config.t_eval,
                                           rng.substream(1u << 20));
  return report;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  long step = 0;
  std::vector<double> mean_raw;  // per reward component
  double mean_shaped = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 1.0;
  bool has_eval = false;
  std::vector<double> alignment;  // per reward, eval rows only
  double delta_demo = 0.0;
  double mean_length = 0.0;
  double repetition_rate = 0.0;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> timeline;
  MetricsReport final_report;
  long best_reward_step = 0;      // highest mean first-reward on validation
  long best_alignment_step = 0;   // lowest mean alignment on validation
  long selected_step = 0;         // cfd objectives select by alignment
};

inline void write_metrics_csv(const std::vector<MetricsRow>& rows,
                              const std::vector<std::string>& reward_names,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics: " + path);
  out << "step";
  for (const auto& n : reward_names) out << ",mean_raw_" << n;
  out << ",mean_shaped,clip_fraction,mean_ratio";
  for (const auto& n : reward_names) out << ",alignment_" << n;
  out << ",delta_demo,mean_length,repetition_rate\n";
  for (const MetricsRow& r : rows) {
    out << r.step;
    for (double v : r.mean_raw) out << "," << fmt_double(v);
    out << "," << fmt_double(r.mean_shaped) << "," << fmt_double(r.clip_fraction)
        << "," << fmt_double(r.mean_ratio);
    if (r.has_eval) {
      for (double v : r.alignment) out << "," << fmt_double(v);
      out << "," << fmt_double(r.delta_demo) << "," << fmt_double(r.mean_length)
          << "," << fmt_double(r.repetition_rate);
    } else {
      for (std::size_t i = 0; i < reward_names.size(); ++i) out << ",";
      out << ",,,";
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("metrics write failed: " + path);
}

// Full run: alternates rollout collection and PPO updates (or SFT steps),
// takes periodic evaluation snapshots, writes metrics.csv plus final and
// best-model checkpoints under config.out_dir.
inline TrainResult train(const RunConfig& config,
                         const std::vector<DemoPair>& pairs,
                         std::shared_ptr<const FrozenMarkovModel> markov,
                         bool write_outputs = true) {
  config.validate();
  TrainState state;
  state.config = config;
  state.vocab = markov->vocab;

  PolicyShape shape{config.vocab_size, config.context_window,
                    config.embedding_dim, config.hidden_dim};
  state.params = init_params(shape, RngStream(config.seed, 0), config.init_scale);
  if (!config.init_checkpoint.empty()) {
    // Resume support: start from a saved policy instead of a random init.
    TrainState loaded = load_checkpoint(config.init_checkpoint, config);
    state.params = loaded.params;
  }
  state.ref_params = clone_frozen(state.params);
  state.adam = AdamState(shape, config.ppo.learning_rate);

  auto [train_split, val_split] =
      split_dataset(pairs, config.val_fraction, RngStream(config.data_seed, 2));

  // Supervised warm start on demonstrations: the policy before RL is the
  // demo-fit policy, which also becomes the frozen reference for the KL term.
  if (config.warmup_sft_steps > 0) {
    if (config.warmup_learning_rate > 0)
      state.adam = AdamState(shape, config.warmup_learning_rate);
    const int warm_batch = config.warmup_batch_size > 0 ? config.warmup_batch_size
                                                        : config.ppo.batch_size;
    RngStream warm_rng(config.seed, 5);
    for (int w = 0; w < config.warmup_sft_steps; ++w) {
      std::vector<DemoPair> batch;
      batch.reserve(static_cast<std::size_t>(warm_batch));
      for (int b = 0; b < warm_batch; ++b)
        batch.push_back(train_split.pairs[static_cast<std::size_t>(
            warm_rng.next_below(train_split.pairs.size()))]);
      sft_update(state, batch);
    }
    state.ref_params = clone_frozen(state.params);
    state.adam = AdamState(shape, config.ppo.learning_rate);
  }
  RewardSuite suite = build_reward_suite(config, state.vocab, markov);
  const auto train_targets = suite_demo_targets(suite, train_split);
  const auto val_targets = suite_demo_targets(suite, val_split);

  EvalContext ectx{markov, &suite, &val_split, &val_targets};

  TrainResult result;
  double best_reward = -1e300;
  double best_align = 1e300;
  PolicyParams best_params = state.params;

  const bool is_cfd = config.objective == ObjectiveKind::kCfd ||
                      config.objective == ObjectiveKind::kCfdComposite;
  const bool is_sft = config.objective == ObjectiveKind::kSft;

  auto snapshot = [&](MetricsRow& row) {
    const MetricsReport rep = evaluate_policy(
        state.params, config, ectx, RngStream(config.seed, 3).substream(
                                        static_cast<std::uint64_t>(state.step)));
    row.has_eval = true;
    row.alignment = rep.alignment_per_reward;
    row.delta_demo = rep.delta_demo_value;
    row.mean_length = rep.evaluator_policy[2];
    row.repetition_rate = rep.evaluator_policy[0];
    double align_mean = 0.0;
    for (double a : rep.alignment_per_reward) align_mean += a;
    align_mean /= static_cast<double>(rep.alignment_per_reward.size());
    // Calibration runs are scored on how well they match the demos: the
    // distributional distance plus the mean-reward gap in demo-std units.
    // Alignment alone can pick a snapshot whose mean has drifted.
    double match_score = align_mean;
    for (std::size_t i = 0; i < rep.policy_mean.size(); ++i) {
      const double sd = rep.demo_std[i] > 0 ? rep.demo_std[i] : 1.0;
      match_score += std::abs(rep.policy_mean[i] - rep.demo_mean[i]) /
                     (sd * static_cast<double>(rep.policy_mean.size()));
    }
    // Reward-seeking runs keep the snapshot with the highest mean of the
    // reward they optimize: the alpha-weighted sum for the composite
    // objective, the first (only) component otherwise.
    double sel_reward = rep.policy_mean[0];
    if (config.objective == ObjectiveKind::kComposite) {
      sel_reward = 0.0;
      for (std::size_t i = 0; i < rep.policy_mean.size(); ++i)
        sel_reward += suite.alphas[i] * rep.policy_mean[i];
    }
    if (sel_reward > best_reward) {
      best_reward = sel_reward;
      result.best_reward_step = state.step;
      if (!is_cfd) best_params = state.params;
    }
    if (match_score < best_align) {
      best_align = match_score;
      result.best_alignment_step = state.step;
      if (is_cfd) best_params = state.params;
    }
  };

  for (long step = 1; step <= config.steps; ++step) {
    state.step = step;
    MetricsRow row;
    row.step = step;
    RngStream step_rng =
        RngStream(config.seed, 1).substream(static_cast<std::uint64_t>(step));

    if (is_sft) {
      std::vector<DemoPair> batch;
      batch.reserve(static_cast<std::size_t>(config.ppo.batch_size));
      for (int b = 0; b < config.ppo.batch_size; ++b)
        batch.push_back(train_split.pairs[static_cast<std::size_t>(
            step_rng.next_below(train_split.pairs.size()))]);
      const double mean_logp = sft_update(state, batch);
      row.mean_raw.assign(suite.models.size(), 0.0);
      row.mean_shaped = mean_logp;
    } else {
      const RolloutBatch batch =
          collect_rollouts(state, train_split, suite, train_targets,
                           config.ppo.batch_size, config.t_train, step_rng);
      const PpoStats stats = ppo_update(state, batch, config.ppo.clip_epsilon,
                                        config.ppo.epochs, config.ppo.accum_steps);
      for (const auto& raws : batch.raws) {
        double m = 0.0;
        for (double v : raws) m += v;
        row.mean_raw.push_back(m / static_cast<double>(raws.size()));
      }
      double m = 0.0;
      for (double v : batch.shaped) m += v;
      row.mean_shaped = m / static_cast<double>(batch.shaped.size());
      double cf = 0.0, mr = 0.0;
      for (const auto& e : stats.epochs) {
        cf += e.clip_fraction;
        mr += e.mean_ratio;
      }
      row.clip_fraction = cf / static_cast<double>(stats.epochs.size());
      row.mean_ratio = mr / static_cast<double>(stats.epochs.size());
    }

    if (config.eval_every > 0 &&
        (step % config.eval_every == 0 || step == config.steps))
      snapshot(row);
    result.timeline.push_back(std::move(row));
  }

  if (config.steps == 0) {
    state.step = 0;
  }
  result.selected_step =
      is_cfd ? result.best_alignment_step : result.best_reward_step;

  // Report on the selected checkpoint, not on whatever step came last.
  result.final_report = evaluate_policy(
      best_params, config, ectx,
      RngStream(config.seed, 4),
      /*with_curve=*/true);

  if (write_outputs) {
    write_metrics_csv(result.timeline, suite.names,
                      config.out_dir + "/metrics.csv");
    save_checkpoint(state, config.out_dir + "/checkpoint.json");
    TrainState best_state = state;
    best_state.params = best_params;
    save_checkpoint(best_state, config.out_dir + "/checkpoint_best.json");
  }
  result.state = std::move(state);
  return result;
}

}  // namespace cfdlab

#endif  // CFDLAB_TRAINERS_HPP_
