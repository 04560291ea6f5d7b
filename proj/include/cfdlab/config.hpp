#ifndef CFDLAB_CONFIG_HPP_
#define CFDLAB_CONFIG_HPP_

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cfdlab {

enum class ObjectiveKind { kVanilla, kKlShaped, kComposite, kCfd, kCfdComposite, kSft };

enum class RewardKind { kLikelihood, kLexicon, kLength };

struct RewardSpecConfig {
  RewardKind kind = RewardKind::kLikelihood;
  double alpha = 1.0;            // composite weight; first reward is 1 by convention
  std::string lexicon_path;      // lexicon kind only; empty = seed-derived weights
};

struct PpoConfig {
  double learning_rate = 5e-5;
  int batch_size = 25;
  int accum_steps = 1;
  double clip_epsilon = 0.3;
  double beta = 0.0;
  int epochs = 4;
};

struct SamplingConfig {
  std::string kind = "stochastic";  // stochastic | temperature | nucleus | greedy
  double tau = 1.0;
  double p = 1.0;
};

struct RunConfig {
  // model
  int vocab_size = 16;
  int context_window = 4;
  int embedding_dim = 8;
  int hidden_dim = 32;
  double init_scale = 0.1;
  // generation
  int t_train = 64;
  int t_eval = 256;
  // training
  PpoConfig ppo;
  ObjectiveKind objective = ObjectiveKind::kVanilla;
  std::vector<RewardSpecConfig> rewards = {RewardSpecConfig{}};
  int steps = 200;
  int eval_every = 50;
  int warmup_sft_steps = 0;  // supervised steps on demos before RL
  double warmup_learning_rate = 0.0;  // 0 means: reuse ppo.learning_rate
  int warmup_batch_size = 0;  // 0 means: reuse ppo.batch_size
  std::string init_checkpoint;  // optional checkpoint to initialize from
  double sentinel_floor = -1e6;
  // evaluation
  SamplingConfig eval_sampling;
  int alignment_bins = 32;
  bool alignment_reversed = false;  // sensitivity switch: KL(policy||demo)
  std::string whiten_source = "batch";
  int eval_prompts = 400;
  // data / io
  std::string dataset_path;
  std::string frozen_model_path;
  std::string out_dir = ".";
  double val_fraction = 0.2;
  // seeds
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 1;

  void validate() const {
    if (vocab_size < 4) throw std::invalid_argument("config: vocab_size >= 4 required");
    if (context_window < 1 || embedding_dim < 1 || hidden_dim < 1)
      throw std::invalid_argument("config: model dims must be positive");
    if (t_train < 1 || t_eval < 1)
      throw std::invalid_argument("config: generation lengths must be positive");
    if (t_eval < t_train)
      throw std::invalid_argument("config: t_eval must be >= t_train");
    if (!(ppo.clip_epsilon > 0))
      throw std::invalid_argument("config: clip_epsilon must be > 0");
    if (ppo.beta < 0) throw std::invalid_argument("config: beta must be >= 0");
    if (ppo.batch_size < 2) throw std::invalid_argument("config: batch_size >= 2 required");
    if (ppo.accum_steps < 1 || ppo.epochs < 1)
      throw std::invalid_argument("config: accum_steps and epochs must be positive");
    if (!(init_scale > 0)) throw std::invalid_argument("config: init_scale must be > 0");
    if (rewards.empty()) throw std::invalid_argument("config: at least one reward required");
    if (!(val_fraction > 0 && val_fraction < 1))
      throw std::invalid_argument("config: val_fraction in (0,1) required");
    if (alignment_bins < 2) throw std::invalid_argument("config: alignment_bins >= 2");
    if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
    if (warmup_sft_steps < 0)
      throw std::invalid_argument("config: warmup_sft_steps must be >= 0");
    if (warmup_learning_rate < 0)
      throw std::invalid_argument("config: warmup_learning_rate must be >= 0");
    if (warmup_batch_size < 0)
      throw std::invalid_argument("config: warmup_batch_size must be >= 0");
    if (whiten_source != "batch")
      throw std::invalid_argument("config: whiten_source must be 'batch'");
  }
};

inline ObjectiveKind parse_objective(const std::string& s) {
  if (s == "vanilla") return ObjectiveKind::kVanilla;
  if (s == "kl_shaped") return ObjectiveKind::kKlShaped;
  if (s == "composite") return ObjectiveKind::kComposite;
  if (s == "cfd") return ObjectiveKind::kCfd;
  if (s == "cfd_composite") return ObjectiveKind::kCfdComposite;
  if (s == "sft") return ObjectiveKind::kSft;
  throw std::invalid_argument("config: unknown objective '" + s + "'");
}

inline std::string objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::kVanilla: return "vanilla";
    case ObjectiveKind::kKlShaped: return "kl_shaped";
    case ObjectiveKind::kComposite: return "composite";
    case ObjectiveKind::kCfd: return "cfd";
    case ObjectiveKind::kCfdComposite: return "cfd_composite";
    case ObjectiveKind::kSft: return "sft";
  }
  return "?";
}

inline RewardKind parse_reward_kind(const std::string& s) {
  if (s == "likelihood") return RewardKind::kLikelihood;
  if (s == "lexicon") return RewardKind::kLexicon;
  if (s == "length") return RewardKind::kLength;
  throw std::invalid_argument("config: unknown reward kind '" + s + "'");
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() +
                                  "' in " + where);
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"vocab_size", "context_window", "embedding_dim", "hidden_dim",
       "init_scale", "t_train", "t_eval", "ppo", "objective", "rewards",
       "steps", "eval_every", "warmup_sft_steps", "warmup_learning_rate",
       "warmup_batch_size",
       "init_checkpoint",
       "sentinel_floor", "eval_sampling",
       "alignment_bins", "alignment_reversed", "whiten_source", "eval_prompts",
       "dataset_path", "frozen_model_path", "out_dir", "val_fraction", "seed",
       "data_seed"},
      "top level");
  RunConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", c.vocab_size);
  get("context_window", c.context_window);
  get("embedding_dim", c.embedding_dim);
  get("hidden_dim", c.hidden_dim);
  get("init_scale", c.init_scale);
  get("t_train", c.t_train);
  get("t_eval", c.t_eval);
  get("steps", c.steps);
  get("eval_every", c.eval_every);
  get("warmup_sft_steps", c.warmup_sft_steps);
  get("warmup_learning_rate", c.warmup_learning_rate);
  get("warmup_batch_size", c.warmup_batch_size);
  get("init_checkpoint", c.init_checkpoint);
  get("sentinel_floor", c.sentinel_floor);
  get("alignment_bins", c.alignment_bins);
  get("alignment_reversed", c.alignment_reversed);
  get("whiten_source", c.whiten_source);
  get("eval_prompts", c.eval_prompts);
  get("dataset_path", c.dataset_path);
  get("frozen_model_path", c.frozen_model_path);
  get("out_dir", c.out_dir);
  get("val_fraction", c.val_fraction);
  get("seed", c.seed);
  get("data_seed", c.data_seed);

  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    detail::reject_unknown_keys(p,
                                {"learning_rate", "batch_size", "accum_steps",
                                 "clip_epsilon", "beta", "epochs"},
                                "ppo");
    if (p.contains("learning_rate")) c.ppo.learning_rate = p.at("learning_rate").get<double>();
    if (p.contains("batch_size")) c.ppo.batch_size = p.at("batch_size").get<int>();
    if (p.contains("accum_steps")) c.ppo.accum_steps = p.at("accum_steps").get<int>();
    if (p.contains("clip_epsilon")) c.ppo.clip_epsilon = p.at("clip_epsilon").get<double>();
    if (p.contains("beta")) c.ppo.beta = p.at("beta").get<double>();
    if (p.contains("epochs")) c.ppo.epochs = p.at("epochs").get<int>();
  }
  if (j.contains("objective"))
    c.objective = parse_objective(j.at("objective").get<std::string>());
  if (j.contains("rewards")) {
    c.rewards.clear();
    for (const auto& r : j.at("rewards")) {
      detail::reject_unknown_keys(r, {"kind", "alpha", "lexicon_path"}, "rewards[]");
      RewardSpecConfig rc;
      rc.kind = parse_reward_kind(r.at("kind").get<std::string>());
      if (r.contains("alpha")) rc.alpha = r.at("alpha").get<double>();
      if (r.contains("lexicon_path")) rc.lexicon_path = r.at("lexicon_path").get<std::string>();
      c.rewards.push_back(rc);
    }
  }
  if (j.contains("eval_sampling")) {
    const auto& s = j.at("eval_sampling");
    detail::reject_unknown_keys(s, {"kind", "tau", "p"}, "eval_sampling");
    if (s.contains("kind")) c.eval_sampling.kind = s.at("kind").get<std::string>();
    if (s.contains("tau")) c.eval_sampling.tau = s.at("tau").get<double>();
    if (s.contains("p")) c.eval_sampling.p = s.at("p").get<double>();
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("config: parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["vocab_size"] = c.vocab_size;
  j["context_window"] = c.context_window;
  j["embedding_dim"] = c.embedding_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["init_scale"] = c.init_scale;
  j["t_train"] = c.t_train;
  j["t_eval"] = c.t_eval;
  j["ppo"] = {{"learning_rate", c.ppo.learning_rate},
              {"batch_size", c.ppo.batch_size},
              {"accum_steps", c.ppo.accum_steps},
              {"clip_epsilon", c.ppo.clip_epsilon},
              {"beta", c.ppo.beta},
              {"epochs", c.ppo.epochs}};
  j["objective"] = objective_name(c.objective);
  nlohmann::json rewards = nlohmann::json::array();
  for (const auto& r : c.rewards) {
    nlohmann::json rj;
    rj["kind"] = r.kind == RewardKind::kLikelihood ? "likelihood"
                 : r.kind == RewardKind::kLexicon  ? "lexicon"
                                                   : "length";
    rj["alpha"] = r.alpha;
    if (!r.lexicon_path.empty()) rj["lexicon_path"] = r.lexicon_path;
    rewards.push_back(rj);
  }
  j["rewards"] = rewards;
  j["steps"] = c.steps;
  j["eval_every"] = c.eval_every;
  j["warmup_sft_steps"] = c.warmup_sft_steps;
  j["warmup_learning_rate"] = c.warmup_learning_rate;
  j["warmup_batch_size"] = c.warmup_batch_size;
  j["init_checkpoint"] = c.init_checkpoint;
  j["sentinel_floor"] = c.sentinel_floor;
  j["eval_sampling"] = {{"kind", c.eval_sampling.kind},
                        {"tau", c.eval_sampling.tau},
                        {"p", c.eval_sampling.p}};
  j["alignment_bins"] = c.alignment_bins;
  j["alignment_reversed"] = c.alignment_reversed;
  j["whiten_source"] = c.whiten_source;
  j["eval_prompts"] = c.eval_prompts;
  j["dataset_path"] = c.dataset_path;
  j["frozen_model_path"] = c.frozen_model_path;
  j["out_dir"] = c.out_dir;
  j["val_fraction"] = c.val_fraction;
  j["seed"] = c.seed;
  j["data_seed"] = c.data_seed;
  return j;
}

}  // namespace cfdlab

#endif  // CFDLAB_CONFIG_HPP_
