#ifndef CFDLAB_REWARDS_HPP_
#define CFDLAB_REWARDS_HPP_

#include <cmath>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfdlab/config.hpp"
#include "cfdlab/core.hpp"
#include "cfdlab/policy.hpp"

namespace cfdlab {

// Frozen reward model. likelihood: mean per-token log-prob under the frozen
// chain (nats/token). lexicon: bias + mean token weight (mean pooling keeps
// it from being maximized by length alone). length: -|y|.
struct RewardModel {
  RewardKind kind = RewardKind::kLength;
  std::shared_ptr<const FrozenMarkovModel> model;  // likelihood kind
  std::vector<double> lexicon_weights;             // lexicon kind, per token id
  double lexicon_bias = 0.0;

  static RewardModel likelihood(std::shared_ptr<const FrozenMarkovModel> m) {
    RewardModel r;
    r.kind = RewardKind::kLikelihood;
    r.model = std::move(m);
    if (!r.model) throw std::invalid_argument("likelihood reward needs a model");
    return r;
  }
  static RewardModel lexicon(std::vector<double> weights, double bias = 0.0) {
    RewardModel r;
    r.kind = RewardKind::kLexicon;
    r.lexicon_weights = std::move(weights);
    r.lexicon_bias = bias;
    for (double w : r.lexicon_weights)
      if (!std::isfinite(w))
        throw std::invalid_argument("lexicon weights must be finite");
    return r;
  }
  static RewardModel length() { return RewardModel{}; }
};

inline double score(const RewardModel& rm, const TokenSequence& prompt,
                    const TokenSequence& completion) {
  if (completion.empty()) throw std::invalid_argument("score: empty completion");
  const double n = static_cast<double>(completion.size());
  switch (rm.kind) {
    case RewardKind::kLikelihood: {
      const double lp = markov_log_prob(*rm.model, prompt, completion);
      if (is_impossible(lp)) return kImpossibleLogProb;
      return lp / n;
    }
    case RewardKind::kLexicon: {
      double sum = 0.0;
      for (TokenId t : completion.tokens) {
        if (t < 0 || t >= static_cast<TokenId>(rm.lexicon_weights.size()))
          throw std::invalid_argument("score: token outside lexicon");
        sum += rm.lexicon_weights[static_cast<std::size_t>(t)];
      }
      return rm.lexicon_bias + sum / n;
    }
    case RewardKind::kLength:
      return -n;
  }
  throw std::logic_error("unreachable");
}

// Demonstration reward targets R_RM(x, y_d), computed once per dataset; the
// reward models are frozen so recomputation would be redundant.
inline std::vector<double> demo_targets(const RewardModel& rm,
                                        const Dataset& dataset) {
  if (dataset.pairs.empty()) throw std::invalid_argument("demo_targets: empty dataset");
  std::vector<double> targets;
  targets.reserve(dataset.pairs.size());
  for (const DemoPair& p : dataset.pairs)
    targets.push_back(score(rm, p.prompt, p.demo));
  return targets;
}

struct WhitenStats {
  double mean = 0.0;
  double std = 1.0;     // population standard deviation
  bool degenerate = false;
};

constexpr double kWhitenStdFloor = 1e-8;

// Batch standardization: subtract mean, divide by population std. Constant
// input yields all zeros with the degenerate flag set.
inline std::pair<std::vector<double>, WhitenStats> whiten(
    const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("whiten: need length >= 2");
  WhitenStats stats;
  double sum = 0.0;
  for (double v : values) sum += v;
  stats.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - stats.mean) * (v - stats.mean);
  const double var = ss / static_cast<double>(values.size());
  stats.std = std::sqrt(var);
  if (stats.std < kWhitenStdFloor) {
    stats.degenerate = true;
    stats.std = kWhitenStdFloor;
    return {std::vector<double>(values.size(), 0.0), stats};
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = (values[i] - stats.mean) / stats.std;
  return {out, stats};
}

// Lexicon weights file: JSON object mapping token id -> weight, optional
// "bias" entry.
inline RewardModel load_lexicon(const std::string& path, int vocab_size) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  std::vector<double> weights(static_cast<std::size_t>(vocab_size), 0.0);
  double bias = 0.0;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "bias") {
      bias = it.value().get<double>();
      continue;
    }
    const int id = std::stoi(it.key());
    if (id < 0 || id >= vocab_size)
      throw std::runtime_error("lexicon: token id out of range: " + it.key());
    weights[static_cast<std::size_t>(id)] = it.value().get<double>();
  }
  return RewardModel::lexicon(std::move(weights), bias);
}

inline void save_lexicon(const RewardModel& rm, const std::string& path) {
  nlohmann::json j;
  for (std::size_t i = 0; i < rm.lexicon_weights.size(); ++i)
    j[std::to_string(i)] = rm.lexicon_weights[i];
  j["bias"] = rm.lexicon_bias;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write lexicon: " + path);
  out << j.dump();
}

}  // namespace cfdlab

#endif  // CFDLAB_REWARDS_HPP_
