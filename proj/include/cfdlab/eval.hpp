#ifndef CFDLAB_EVAL_HPP_
#define CFDLAB_EVAL_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfdlab/core.hpp"
#include "cfdlab/policy.hpp"
#include "cfdlab/rewards.hpp"

namespace cfdlab {

struct RewardHistogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> masses;  // normalized, all > 0 after smoothing
};

constexpr double kHistogramSmoothing = 1e-6;

inline RewardHistogram build_histogram(const std::vector<double>& sample,
                                       double lo, double hi, int bins,
                                       double smoothing = kHistogramSmoothing) {
  RewardHistogram h;
  h.lo = lo;
  h.hi = hi;
  h.masses.assign(static_cast<std::size_t>(bins), 0.0);
  const double width = (hi - lo) / bins;
  for (double v : sample) {
    int idx = static_cast<int>((v - lo) / width);
    idx = std::clamp(idx, 0, bins - 1);
    h.masses[static_cast<std::size_t>(idx)] += 1.0;
  }
  double total = 0.0;
  for (double& m : h.masses) {
    m = m / static_cast<double>(sample.size()) + smoothing;
    total += m;
  }
  for (double& m : h.masses) m /= total;
  return h;
}

// Reward-distribution alignment: KL divergence from the demonstration reward
// histogram to the policy reward histogram over shared uniform bins spanning
// the union range. 0 means matched distributions. `reversed` flips the
// divergence direction for sensitivity analysis.
inline double alignment(const std::vector<double>& policy_rewards,
                        const std::vector<double>& demo_rewards, int bins,
                        bool reversed = false) {
  if (policy_rewards.size() < 2 || demo_rewards.size() < 2)
    throw std::invalid_argument("alignment: both samples need size >= 2");
  if (bins < 2) throw std::invalid_argument("alignment: bins >= 2");

  double lo = policy_rewards[0], hi = policy_rewards[0];
  for (double v : policy_rewards) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : demo_rewards) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (!(hi > lo)) { lo -= 0.5; hi += 0.5; }  // all values identical

  const RewardHistogram hp = build_histogram(policy_rewards, lo, hi, bins);
  const RewardHistogram hd = build_histogram(demo_rewards, lo, hi, bins);
  const RewardHistogram& p = reversed ? hd : hp;
  const RewardHistogram& d = reversed ? hp : hd;

  double kl = 0.0;
  for (int i = 0; i < bins; ++i)
    kl += d.masses[static_cast<std::size_t>(i)] *
          std::log(d.masses[static_cast<std::size_t>(i)] /
                   p.masses[static_cast<std::size_t>(i)]);
  return kl;
}

// Sum of absolute differences between evaluator vectors.
inline double delta_demo(const std::vector<double>& policy_scores,
                         const std::vector<double>& demo_scores) {
  if (policy_scores.size() != demo_scores.size())
    throw std::invalid_argument("delta_demo: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < policy_scores.size(); ++i)
    sum += std::abs(policy_scores[i] - demo_scores[i]);
  return sum;
}

// ---------------------------------------------------------------------------
// Scalar evaluators over a sample of sequences.
// Exact formulas (documented in the README):
//   repetition_rate: per sequence (count - distinct) / count over 4-grams,
//     0 for sequences shorter than 4 tokens; averaged over sequences.
//   distinct_2: per sequence distinct / count over 2-grams, 1 for sequences
//     shorter than 2 tokens; averaged over sequences.
//   mean_length: average token count (EOS included when emitted).
//   mean_ref_loglik: average per-token log-prob under the frozen chain,
//     clamped at -100 for impossible continuations.
// ---------------------------------------------------------------------------

inline double repetition_rate_one(const std::vector<TokenId>& tokens) {
  if (tokens.size() < 4) return 0.0;
  std::map<std::array<TokenId, 4>, int> seen;
  const std::size_t count = tokens.size() - 3;
  for (std::size_t i = 0; i < count; ++i)
    ++seen[{tokens[i], tokens[i + 1], tokens[i + 2], tokens[i + 3]}];
  return static_cast<double>(count - seen.size()) / static_cast<double>(count);
}

inline double distinct2_one(const std::vector<TokenId>& tokens) {
  if (tokens.size() < 2) return 1.0;
  std::map<std::pair<TokenId, TokenId>, int> seen;
  const std::size_t count = tokens.size() - 1;
  for (std::size_t i = 0; i < count; ++i) ++seen[{tokens[i], tokens[i + 1]}];
  return static_cast<double>(seen.size()) / static_cast<double>(count);
}

inline const std::vector<std::string>& evaluator_names() {
  static const std::vector<std::string> names = {
      "repetition_rate", "distinct_2", "mean_length", "mean_ref_loglik"};
  return names;
}

inline std::vector<double> evaluators(
    const std::vector<TokenSequence>& prompts,
    const std::vector<TokenSequence>& sequences,
    const FrozenMarkovModel& ref) {
  if (sequences.empty() || prompts.size() != sequences.size())
    throw std::invalid_argument("evaluators: need a non-empty aligned sample");
  double rep = 0.0, dist2 = 0.0, len = 0.0, loglik = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    rep += repetition_rate_one(sequences[i].tokens);
    dist2 += distinct2_one(sequences[i].tokens);
    len += static_cast<double>(sequences[i].size());
    const double lp = markov_log_prob(ref, prompts[i], sequences[i]) /
                      static_cast<double>(sequences[i].size());
    loglik += std::max(lp, -100.0);
  }
  const double n = static_cast<double>(sequences.size());
  return {rep / n, dist2 / n, len / n, loglik / n};
}

// ---------------------------------------------------------------------------
// Likelihood-vs-length curve
// ---------------------------------------------------------------------------

struct LikelihoodLengthCurve {
  std::vector<int> lengths;
  std::vector<double> values;  // mean nats/token over prompts at each length
};

inline std::vector<int> default_length_grid(int t_eval) {
  std::vector<int> grid;
  for (int l = 1; l <= t_eval; l *= 2) grid.push_back(l);
  if (grid.back() != t_eval) grid.push_back(t_eval);
  return grid;
}

// Curve over already-generated continuations: value(L) = mean over prompts of
// (1/Lp) * ref-log-prob of the first Lp tokens, Lp = min(L, |y|).
inline LikelihoodLengthCurve curve_from_sequences(
    const FrozenMarkovModel& ref, const std::vector<TokenSequence>& prompts,
    const std::vector<TokenSequence>& continuations,
    const std::vector<int>& grid) {
  if (prompts.size() != continuations.size() || prompts.empty())
    throw std::invalid_argument("curve_from_sequences: aligned non-empty inputs");
  // Per-prompt cumulative log-probs: cum[i][t] = logP(first t+1 tokens).
  std::vector<std::vector<double>> cum(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto& cont = continuations[i].tokens;
    cum[i].reserve(cont.size());
    std::vector<TokenId> prefix;
    double total = 0.0;
    for (TokenId t : cont) {
      auto [p2, p1] = markov_context(prompts[i].tokens, prefix, ref.vocab.bos_id);
      const double prob = ref.row(p2, p1)[static_cast<std::size_t>(t)];
      total = (prob > 0 && !is_impossible(total)) ? total + std::log(prob)
                                                  : kImpossibleLogProb;
      cum[i].push_back(total);
      prefix.push_back(t);
    }
  }
  LikelihoodLengthCurve curve;
  curve.lengths = grid;
  for (int L : grid) {
    double sum = 0.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const std::size_t lp = std::min<std::size_t>(static_cast<std::size_t>(L),
                                                   cum[i].size());
      const double v = cum[i][lp - 1];
      sum += std::max(v / static_cast<double>(lp), -100.0);
    }
    curve.values.push_back(sum / static_cast<double>(prompts.size()));
  }
  return curve;
}

// Samples with EOS masked so every continuation reaches t_eval: a sequence
// that ends early would contribute the same value at every longer grid point,
// diluting the long-horizon signal the curve exists to measure.
inline LikelihoodLengthCurve likelihood_length_curve(
    const PolicyParams& params, const FrozenMarkovModel& ref,
    const std::vector<TokenSequence>& prompts, const SamplingStrategy& strategy,
    int t_eval, RngStream rng) {
  if (t_eval < 1) throw std::invalid_argument("likelihood_length_curve: t_eval >= 1");
  std::vector<TokenSequence> continuations;
  continuations.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    RngStream sub = rng.substream(i);
    continuations.push_back(sample_continuation(params, prompts[i], strategy,
                                                t_eval, sub, ref.vocab,
                                                /*exclude_eos=*/true));
  }
  return curve_from_sequences(ref, prompts, continuations,
                              default_length_grid(t_eval));
}

}  // namespace cfdlab

#endif  // CFDLAB_EVAL_HPP_
