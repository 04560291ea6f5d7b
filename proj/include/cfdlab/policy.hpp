#ifndef CFDLAB_POLICY_HPP_
#define CFDLAB_POLICY_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfdlab/core.hpp"
#include "cfdlab/rng.hpp"

namespace cfdlab {

// Sequences whose continuation has probability zero under a frozen model get
// this sentinel instead of -inf so downstream arithmetic stays NaN-free.
constexpr double kImpossibleLogProb = -1e18;

inline bool is_impossible(double logp) { return logp <= kImpossibleLogProb; }

struct PolicyShape {
  int vocab_size = 16;
  int context_window = 4;   // k
  int embedding_dim = 8;    // d
  int hidden_dim = 32;      // h

  int input_dim() const { return context_window * embedding_dim; }
  int n_embedding() const { return vocab_size * embedding_dim; }
  int n_w1() const { return input_dim() * hidden_dim; }
  int n_w2() const { return hidden_dim * vocab_size; }
  int total() const {
    return n_embedding() + n_w1() + hidden_dim + n_w2() + vocab_size;
  }
  bool operator==(const PolicyShape&) const = default;
};

// Flat parameter vector of the fixed-window softmax policy. Layout:
// [embedding V*d | W1 (k*d)*h | b1 h | W2 h*V | b2 V], row-major.
struct PolicyParams {
  PolicyShape shape;
  std::vector<double> values;

  PolicyParams() = default;
  explicit PolicyParams(const PolicyShape& s)
      : shape(s), values(static_cast<std::size_t>(s.total()), 0.0) {}

  double* embedding() { return values.data(); }
  const double* embedding() const { return values.data(); }
  double* w1() { return values.data() + shape.n_embedding(); }
  const double* w1() const { return values.data() + shape.n_embedding(); }
  double* b1() { return w1() + shape.n_w1(); }
  const double* b1() const { return w1() + shape.n_w1(); }
  double* w2() { return b1() + shape.hidden_dim; }
  const double* w2() const { return b1() + shape.hidden_dim; }
  double* b2() { return w2() + shape.n_w2(); }
  const double* b2() const { return w2() + shape.n_w2(); }
};

inline PolicyParams init_params(const PolicyShape& shape, RngStream rng,
                                double scale) {
  if (!(scale > 0)) throw std::invalid_argument("init_params: scale must be > 0");
  PolicyParams p(shape);
  for (double& v : p.values) v = scale * rng.next_gaussian();
  return p;
}

// Immutable deep copy for use as the KL reference pi_theta0.
inline PolicyParams clone_frozen(const PolicyParams& p) { return p; }

// Last-k window over prompt + generated prefix, left-padded with BOS.
inline std::vector<TokenId> context_window(const std::vector<TokenId>& prompt,
                                           const std::vector<TokenId>& prefix,
                                           int k, TokenId bos_id) {
  std::vector<TokenId> ctx(static_cast<std::size_t>(k), bos_id);
  int pos = k;
  for (auto it = prefix.rbegin(); it != prefix.rend() && pos > 0; ++it)
    ctx[--pos] = *it;
  for (auto it = prompt.rbegin(); it != prompt.rend() && pos > 0; ++it)
    ctx[--pos] = *it;
  return ctx;
}

// Forward pass scratch; reused across tokens to avoid reallocation.
struct ForwardWorkspace {
  std::vector<double> input;    // k*d
  std::vector<double> hidden;   // h, post-tanh
  std::vector<double> logits;   // V
};

inline void next_token_logits(const PolicyParams& p,
                              const std::vector<TokenId>& context,
                              ForwardWorkspace& ws) {
  const PolicyShape& s = p.shape;
  if (static_cast<int>(context.size()) != s.context_window)
    throw std::invalid_argument("context must have exactly k tokens");
  for (TokenId t : context)
    if (t < 0 || t >= s.vocab_size)
      throw std::invalid_argument("context token id out of range");

  ws.input.resize(static_cast<std::size_t>(s.input_dim()));
  ws.hidden.assign(static_cast<std::size_t>(s.hidden_dim), 0.0);
  ws.logits.assign(static_cast<std::size_t>(s.vocab_size), 0.0);

  const double* emb = p.embedding();
  for (int i = 0; i < s.context_window; ++i) {
    const double* row = emb + static_cast<std::size_t>(context[i]) * s.embedding_dim;
    std::copy(row, row + s.embedding_dim, ws.input.begin() + i * s.embedding_dim);
  }
  const double* w1 = p.w1();
  const double* b1 = p.b1();
  for (int i = 0; i < s.input_dim(); ++i) {
    const double x = ws.input[i];
    const double* row = w1 + static_cast<std::size_t>(i) * s.hidden_dim;
    for (int hh = 0; hh < s.hidden_dim; ++hh) ws.hidden[hh] += x * row[hh];
  }
  for (int hh = 0; hh < s.hidden_dim; ++hh)
    ws.hidden[hh] = std::tanh(ws.hidden[hh] + b1[hh]);

  const double* w2 = p.w2();
  const double* b2 = p.b2();
  std::copy(b2, b2 + s.vocab_size, ws.logits.begin());
  for (int hh = 0; hh < s.hidden_dim; ++hh) {
    const double a = ws.hidden[hh];
    const double* row = w2 + static_cast<std::size_t>(hh) * s.vocab_size;
    for (int v = 0; v < s.vocab_size; ++v) ws.logits[v] += a * row[v];
  }
}

inline std::vector<double> next_token_logits(const PolicyParams& p,
                                             const std::vector<TokenId>& context) {
  ForwardWorkspace ws;
  next_token_logits(p, context, ws);
  return ws.logits;
}

inline void log_softmax_inplace(std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : logits) v -= lse;
}

inline std::vector<double> softmax(std::vector<double> logits) {
  log_softmax_inplace(logits);
  for (double& v : logits) v = std::exp(v);
  return logits;
}

// Sum of per-token log softmax values at the realized continuation tokens,
// including the EOS emission when present. Always <= 0.
inline double sequence_log_prob(const PolicyParams& p,
                                const TokenSequence& prompt,
                                const TokenSequence& continuation,
                                TokenId bos_id = 1) {
  if (continuation.empty())
    throw std::invalid_argument("sequence_log_prob: empty continuation");
  ForwardWorkspace ws;
  std::vector<TokenId> prefix;
  prefix.reserve(continuation.size());
  double total = 0.0;
  for (TokenId target : continuation.tokens) {
    const auto ctx = context_window(prompt.tokens, prefix, p.shape.context_window, bos_id);
    next_token_logits(p, ctx, ws);
    log_softmax_inplace(ws.logits);
    if (target < 0 || target >= p.shape.vocab_size)
      throw std::invalid_argument("sequence_log_prob: token id out of range");
    total += ws.logits[static_cast<std::size_t>(target)];
    prefix.push_back(target);
  }
  return total;
}

enum class SamplingKind { kStochastic, kTemperature, kNucleus, kGreedy };

struct SamplingStrategy {
  SamplingKind kind = SamplingKind::kStochastic;
  double tau = 1.0;  // temperature kind; tau=0 is greedy
  double p = 1.0;    // nucleus kind

  static SamplingStrategy stochastic() { return {}; }
  static SamplingStrategy temperature(double tau) {
    if (tau < 0) throw std::invalid_argument("temperature must be >= 0");
    return {SamplingKind::kTemperature, tau, 1.0};
  }
  static SamplingStrategy nucleus(double p) {
    if (!(p > 0 && p <= 1)) throw std::invalid_argument("nucleus p must be in (0,1]");
    return {SamplingKind::kNucleus, 1.0, p};
  }
  static SamplingStrategy greedy() { return {SamplingKind::kGreedy, 0.0, 1.0}; }
};

inline SamplingStrategy parse_sampling(const std::string& kind, double tau, double p) {
  if (kind == "stochastic") return SamplingStrategy::stochastic();
  if (kind == "temperature") return SamplingStrategy::temperature(tau);
  if (kind == "nucleus") return SamplingStrategy::nucleus(p);
  if (kind == "greedy") return SamplingStrategy::greedy();
  throw std::invalid_argument("unknown sampling kind '" + kind + "'");
}

namespace detail {

inline int argmax_index(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline int sample_index(const std::vector<double>& probs, RngStream& rng) {
  const double u = rng.next_double();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;  // guards fp roundoff at u ~ 1
}

// Smallest prefix of the probability-sorted distribution whose mass reaches
// p, renormalized; everything outside the prefix gets zero.
inline std::vector<double> nucleus_filter(const std::vector<double>& probs, double p) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  for (int idx : order) {
    out[idx] = probs[idx];
    mass += probs[idx];
    if (mass >= p) break;
  }
  for (double& v : out) v /= mass;
  return out;
}

inline int draw_next_token(const std::vector<double>& logits,
                           const SamplingStrategy& strategy, RngStream& rng) {
  switch (strategy.kind) {
    case SamplingKind::kGreedy:
      return argmax_index(logits);
    case SamplingKind::kStochastic:
      return sample_index(softmax(logits), rng);
    case SamplingKind::kTemperature: {
      if (strategy.tau == 0.0) return argmax_index(logits);
      std::vector<double> scaled = logits;
      for (double& v : scaled) v /= strategy.tau;
      return sample_index(softmax(scaled), rng);
    }
    case SamplingKind::kNucleus:
      return sample_index(nucleus_filter(softmax(logits), strategy.p), rng);
  }
  throw std::logic_error("unreachable");
}

}  // namespace detail

// Autoregressive generation: stops at the first EOS or at max_len. A
// sequence cut at max_len carries no EOS and is treated as complete. With
// exclude_eos the EOS logit is masked before drawing, so every continuation
// reaches max_len; used where fixed-length samples are required.
inline TokenSequence sample_continuation(const PolicyParams& params,
                                         const TokenSequence& prompt,
                                         const SamplingStrategy& strategy,
                                         int max_len, RngStream& rng,
                                         const Vocab& vocab,
                                         bool exclude_eos = false) {
  if (max_len < 1) throw std::invalid_argument("sample_continuation: max_len >= 1");
  ForwardWorkspace ws;
  TokenSequence out;
  out.tokens.reserve(static_cast<std::size_t>(max_len));
  while (static_cast<int>(out.tokens.size()) < max_len) {
    const auto ctx = context_window(prompt.tokens, out.tokens,
                                    params.shape.context_window, vocab.bos_id);
    next_token_logits(params, ctx, ws);
    if (exclude_eos)
      ws.logits[static_cast<std::size_t>(vocab.eos_id)] =
          -std::numeric_limits<double>::infinity();
    const TokenId t = detail::draw_next_token(ws.logits, strategy, rng);
    out.tokens.push_back(t);
    if (t == vocab.eos_id) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frozen order-2 Markov chain standing in for the pretrained reference model.
// ---------------------------------------------------------------------------

struct FrozenMarkovModel {
  Vocab vocab;
  // rows indexed by prev2 * V + prev1; each row is a distribution over V.
  std::vector<std::vector<double>> rows;

  const std::vector<double>& row(TokenId prev2, TokenId prev1) const {
    return rows[static_cast<std::size_t>(prev2) * vocab.size + prev1];
  }

  void validate() const {
    vocab.validate();
    if (static_cast<int>(rows.size()) != vocab.size * vocab.size)
      throw std::invalid_argument("markov: wrong number of rows");
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != vocab.size)
        throw std::invalid_argument("markov: wrong row width");
      double sum = 0.0;
      for (double v : r) {
        if (v < 0) throw std::invalid_argument("markov: negative probability");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("markov: row does not sum to 1");
      if (r[static_cast<std::size_t>(vocab.eos_id)] < 0.02)
        throw std::invalid_argument("markov: eos probability below floor");
    }
  }
};

// Dirichlet(concentration) rows with a guaranteed EOS floor: rows are scaled
// by (1 - floor) and the floor is added to the EOS entry.
inline FrozenMarkovModel make_markov_model(const Vocab& vocab, RngStream rng,
                                           double concentration = 0.3,
                                           double eos_floor = 0.02) {
  FrozenMarkovModel m;
  m.vocab = vocab;
  m.rows.resize(static_cast<std::size_t>(vocab.size) * vocab.size);
  // EOS carries exactly the floor mass; the Dirichlet draw covers the rest,
  // so sequence lengths are governed by eos_floor alone.
  for (auto& row : m.rows) {
    row.resize(static_cast<std::size_t>(vocab.size));
    double sum = 0.0;
    for (std::size_t t = 0; t < row.size(); ++t) {
      if (static_cast<TokenId>(t) == vocab.eos_id) {
        row[t] = 0.0;
        continue;
      }
      row[t] = rng.next_gamma(concentration);
      sum += row[t];
    }
    for (double& v : row) v = (1.0 - eos_floor) * v / sum;
    row[static_cast<std::size_t>(vocab.eos_id)] = eos_floor;
  }
  m.validate();
  return m;
}

inline std::pair<TokenId, TokenId> markov_context(
    const std::vector<TokenId>& prompt, const std::vector<TokenId>& prefix,
    TokenId bos_id) {
  std::vector<TokenId> tail;
  const auto take = [&](const std::vector<TokenId>& v) {
    for (auto it = v.rbegin(); it != v.rend() && tail.size() < 2; ++it)
      tail.push_back(*it);
  };
  take(prefix);
  take(prompt);
  while (tail.size() < 2) tail.push_back(bos_id);
  return {tail[1], tail[0]};  // (prev2, prev1)
}

inline double markov_log_prob(const FrozenMarkovModel& model,
                              const TokenSequence& prompt,
                              const TokenSequence& continuation) {
  if (continuation.empty())
    throw std::invalid_argument("markov_log_prob: empty continuation");
  std::vector<TokenId> prefix;
  double total = 0.0;
  for (TokenId t : continuation.tokens) {
    auto [p2, p1] = markov_context(prompt.tokens, prefix, model.vocab.bos_id);
    const double prob = model.row(p2, p1)[static_cast<std::size_t>(t)];
    if (prob <= 0.0) return kImpossibleLogProb;
    total += std::log(prob);
    prefix.push_back(t);
  }
  return total;
}

// Sampling from the frozen chain; exclude_eos restricts to non-EOS tokens
// (used when drawing prompts, which must not contain EOS).
inline TokenSequence sample_markov(const FrozenMarkovModel& model,
                                   const TokenSequence& prompt, int max_len,
                                   RngStream& rng, bool exclude_eos = false) {
  if (max_len < 1) throw std::invalid_argument("sample_markov: max_len >= 1");
  TokenSequence out;
  std::vector<double> probs;
  while (static_cast<int>(out.tokens.size()) < max_len) {
    auto [p2, p1] = markov_context(prompt.tokens, out.tokens, model.vocab.bos_id);
    probs = model.row(p2, p1);
    if (exclude_eos) {
      probs[static_cast<std::size_t>(model.vocab.eos_id)] = 0.0;
      double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
      for (double& v : probs) v /= sum;
    }
    const TokenId t = detail::sample_index(probs, rng);
    out.tokens.push_back(t);
    if (t == model.vocab.eos_id) break;
  }
  return out;
}

inline void save_markov_model(const FrozenMarkovModel& m, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["vocab_size"] = m.vocab.size;
  j["eos_id"] = m.vocab.eos_id;
  j["bos_id"] = m.vocab.bos_id;
  j["rows"] = m.rows;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write markov model: " + path);
  out << j.dump();
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline FrozenMarkovModel load_markov_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open markov model: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  FrozenMarkovModel m;
  m.vocab.size = j.at("vocab_size").get<int>();
  m.vocab.eos_id = j.at("eos_id").get<TokenId>();
  m.vocab.bos_id = j.at("bos_id").get<TokenId>();
  m.rows = j.at("rows").get<std::vector<std::vector<double>>>();
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Parameter checkpoints: versioned JSON, deterministic layout for a config.
// ---------------------------------------------------------------------------

inline nlohmann::json params_to_json(const PolicyParams& p) {
  nlohmann::json j;
  j["vocab_size"] = p.shape.vocab_size;
  j["context_window"] = p.shape.context_window;
  j["embedding_dim"] = p.shape.embedding_dim;
  j["hidden_dim"] = p.shape.hidden_dim;
  j["values"] = p.values;
  return j;
}

inline PolicyParams params_from_json(const nlohmann::json& j) {
  PolicyShape s;
  s.vocab_size = j.at("vocab_size").get<int>();
  s.context_window = j.at("context_window").get<int>();
  s.embedding_dim = j.at("embedding_dim").get<int>();
  s.hidden_dim = j.at("hidden_dim").get<int>();
  PolicyParams p(s);
  p.values = j.at("values").get<std::vector<double>>();
  if (static_cast<int>(p.values.size()) != s.total())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  return p;
}

}  // namespace cfdlab

#endif  // CFDLAB_POLICY_HPP_
