#ifndef CFDLAB_CORE_HPP_
#define CFDLAB_CORE_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfdlab/rng.hpp"

namespace cfdlab {

using TokenId = int;

struct Vocab {
  int size = 16;
  TokenId eos_id = 0;
  TokenId bos_id = 1;

  void validate() const {
    if (size < 4) throw std::invalid_argument("vocab size must be >= 4");
    if (eos_id == bos_id || eos_id >= size || bos_id >= size)
      throw std::invalid_argument("eos/bos ids invalid for vocab size");
  }
};

// Variable-length sequence of token ids. EOS, when present, is the final
// element; sequences hitting the length cap without EOS are still complete.
struct TokenSequence {
  std::vector<TokenId> tokens;

  TokenSequence() = default;
  explicit TokenSequence(std::vector<TokenId> t) : tokens(std::move(t)) {}

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  bool ends_with_eos(const Vocab& v) const {
    return !tokens.empty() && tokens.back() == v.eos_id;
  }

  void validate(const Vocab& v, std::size_t hard_cap) const {
    if (tokens.size() > hard_cap)
      throw std::invalid_argument("sequence exceeds hard length cap");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const TokenId t = tokens[i];
      if (t < 0 || t >= v.size)
        throw std::invalid_argument("token id out of range");
      if (t == v.eos_id && i + 1 != tokens.size())
        throw std::invalid_argument("eos must be the final token");
    }
  }
};

struct DemoPair {
  TokenSequence prompt;  // never contains EOS
  TokenSequence demo;    // non-empty

  void validate(const Vocab& v, std::size_t hard_cap) const {
    prompt.validate(v, hard_cap);
    demo.validate(v, hard_cap);
    if (demo.empty()) throw std::invalid_argument("demo must be non-empty");
    for (TokenId t : prompt.tokens)
      if (t == v.eos_id)
        throw std::invalid_argument("prompt must not contain eos");
  }
};

enum class Split { kTrain, kValidation };

struct Dataset {
  std::vector<DemoPair> pairs;
  Split split = Split::kTrain;
};

// Deterministic shuffle-based partition. Sizes are within +-1 of the
// requested fraction; the same rng state always yields the same split.
inline std::pair<Dataset, Dataset> split_dataset(
    const std::vector<DemoPair>& pairs, double val_fraction, RngStream rng) {
  if (pairs.empty()) throw std::invalid_argument("split_dataset: empty input");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("split_dataset: fraction must be in (0,1)");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(order[i - 1], order[j]);
  }

  std::size_t n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(pairs.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, pairs.size() - 1);

  Dataset train{{}, Split::kTrain};
  Dataset val{{}, Split::kValidation};
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val : train).pairs.push_back(pairs[order[i]]);
  return {std::move(train), std::move(val)};
}

// Dataset file format: one JSON object per line, fields "prompt" and "demo"
// as integer arrays.
inline void save_pairs_jsonl(const std::vector<DemoPair>& pairs,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  for (const DemoPair& p : pairs) {
    nlohmann::json j;
    j["prompt"] = p.prompt.tokens;
    j["demo"] = p.demo.tokens;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<DemoPair> load_pairs_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<DemoPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("dataset parse error at line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    DemoPair p;
    p.prompt.tokens = j.at("prompt").get<std::vector<TokenId>>();
    p.demo.tokens = j.at("demo").get<std::vector<TokenId>>();
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw std::runtime_error("dataset is empty: " + path);
  return pairs;
}

}  // namespace cfdlab

#endif  // CFDLAB_CORE_HPP_
