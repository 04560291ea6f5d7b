#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "cfdlab/eval.hpp"
#include "cfdlab/rng.hpp"

using namespace cfdlab;

TEST_CASE("histogram is a smoothed proper distribution") {
  const RewardHistogram h = build_histogram({0.1, 0.2, 0.9}, 0.0, 1.0, 10);
  double mass = 0;
  for (double m : h.masses) {
    CHECK(m > 0.0);
    mass += m;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("alignment matches a closed-form two-bin divergence") {
  // Demos: half in each bin. Policy: quarter in the low bin, three quarters
  // in the high bin. KL(d||p) = 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
  //                           = 0.5 ln 2 + 0.5 ln(2/3).
  std::vector<double> demos, policy;
  for (int i = 0; i < 50; ++i) demos.push_back(0.25);
  for (int i = 0; i < 50; ++i) demos.push_back(0.75);
  for (int i = 0; i < 25; ++i) policy.push_back(0.25);
  for (int i = 0; i < 75; ++i) policy.push_back(0.75);
  // Pin the range with one demo value at each extreme already present.
  const double want = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  const double got = alignment(policy, demos, 2);
  // histogram smoothing (1e-6) perturbs the masses at the 1e-6 level
  CHECK(std::abs(got - want) <= 1e-5);
  CHECK(std::abs(got - 0.14384103622589045) <= 1e-5);
}

TEST_CASE("alignment is zero on identical samples and asymmetric otherwise") {
  RngStream r(1, 0);
  std::vector<double> sample(200);
  for (double& v : sample) v = r.next_gaussian();
  CHECK(alignment(sample, sample, 32) == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  std::vector<double> shifted(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) shifted[i] = sample[i] * 0.3 + 1.0;
  const double fwd = alignment(shifted, sample, 32, false);
  const double rev = alignment(shifted, sample, 32, true);
  CHECK(fwd > 0.0);
  CHECK(rev > 0.0);
  CHECK(fwd != doctest::Approx(rev).epsilon(1e-6));
}

TEST_CASE("alignment is non-negative on random samples") {
  RngStream r(2, 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(64), b(64);
    for (double& v : a) v = r.next_gaussian() * (1 + trial % 3);
    for (double& v : b) v = r.next_gaussian() + trial * 0.1;
    CHECK(alignment(a, b, 32) >= 0.0);
  }
}

TEST_CASE("delta demo is a sum of absolute evaluator gaps") {
  CHECK(delta_demo({1.0, 2.0, 3.0}, {1.5, 2.0, 1.0}) ==
        doctest::Approx(2.5).epsilon(1e-15));
  CHECK(delta_demo({1.0}, {1.0}) == 0.0);
  CHECK_THROWS(delta_demo({1.0}, {1.0, 2.0}));
}

TEST_CASE("repetition rate matches a brute-force 4-gram count") {
  RngStream r(3, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenId> toks(4 + static_cast<int>(r.next_below(40)));
    for (auto& t : toks) t = static_cast<TokenId>(r.next_below(4));  // force repeats
    std::map<std::vector<TokenId>, int> counts;
    for (std::size_t i = 0; i + 4 <= toks.size(); ++i)
      counts[std::vector<TokenId>(toks.begin() + static_cast<long>(i),
                                  toks.begin() + static_cast<long>(i) + 4)]++;
    const double total = static_cast<double>(toks.size() - 3);
    const double repeated = total - static_cast<double>(counts.size());
    CHECK(repetition_rate_one(toks) ==
          doctest::Approx(repeated / total).epsilon(1e-12));
  }
}

TEST_CASE("repetition rate boundary cases") {
  CHECK(repetition_rate_one({1, 2, 3}) == 0.0);                 // too short
  CHECK(repetition_rate_one({1, 2, 3, 4}) == 0.0);              // single 4-gram
  CHECK(repetition_rate_one({5, 5, 5, 5, 5, 5, 5, 5}) ==
        doctest::Approx(4.0 / 5.0).epsilon(1e-12));             // one distinct
}

TEST_CASE("distinct-2 boundary cases") {
  CHECK(distinct2_one({7}) == 1.0);
  CHECK(distinct2_one({1, 2, 3}) == 1.0);
  CHECK(distinct2_one({4, 4, 4, 4}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("evaluators aggregate per-sequence statistics") {
  Vocab v;
  v.size = 16;
  const FrozenMarkovModel m = make_markov_model(v, RngStream(4, 0));
  std::vector<TokenSequence> prompts{TokenSequence{{2, 3}}, TokenSequence{{4, 5}}};
  std::vector<TokenSequence> seqs{TokenSequence{{6, 7, 0}},
                                  TokenSequence{{8, 8, 8, 8, 8, 0}}};
  const std::vector<double> got = evaluators(prompts, seqs, m);
  REQUIRE(got.size() == 4);
  CHECK(got[0] == doctest::Approx((repetition_rate_one(seqs[0].tokens) +
                                   repetition_rate_one(seqs[1].tokens)) /
                                  2.0)
                      .epsilon(1e-12));
  CHECK(got[2] == doctest::Approx((3 + 6) / 2.0).epsilon(1e-12));
  const double l0 = markov_log_prob(m, prompts[0], seqs[0]) / 3.0;
  const double l1 = markov_log_prob(m, prompts[1], seqs[1]) / 6.0;
  CHECK(got[3] == doctest::Approx((std::max(l0, -100.0) + std::max(l1, -100.0)) / 2.0)
                      .epsilon(1e-12));
}

TEST_CASE("length grid is powers of two capped at the horizon") {
  CHECK(default_length_grid(256) ==
        std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128, 256});
  CHECK(default_length_grid(100) ==
        std::vector<int>{1, 2, 4, 8, 16, 32, 64, 100});
  CHECK(default_length_grid(1) == std::vector<int>{1});
}

TEST_CASE("curve over on-distribution samples is flat at the entropy rate") {
  // Sequences drawn from the reference chain itself have a mean per-token
  // log-prob independent of length (stationarity), so the curve at large L
  // stays near its value at small L.
  Vocab v;
  v.size = 16;
  const FrozenMarkovModel m = make_markov_model(v, RngStream(5, 0));
  RngStream r(6, 0);
  std::vector<TokenSequence> prompts, conts;
  for (int i = 0; i < 300; ++i) {
    prompts.push_back(sample_markov(m, TokenSequence{}, 6, r, true));
    // Long horizon, EOS excluded so every sequence reaches the horizon.
    conts.push_back(sample_markov(m, prompts.back(), 128, r, true));
  }
  const auto curve = curve_from_sequences(m, prompts, conts, {4, 128});
  CHECK(curve.values[1] == doctest::Approx(curve.values[0]).epsilon(0.05));
}

TEST_CASE("curve value at a grid point matches a direct recomputation") {
  Vocab v;
  v.size = 16;
  const FrozenMarkovModel m = make_markov_model(v, RngStream(7, 0));
  std::vector<TokenSequence> prompts{TokenSequence{{2, 3}}};
  std::vector<TokenSequence> conts{TokenSequence{{4, 5, 6, 7}}};
  const auto curve = curve_from_sequences(m, prompts, conts, {2, 4, 8});

  TokenSequence head{{4, 5}};
  const double at2 = markov_log_prob(m, prompts[0], head) / 2.0;
  const double at4 = markov_log_prob(m, prompts[0], conts[0]) / 4.0;
  CHECK(curve.values[0] == doctest::Approx(at2).epsilon(1e-12));
  CHECK(curve.values[1] == doctest::Approx(at4).epsilon(1e-12));
  // Grid points past the sequence length reuse the full-sequence value.
  CHECK(curve.values[2] == doctest::Approx(at4).epsilon(1e-12));
}
