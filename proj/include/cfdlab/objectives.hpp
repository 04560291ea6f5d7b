#ifndef CFDLAB_OBJECTIVES_HPP_
#define CFDLAB_OBJECTIVES_HPP_

#include <stdexcept>
#include <vector>

#include "cfdlab/policy.hpp"
#include "cfdlab/rewards.hpp"

namespace cfdlab {

// R_{beta=0}: identity on the raw reward.
inline double shape_vanilla(double raw) { return raw; }

// KL-shaped reward: raw - beta * (log pi_theta(y|x) - log pi_theta0(y|x)),
// with both log-probs taken as sequence totals over the same tokens.
inline double shape_kl(double raw, double logp_theta, double logp_ref, double beta) {
  if (beta < 0) throw std::invalid_argument("shape_kl: beta must be >= 0");
  return raw - beta * (logp_theta - logp_ref);
}

// Calibration objective: -(raw - target)^2, maximal (0) exactly at the
// demonstration reward. Impossible-sequence sentinels are floored so PPO
// statistics stay finite.
inline double shape_cfd(double raw, double target, double sentinel_floor = -1e6) {
  if (is_impossible(raw)) return sentinel_floor;
  const double d = raw - target;
  return -d * d;
}

// Weighted sum of reward components; callers fix the first weight to 1.
inline double shape_composite(const std::vector<double>& raws,
                              const std::vector<double>& alphas) {
  if (raws.size() != alphas.size())
    throw std::invalid_argument("shape_composite: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < raws.size(); ++i) sum += alphas[i] * raws[i];
  return sum;
}

// Composite calibration: per reward component, calibrate every sequence
// against its demo target, whiten across the batch, then sum components.
// raws_per_reward[i][s] is component i of sequence s; targets likewise.
inline std::vector<double> shape_cfd_composite(
    const std::vector<std::vector<double>>& raws_per_reward,
    const std::vector<std::vector<double>>& targets_per_reward,
    double sentinel_floor = -1e6) {
  if (raws_per_reward.empty() || raws_per_reward.size() != targets_per_reward.size())
    throw std::invalid_argument("shape_cfd_composite: component mismatch");
  const std::size_t n = raws_per_reward[0].size();
  if (n < 2) throw std::invalid_argument("shape_cfd_composite: batch size >= 2");

  std::vector<double> shaped(n, 0.0);
  std::vector<double> calibrated(n);
  for (std::size_t i = 0; i < raws_per_reward.size(); ++i) {
    if (raws_per_reward[i].size() != n || targets_per_reward[i].size() != n)
      throw std::invalid_argument("shape_cfd_composite: ragged batch");
    for (std::size_t s = 0; s < n; ++s)
      calibrated[s] = shape_cfd(raws_per_reward[i][s], targets_per_reward[i][s],
                                sentinel_floor);
    const auto [whitened, stats] = whiten(calibrated);
    for (std::size_t s = 0; s < n; ++s) shaped[s] += whitened[s];
  }
  return shaped;
}

}  // namespace cfdlab

#endif  // CFDLAB_OBJECTIVES_HPP_
