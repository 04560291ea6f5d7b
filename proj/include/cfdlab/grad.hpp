#ifndef CFDLAB_GRAD_HPP_
#define CFDLAB_GRAD_HPP_

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfdlab/policy.hpp"

namespace cfdlab {

struct GradVector {
  PolicyShape shape;
  std::vector<double> values;

  GradVector() = default;
  explicit GradVector(const PolicyShape& s)
      : shape(s), values(static_cast<std::size_t>(s.total()), 0.0) {}

  void reset() { std::fill(values.begin(), values.end(), 0.0); }

  void axpy(double a, const GradVector& other) {
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] += a * other.values[i];
  }

  void scale(double a) {
    for (double& v : values) v *= a;
  }

  bool finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double* embedding() { return values.data(); }
  double* w1() { return values.data() + shape.n_embedding(); }
  double* b1() { return w1() + shape.n_w1(); }
  double* w2() { return b1() + shape.hidden_dim; }
  double* b2() { return w2() + shape.n_w2(); }
  const double* b2() const {
    return values.data() + shape.n_embedding() + shape.n_w1() +
           shape.hidden_dim + shape.n_w2();
  }
};

struct BackwardWorkspace {
  ForwardWorkspace fwd;
  std::vector<double> dlogits;  // V
  std::vector<double> dpre;     // h, pre-activation grad
  std::vector<double> dinput;   // k*d
};

// Adds coef * d(log softmax(logits)[target]) / d(params) into `out`.
// Exact reverse-mode pass through the embed -> tanh -> softmax stack.
inline void accumulate_logprob_grad(const PolicyParams& p,
                                    const std::vector<TokenId>& context,
                                    TokenId target, double coef,
                                    GradVector& out, BackwardWorkspace& ws) {
  const PolicyShape& s = p.shape;
  if (target < 0 || target >= s.vocab_size)
    throw std::invalid_argument("logprob_grad: target out of range");
  if (out.shape != s) throw std::invalid_argument("logprob_grad: shape mismatch");

  next_token_logits(p, context, ws.fwd);
  ws.dlogits = softmax(ws.fwd.logits);
  for (double& v : ws.dlogits) v = -v;
  ws.dlogits[static_cast<std::size_t>(target)] += 1.0;  // onehot - softmax

  double* gb2 = out.b2();
  for (int v = 0; v < s.vocab_size; ++v) gb2[v] += coef * ws.dlogits[v];

  double* gw2 = out.w2();
  const double* w2 = p.w2();
  ws.dpre.assign(static_cast<std::size_t>(s.hidden_dim), 0.0);
  for (int h = 0; h < s.hidden_dim; ++h) {
    const double a = ws.fwd.hidden[h];
    const double* row = w2 + static_cast<std::size_t>(h) * s.vocab_size;
    double* grow = gw2 + static_cast<std::size_t>(h) * s.vocab_size;
    double dh = 0.0;
    for (int v = 0; v < s.vocab_size; ++v) {
      grow[v] += coef * a * ws.dlogits[v];
      dh += row[v] * ws.dlogits[v];
    }
    ws.dpre[h] = dh * (1.0 - a * a);  // tanh'
  }

  double* gb1 = out.b1();
  for (int h = 0; h < s.hidden_dim; ++h) gb1[h] += coef * ws.dpre[h];

  double* gw1 = out.w1();
  const double* w1 = p.w1();
  ws.dinput.assign(static_cast<std::size_t>(s.input_dim()), 0.0);
  for (int i = 0; i < s.input_dim(); ++i) {
    const double x = ws.fwd.input[i];
    const double* row = w1 + static_cast<std::size_t>(i) * s.hidden_dim;
    double* grow = gw1 + static_cast<std::size_t>(i) * s.hidden_dim;
    double di = 0.0;
    for (int h = 0; h < s.hidden_dim; ++h) {
      grow[h] += coef * x * ws.dpre[h];
      di += row[h] * ws.dpre[h];
    }
    ws.dinput[i] = di;
  }

  double* gemb = out.embedding();
  for (int i = 0; i < s.context_window; ++i) {
    double* row = gemb + static_cast<std::size_t>(context[i]) * s.embedding_dim;
    for (int j = 0; j < s.embedding_dim; ++j)
      row[j] += coef * ws.dinput[i * s.embedding_dim + j];
  }
}

inline GradVector logprob_grad(const PolicyParams& p,
                               const std::vector<TokenId>& context,
                               TokenId target) {
  GradVector g(p.shape);
  BackwardWorkspace ws;
  accumulate_logprob_grad(p, context, target, 1.0, g, ws);
  return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(const PolicyShape& s, double learning_rate)
      : lr(learning_rate),
        m(static_cast<std::size_t>(s.total()), 0.0),
        v(static_cast<std::size_t>(s.total()), 0.0) {}
};

// Ascends: params move in the direction of `grad`. Standard bias-corrected
// update; rejects non-finite gradients.
inline void adam_step(AdamState& state, PolicyParams& params,
                      const GradVector& grad) {
  if (grad.values.size() != params.values.size() ||
      state.m.size() != params.values.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grad.finite())
    throw std::invalid_argument("adam_step: non-finite gradient rejected");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double g = grad.values[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.values[i] += state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  double mean_relative_error = 0.0;
  bool pass = false;
};

// Central differences (step 1e-5) against the analytic gradient over every
// coordinate of every supplied case. Near-zero coordinates fall back to an
// absolute scale so saturated-softmax cases do not inflate the ratio.
inline FiniteDiffReport finite_diff_check(
    const PolicyParams& params,
    const std::vector<std::vector<TokenId>>& contexts,
    const std::vector<TokenId>& targets, double tolerance,
    double fd_step = 1e-5) {
  if (!(tolerance > 0)) throw std::invalid_argument("finite_diff_check: tolerance > 0");
  if (contexts.size() != targets.size())
    throw std::invalid_argument("finite_diff_check: case count mismatch");

  FiniteDiffReport report;
  double err_sum = 0.0;
  std::size_t err_count = 0;
  ForwardWorkspace fws;
  PolicyParams probe = params;

  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const GradVector analytic = logprob_grad(params, contexts[c], targets[c]);
    const TokenId target = targets[c];
    for (std::size_t i = 0; i < probe.values.size(); ++i) {
      const double saved = probe.values[i];
      auto eval = [&](double x) {
        probe.values[i] = x;
        next_token_logits(probe, contexts[c], fws);
        log_softmax_inplace(fws.logits);
        return fws.logits[static_cast<std::size_t>(target)];
      };
      const double fd = (eval(saved + fd_step) - eval(saved - fd_step)) / (2.0 * fd_step);
      probe.values[i] = saved;
      const double a = analytic.values[i];
      const double scale = std::max({std::abs(a), std::abs(fd), 1e-6});
      const double rel = std::abs(a - fd) / scale;
      report.max_relative_error = std::max(report.max_relative_error, rel);
      err_sum += rel;
      ++err_count;
    }
  }
  report.mean_relative_error = err_count ? err_sum / static_cast<double>(err_count) : 0.0;
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace cfdlab

#endif  // CFDLAB_GRAD_HPP_
