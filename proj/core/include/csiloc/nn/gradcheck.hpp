#pragma once

// Finite-difference validation of the recorded-gradient machinery. The model
// output is reduced to a scalar through a fixed random projection, one
// backward pass computes every parameter gradient, and a seeded subset of
// coordinates is re-derived by central differences for comparison.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "csiloc/nn/net.hpp"
#include "csiloc/rng.hpp"

namespace csiloc::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t probes = 0;         // finite-difference coordinates evaluated
  size_t worst_param = 0;    // parameter tensor holding the worst coordinate
  size_t worst_index = 0;    // flat index within that tensor
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Runs in inference mode so stochastic layers stay deterministic. Intended
// for 64-bit nets; the step h and the mixed |g| floor assume double headroom.
// h = 1e-4 balances truncation against the C0 kink of the scaled-exponential
// activation: larger steps occasionally straddle the kink and corrupt the
// central-difference estimate.
template <typename T>
GradCheckResult gradient_check(Net<T>& net, const Tensor<T>& x,
                               uint64_t seed = 1, size_t min_probes = 200,
                               double h = 1e-4) {
  Tensor<T> out = net.forward(x, Mode::kInfer);
  Rng rng(derive_seed(seed, 0x6C));
  std::vector<double> proj(out.size());
  for (auto& w : proj) w = rng.uniform(-1.0, 1.0);

  Tensor<T> gy(out.shape);
  for (size_t i = 0; i < out.size(); ++i)
    gy.v[i] = static_cast<T>(proj[i]);
  net.zero_grad();
  net.backward(gy);

  auto params = net.params();
  size_t total = 0;
  for (const auto* p : params) total += p->size();

  auto projected = [&](void) -> double {
    Tensor<T> y = net.forward(x, Mode::kInfer);
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i)
      s += proj[i] * static_cast<double>(y.v[i]);
    return s;
  };

  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<T>* p = params[pi];
    size_t n = std::max<size_t>(
        1, (min_probes * p->size() + total - 1) / total);
    n = std::min(n, p->size());
    for (size_t k = 0; k < n; ++k) {
      size_t idx = static_cast<size_t>(rng.uniform_int(p->size()));
      T old = p->value.v[idx];
      p->value.v[idx] = static_cast<T>(static_cast<double>(old) + h);
      double lp = projected();
      p->value.v[idx] = static_cast<T>(static_cast<double>(old) - h);
      double lm = projected();
      p->value.v[idx] = old;

      double g_fd = (lp - lm) / (2.0 * h);
      double g_ad = static_cast<double>(p->grad.v[idx]);
      double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      double rel = std::abs(g_ad - g_fd) / denom;
      ++res.probes;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = pi;
        res.worst_index = idx;
        res.worst_analytic = g_ad;
        res.worst_numeric = g_fd;
      }
    }
  }
  return res;
}

}  // namespace csiloc::nn
