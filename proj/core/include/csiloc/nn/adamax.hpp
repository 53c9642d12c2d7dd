#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "csiloc/nn/layers.hpp"

namespace csiloc::nn {

// Adamax (the infinity-norm Adam variant):
//   m <- b1*m + (1-b1)*g
//   u <- max(b2*u, |g|)
//   theta <- theta - (lr / (1 - b1^t)) * m / u
// The division uses u directly so a fresh state takes a first step of
// exactly lr regardless of gradient scale; eps only stands in for u when the
// whole gradient history is zero (where m = 0 anyway).
template <typename T>
class Adamax {
 public:
  explicit Adamax(double lr = 0.002, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>*>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      u_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->size(), T(0));
        u_[i].assign(params[i]->size(), T(0));
      }
    }
    ++t_;
    double bias = 1.0 - std::pow(beta1_, t_);
    double scale = lr_ / bias;
    for (size_t i = 0; i < params.size(); ++i) {
      Param<T>& p = *params[i];
      for (size_t j = 0; j < p.size(); ++j) {
        double g = static_cast<double>(p.grad.v[j]);
        double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * g;
        double u = std::max(beta2_ * static_cast<double>(u_[i][j]),
                            std::abs(g));
        m_[i][j] = static_cast<T>(m);
        u_[i][j] = static_cast<T>(u);
        double denom = u > 0.0 ? u : eps_;
        p.value.v[j] -= static_cast<T>(scale * m / denom);
      }
    }
  }

  void reset() {
    t_ = 0;
    m_.clear();
    u_.clear();
  }

  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<T>> m_, u_;
};

}  // namespace csiloc::nn
