#pragma once

#include <string>

#include "csiloc/nn/layers.hpp"

namespace csiloc::nn {

// A complete model: one root layer (usually a Chain) plus the per-sample
// input shape it expects. Each forward starts a fresh recording; backward
// consumes it.
template <typename T>
struct Net {
  LayerPtr<T> root;
  std::vector<int> input_shape;  // per sample, without the batch dim
  std::string family;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    std::vector<int> expect = {x.shape.empty() ? 0 : x.shape[0]};
    expect.insert(expect.end(), input_shape.begin(), input_shape.end());
    if (x.shape != expect) throw_shape_mismatch(expect, x.shape);
    root->clear_context();
    return root->forward(x, mode);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    return root->backward(grad_out);
  }

  std::vector<Param<T>*> params() const {
    std::vector<Param<T>*> out;
    root->collect_params(out);
    return out;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  void seed_dropout(uint64_t seed) {
    uint64_t counter = 0;
    root->seed_rngs(seed, counter);
  }

  template <typename U>
  Net<U> cast() const {
    Net<U> out = clone_structure<U>();
    auto src = params();
    auto dst = out.params();
    for (size_t i = 0; i < src.size(); ++i)
      for (size_t j = 0; j < src[i]->value.size(); ++j)
        dst[i]->value.v[j] = static_cast<U>(src[i]->value.v[j]);
    return out;
  }

  template <typename U>
  Net<U> clone_structure() const;  // defined in checkpoint.hpp
};

// Mean absolute error over every component of an n x 2 prediction block.
template <typename T>
double mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred.shape, target.shape);
  if (pred.size() == 0) throw std::invalid_argument("empty prediction");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    sum += std::abs(static_cast<double>(pred.v[i]) -
                    static_cast<double>(target.v[i]));
  return sum / static_cast<double>(pred.size());
}

template <typename T>
Tensor<T> mae_loss_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred.shape, target.shape);
  Tensor<T> g(pred.shape);
  T scale = static_cast<T>(1.0 / static_cast<double>(pred.size()));
  for (size_t i = 0; i < pred.size(); ++i) {
    T d = pred.v[i] - target.v[i];
    g.v[i] = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
  }
  return g;
}

}  // namespace csiloc::nn
