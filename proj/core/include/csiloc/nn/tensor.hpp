#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace csiloc::nn {

// Dense n-dimensional value holder; leading dimension is the batch.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (v.size() != count(shape))
      throw std::invalid_argument("tensor value count does not match shape");
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t size() const { return v.size(); }
  int dim(size_t i) const { return shape.at(i); }
  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

[[noreturn]] inline void throw_shape_mismatch(const std::vector<int>& expected,
                                              const std::vector<int>& got) {
  throw std::runtime_error("incompatible shapes: " + shape_str(expected) +
                           " vs " + shape_str(got));
}

inline void check_same_shape(const std::vector<int>& expected,
                             const std::vector<int>& got) {
  if (expected != got) throw_shape_mismatch(expected, got);
}

}  // namespace csiloc::nn
