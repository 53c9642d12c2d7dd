#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "csiloc/nn/tensor.hpp"
#include "csiloc/rng.hpp"

namespace csiloc::nn {

enum class Mode { kTrain, kInfer };

constexpr double kSeluLambda = 1.0507009873554805;
constexpr double kSeluAlpha = 1.6732632423543772;

// Stable layer identifiers used by the checkpoint format.
enum : uint32_t {
  kDenseId = 1,
  kConv2dId = 2,
  kMaxPool2x2Id = 3,
  kSeluId = 4,
  kDropoutId = 5,
  kConcatId = 6,
  kFlattenId = 7,
  kLstmId = 8,
  kTimeDistributedId = 9,
  kChainId = 10,
};

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Param(std::vector<int> shape)
      : value(shape), grad(std::move(shape)) {}
  void zero_grad() { grad.fill(T(0)); }
  size_t size() const { return value.size(); }
};

template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedConstMap =
    Eigen::Map<const RowMat<T>, 0, Eigen::Stride<Eigen::Dynamic, 1>>;

// Fills a parameter tensor with uniform(-limit, limit), limit from the
// Glorot rule for the given fan-in/out.
template <typename T>
void glorot_init(Param<T>& p, long fan_in, long fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& w : p.value.v)
    w = static_cast<T>(rng.uniform(-limit, limit));
}

// Reverse-mode layer: forward records whatever backward needs on an internal
// stack, backward pops it (LIFO), so nested/repeated application stays
// consistent. Calling backward with nothing recorded throws
// "no recorded computation".
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual void collect_params(std::vector<Param<T>*>& /*out*/) {}
  virtual void clear_context() {}
  virtual uint32_t kind_id() const = 0;
  virtual std::vector<double> hypers() const { return {}; }
  virtual std::vector<Layer<T>*> children() { return {}; }
  virtual void seed_rngs(uint64_t /*base*/, uint64_t& /*counter*/) {}

 protected:
  [[noreturn]] static void no_context() {
    throw std::runtime_error("no recorded computation");
  }
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int in, int out) : in_(in), out_(out), w_({in, out}), b_({out}) {}
  Dense(int in, int out, Rng& rng) : Dense(in, out) {
    glorot_init(w_, in, out, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape.size() != 2 || x.shape[1] != in_)
      throw_shape_mismatch({x.shape.empty() ? 0 : x.shape[0], in_}, x.shape);
    long n = x.shape[0];
    Tensor<T> y({static_cast<int>(n), out_});
    ConstMatMap<T> xm(x.v.data(), n, in_), wm(w_.value.v.data(), in_, out_);
    MatMap<T> ym(y.v.data(), n, out_);
    ym.noalias() = xm * wm;
    ym.rowwise() += Eigen::Map<const RowVec<T>>(b_.value.v.data(), out_);
    ctx_.push_back(x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Tensor<T> x = std::move(ctx_.back());
    ctx_.pop_back();
    long n = x.shape[0];
    check_same_shape({static_cast<int>(n), out_}, gy.shape);

    ConstMatMap<T> xm(x.v.data(), n, in_), gym(gy.v.data(), n, out_),
        wm(w_.value.v.data(), in_, out_);
    MatMap<T> gwm(w_.grad.v.data(), in_, out_);
    gwm.noalias() += xm.transpose() * gym;
    Eigen::Map<RowVec<T>> gbm(b_.grad.v.data(), out_);
    gbm += gym.colwise().sum();

    Tensor<T> gx(x.shape);
    MatMap<T> gxm(gx.v.data(), n, in_);
    gxm.noalias() = gym * wm.transpose();
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kDenseId; }
  std::vector<double> hypers() const override {
    return {static_cast<double>(in_), static_cast<double>(out_)};
  }

 private:
  int in_, out_;
  Param<T> w_, b_;
  std::vector<Tensor<T>> ctx_;
};

// 2-D convolution over channels-last {N, H, W, C} input, stride 1, "same"
// zero padding (extra padding goes after, matching the usual convention for
// even kernels). Implemented as im2col + one matrix product.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int kh, int kw, int c_in, int c_out)
      : kh_(kh), kw_(kw), c_in_(c_in), c_out_(c_out),
        w_({kh, kw, c_in, c_out}), b_({c_out}) {}
  Conv2d(int kh, int kw, int c_in, int c_out, Rng& rng)
      : Conv2d(kh, kw, c_in, c_out) {
    glorot_init(w_, static_cast<long>(kh) * kw * c_in,
                static_cast<long>(kh) * kw * c_out, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape.size() != 4 || x.shape[3] != c_in_)
      throw_shape_mismatch(
          {x.shape.empty() ? 0 : x.shape[0],
           x.shape.size() > 1 ? x.shape[1] : 0,
           x.shape.size() > 2 ? x.shape[2] : 0, c_in_},
          x.shape);
    int n = x.shape[0], h = x.shape[1], w = x.shape[2];

    Ctx ctx;
    ctx.n = n;
    ctx.h = h;
    ctx.w = w;
    ctx.col = im2col(x);
    long rows = static_cast<long>(n) * h * w;
    long k = static_cast<long>(kh_) * kw_ * c_in_;

    Tensor<T> y({n, h, w, c_out_});
    ConstMatMap<T> colm(ctx.col.data(), rows, k),
        wm(w_.value.v.data(), k, c_out_);
    MatMap<T> ym(y.v.data(), rows, c_out_);
    ym.noalias() = colm * wm;
    ym.rowwise() += Eigen::Map<const RowVec<T>>(b_.value.v.data(), c_out_);
    ctx_.push_back(std::move(ctx));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Ctx ctx = std::move(ctx_.back());
    ctx_.pop_back();
    int n = ctx.n, h = ctx.h, w = ctx.w;
    check_same_shape({n, h, w, c_out_}, gy.shape);

    long rows = static_cast<long>(n) * h * w;
    long k = static_cast<long>(kh_) * kw_ * c_in_;
    ConstMatMap<T> colm(ctx.col.data(), rows, k),
        gym(gy.v.data(), rows, c_out_), wm(w_.value.v.data(), k, c_out_);

    MatMap<T> gwm(w_.grad.v.data(), k, c_out_);
    gwm.noalias() += colm.transpose() * gym;
    Eigen::Map<RowVec<T>> gbm(b_.grad.v.data(), c_out_);
    gbm += gym.colwise().sum();

    RowMat<T> gcol(rows, k);
    gcol.noalias() = gym * wm.transpose();
    return col2im(gcol, n, h, w);
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kConv2dId; }
  std::vector<double> hypers() const override {
    return {static_cast<double>(kh_), static_cast<double>(kw_),
            static_cast<double>(c_in_), static_cast<double>(c_out_)};
  }

 private:
  struct Ctx {
    int n = 0, h = 0, w = 0;
    std::vector<T> col;  // (n*h*w) x (kh*kw*c_in)
  };

  std::vector<T> im2col(const Tensor<T>& x) const {
    int n = x.shape[0], h = x.shape[1], w = x.shape[2];
    int pad_top = (kh_ - 1) / 2, pad_left = (kw_ - 1) / 2;
    size_t k = static_cast<size_t>(kh_) * kw_ * c_in_;
    std::vector<T> col(static_cast<size_t>(n) * h * w * k, T(0));
    size_t x_row = static_cast<size_t>(w) * c_in_;
    for (int b = 0; b < n; ++b) {
      const T* xb = x.v.data() + static_cast<size_t>(b) * h * x_row;
      T* cb = col.data() + static_cast<size_t>(b) * h * w * k;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          T* dst = cb + (static_cast<size_t>(i) * w + j) * k;
          for (int di = 0; di < kh_; ++di) {
            int si = i + di - pad_top;
            if (si < 0 || si >= h) continue;
            int j0 = std::max(0, pad_left - j);
            int j1 = std::min(kw_, w + pad_left - j);
            if (j0 >= j1) continue;
            const T* src =
                xb + static_cast<size_t>(si) * x_row +
                static_cast<size_t>(j + j0 - pad_left) * c_in_;
            std::copy(src, src + static_cast<size_t>(j1 - j0) * c_in_,
                      dst + (static_cast<size_t>(di) * kw_ + j0) * c_in_);
          }
        }
      }
    }
    return col;
  }

  Tensor<T> col2im(const RowMat<T>& gcol, int n, int h, int w) const {
    int pad_top = (kh_ - 1) / 2, pad_left = (kw_ - 1) / 2;
    size_t k = static_cast<size_t>(kh_) * kw_ * c_in_;
    Tensor<T> gx({n, h, w, c_in_});
    size_t x_row = static_cast<size_t>(w) * c_in_;
    for (int b = 0; b < n; ++b) {
      T* xb = gx.v.data() + static_cast<size_t>(b) * h * x_row;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const T* src_row =
              gcol.data() +
              ((static_cast<size_t>(b) * h + i) * w + j) * k;
          for (int di = 0; di < kh_; ++di) {
            int si = i + di - pad_top;
            if (si < 0 || si >= h) continue;
            int j0 = std::max(0, pad_left - j);
            int j1 = std::min(kw_, w + pad_left - j);
            if (j0 >= j1) continue;
            T* dst = xb + static_cast<size_t>(si) * x_row +
                     static_cast<size_t>(j + j0 - pad_left) * c_in_;
            const T* src =
                src_row + (static_cast<size_t>(di) * kw_ + j0) * c_in_;
            for (size_t c = 0; c < static_cast<size_t>(j1 - j0) * c_in_; ++c)
              dst[c] += src[c];
          }
        }
      }
    }
    return gx;
  }

  int kh_, kw_, c_in_, c_out_;
  Param<T> w_, b_;
  std::vector<Ctx> ctx_;
};

// 2x2 max pooling, stride 2, floor output dims; odd trailing rows/columns
// are dropped. Gradient routes to each window's argmax.
template <typename T>
class MaxPool2x2 : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape.size() != 4) throw_shape_mismatch({0, 0, 0, 0}, x.shape);
    int n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    int ho = h / 2, wo = w / 2;
    Tensor<T> y({n, ho, wo, c});
    Ctx ctx;
    ctx.in_shape = x.shape;
    ctx.argmax.resize(y.size());
    size_t row = static_cast<size_t>(w) * c;
    size_t out_idx = 0;
    for (int b = 0; b < n; ++b) {
      const T* xb = x.v.data() + static_cast<size_t>(b) * h * row;
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          size_t base = static_cast<size_t>(2 * i) * row +
                        static_cast<size_t>(2 * j) * c;
          for (int ch = 0; ch < c; ++ch) {
            size_t cand[4] = {base + static_cast<size_t>(ch),
                              base + static_cast<size_t>(ch) + c,
                              base + static_cast<size_t>(ch) + row,
                              base + static_cast<size_t>(ch) + row + c};
            size_t best = cand[0];
            for (int q = 1; q < 4; ++q)
              if (xb[cand[q]] > xb[best]) best = cand[q];
            y.v[out_idx] = xb[best];
            ctx.argmax[out_idx] =
                static_cast<size_t>(b) * h * row + best;
            ++out_idx;
          }
        }
      }
    }
    ctx_.push_back(std::move(ctx));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Ctx ctx = std::move(ctx_.back());
    ctx_.pop_back();
    if (gy.size() != ctx.argmax.size())
      throw_shape_mismatch(ctx.in_shape, gy.shape);
    Tensor<T> gx(ctx.in_shape);
    for (size_t i = 0; i < gy.size(); ++i) gx.v[ctx.argmax[i]] += gy.v[i];
    return gx;
  }

  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kMaxPool2x2Id; }

 private:
  struct Ctx {
    std::vector<int> in_shape;
    std::vector<size_t> argmax;
  };
  std::vector<Ctx> ctx_;
};

template <typename T>
class Selu : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y = x;
    const T lambda = static_cast<T>(kSeluLambda);
    const T lambda_alpha = static_cast<T>(kSeluLambda * kSeluAlpha);
    for (auto& v : y.v)
      v = v > T(0) ? lambda * v
                   : lambda_alpha * (std::exp(v) - T(1));
    ctx_.push_back(x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Tensor<T> x = std::move(ctx_.back());
    ctx_.pop_back();
    check_same_shape(x.shape, gy.shape);
    Tensor<T> gx(x.shape);
    const T lambda = static_cast<T>(kSeluLambda);
    const T lambda_alpha = static_cast<T>(kSeluLambda * kSeluAlpha);
    for (size_t i = 0; i < x.size(); ++i)
      gx.v[i] = gy.v[i] * (x.v[i] > T(0)
                               ? lambda
                               : lambda_alpha * std::exp(x.v[i]));
    return gx;
  }

  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kSeluId; }

 private:
  std::vector<Tensor<T>> ctx_;
};

// Inverted dropout: training keeps an element with probability 1-p and
// scales it by 1/(1-p); inference is an exact pass-through and draws nothing
// from the generator.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double p) : p_(p), rng_(0) {
    if (p < 0.0 || p >= 1.0)
      throw std::invalid_argument("drop rate must be in [0, 1)");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (mode == Mode::kInfer) {
      ctx_.push_back({});  // identity marker
      return x;
    }
    Tensor<T> y = x;
    std::vector<T> mask(x.size());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
    for (size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng_.uniform() < p_ ? T(0) : keep_scale;
      y.v[i] *= mask[i];
    }
    ctx_.push_back(std::move(mask));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    std::vector<T> mask = std::move(ctx_.back());
    ctx_.pop_back();
    if (mask.empty()) return gy;  // inference pass-through
    Tensor<T> gx = gy;
    for (size_t i = 0; i < gx.size(); ++i) gx.v[i] *= mask[i];
    return gx;
  }

  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kDropoutId; }
  std::vector<double> hypers() const override { return {p_}; }
  void seed_rngs(uint64_t base, uint64_t& counter) override {
    rng_ = Rng(derive_seed(base, counter++));
  }

 private:
  double p_;
  Rng rng_;
  std::vector<std::vector<T>> ctx_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape.empty()) throw_shape_mismatch({0, 0}, x.shape);
    ctx_.push_back(x.shape);
    int n = x.shape[0];
    int rest = static_cast<int>(
        x.size() / std::max<size_t>(1, static_cast<size_t>(x.shape[0])));
    Tensor<T> y;
    y.shape = {n, rest};
    y.v = x.v;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    std::vector<int> in_shape = std::move(ctx_.back());
    ctx_.pop_back();
    if (gy.size() != Tensor<T>::count(in_shape))
      throw_shape_mismatch(in_shape, gy.shape);
    Tensor<T> gx;
    gx.shape = std::move(in_shape);
    gx.v = gy.v;
    return gx;
  }

  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kFlattenId; }

 private:
  std::vector<std::vector<int>> ctx_;
};

// Feeds the same input to every child and concatenates their outputs along
// the last (channel) axis; the backward pass splits the gradient by the
// recorded channel ranges and sums the children's input gradients.
template <typename T>
class BranchConcat : public Layer<T> {
 public:
  explicit BranchConcat(std::vector<LayerPtr<T>> children)
      : children_(std::move(children)) {
    if (children_.empty())
      throw std::invalid_argument("concat needs at least one branch");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    std::vector<Tensor<T>> ys;
    ys.reserve(children_.size());
    for (auto& c : children_) ys.push_back(c->forward(x, mode));

    std::vector<int> head(ys[0].shape.begin(), ys[0].shape.end() - 1);
    std::vector<int> widths;
    int total = 0;
    for (const auto& y : ys) {
      std::vector<int> h(y.shape.begin(), y.shape.end() - 1);
      if (h != head) throw_shape_mismatch(ys[0].shape, y.shape);
      widths.push_back(y.shape.back());
      total += y.shape.back();
    }

    std::vector<int> out_shape = head;
    out_shape.push_back(total);
    Tensor<T> y(out_shape);
    size_t cells = Tensor<T>::count(head);
    size_t offset = 0;
    for (size_t b = 0; b < ys.size(); ++b) {
      size_t wb = static_cast<size_t>(widths[b]);
      for (size_t cell = 0; cell < cells; ++cell)
        std::copy(ys[b].v.data() + cell * wb, ys[b].v.data() + (cell + 1) * wb,
                  y.v.data() + cell * static_cast<size_t>(total) + offset);
      offset += wb;
    }
    ctx_.push_back({std::move(widths), std::move(head)});
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Ctx ctx = std::move(ctx_.back());
    ctx_.pop_back();
    int total = 0;
    for (int w : ctx.widths) total += w;
    std::vector<int> expect = ctx.head;
    expect.push_back(total);
    check_same_shape(expect, gy.shape);

    size_t cells = Tensor<T>::count(ctx.head);
    Tensor<T> gx;
    size_t offset = 0;
    // Children backward in reverse so each pops its own recorded context.
    std::vector<size_t> offsets(ctx.widths.size());
    for (size_t b = 0; b < ctx.widths.size(); ++b) {
      offsets[b] = offset;
      offset += static_cast<size_t>(ctx.widths[b]);
    }
    for (size_t bi = children_.size(); bi-- > 0;) {
      std::vector<int> slice_shape = ctx.head;
      slice_shape.push_back(ctx.widths[bi]);
      Tensor<T> slice(slice_shape);
      size_t wb = static_cast<size_t>(ctx.widths[bi]);
      for (size_t cell = 0; cell < cells; ++cell)
        std::copy(
            gy.v.data() + cell * static_cast<size_t>(total) + offsets[bi],
            gy.v.data() + cell * static_cast<size_t>(total) + offsets[bi] + wb,
            slice.v.data() + cell * wb);
      Tensor<T> gxi = children_[bi]->backward(slice);
      if (gx.v.empty()) {
        gx = std::move(gxi);
      } else {
        check_same_shape(gx.shape, gxi.shape);
        for (size_t i = 0; i < gx.size(); ++i) gx.v[i] += gxi.v[i];
      }
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& c : children_) c->collect_params(out);
  }
  void clear_context() override {
    ctx_.clear();
    for (auto& c : children_) c->clear_context();
  }
  uint32_t kind_id() const override { return kConcatId; }
  std::vector<double> hypers() const override {
    return {static_cast<double>(children_.size())};
  }
  std::vector<Layer<T>*> children() override {
    std::vector<Layer<T>*> out;
    for (auto& c : children_) out.push_back(c.get());
    return out;
  }
  void seed_rngs(uint64_t base, uint64_t& counter) override {
    for (auto& c : children_) c->seed_rngs(base, counter);
  }

 private:
  struct Ctx {
    std::vector<int> widths;
    std::vector<int> head;
  };
  std::vector<LayerPtr<T>> children_;
  std::vector<Ctx> ctx_;
};

// Applies the wrapped layer to every timestep of a {N, T, ...} input by
// folding time into the batch axis, so the child's weights are shared across
// steps and trained jointly.
template <typename T>
class TimeDistributed : public Layer<T> {
 public:
  explicit TimeDistributed(LayerPtr<T> inner) : inner_(std::move(inner)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (x.shape.size() < 3) throw_shape_mismatch({0, 0, 0}, x.shape);
    int n = x.shape[0], t = x.shape[1];
    std::vector<int> folded = {n * t};
    folded.insert(folded.end(), x.shape.begin() + 2, x.shape.end());
    Tensor<T> xf;
    xf.shape = std::move(folded);
    xf.v = x.v;
    Tensor<T> yf = inner_->forward(xf, mode);

    std::vector<int> out_shape = {n, t};
    out_shape.insert(out_shape.end(), yf.shape.begin() + 1, yf.shape.end());
    Tensor<T> y;
    y.shape = std::move(out_shape);
    y.v = std::move(yf.v);
    ctx_.push_back({n, t});
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    auto [n, t] = ctx_.back();
    ctx_.pop_back();
    if (gy.shape.size() < 3 || gy.shape[0] != n || gy.shape[1] != t)
      throw_shape_mismatch({n, t}, gy.shape);
    std::vector<int> folded = {n * t};
    folded.insert(folded.end(), gy.shape.begin() + 2, gy.shape.end());
    Tensor<T> gyf;
    gyf.shape = std::move(folded);
    gyf.v = gy.v;
    Tensor<T> gxf = inner_->backward(gyf);

    std::vector<int> out_shape = {n, t};
    out_shape.insert(out_shape.end(), gxf.shape.begin() + 1, gxf.shape.end());
    Tensor<T> gx;
    gx.shape = std::move(out_shape);
    gx.v = std::move(gxf.v);
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    inner_->collect_params(out);
  }
  void clear_context() override {
    ctx_.clear();
    inner_->clear_context();
  }
  uint32_t kind_id() const override { return kTimeDistributedId; }
  std::vector<Layer<T>*> children() override { return {inner_.get()}; }
  void seed_rngs(uint64_t base, uint64_t& counter) override {
    inner_->seed_rngs(base, counter);
  }

 private:
  LayerPtr<T> inner_;
  std::vector<std::pair<int, int>> ctx_;
};

// One LSTM cell update. Gate order inside the fused weight matrices is
// [input, forget, cell, output]; i/f/o use the logistic function, the cell
// candidate uses tanh.
template <typename T, typename XM, typename WM, typename UM>
void lstm_cell_step(const XM& x, const RowMat<T>& h_prev,
                    const RowMat<T>& c_prev, const WM& w, const UM& u,
                    const RowVec<T>& b, int hidden, RowMat<T>& gate_i,
                    RowMat<T>& gate_f, RowMat<T>& gate_g, RowMat<T>& gate_o,
                    RowMat<T>& c, RowMat<T>& h) {
  RowMat<T> z = x * w;
  z.noalias() += h_prev * u;
  z.rowwise() += b;
  auto logistic = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
  gate_i = z.leftCols(hidden).unaryExpr(logistic);
  gate_f = z.middleCols(hidden, hidden).unaryExpr(logistic);
  gate_g = z.middleCols(2 * hidden, hidden).array().tanh().matrix();
  gate_o = z.rightCols(hidden).unaryExpr(logistic);
  c = gate_f.cwiseProduct(c_prev) + gate_i.cwiseProduct(gate_g);
  h = gate_o.cwiseProduct(c.array().tanh().matrix());
}

// Convenience form for direct use: returns (h_t, c_t).
template <typename T>
std::pair<RowMat<T>, RowMat<T>> lstm_step(const RowMat<T>& x,
                                          const RowMat<T>& h_prev,
                                          const RowMat<T>& c_prev,
                                          const RowMat<T>& w,
                                          const RowMat<T>& u,
                                          const RowVec<T>& b) {
  int hidden = static_cast<int>(h_prev.cols());
  RowMat<T> i, f, g, o, c, h;
  lstm_cell_step<T>(x, h_prev, c_prev, w, u, b, hidden, i, f, g, o, c, h);
  return {h, c};
}

// Sequence layer over {N, T, F} input returning the final hidden state
// {N, hidden}; gradients flow back through time across all steps.
template <typename T>
class Lstm : public Layer<T> {
 public:
  Lstm(int input, int hidden)
      : input_(input), hidden_(hidden), w_({input, 4 * hidden}),
        u_({hidden, 4 * hidden}), b_({4 * hidden}) {}
  Lstm(int input, int hidden, Rng& rng) : Lstm(input, hidden) {
    glorot_init(w_, input, 4 * hidden, rng);
    glorot_init(u_, hidden, 4 * hidden, rng);
    // Forget-gate bias 1 keeps early memory open.
    for (int i = hidden; i < 2 * hidden; ++i) b_.value.v[static_cast<size_t>(i)] = T(1);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.shape.size() != 3 || x.shape[2] != input_)
      throw_shape_mismatch({x.shape.empty() ? 0 : x.shape[0],
                            x.shape.size() > 1 ? x.shape[1] : 0, input_},
                           x.shape);
    int n = x.shape[0], t_len = x.shape[1];

    Ctx ctx;
    ctx.x = x;
    ctx.steps.resize(static_cast<size_t>(t_len));
    RowMat<T> h = RowMat<T>::Zero(n, hidden_);
    RowMat<T> c = RowMat<T>::Zero(n, hidden_);
    ConstMatMap<T> wm(w_.value.v.data(), input_, 4 * hidden_),
        um(u_.value.v.data(), hidden_, 4 * hidden_);
    RowVec<T> bv = Eigen::Map<const RowVec<T>>(b_.value.v.data(), 4 * hidden_);

    for (int t = 0; t < t_len; ++t) {
      Step& s = ctx.steps[static_cast<size_t>(t)];
      s.h_prev = h;
      s.c_prev = c;
      StridedConstMap<T> xt(x.v.data() + static_cast<size_t>(t) * input_, n,
                            input_,
                            Eigen::Stride<Eigen::Dynamic, 1>(
                                static_cast<long>(t_len) * input_, 1));
      lstm_cell_step<T>(xt, s.h_prev, s.c_prev, wm, um, bv, hidden_, s.i, s.f,
                        s.g, s.o, s.c, h);
      c = s.c;
      s.tanh_c = s.c.array().tanh().matrix();
    }

    Tensor<T> y({n, hidden_});
    MatMap<T>(y.v.data(), n, hidden_) = h;
    ctx_.push_back(std::move(ctx));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (ctx_.empty()) this->no_context();
    Ctx ctx = std::move(ctx_.back());
    ctx_.pop_back();
    int n = ctx.x.shape[0], t_len = ctx.x.shape[1];
    check_same_shape({n, hidden_}, gy.shape);

    ConstMatMap<T> wm(w_.value.v.data(), input_, 4 * hidden_),
        um(u_.value.v.data(), hidden_, 4 * hidden_);
    MatMap<T> gwm(w_.grad.v.data(), input_, 4 * hidden_),
        gum(u_.grad.v.data(), hidden_, 4 * hidden_);
    Eigen::Map<RowVec<T>> gbm(b_.grad.v.data(), 4 * hidden_);

    Tensor<T> gx(ctx.x.shape);
    RowMat<T> gh = ConstMatMap<T>(gy.v.data(), n, hidden_);
    RowMat<T> gc = RowMat<T>::Zero(n, hidden_);
    RowMat<T> gz(n, 4 * hidden_);

    for (int t = t_len - 1; t >= 0; --t) {
      Step& s = ctx.steps[static_cast<size_t>(t)];
      RowMat<T> go = gh.cwiseProduct(s.tanh_c);
      gc.noalias() +=
          gh.cwiseProduct(s.o)
              .cwiseProduct((T(1) - s.tanh_c.array().square()).matrix());
      RowMat<T> gi = gc.cwiseProduct(s.g);
      RowMat<T> gg = gc.cwiseProduct(s.i);
      RowMat<T> gf = gc.cwiseProduct(s.c_prev);

      gz.leftCols(hidden_) =
          gi.cwiseProduct(s.i).cwiseProduct((T(1) - s.i.array()).matrix());
      gz.middleCols(hidden_, hidden_) =
          gf.cwiseProduct(s.f).cwiseProduct((T(1) - s.f.array()).matrix());
      gz.middleCols(2 * hidden_, hidden_) =
          gg.cwiseProduct((T(1) - s.g.array().square()).matrix());
      gz.rightCols(hidden_) =
          go.cwiseProduct(s.o).cwiseProduct((T(1) - s.o.array()).matrix());

      StridedConstMap<T> xt(ctx.x.v.data() + static_cast<size_t>(t) * input_,
                            n, input_,
                            Eigen::Stride<Eigen::Dynamic, 1>(
                                static_cast<long>(t_len) * input_, 1));
      gwm.noalias() += xt.transpose() * gz;
      gum.noalias() += s.h_prev.transpose() * gz;
      gbm += gz.colwise().sum();

      RowMat<T> gxt = gz * wm.transpose();
      for (int row = 0; row < n; ++row)
        std::copy(gxt.data() + static_cast<size_t>(row) * input_,
                  gxt.data() + static_cast<size_t>(row + 1) * input_,
                  gx.v.data() +
                      (static_cast<size_t>(row) * t_len + t) * input_);
      gh.noalias() = gz * um.transpose();
      gc = gc.cwiseProduct(s.f);
    }
    return gx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&u_);
    out.push_back(&b_);
  }
  void clear_context() override { ctx_.clear(); }
  uint32_t kind_id() const override { return kLstmId; }
  std::vector<double> hypers() const override {
    return {static_cast<double>(input_), static_cast<double>(hidden_)};
  }

 private:
  struct Step {
    RowMat<T> h_prev, c_prev, i, f, g, o, c, tanh_c;
  };
  struct Ctx {
    Tensor<T> x;
    std::vector<Step> steps;
  };

  int input_, hidden_;
  Param<T> w_, u_, b_;
  std::vector<Ctx> ctx_;
};

template <typename T>
class Chain : public Layer<T> {
 public:
  Chain() = default;
  explicit Chain(std::vector<LayerPtr<T>> layers)
      : layers_(std::move(layers)) {}

  void add(LayerPtr<T> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y = x;
    for (auto& l : layers_) y = l->forward(y, mode);
    forwards_++;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    if (forwards_ == 0) this->no_context();
    forwards_--;
    Tensor<T> g = gy;
    for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
    return g;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void clear_context() override {
    forwards_ = 0;
    for (auto& l : layers_) l->clear_context();
  }
  uint32_t kind_id() const override { return kChainId; }
  std::vector<double> hypers() const override {
    return {static_cast<double>(layers_.size())};
  }
  std::vector<Layer<T>*> children() override {
    std::vector<Layer<T>*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
  }
  void seed_rngs(uint64_t base, uint64_t& counter) override {
    for (auto& l : layers_) l->seed_rngs(base, counter);
  }

 private:
  std::vector<LayerPtr<T>> layers_;
  int forwards_ = 0;
};

}  // namespace csiloc::nn
