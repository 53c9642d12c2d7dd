#pragma once

// Model checkpoints: "NNCK" little-endian binary with an architecture
// descriptor (node kinds + hyperparameters, depth-first) and 32-bit weights.
// Reloading a float net reproduces its parameters bit-exactly.

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "csiloc/nn/net.hpp"

namespace csiloc::nn {

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

template <typename V>
void ck_put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V ck_get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw std::runtime_error("corrupt checkpoint");
  return v;
}

inline uint32_t ck_count(std::istream& is, uint32_t limit,
                         const char* what = "corrupt checkpoint") {
  uint32_t n = ck_get<uint32_t>(is);
  if (n > limit) throw std::runtime_error(what);
  return n;
}

template <typename T>
bool is_composite(const Layer<T>& node) {
  uint32_t k = node.kind_id();
  return k == kChainId || k == kConcatId || k == kTimeDistributedId;
}

template <typename T>
uint32_t node_count(Layer<T>& node) {
  uint32_t n = 1;
  for (Layer<T>* c : node.children()) n += node_count(*c);
  return n;
}

template <typename T>
void write_node(std::ostream& os, Layer<T>& node) {
  ck_put(os, node.kind_id());
  std::vector<double> hy = node.hypers();
  ck_put(os, static_cast<uint32_t>(hy.size()));
  for (double h : hy) ck_put(os, h);

  if (is_composite(node)) {
    ck_put(os, uint32_t{0});  // composites own no parameters
    for (Layer<T>* c : node.children()) write_node(os, *c);
    return;
  }

  std::vector<Param<T>*> params;
  node.collect_params(params);
  ck_put(os, static_cast<uint32_t>(params.size()));
  for (const Param<T>* p : params) {
    ck_put(os, static_cast<uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) ck_put(os, static_cast<int32_t>(d));
    for (const T& w : p->value.v) ck_put(os, static_cast<float>(w));
  }
}

inline int hyper_dim(const std::vector<double>& hy, size_t i) {
  if (i >= hy.size()) throw std::runtime_error("corrupt checkpoint");
  double v = hy[i];
  int d = static_cast<int>(v);
  if (d < 0 || static_cast<double>(d) != v)
    throw std::runtime_error("corrupt checkpoint");
  return d;
}

template <typename T>
LayerPtr<T> read_node(std::istream& is, uint32_t& remaining) {
  if (remaining == 0) throw std::runtime_error("corrupt checkpoint");
  --remaining;

  uint32_t kind = ck_get<uint32_t>(is);
  uint32_t n_hyper = ck_count(is, 64);
  std::vector<double> hy(n_hyper);
  for (auto& h : hy) h = ck_get<double>(is);
  uint32_t n_params = ck_count(is, 64);

  LayerPtr<T> node;
  switch (kind) {
    case kDenseId:
      node = std::make_unique<Dense<T>>(hyper_dim(hy, 0), hyper_dim(hy, 1));
      break;
    case kConv2dId:
      node = std::make_unique<Conv2d<T>>(hyper_dim(hy, 0), hyper_dim(hy, 1),
                                         hyper_dim(hy, 2), hyper_dim(hy, 3));
      break;
    case kMaxPool2x2Id:
      node = std::make_unique<MaxPool2x2<T>>();
      break;
    case kSeluId:
      node = std::make_unique<Selu<T>>();
      break;
    case kDropoutId:
      if (hy.empty() || hy[0] < 0.0 || hy[0] >= 1.0)
        throw std::runtime_error("corrupt checkpoint");
      node = std::make_unique<Dropout<T>>(hy[0]);
      break;
    case kFlattenId:
      node = std::make_unique<Flatten<T>>();
      break;
    case kLstmId:
      node = std::make_unique<Lstm<T>>(hyper_dim(hy, 0), hyper_dim(hy, 1));
      break;
    case kConcatId: {
      if (n_params != 0) throw std::runtime_error("corrupt checkpoint");
      std::vector<LayerPtr<T>> kids;
      int n = hyper_dim(hy, 0);
      kids.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) kids.push_back(read_node<T>(is, remaining));
      return std::make_unique<BranchConcat<T>>(std::move(kids));
    }
    case kTimeDistributedId: {
      if (n_params != 0) throw std::runtime_error("corrupt checkpoint");
      return std::make_unique<TimeDistributed<T>>(read_node<T>(is, remaining));
    }
    case kChainId: {
      if (n_params != 0) throw std::runtime_error("corrupt checkpoint");
      auto chain = std::make_unique<Chain<T>>();
      int n = hyper_dim(hy, 0);
      for (int i = 0; i < n; ++i) chain->add(read_node<T>(is, remaining));
      return chain;
    }
    default:
      throw std::runtime_error("corrupt checkpoint");
  }

  std::vector<Param<T>*> params;
  node->collect_params(params);
  if (params.size() != n_params) throw std::runtime_error("corrupt checkpoint");
  for (Param<T>* p : params) {
    uint32_t ndim = ck_count(is, 8);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = ck_get<int32_t>(is);
    if (shape != p->value.shape) throw std::runtime_error("corrupt checkpoint");
    for (T& w : p->value.v) w = static_cast<T>(ck_get<float>(is));
  }
  return node;
}

}  // namespace detail

template <typename T>
void save_net(std::ostream& os, const Net<T>& net) {
  os.write("NNCK", 4);
  detail::ck_put(os, uint32_t{1});
  detail::ck_put(os, static_cast<uint32_t>(net.family.size()));
  os.write(net.family.data(), static_cast<std::streamsize>(net.family.size()));
  detail::ck_put(os, static_cast<uint32_t>(net.input_shape.size()));
  for (int d : net.input_shape) detail::ck_put(os, static_cast<int32_t>(d));
  detail::ck_put(os, detail::node_count(*net.root));
  detail::write_node(os, *net.root);
  if (!os) throw std::runtime_error("checkpoint write failed");
}

template <typename T>
void save_net(const std::string& path, const Net<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  save_net(os, net);
}

template <typename T>
Net<T> load_net(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "NNCK")
    throw std::runtime_error("unrecognised checkpoint file");
  if (detail::ck_get<uint32_t>(is) != 1)
    throw std::runtime_error("unrecognised checkpoint file");

  Net<T> net;
  uint32_t name_len = detail::ck_count(is, 256);
  net.family.resize(name_len);
  is.read(net.family.data(), name_len);
  if (!is) throw std::runtime_error("corrupt checkpoint");
  uint32_t ndim = detail::ck_count(is, 8);
  net.input_shape.resize(ndim);
  for (auto& d : net.input_shape) d = detail::ck_get<int32_t>(is);

  uint32_t remaining = detail::ck_get<uint32_t>(is);
  if (remaining == 0 || remaining > 1u << 20)
    throw std::runtime_error("corrupt checkpoint");
  net.root = detail::read_node<T>(is, remaining);
  if (remaining != 0) throw std::runtime_error("corrupt checkpoint");
  return net;
}

template <typename T>
Net<T> load_net(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return load_net<T>(is);
}

template <typename T>
template <typename U>
Net<U> Net<T>::clone_structure() const {
  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  save_net(buf, *this);
  return load_net<U>(buf);
}

}  // namespace csiloc::nn
