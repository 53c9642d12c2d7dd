#include "csiloc/models.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "csiloc/nn/adamax.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

using nn::BranchConcat;
using nn::Chain;
using nn::Conv2d;
using nn::Dense;
using nn::Dropout;
using nn::Flatten;
using nn::LayerPtr;
using nn::Lstm;
using nn::MaxPool2x2;
using nn::Mode;
using nn::Net;
using nn::Selu;
using nn::Tensor;
using nn::TimeDistributed;

Family family_from_string(const std::string& name) {
  if (name == "snn") return Family::kSnn;
  if (name == "cnn") return Family::kCnn;
  if (name == "deeper-cnn") return Family::kDeeperCnn;
  if (name == "lstm") return Family::kLstm;
  throw std::invalid_argument("unknown model family: " + name);
}

std::string family_name(Family family) {
  switch (family) {
    case Family::kSnn: return "snn";
    case Family::kCnn: return "cnn";
    case Family::kDeeperCnn: return "deeper-cnn";
    case Family::kLstm: return "lstm";
  }
  throw std::logic_error("unreachable");
}

namespace {

constexpr int kChannels = 6;  // 3 amplitude + 3 phase antennas
constexpr double kDropRate = 0.2;

template <typename T>
LayerPtr<T> conv_branches(int c_in, int filters, Rng& rng) {
  std::vector<LayerPtr<T>> branches;
  branches.push_back(std::make_unique<Conv2d<T>>(1, 5, c_in, filters, rng));
  branches.push_back(std::make_unique<Conv2d<T>>(5, 1, c_in, filters, rng));
  branches.push_back(std::make_unique<Conv2d<T>>(7, 7, c_in, filters, rng));
  return std::make_unique<BranchConcat<T>>(std::move(branches));
}

// 1x1 / 1x3 / 3x1 / 3x3 filter bank used by the deeper variant.
template <typename T>
LayerPtr<T> small_filter_bank(int c_in, int filters_each, Rng& rng) {
  std::vector<LayerPtr<T>> branches;
  branches.push_back(std::make_unique<Conv2d<T>>(1, 1, c_in, filters_each, rng));
  branches.push_back(std::make_unique<Conv2d<T>>(1, 3, c_in, filters_each, rng));
  branches.push_back(std::make_unique<Conv2d<T>>(3, 1, c_in, filters_each, rng));
  branches.push_back(std::make_unique<Conv2d<T>>(3, 3, c_in, filters_each, rng));
  return std::make_unique<BranchConcat<T>>(std::move(branches));
}

template <typename T>
void add_fc_head(Chain<T>& chain, int in, const std::vector<int>& hidden,
                 Rng& rng) {
  int cur = in;
  for (int width : hidden) {
    chain.add(std::make_unique<Dense<T>>(cur, width, rng));
    chain.add(std::make_unique<Selu<T>>());
    chain.add(std::make_unique<Dropout<T>>(kDropRate));
    cur = width;
  }
  chain.add(std::make_unique<Dense<T>>(cur, 2, rng));
}

}  // namespace

template <typename T>
Net<T> build_snn(int n_aps, uint64_t seed) {
  if (n_aps < 1) throw std::invalid_argument("need at least one access point");
  Rng rng(derive_seed(seed, 0x51));
  int in = 12 * n_aps;
  auto chain = std::make_unique<Chain<T>>();
  chain->add(std::make_unique<Dense<T>>(in, 50, rng));
  chain->add(std::make_unique<Selu<T>>());
  chain->add(std::make_unique<Dense<T>>(50, 2, rng));

  Net<T> net;
  net.root = std::move(chain);
  net.input_shape = {in};
  net.family = "snn";
  return net;
}

template <typename T>
Net<T> build_cnn(int n_aps, uint64_t seed, int cols, int window) {
  if (n_aps < 1 || cols < 1 || window < 1)
    throw std::invalid_argument("invalid input dimensions");
  Rng rng(derive_seed(seed, 0xC2));
  int rows = window * n_aps;
  auto chain = std::make_unique<Chain<T>>();
  chain->add(conv_branches<T>(kChannels, 75, rng));
  chain->add(std::make_unique<Selu<T>>());
  chain->add(std::make_unique<MaxPool2x2<T>>());
  chain->add(std::make_unique<Conv2d<T>>(3, 3, 225, 64, rng));
  chain->add(std::make_unique<Selu<T>>());
  chain->add(std::make_unique<Flatten<T>>());
  int flat = (rows / 2) * (cols / 2) * 64;
  add_fc_head(*chain, flat, {512, 64}, rng);

  Net<T> net;
  net.root = std::move(chain);
  net.input_shape = {rows, cols, kChannels};
  net.family = "cnn";
  return net;
}

template <typename T>
Net<T> build_deeper_cnn(int n_aps, uint64_t seed, int cols, int window) {
  if (n_aps < 1 || cols < 1 || window < 1)
    throw std::invalid_argument("invalid input dimensions");
  Rng rng(derive_seed(seed, 0xDC));
  int rows = window * n_aps;
  auto chain = std::make_unique<Chain<T>>();
  chain->add(conv_branches<T>(kChannels, 75, rng));
  chain->add(std::make_unique<Selu<T>>());
  chain->add(small_filter_bank<T>(225, 16, rng));  // -> 64 channels
  chain->add(std::make_unique<Selu<T>>());
  chain->add(std::make_unique<MaxPool2x2<T>>());
  chain->add(std::make_unique<Conv2d<T>>(3, 3, 64, 64, rng));
  chain->add(std::make_unique<Selu<T>>());
  chain->add(small_filter_bank<T>(64, 45, rng));  // -> 180 channels
  chain->add(std::make_unique<Selu<T>>());
  chain->add(std::make_unique<Flatten<T>>());
  int flat = (rows / 2) * (cols / 2) * 180;
  add_fc_head(*chain, flat, {512, 100, 80, 60, 40}, rng);

  Net<T> net;
  net.root = std::move(chain);
  net.input_shape = {rows, cols, kChannels};
  net.family = "deeper-cnn";
  return net;
}

template <typename T>
Net<T> build_lstm_model(int n_aps, uint64_t seed, int hidden, int cols,
                        int window) {
  if (n_aps < 1 || cols < 1 || window < 1 || hidden < 1)
    throw std::invalid_argument("invalid input dimensions");
  Rng rng(derive_seed(seed, 0x15));
  auto step = std::make_unique<Chain<T>>();
  step->add(conv_branches<T>(kChannels, 75, rng));
  step->add(std::make_unique<Selu<T>>());
  step->add(std::make_unique<Conv2d<T>>(3, 3, 225, 64, rng));
  step->add(std::make_unique<Selu<T>>());
  step->add(std::make_unique<Flatten<T>>());
  int step_out = n_aps * cols * 64;

  auto chain = std::make_unique<Chain<T>>();
  chain->add(std::make_unique<TimeDistributed<T>>(std::move(step)));
  chain->add(std::make_unique<Lstm<T>>(step_out, hidden, rng));
  add_fc_head(*chain, hidden, {512, 64}, rng);

  Net<T> net;
  net.root = std::move(chain);
  net.input_shape = {window, n_aps, cols, kChannels};
  net.family = "lstm";
  return net;
}

template <typename T>
Net<T> build_family(Family family, int n_aps, uint64_t seed) {
  switch (family) {
    case Family::kSnn: return build_snn<T>(n_aps, seed);
    case Family::kCnn: return build_cnn<T>(n_aps, seed);
    case Family::kDeeperCnn: return build_deeper_cnn<T>(n_aps, seed);
    case Family::kLstm: return build_lstm_model<T>(n_aps, seed);
  }
  throw std::logic_error("unreachable");
}

template Net<float> build_snn<float>(int, uint64_t);
template Net<double> build_snn<double>(int, uint64_t);
template Net<float> build_cnn<float>(int, uint64_t, int, int);
template Net<double> build_cnn<double>(int, uint64_t, int, int);
template Net<float> build_deeper_cnn<float>(int, uint64_t, int, int);
template Net<double> build_deeper_cnn<double>(int, uint64_t, int, int);
template Net<float> build_lstm_model<float>(int, uint64_t, int, int, int);
template Net<double> build_lstm_model<double>(int, uint64_t, int, int, int);
template Net<float> build_family<float>(Family, int, uint64_t);
template Net<double> build_family<double>(Family, int, uint64_t);

Dataset dataset_from_features(const std::vector<FeatureVector>& features) {
  Dataset ds;
  if (features.empty()) return ds;
  int dim = static_cast<int>(features[0].values.size());
  ds.x = Tensor<float>({static_cast<int>(features.size()), dim});
  ds.targets.reserve(features.size());
  ds.timestamps.reserve(features.size());
  size_t k = 0;
  for (const auto& f : features) {
    if (static_cast<int>(f.values.size()) != dim)
      throw std::runtime_error("inconsistent CSI dimensions");
    for (double v : f.values) ds.x.v[k++] = static_cast<float>(v);
    ds.targets.push_back({static_cast<float>(f.x), static_cast<float>(f.y)});
    ds.timestamps.push_back(f.timestamp);
  }
  return ds;
}

Dataset dataset_from_cnn(const std::vector<CnnSample>& samples) {
  Dataset ds;
  if (samples.empty()) return ds;
  const CnnSample& first = samples[0];
  ds.x = Tensor<float>({static_cast<int>(samples.size()), first.rows,
                        first.cols, first.channels});
  size_t per = first.values.size();
  size_t k = 0;
  for (const auto& s : samples) {
    if (s.values.size() != per || s.rows != first.rows ||
        s.cols != first.cols || s.channels != first.channels)
      throw std::runtime_error("inconsistent CSI dimensions");
    std::copy(s.values.begin(), s.values.end(), ds.x.v.begin() + k);
    k += per;
    ds.targets.push_back({s.x, s.y});
    ds.timestamps.push_back(s.timestamp);
  }
  return ds;
}

Dataset dataset_from_lstm(const std::vector<LstmSample>& samples) {
  Dataset ds;
  if (samples.empty()) return ds;
  const LstmSample& first = samples[0];
  ds.x = Tensor<float>({static_cast<int>(samples.size()), first.steps,
                        first.rows, first.cols, first.channels});
  size_t per = first.values.size();
  size_t k = 0;
  for (const auto& s : samples) {
    if (s.values.size() != per || s.steps != first.steps ||
        s.rows != first.rows || s.cols != first.cols ||
        s.channels != first.channels)
      throw std::runtime_error("inconsistent CSI dimensions");
    std::copy(s.values.begin(), s.values.end(), ds.x.v.begin() + k);
    k += per;
    ds.targets.push_back({s.x, s.y});
    ds.timestamps.push_back(s.timestamp);
  }
  return ds;
}

Dataset concat_datasets(const std::vector<Dataset>& parts) {
  Dataset out;
  size_t total = 0;
  const Dataset* first = nullptr;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    if (!first) first = &p;
    else if (p.sample_shape() != first->sample_shape())
      throw std::runtime_error("inconsistent CSI dimensions");
    total += p.size();
  }
  if (!first) return out;

  std::vector<int> shape = first->x.shape;
  shape[0] = static_cast<int>(total);
  out.x = Tensor<float>(shape);
  out.targets.reserve(total);
  out.timestamps.reserve(total);
  size_t k = 0;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    std::copy(p.x.v.begin(), p.x.v.end(), out.x.v.begin() + k);
    k += p.x.v.size();
    out.targets.insert(out.targets.end(), p.targets.begin(), p.targets.end());
    out.timestamps.insert(out.timestamps.end(), p.timestamps.begin(),
                          p.timestamps.end());
  }
  return out;
}

Dataset subset_dataset(const Dataset& ds, const std::vector<size_t>& indices) {
  Dataset out;
  if (indices.empty()) return out;
  std::vector<int> shape = ds.x.shape;
  shape[0] = static_cast<int>(indices.size());
  out.x = Tensor<float>(shape);
  size_t per = ds.sample_values();
  out.targets.reserve(indices.size());
  out.timestamps.reserve(indices.size());
  size_t k = 0;
  for (size_t idx : indices) {
    std::copy(ds.x.v.begin() + static_cast<long>(idx * per),
              ds.x.v.begin() + static_cast<long>((idx + 1) * per),
              out.x.v.begin() + static_cast<long>(k));
    k += per;
    out.targets.push_back(ds.targets[idx]);
    out.timestamps.push_back(ds.timestamps[idx]);
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            double val_fraction,
                                            uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("validation fraction must be in [0, 1)");
  std::vector<size_t> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x7A));
  rng.shuffle(idx);
  size_t n_val = static_cast<size_t>(
      std::llround(val_fraction * static_cast<double>(ds.size())));
  std::vector<size_t> val_idx(idx.begin(), idx.begin() + static_cast<long>(n_val));
  std::vector<size_t> train_idx(idx.begin() + static_cast<long>(n_val), idx.end());
  return {subset_dataset(ds, train_idx), subset_dataset(ds, val_idx)};
}

namespace {

void gather_batch(const Dataset& ds, const std::vector<size_t>& order,
                  size_t begin, size_t end, Tensor<float>& x,
                  Tensor<float>& y) {
  size_t b = end - begin;
  size_t per = ds.sample_values();
  std::vector<int> shape = ds.x.shape;
  shape[0] = static_cast<int>(b);
  x = Tensor<float>(shape);
  y = Tensor<float>({static_cast<int>(b), 2});
  for (size_t i = 0; i < b; ++i) {
    size_t src = order[begin + i];
    std::copy(ds.x.v.begin() + static_cast<long>(src * per),
              ds.x.v.begin() + static_cast<long>((src + 1) * per),
              x.v.begin() + static_cast<long>(i * per));
    y.v[2 * i] = ds.targets[src][0];
    y.v[2 * i + 1] = ds.targets[src][1];
  }
}

double dataset_loss(nn::Net<float>& net, const Dataset& ds, int batch) {
  if (ds.size() == 0) return 0.0;
  std::vector<size_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  double sum = 0.0;
  size_t comps = 0;
  Tensor<float> x, y;
  for (size_t begin = 0; begin < ds.size();
       begin += static_cast<size_t>(batch)) {
    size_t end = std::min(ds.size(), begin + static_cast<size_t>(batch));
    gather_batch(ds, order, begin, end, x, y);
    Tensor<float> pred = net.forward(x, Mode::kInfer);
    sum += nn::mae_loss(pred, y) * static_cast<double>(pred.size());
    comps += pred.size();
  }
  return sum / static_cast<double>(comps);
}

}  // namespace

TrainHistory train(nn::Net<float>& net, const Dataset& train_set,
                   const Dataset& val_set, const TrainConfig& cfg) {
  if (train_set.size() == 0)
    throw std::invalid_argument("empty training set");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.learning_rate <= 0.0)
    throw std::invalid_argument("invalid training configuration");
  if (train_set.sample_shape() != net.input_shape)
    nn::throw_shape_mismatch(net.input_shape, train_set.sample_shape());

  net.seed_dropout(derive_seed(cfg.seed, 0xD0));
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5F));
  nn::Adamax<float> opt(cfg.learning_rate);
  auto params = net.params();

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_params;

  Tensor<float> x, y;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double sum = 0.0;
    size_t comps = 0;
    int batch_index = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size), ++batch_index) {
      size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      gather_batch(train_set, order, begin, end, x, y);
      Tensor<float> pred = net.forward(x, Mode::kTrain);
      double loss = nn::mae_loss(pred, y);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged (epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_index) + ")");
      net.zero_grad();
      net.backward(nn::mae_loss_grad(pred, y));
      opt.step(params);
      sum += loss * static_cast<double>(pred.size());
      comps += pred.size();
    }
    double train_loss = sum / static_cast<double>(comps);
    double val_loss =
        val_set.size() > 0 ? dataset_loss(net, val_set, 64) : train_loss;

    history.train_loss.push_back(train_loss);
    history.val_loss.push_back(val_loss);
    history.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count());

    if (val_loss < best_val) {
      best_val = val_loss;
      history.best_epoch = epoch;
      best_params.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i)
        best_params[i] = params[i]->value.v;
    }
  }

  if (!best_params.empty())
    for (size_t i = 0; i < params.size(); ++i)
      params[i]->value.v = best_params[i];
  history.best_val = best_val;
  return history;
}

std::vector<std::array<float, 2>> predict(nn::Net<float>& net,
                                          const Dataset& ds, int batch) {
  std::vector<std::array<float, 2>> out;
  out.reserve(ds.size());
  std::vector<size_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Tensor<float> x, y;
  for (size_t begin = 0; begin < ds.size();
       begin += static_cast<size_t>(batch)) {
    size_t end = std::min(ds.size(), begin + static_cast<size_t>(batch));
    gather_batch(ds, order, begin, end, x, y);
    Tensor<float> pred = net.forward(x, Mode::kInfer);
    for (size_t i = 0; i + 1 < pred.size(); i += 2)
      out.push_back({pred.v[i], pred.v[i + 1]});
  }
  return out;
}

std::vector<std::array<float, 2>> moving_average(
    const std::vector<std::array<float, 2>>& raw, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  long n = static_cast<long>(raw.size());
  std::vector<std::array<float, 2>> out(raw.size());
  for (long i = 0; i < n; ++i) {
    long lo = std::max<long>(0, i - (window - 1) / 2);
    long hi = std::min(n - 1, i + window / 2);
    double sx = 0.0, sy = 0.0;
    for (long j = lo; j <= hi; ++j) {
      sx += raw[static_cast<size_t>(j)][0];
      sy += raw[static_cast<size_t>(j)][1];
    }
    double cnt = static_cast<double>(hi - lo + 1);
    out[static_cast<size_t>(i)] = {static_cast<float>(sx / cnt),
                                   static_cast<float>(sy / cnt)};
  }
  return out;
}

std::vector<std::array<float, 2>> predict_smoothed(nn::Net<float>& net,
                                                   const Dataset& ds,
                                                   int window, int batch) {
  return moving_average(predict(net, ds, batch), window);
}

void save_history_csv(const std::string& path, const TrainHistory& history) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fprintf(f, "epoch,train_loss,val_loss,seconds\n");
  for (size_t e = 0; e < history.train_loss.size(); ++e)
    std::fprintf(f, "%zu,%.17g,%.17g,%.6f\n", e, history.train_loss[e],
                 history.val_loss[e], history.seconds[e]);
  std::fclose(f);
}

}  // namespace csiloc
