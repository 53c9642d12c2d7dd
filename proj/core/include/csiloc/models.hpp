#pragma once

#include <array>
#include <string>
#include <vector>

#include "csiloc/nn/net.hpp"
#include "csiloc/preprocess.hpp"

namespace csiloc {

enum class Family { kSnn, kCnn, kDeeperCnn, kLstm };

Family family_from_string(const std::string& name);
std::string family_name(Family family);

// Handcrafted-feature regressor: dense(12*n_aps -> 50), SELU, dense(50 -> 2).
template <typename T>
nn::Net<T> build_snn(int n_aps = 3, uint64_t seed = 1);

// Image-style regressor over a (25*n_aps) x cols x 6 window:
// concat[1x5, 5x1, 7x7] x 75 filters -> SELU -> maxpool2x2 ->
// conv3x3 x 64 -> SELU -> flatten -> 512 -> 64 -> 2 with SELU + dropout 0.2
// on the hidden fully connected layers.
template <typename T>
nn::Net<T> build_cnn(int n_aps = 3, uint64_t seed = 1, int cols = 30,
                     int window = 25);

// The wider/deeper variant: extra concat banks of 1x1/1x3/3x1/3x3 filters
// before and after the pooling stage and a 512 -> 100 -> 80 -> 60 -> 40 -> 2
// fully connected stack. Bank widths put the trainable-parameter ratio to
// the base model near 2.8.
template <typename T>
nn::Net<T> build_deeper_cnn(int n_aps = 3, uint64_t seed = 1, int cols = 30,
                            int window = 25);

// Sequence regressor: the conv trunk applied per timestep (shared weights),
// LSTM over the 25-step sequence, then the same FC head as the CNN.
template <typename T>
nn::Net<T> build_lstm_model(int n_aps = 3, uint64_t seed = 1, int hidden = 128,
                            int cols = 30, int window = 25);

template <typename T>
nn::Net<T> build_family(Family family, int n_aps = 3, uint64_t seed = 1);

// Model-ready sample block; x's leading dimension indexes samples.
struct Dataset {
  nn::Tensor<float> x;
  std::vector<std::array<float, 2>> targets;
  std::vector<double> timestamps;

  size_t size() const { return targets.size(); }
  size_t sample_values() const {
    return targets.empty() ? 0 : x.size() / targets.size();
  }
  std::vector<int> sample_shape() const {
    return {x.shape.begin() + 1, x.shape.end()};
  }
};

Dataset dataset_from_features(const std::vector<FeatureVector>& features);
Dataset dataset_from_cnn(const std::vector<CnnSample>& samples);
Dataset dataset_from_lstm(const std::vector<LstmSample>& samples);
Dataset concat_datasets(const std::vector<Dataset>& parts);
Dataset subset_dataset(const Dataset& ds, const std::vector<size_t>& indices);
// Shuffled split; val gets round(val_fraction * n) samples.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds,
                                            double val_fraction,
                                            uint64_t seed);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 30;
  double learning_rate = 0.002;
  uint64_t seed = 1;
  double val_fraction = 0.2;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, mean absolute error
  std::vector<double> val_loss;
  std::vector<double> seconds;  // wall time, excluded from reproducibility
  int best_epoch = -1;
  double best_val = 0.0;
};

// Mini-batch MAE + Adamax with a seeded per-epoch shuffle. The parameters
// from the best-validation epoch are restored into the net on return.
// A non-finite batch loss aborts with "training diverged (epoch E, batch B)".
TrainHistory train(nn::Net<float>& net, const Dataset& train_set,
                   const Dataset& val_set, const TrainConfig& cfg);

std::vector<std::array<float, 2>> predict(nn::Net<float>& net,
                                          const Dataset& ds, int batch = 64);

// Centred per-coordinate moving average with truncated edge windows.
std::vector<std::array<float, 2>> moving_average(
    const std::vector<std::array<float, 2>>& raw, int window);

std::vector<std::array<float, 2>> predict_smoothed(nn::Net<float>& net,
                                                   const Dataset& ds,
                                                   int window, int batch = 64);

void save_history_csv(const std::string& path, const TrainHistory& history);

}  // namespace csiloc
