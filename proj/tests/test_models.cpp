#include <algorithm>
#include <cmath>
#include <filesystem>

#include "csiloc/models.hpp"
#include "csiloc/nn/checkpoint.hpp"
#include "csiloc/rng.hpp"
#include "doctest.h"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

// Learnable toy regression: targets are an affine map of the first two
// feature coordinates.
Dataset toy_dataset(int n, int dims, uint64_t seed) {
  std::vector<FeatureVector> fvs(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    auto& fv = fvs[static_cast<size_t>(i)];
    fv.values.resize(static_cast<size_t>(dims));
    for (auto& v : fv.values) v = rng.uniform(-1.0, 1.0);
    fv.x = 0.5 * fv.values[0] + 0.1;
    fv.y = -0.3 * fv.values[1] + 0.2;
    fv.timestamp = 0.1 * i;
  }
  return dataset_from_features(fvs);
}

}  // namespace

TEST_SUITE_BEGIN("models");

TEST_CASE("family names round trip and reject unknowns") {
  CHECK(family_from_string("snn") == Family::kSnn);
  CHECK(family_from_string("cnn") == Family::kCnn);
  CHECK(family_from_string("deeper-cnn") == Family::kDeeperCnn);
  CHECK(family_from_string("lstm") == Family::kLstm);
  for (auto f : {Family::kSnn, Family::kCnn, Family::kDeeperCnn, Family::kLstm})
    CHECK(family_from_string(family_name(f)) == f);
  CHECK_THROWS(family_from_string("mlp"));
}

TEST_CASE("dense feature regressor has 1952 parameters for three access points") {
  auto net = build_snn<float>(3);
  CHECK(net.param_count() == 1952);
  CHECK(net.input_shape == std::vector<int>{36});
  CHECK(net.family == "snn");

  // 12 inputs -> 50 -> 2 for a single access point.
  CHECK(build_snn<float>(1).param_count() ==
        12 * 50 + 50 + 50 * 2 + 2);
}

TEST_CASE("feature regressor with zeroed weights outputs the origin") {
  auto net = build_snn<float>(2, 9);
  for (auto* p : net.params()) p->value.fill(0.0f);
  nn::Tensor<float> x({3, 24});
  for (size_t i = 0; i < x.size(); ++i)
    x.v[i] = static_cast<float>(i) * 0.01f;
  auto y = net.forward(x, nn::Mode::kInfer);
  REQUIRE(y.shape == std::vector<int>{3, 2});
  for (float v : y.v) CHECK(v == 0.0f);
}

TEST_CASE("convolutional regressor parameter budget and shape") {
  auto net = build_cnn<float>(3);
  CHECK(net.param_count() == 18376153);
  CHECK(net.input_shape == std::vector<int>{75, 30, 6});

  nn::Tensor<float> x({2, 75, 30, 6});
  Rng rng(4);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto y = net.forward(x, nn::Mode::kInfer);
  CHECK(y.shape == std::vector<int>{2, 2});
  for (float v : y.v) CHECK(std::isfinite(v));
}

TEST_CASE("deeper variant lands within the intended parameter ratio") {
  auto base = build_cnn<float>(3);
  auto deep = build_deeper_cnn<float>(3);
  CHECK(deep.param_count() == 51383701);
  CHECK(deep.input_shape == std::vector<int>{75, 30, 6});
  double ratio = static_cast<double>(deep.param_count()) /
                 static_cast<double>(base.param_count());
  CHECK(ratio >= 2.24);
  CHECK(ratio <= 3.36);

  nn::Tensor<float> x({1, 75, 30, 6});
  Rng rng(5);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto y = deep.forward(x, nn::Mode::kInfer);
  CHECK(y.shape == std::vector<int>{1, 2});
}

TEST_CASE("sequence regressor parameter budget and shape") {
  auto net = build_lstm_model<float>(3);
  CHECK(net.param_count() == 3270617);
  CHECK(net.input_shape == std::vector<int>{25, 3, 30, 6});
  CHECK(net.family == "lstm");

  nn::Tensor<float> x({1, 25, 3, 30, 6});
  Rng rng(6);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto y = net.forward(x, nn::Mode::kInfer);
  CHECK(y.shape == std::vector<int>{1, 2});
  for (float v : y.v) CHECK(std::isfinite(v));
}

TEST_CASE("family dispatcher builds the matching architecture") {
  CHECK(build_family<float>(Family::kSnn, 2).family == "snn");
  CHECK(build_family<float>(Family::kSnn, 2).input_shape ==
        std::vector<int>{24});
  CHECK(build_family<float>(Family::kLstm, 1).input_shape ==
        std::vector<int>{25, 1, 30, 6});
}

TEST_CASE("builders reject nonsensical dimensions") {
  CHECK_THROWS(build_snn<float>(0));
  CHECK_THROWS(build_cnn<float>(3, 1, 0, 25));
  CHECK_THROWS(build_lstm_model<float>(3, 1, 0));
}

TEST_CASE("dataset conversions keep values, targets and timestamps") {
  auto ds = toy_dataset(8, 12, 3);
  CHECK(ds.size() == 8);
  CHECK(ds.sample_shape() == std::vector<int>{12});
  CHECK(ds.sample_values() == 12);
  CHECK(ds.timestamps[3] == doctest::Approx(0.3));

  CnnSample cs;
  cs.rows = 25;
  cs.cols = 30;
  cs.channels = 6;
  cs.values.assign(25 * 30 * 6, 0.5f);
  cs.x = 1.0f;
  cs.y = 2.0f;
  cs.timestamp = 7.0;
  auto cds = dataset_from_cnn({cs});
  CHECK(cds.x.shape == std::vector<int>{1, 25, 30, 6});
  CHECK(cds.targets[0] == std::array<float, 2>{1.0f, 2.0f});
  CHECK(cds.timestamps[0] == 7.0);

  LstmSample ls;
  ls.steps = 25;
  ls.rows = 2;
  ls.cols = 30;
  ls.channels = 6;
  ls.values.assign(25 * 2 * 30 * 6, 0.25f);
  auto lds = dataset_from_lstm({ls});
  CHECK(lds.x.shape == std::vector<int>{1, 25, 2, 30, 6});
}

TEST_CASE("dataset concat, subset and split partition the samples") {
  auto a = toy_dataset(5, 12, 1);
  auto b = toy_dataset(3, 12, 2);
  auto all = concat_datasets({a, b});
  CHECK(all.size() == 8);
  CHECK(all.timestamps[5] == b.timestamps[0]);
  for (size_t i = 0; i < 5; ++i) CHECK(all.targets[i] == a.targets[i]);
  for (size_t i = 0; i < 3; ++i) CHECK(all.targets[5 + i] == b.targets[i]);

  auto sub = subset_dataset(all, {6, 0, 2});
  CHECK(sub.size() == 3);
  CHECK(sub.targets[0] == all.targets[6]);
  CHECK(sub.targets[1] == all.targets[0]);
  CHECK(sub.targets[2] == all.targets[2]);
  CHECK(sub.sample_values() == all.sample_values());

  auto [tr, va] = split_train_val(all, 0.25, 11);
  CHECK(va.size() == 2);
  CHECK(tr.size() == 6);
  std::vector<float> seen;
  for (const auto& t : tr.targets) seen.push_back(t[0]);
  for (const auto& t : va.targets) seen.push_back(t[0]);
  std::vector<float> want;
  for (const auto& t : all.targets) want.push_back(t[0]);
  std::sort(seen.begin(), seen.end());
  std::sort(want.begin(), want.end());
  CHECK(seen == want);
}

TEST_CASE("training reduces the loss on a learnable toy problem") {
  auto ds = toy_dataset(60, 12, 5);
  auto [tr, va] = split_train_val(ds, 0.2, 1);
  auto net = build_snn<float>(1, 3);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 10;
  cfg.seed = 2;
  auto hist = train(net, tr, va, cfg);
  REQUIRE(hist.train_loss.size() == 40);
  REQUIRE(hist.val_loss.size() == 40);
  CHECK(hist.train_loss.back() < 0.5 * hist.train_loss.front());
  CHECK(hist.best_epoch >= 0);
  CHECK(hist.best_val ==
        *std::min_element(hist.val_loss.begin(), hist.val_loss.end()));

  // The returned parameters are the best-validation snapshot.
  auto preds = predict(net, va);
  double err = 0.0;
  for (size_t i = 0; i < preds.size(); ++i)
    err += std::abs(preds[i][0] - va.targets[i][0]) +
           std::abs(preds[i][1] - va.targets[i][1]);
  err /= static_cast<double>(2 * preds.size());
  CHECK(err == doctest::Approx(hist.best_val).epsilon(1e-4));
}

TEST_CASE("fixed seeds give bit-identical training histories") {
  auto ds = toy_dataset(40, 12, 8);
  auto [tr, va] = split_train_val(ds, 0.25, 4);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.seed = 33;

  auto run = [&] {
    auto net = build_snn<float>(1, 21);
    auto hist = train(net, tr, va, cfg);
    std::vector<float> flat;
    for (auto* p : net.params())
      flat.insert(flat.end(), p->value.v.begin(), p->value.v.end());
    return std::pair{hist, flat};
  };
  auto [h1, p1] = run();
  auto [h2, p2] = run();
  CHECK(h1.train_loss == h2.train_loss);
  CHECK(h1.val_loss == h2.val_loss);
  CHECK(h1.best_epoch == h2.best_epoch);
  CHECK(p1 == p2);

  cfg.seed = 34;
  auto [h3, p3] = run();
  CHECK(h3.train_loss != h1.train_loss);
}

TEST_CASE("non-finite losses abort with the diverged diagnostic") {
  auto ds = toy_dataset(10, 12, 9);
  for (auto& t : ds.targets) t[0] = std::numeric_limits<float>::quiet_NaN();
  auto net = build_snn<float>(1, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 10;
  CHECK_THROWS_WITH(train(net, ds, ds, cfg),
                    "training diverged (epoch 0, batch 0)");
}

TEST_CASE("training validates shapes and configuration") {
  auto ds = toy_dataset(10, 12, 10);
  auto wrong = build_snn<float>(2, 2);  // expects 24 inputs
  TrainConfig cfg;
  CHECK_THROWS(train(wrong, ds, ds, cfg));

  auto net = build_snn<float>(1, 2);
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS(train(net, ds, ds, bad));
  Dataset empty;
  CHECK_THROWS(train(net, empty, ds, cfg));
}

TEST_CASE("moving average smooths with truncated edge windows") {
  std::vector<std::array<float, 2>> raw = {
      {0.0f, 0.0f}, {10.0f, 3.0f}, {0.0f, 0.0f}};
  auto sm = moving_average(raw, 3);
  REQUIRE(sm.size() == 3);
  CHECK(sm[0][0] == doctest::Approx(5.0));
  CHECK(sm[1][0] == doctest::Approx(10.0 / 3.0));
  CHECK(sm[2][0] == doctest::Approx(5.0));
  CHECK(sm[1][1] == doctest::Approx(1.0));

  CHECK(moving_average(raw, 1) == raw);

  std::vector<std::array<float, 2>> flat(9, {2.0f, -1.0f});
  auto fs = moving_average(flat, 5);
  for (const auto& v : fs) {
    CHECK(v[0] == doctest::Approx(2.0));
    CHECK(v[1] == doctest::Approx(-1.0));
  }
}

TEST_CASE("smoothed prediction equals smoothing the raw prediction") {
  auto ds = toy_dataset(12, 12, 12);
  auto net = build_snn<float>(1, 5);
  auto raw = predict(net, ds);
  auto sm = predict_smoothed(net, ds, 5);
  auto want = moving_average(raw, 5);
  REQUIRE(sm.size() == want.size());
  for (size_t i = 0; i < sm.size(); ++i) {
    CHECK(sm[i][0] == doctest::Approx(want[i][0]));
    CHECK(sm[i][1] == doctest::Approx(want[i][1]));
  }
}

TEST_CASE("trained model checkpoints reload with identical predictions") {
  auto ds = toy_dataset(30, 12, 14);
  auto [tr, va] = split_train_val(ds, 0.2, 3);
  auto net = build_snn<float>(1, 6);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 10;
  train(net, tr, va, cfg);

  fs::path path = fs::temp_directory_path() / "csiloc_model_rt.nnck";
  nn::save_net(path.string(), net);
  auto back = nn::load_net<float>(path.string());
  fs::remove(path);

  auto p1 = predict(net, va);
  auto p2 = predict(back, va);
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i][0] == p2[i][0]);
    CHECK(p1[i][1] == p2[i][1]);
  }
}

TEST_SUITE_END();
