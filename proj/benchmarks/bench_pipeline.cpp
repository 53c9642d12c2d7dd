#include <benchmark/benchmark.h>

#include <complex>
#include <vector>

#include "csiloc/models.hpp"
#include "csiloc/music.hpp"
#include "csiloc/nn/layers.hpp"
#include "csiloc/preprocess.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/sim.hpp"

using namespace csiloc;

namespace {

std::vector<CsiPacket> make_window(int packets, uint64_t seed) {
  Rng rng(seed);
  std::vector<CsiPacket> window(static_cast<size_t>(packets));
  for (auto& p : window) {
    p.csi = ComplexGrid(3, 1, 30);
    for (auto& v : p.csi.data())
      v = {static_cast<float>(rng.gaussian(0.0, 1.0)),
           static_cast<float>(rng.gaussian(0.0, 1.0))};
  }
  return window;
}

void BM_SynthCfr(benchmark::State& state) {
  Scene scene;
  scene.aps.push_back({1.0, 2.5, 0.0});
  auto freqs = scene.subcarrier_freqs();
  const ArrayGeometry& geom = scene.geom;
  std::vector<PathComponent> paths;
  std::vector<double> aoas;
  propagation_paths(scene, scene.aps[0], 3.2, 1.7, paths, aoas);
  Impairments imp;
  imp.noise_std = 0.01;
  Rng rng(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(synth_cfr(paths, freqs, aoas, geom, imp, rng));
  }
}
BENCHMARK(BM_SynthCfr);

void BM_Hampel(benchmark::State& state) {
  Rng rng(2);
  std::vector<double> series(6000);
  for (auto& v : series) v = rng.gaussian(1.0, 0.1);
  series[100] = 40.0;
  series[4000] = -25.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(hampel(series));
  }
}
BENCHMARK(BM_Hampel);

void BM_SanitizePhase(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> phases(30);
  double p = 0.0;
  for (auto& v : phases) v = (p += rng.uniform(-0.4, 0.1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sanitize_phase(phases));
  }
}
BENCHMARK(BM_SanitizePhase);

void BM_MusicWindow(benchmark::State& state) {
  auto window = make_window(4, 4);
  auto geom = ArrayGeometry::half_wavelength(3, 5.32e9);
  for (auto _ : state) {
    auto r = aoa_covariance(window, 0);
    auto spec = music_spectrum(r, geom);
    benchmark::DoNotOptimize(top2_peaks(spec));
  }
}
BENCHMARK(BM_MusicWindow);

void BM_CnnForward(benchmark::State& state) {
  auto net = build_cnn<float>(3);
  nn::Tensor<float> x({1, 75, 30, 6});
  Rng rng(5);
  for (auto& v : x.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(x, nn::Mode::kInfer));
  }
}
BENCHMARK(BM_CnnForward);

void BM_LstmStep(benchmark::State& state) {
  const int input = 180, hidden = 128;
  Rng rng(6);
  nn::RowMat<float> x(1, input), h(1, hidden), c(1, hidden);
  nn::RowMat<float> w(input, 4 * hidden), u(hidden, 4 * hidden);
  nn::RowVec<float> b(4 * hidden);
  for (int i = 0; i < x.size(); ++i) x(i) = static_cast<float>(rng.uniform(-1.0, 1.0));
  h.setZero();
  c.setZero();
  for (int i = 0; i < w.size(); ++i) w(i) = static_cast<float>(rng.uniform(-0.1, 0.1));
  for (int i = 0; i < u.size(); ++i) u(i) = static_cast<float>(rng.uniform(-0.1, 0.1));
  for (int i = 0; i < b.size(); ++i) b(i) = static_cast<float>(rng.uniform(-0.1, 0.1));
  for (auto _ : state) {
    auto hc = nn::lstm_step<float>(x, h, c, w, u, b);
    benchmark::DoNotOptimize(hc);
  }
}
BENCHMARK(BM_LstmStep);

void BM_SnnTrainEpoch(benchmark::State& state) {
  std::vector<FeatureVector> fvs(600);
  Rng rng(7);
  for (auto& fv : fvs) {
    fv.values.resize(36);
    for (auto& v : fv.values) v = rng.uniform(-1.0, 1.0);
    fv.x = fv.values[0];
    fv.y = fv.values[1];
  }
  auto ds = dataset_from_features(fvs);
  auto [tr, va] = split_train_val(ds, 0.1, 1);
  for (auto _ : state) {
    auto net = build_snn<float>(3, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    auto hist = train(net, tr, va, cfg);
    benchmark::DoNotOptimize(hist);
  }
}
BENCHMARK(BM_SnnTrainEpoch);

}  // namespace

BENCHMARK_MAIN();
