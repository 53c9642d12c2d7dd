#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "csiloc/music.hpp"
#include "csiloc/preprocess.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/sim.hpp"
#include "doctest.h"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

// Independent window-median reference for the outlier filter.
std::vector<double> hampel_reference(const std::vector<double>& x,
                                     int half_window, double k_sigma) {
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::vector<double> out = x;
  for (size_t i = 0; i < x.size(); ++i) {
    size_t lo = i >= static_cast<size_t>(half_window) ? i - half_window : 0;
    size_t hi = std::min(x.size() - 1, i + half_window);
    std::vector<double> win(x.begin() + lo, x.begin() + hi + 1);
    double med = median_of(win);
    std::vector<double> dev;
    for (double v : win) dev.push_back(std::abs(v - med));
    double mad = median_of(dev);
    if (std::abs(x[i] - med) > k_sigma * 1.4826 * mad) out[i] = med;
  }
  return out;
}

Session small_session(int aps, int packets, double rate, uint64_t seed) {
  Scene scene;
  scene.area = {0.0, 0.0, 5.0, 5.0};
  scene.aps.push_back({0.0, 2.5, 0.0});
  if (aps > 1) scene.aps.push_back({2.5, 0.0, M_PI / 2.0});
  if (aps > 2) scene.aps.push_back({5.0, 2.5, M_PI});
  scene.rate_hz = rate;
  scene.duration_s = packets / rate;
  scene.trajectory.duration_s = scene.duration_s;
  scene.trajectory.area = scene.area;
  return simulate_session(scene, seed);
}

struct Prepared {
  ConditionedSession cond;
  std::vector<std::vector<AoaPair>> aoa;
  PreprocessorState state;
};

Prepared prepare(const Session& s) {
  Prepared p;
  p.cond = condition_session(s);
  ArrayGeometry geom = ArrayGeometry::half_wavelength(
      s.packets[0][0].csi.n_rx(),
      (s.meta.subcarrier_hz.front() + s.meta.subcarrier_hz.back()) / 2.0);
  for (const auto& stream : s.packets)
    p.aoa.push_back(estimate_aoa_stream(stream, geom, s.rate_hz));
  p.state = fit_preprocessor({&p.cond});
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("preprocess");

TEST_CASE("hampel removes an isolated spike") {
  std::vector<double> x{1, 1, 1, 100, 1, 1, 1};
  auto y = hampel(x, 2, 3.0);
  std::vector<double> expect{1, 1, 1, 1, 1, 1, 1};
  CHECK(y == expect);
}

TEST_CASE("hampel leaves a constant series untouched") {
  std::vector<double> x(40, 2.5);
  CHECK(hampel(x) == x);
}

TEST_CASE("hampel leaves a monotone ramp untouched") {
  std::vector<double> x;
  for (int i = 0; i < 50; ++i) x.push_back(0.3 * i);
  CHECK(hampel(x, 5, 3.0) == x);
}

TEST_CASE("hampel matches the window-median reference on noisy data") {
  Rng rng(9);
  std::vector<double> x;
  for (int i = 0; i < 200; ++i) {
    double v = std::sin(i * 0.1) + 0.1 * rng.gaussian();
    if (i % 37 == 5) v += 30.0;  // sprinkle outliers
    x.push_back(v);
  }
  for (int hw : {2, 5}) {
    auto got = hampel(x, hw, 3.0);
    auto want = hampel_reference(x, hw, 3.0);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("hampel reaches a fixpoint once isolated spikes are gone") {
  // A second pass re-estimates median/MAD on the filtered series, so
  // borderline samples in dense noise can keep flipping; the fixpoint
  // guarantee only holds once the series is locally smooth. Spike-on-smooth
  // inputs land on that fixpoint after one pass.
  std::vector<double> spikes = {1, 1, 1, 100, 1, 1, 1};
  auto once = hampel(spikes, 2, 3.0);
  CHECK(once == hampel(once, 2, 3.0));

  std::vector<double> ramp;
  for (int i = 0; i < 60; ++i) ramp.push_back(0.05 * i + ((i == 31) ? 9.0 : 0.0));
  auto filtered = hampel(ramp, 5, 3.0);
  CHECK(filtered == hampel(filtered, 5, 3.0));

  std::vector<double> flat(40, 2.5);
  CHECK(hampel(flat) == flat);
}

TEST_CASE("hampel rejects non-finite input") {
  std::vector<double> x(20, 1.0);
  x[7] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(hampel(x), "invalid sample");
  x[7] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH(hampel(x), "invalid sample");
}

TEST_CASE("phase unwrap recovers a steep linear ramp") {
  std::vector<double> truth, wrapped;
  for (int k = 0; k < 40; ++k) {
    double t = 1.1 * k;
    truth.push_back(t);
    wrapped.push_back(std::atan2(std::sin(t), std::cos(t)));
  }
  auto un = unwrap_phases(wrapped);
  REQUIRE(un.size() == truth.size());
  for (size_t k = 0; k < truth.size(); ++k)
    CHECK(un[k] == doctest::Approx(truth[k]).epsilon(1e-9));
}

TEST_CASE("sanitised constant phases collapse to zero") {
  std::vector<double> x(30, 0.83);
  auto y = sanitize_phase(x);
  for (double v : y) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("sanitised linear ramp matches the closed form") {
  const int F = 30;
  std::vector<double> x;
  for (int f = 1; f <= F; ++f) x.push_back(0.1 * f);
  auto y = sanitize_phase(x);
  for (int f = 1; f <= F; ++f) {
    double expect = 0.1 * f - (2.9 / (60.0 * M_PI)) * f - 1.55;
    CHECK(y[static_cast<size_t>(f - 1)] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sanitisation cancels any common offset") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x;
    for (int f = 0; f < 30; ++f) x.push_back(0.4 * rng.gaussian());
    double c = rng.uniform(-10.0, 10.0);
    std::vector<double> shifted = x;
    for (double& v : shifted) v += c;
    auto a = sanitize_phase(x);
    auto b = sanitize_phase(shifted);
    for (size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("legacy slope divisor uses F-1") {
  const int F = 10;
  std::vector<double> x;
  for (int f = 1; f <= F; ++f) x.push_back(0.2 * f);
  auto y = sanitize_phase(x, true);
  double slope = (x.back() - x.front()) / (2.0 * M_PI * (F - 1));
  double mean = 0.2 * (F + 1) / 2.0;
  for (int f = 1; f <= F; ++f)
    CHECK(y[static_cast<size_t>(f - 1)] ==
          doctest::Approx(x[static_cast<size_t>(f - 1)] - slope * f - mean)
              .epsilon(1e-12));
}

TEST_CASE("pca recovers an axis-aligned covariance") {
  // Four points with sample covariance exactly diag(4, 1).
  double a = std::sqrt(6.0), b = std::sqrt(1.5);
  Eigen::MatrixXd data(4, 2);
  data << a, 0, -a, 0, 0, b, 0, -b;
  Pca pca = pca_fit(data, 2);
  CHECK(pca.eigenvalues(0) == doctest::Approx(4.0));
  CHECK(pca.eigenvalues(1) == doctest::Approx(1.0));
  CHECK(std::abs(pca.basis(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(pca.basis(1, 0)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(pca.basis(1, 1)) == doctest::Approx(1.0));
  CHECK(!pca.rank_deficient);
  // Sign rule: the dominant entry of each component is positive.
  CHECK(pca.basis(0, 0) > 0.0);
  CHECK(pca.basis(1, 1) > 0.0);
}

TEST_CASE("pca on collinear points flags rank deficiency") {
  Eigen::MatrixXd data(5, 2);
  for (int i = 0; i < 5; ++i) {
    double t = i - 2.0;
    data(i, 0) = 0.6 * t;
    data(i, 1) = 0.8 * t;
  }
  Pca pca = pca_fit(data, 2);
  CHECK(pca.eigenvalues(1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pca.basis(0, 0) == doctest::Approx(0.6));
  CHECK(pca.basis(1, 0) == doctest::Approx(0.8));
  CHECK(pca.rank_deficient);
  // Padded column still orthonormal.
  CHECK(pca.basis.col(1).norm() == doctest::Approx(1.0));
  CHECK(std::abs(pca.basis.col(0).dot(pca.basis.col(1))) < 1e-9);
}

TEST_CASE("pca projection of the mean is zero") {
  Rng rng(3);
  Eigen::MatrixXd data(20, 6);
  for (int i = 0; i < data.rows(); ++i)
    for (int j = 0; j < data.cols(); ++j) data(i, j) = rng.gaussian();
  Pca pca = pca_fit(data, 3);
  Eigen::VectorXd scores = pca.project(pca.mean);
  CHECK(scores.norm() < 1e-12);
}

TEST_CASE("pca basis is orthonormal and ordered by eigenvalue") {
  Rng rng(8);
  Eigen::MatrixXd data(40, 8);
  for (int i = 0; i < data.rows(); ++i)
    for (int j = 0; j < data.cols(); ++j)
      data(i, j) = rng.gaussian() * (j + 1);
  Pca pca = pca_fit(data, 5);
  Eigen::MatrixXd gram = pca.basis.transpose() * pca.basis;
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).norm() < 1e-9);
  for (int i = 1; i < pca.eigenvalues.size(); ++i)
    CHECK(pca.eigenvalues(i - 1) >= pca.eigenvalues(i));
}

TEST_CASE("pca reconstruction error equals the discarded variance") {
  Rng rng(21);
  const int n = 30, d = 5, k = 3;
  Eigen::MatrixXd data(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) data(i, j) = rng.gaussian() * (1.0 + j);
  Pca pca = pca_fit(data, k);
  double err = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = data.row(i);
    Eigen::VectorXd back = pca.mean + pca.basis * pca.project(x);
    err += (x - back).squaredNorm();
  }
  double dropped = pca.eigenvalues.tail(d - k).sum() * (n - 1);
  CHECK(err == doctest::Approx(dropped).epsilon(1e-6));
}

TEST_CASE("pca guards its preconditions") {
  Eigen::MatrixXd data(3, 2);
  data.setRandom();
  CHECK_THROWS(pca_fit(data, 3));   // k > d
  CHECK_THROWS(pca_fit(data, 0));   // k < 1
  Eigen::MatrixXd tiny(2, 4);
  tiny.setRandom();
  CHECK_THROWS(pca_fit(tiny, 2));   // n <= k
}

TEST_CASE("conditioning preserves grid shapes and stays finite") {
  Session s = small_session(2, 24, 60.0, 5);
  ConditionedSession cond = condition_session(s);
  REQUIRE(cond.ap_count() == 2);
  REQUIRE(cond.streams[0].size() == 24);
  CHECK(cond.rate_hz == s.rate_hz);
  for (const auto& stream : cond.streams)
    for (const auto& pkt : stream) {
      CHECK(pkt.amplitudes.n_rx == 3);
      CHECK(pkt.amplitudes.k_sub == 30);
      CHECK(pkt.phases.n_rx == 3);
      for (double v : pkt.amplitudes.v) CHECK(std::isfinite(v));
      for (double v : pkt.phases.v) CHECK(std::isfinite(v));
    }
}

TEST_CASE("conditioning cancels a common per-packet phase rotation") {
  Session s = small_session(1, 12, 60.0, 6);
  Session rotated = s;
  const std::complex<float> rot = std::polar(1.0f, 0.9f);
  for (auto& stream : rotated.packets)
    for (auto& pkt : stream)
      for (auto& v : pkt.csi.data()) v *= rot;

  ConditionedSession a = condition_session(s);
  ConditionedSession b = condition_session(rotated);
  REQUIRE(a.streams.size() == b.streams.size());
  for (size_t ap = 0; ap < a.streams.size(); ++ap)
    for (size_t i = 0; i < a.streams[ap].size(); ++i) {
      const auto& pa = a.streams[ap][i];
      const auto& pb = b.streams[ap][i];
      for (size_t k = 0; k < pa.phases.v.size(); ++k)
        CHECK(pa.phases.v[k] == doctest::Approx(pb.phases.v[k]).epsilon(1e-4));
      for (size_t k = 0; k < pa.amplitudes.v.size(); ++k)
        CHECK(pa.amplitudes.v[k] ==
              doctest::Approx(pb.amplitudes.v[k]).epsilon(1e-4));
    }
}

TEST_CASE("feature vectors have twelve entries per access point") {
  for (int aps : {1, 2, 3}) {
    Session s = small_session(aps, 100, 100.0, 40 + aps);
    Prepared p = prepare(s);
    auto feats = build_snn_features(p.cond, p.aoa, p.state);
    REQUIRE(feats.size() == 100);
    for (const auto& f : feats) CHECK(f.values.size() == 12u * aps);
  }
}

TEST_CASE("feature targets follow the session ground truth") {
  Session s = small_session(1, 60, 100.0, 17);
  Prepared p = prepare(s);
  auto feats = build_snn_features(p.cond, p.aoa, p.state);
  REQUIRE(feats.size() == s.truth.size());
  for (size_t i = 0; i < feats.size(); ++i) {
    CHECK(feats[i].x == doctest::Approx(s.truth[i].x));
    CHECK(feats[i].y == doctest::Approx(s.truth[i].y));
    CHECK(feats[i].timestamp == doctest::Approx(s.truth[i].timestamp));
  }
}

TEST_CASE("short aoa stream is rejected") {
  Session s = small_session(1, 100, 100.0, 23);
  Prepared p = prepare(s);
  REQUIRE(p.aoa[0].size() == 25);
  p.aoa[0].resize(10);
  CHECK_THROWS_WITH(build_snn_features(p.cond, p.aoa, p.state),
                    "unaligned AoA stream");
  std::vector<std::vector<AoaPair>> none;
  CHECK_THROWS_WITH(build_snn_features(p.cond, none, p.state),
                    "unaligned AoA stream");
}

TEST_CASE("image windows stack access points along the rows") {
  Session s = small_session(3, 75, 75.0, 31);
  Prepared p = prepare(s);
  auto samples = build_cnn_samples(p.cond, p.state, 25);
  REQUIRE(samples.size() == 3);  // 75 packets, non-overlapping windows of 25
  for (const auto& smp : samples) {
    CHECK(smp.rows == 75);
    CHECK(smp.cols == 30);
    CHECK(smp.channels == 6);
    CHECK(smp.values.size() == 75u * 30u * 6u);
  }
  // Target is the ground truth at the window centre (packet 12 of 0..24).
  CHECK(samples[0].x == doctest::Approx(s.truth[12].x));
  CHECK(samples[0].y == doctest::Approx(s.truth[12].y));
  CHECK(samples[1].x == doctest::Approx(s.truth[37].x));
}

TEST_CASE("single access point windows keep one row block") {
  Session s = small_session(1, 50, 50.0, 32);
  Prepared p = prepare(s);
  auto samples = build_cnn_samples(p.cond, p.state, 25);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].rows == 25);
  CHECK(samples[0].cols == 30);
  CHECK(samples[0].channels == 6);
}

TEST_CASE("sequence windows carry the same values as image windows") {
  Session s = small_session(3, 50, 50.0, 33);
  Prepared p = prepare(s);
  auto img = build_cnn_samples(p.cond, p.state, 25);
  auto seq = build_lstm_samples(p.cond, p.state, 25);
  REQUIRE(img.size() == seq.size());
  for (size_t i = 0; i < img.size(); ++i) {
    CHECK(seq[i].steps == 25);
    CHECK(seq[i].rows == 3);
    CHECK(seq[i].cols == 30);
    CHECK(seq[i].channels == 6);
    CHECK(seq[i].x == img[i].x);
    CHECK(seq[i].y == img[i].y);
    auto a = img[i].values;
    auto b = seq[i].values;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("sequence timestep gathers the same packet index from every ap") {
  Session s = small_session(2, 25, 50.0, 34);
  Prepared p = prepare(s);
  auto seq = build_lstm_samples(p.cond, p.state, 25);
  REQUIRE(seq.size() == 1);
  const auto& smp = seq[0];
  // Element (t, ap, sub, ch) with ch 0..2 amplitudes, 3..5 phases; compare
  // the amplitude channels against the conditioned packets directly.
  auto at = [&](int t, int ap, int sub, int ch) {
    return smp.values[((static_cast<size_t>(t) * smp.rows + ap) * smp.cols +
                       sub) * smp.channels + ch];
  };
  const auto& state = p.state;
  for (int t = 0; t < 25; t += 7)
    for (int ap = 0; ap < 2; ++ap)
      for (int sub = 0; sub < 30; sub += 11)
        for (int rx = 0; rx < 3; ++rx) {
          double raw = p.cond.streams[ap][static_cast<size_t>(t)]
                           .amplitudes.at(rx, 0, sub);
          const Scaler& sc = state.scalers[ap][rx];
          float want = static_cast<float>((raw - sc.mean) / sc.std);
          CHECK(at(t, ap, sub, rx) == doctest::Approx(want));
        }
}

TEST_CASE("mismatched grids are rejected") {
  Session s = small_session(1, 50, 50.0, 35);
  Session broken = s;
  broken.packets[0][10].csi = ComplexGrid(2, 1, 30);
  CHECK_THROWS_WITH(condition_session(broken), "inconsistent CSI dimensions");
}

TEST_CASE("preprocessor state round trips through its file format") {
  Session s = small_session(2, 60, 60.0, 36);
  Prepared p = prepare(s);
  fs::path path = fs::temp_directory_path() / "csiloc_pre.cspp";
  save_preprocessor(p.state, path.string());
  PreprocessorState back = load_preprocessor(path.string());
  CHECK(back.pca_k == p.state.pca_k);
  REQUIRE(back.amp_pca.size() == p.state.amp_pca.size());
  for (size_t ap = 0; ap < back.amp_pca.size(); ++ap) {
    CHECK((back.amp_pca[ap].basis - p.state.amp_pca[ap].basis).norm() == 0.0);
    CHECK((back.amp_pca[ap].mean - p.state.amp_pca[ap].mean).norm() == 0.0);
    CHECK((back.phase_pca[ap].basis - p.state.phase_pca[ap].basis).norm() ==
          0.0);
  }
  REQUIRE(back.scalers.size() == p.state.scalers.size());
  for (size_t ap = 0; ap < back.scalers.size(); ++ap)
    for (size_t rx = 0; rx < back.scalers[ap].size(); ++rx) {
      CHECK(back.scalers[ap][rx].mean == p.state.scalers[ap][rx].mean);
      CHECK(back.scalers[ap][rx].std == p.state.scalers[ap][rx].std);
    }
  fs::remove(path);
}

TEST_SUITE_END();
