#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csiloc/csi.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/session_io.hpp"
#include "csiloc/sim.hpp"
#include "doctest.h"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_all(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Session tiny_session(int aps, int packets, uint64_t seed) {
  Scene scene;
  scene.area = {0.0, 0.0, 4.0, 4.0};
  for (int a = 0; a < aps; ++a)
    scene.aps.push_back({0.5 + a, 0.0, 0.0});
  scene.rate_hz = 20.0;
  scene.duration_s = packets / scene.rate_hz;
  scene.trajectory.duration_s = scene.duration_s;
  scene.trajectory.area = scene.area;
  return simulate_session(scene, seed);
}

}  // namespace

TEST_SUITE_BEGIN("csi");

TEST_CASE("amplitude and phase of simple entries") {
  ComplexGrid g(1, 1, 3);
  g.at(0, 0, 0) = {1.0f, 0.0f};
  g.at(0, 0, 1) = {0.0f, 2.0f};
  g.at(0, 0, 2) = {-3.0f, 4.0f};
  auto [amp, phase] = amplitude_phase_split(g);
  CHECK(amp.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(phase.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(amp.at(0, 0, 1) == doctest::Approx(2.0));
  CHECK(phase.at(0, 0, 1) == doctest::Approx(M_PI / 2.0));
  CHECK(amp.at(0, 0, 2) == doctest::Approx(5.0));
  CHECK(phase.at(0, 0, 2) == doctest::Approx(M_PI - std::atan(4.0 / 3.0)));
}

TEST_CASE("phase of exact zero is zero") {
  ComplexGrid g(1, 1, 1);
  g.at(0, 0, 0) = {0.0f, 0.0f};
  auto [amp, phase] = amplitude_phase_split(g);
  CHECK(amp.at(0, 0, 0) == 0.0);
  CHECK(phase.at(0, 0, 0) == 0.0);
}

TEST_CASE("split reconstructs the input") {
  Rng rng(4);
  ComplexGrid g(3, 1, 30);
  for (auto& z : g.data())
    z = {static_cast<float>(rng.gaussian()), static_cast<float>(rng.gaussian())};
  auto [amp, phase] = amplitude_phase_split(g);
  CHECK(amp.n_rx == 3);
  CHECK(amp.k_sub == 30);
  for (int rx = 0; rx < 3; ++rx)
    for (int sub = 0; sub < 30; ++sub) {
      double a = amp.at(rx, 0, sub);
      double ph = phase.at(rx, 0, sub);
      CHECK(a >= 0.0);
      CHECK(ph > -M_PI);
      CHECK(ph <= M_PI);
      std::complex<double> back = std::polar(a, ph);
      std::complex<double> orig(g.at(rx, 0, sub).real(), g.at(rx, 0, sub).imag());
      CHECK(std::abs(back - orig) <= 1e-9 * std::max(1.0, std::abs(orig)));
    }
}

TEST_CASE("truth interpolation at midpoint, knot and beyond the range") {
  std::vector<GroundTruthSample> truth{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
  auto out = interpolate_truth(truth, {0.5, 0.0, 1.5, -0.5});
  REQUIRE(out.size() == 4);
  CHECK(out[0].x == doctest::Approx(0.5));
  CHECK(out[0].y == doctest::Approx(0.5));
  CHECK(out[1].x == doctest::Approx(0.0));
  CHECK(out[1].y == doctest::Approx(0.0));
  CHECK(out[2].x == doctest::Approx(1.0));
  CHECK(out[2].y == doctest::Approx(1.0));
  CHECK(out[3].x == doctest::Approx(0.0));
  CHECK(out[0].timestamp == doctest::Approx(0.5));
}

TEST_CASE("truth interpolation is exact on every knot") {
  std::vector<GroundTruthSample> truth{
      {0.0, 1.0, -1.0}, {0.5, 2.0, 0.5}, {2.0, -3.0, 4.0}};
  auto out = interpolate_truth(truth, {0.0, 0.5, 2.0});
  for (size_t i = 0; i < truth.size(); ++i) {
    CHECK(out[i].x == doctest::Approx(truth[i].x));
    CHECK(out[i].y == doctest::Approx(truth[i].y));
  }
}

TEST_CASE("truth interpolation needs two knots") {
  std::vector<GroundTruthSample> one{{0.0, 0.0, 0.0}};
  CHECK_THROWS_WITH(interpolate_truth(one, {0.0}), "insufficient ground truth");
  CHECK_THROWS_WITH(interpolate_truth({}, {0.0}), "insufficient ground truth");
}

TEST_CASE("session round trip preserves every field") {
  Session s = tiny_session(2, 8, 123);
  fs::path path = fs::temp_directory_path() / "csiloc_rt.csis";
  save_session(s, path.string());
  Session back = load_session(path.string());

  REQUIRE(back.ap_count() == s.ap_count());
  CHECK(back.rate_hz == s.rate_hz);
  REQUIRE(back.meta.ap_positions.size() == s.meta.ap_positions.size());
  for (size_t i = 0; i < s.meta.ap_positions.size(); ++i) {
    CHECK(back.meta.ap_positions[i][0] == s.meta.ap_positions[i][0]);
    CHECK(back.meta.ap_positions[i][1] == s.meta.ap_positions[i][1]);
  }
  CHECK(back.meta.subcarrier_hz == s.meta.subcarrier_hz);
  for (int a = 0; a < s.ap_count(); ++a) {
    REQUIRE(back.packets[a].size() == s.packets[a].size());
    for (size_t i = 0; i < s.packets[a].size(); ++i) {
      CHECK(back.packets[a][i].timestamp == s.packets[a][i].timestamp);
      CHECK(back.packets[a][i].ap_id == s.packets[a][i].ap_id);
      CHECK(back.packets[a][i].csi == s.packets[a][i].csi);
    }
  }
  REQUIRE(back.truth.size() == s.truth.size());
  for (size_t i = 0; i < s.truth.size(); ++i) {
    CHECK(back.truth[i].timestamp == s.truth[i].timestamp);
    CHECK(back.truth[i].x == s.truth[i].x);
    CHECK(back.truth[i].y == s.truth[i].y);
  }
  fs::remove(path);
}

TEST_CASE("re-saving a loaded session gives identical bytes") {
  Session s = tiny_session(1, 1, 9);
  fs::path a = fs::temp_directory_path() / "csiloc_a.csis";
  fs::path b = fs::temp_directory_path() / "csiloc_b.csis";
  save_session(s, a.string());
  Session loaded = load_session(a.string());
  save_session(loaded, b.string());
  CHECK(read_all(a) == read_all(b));
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("wrong magic bytes are rejected") {
  fs::path path = fs::temp_directory_path() / "csiloc_magic.csis";
  Session s = tiny_session(1, 2, 1);
  save_session(s, path.string());
  std::string bytes = read_all(path);
  bytes[0] = 'X';
  write_all(path, bytes);
  CHECK_THROWS_WITH(load_session(path.string()), "unrecognised session file");
  fs::remove(path);
}

TEST_CASE("wrong version is rejected") {
  fs::path path = fs::temp_directory_path() / "csiloc_ver.csis";
  Session s = tiny_session(1, 2, 1);
  save_session(s, path.string());
  std::string bytes = read_all(path);
  bytes[4] = 99;
  write_all(path, bytes);
  CHECK_THROWS_WITH(load_session(path.string()), "unrecognised session file");
  fs::remove(path);
}

TEST_CASE("truncated record is rejected") {
  fs::path path = fs::temp_directory_path() / "csiloc_trunc.csis";
  Session s = tiny_session(1, 3, 2);
  save_session(s, path.string());
  std::string bytes = read_all(path);
  write_all(path, bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_WITH(load_session(path.string()), "corrupt session");
  fs::remove(path);
}

TEST_CASE("multi-ap session keeps per-ap packet counts") {
  Session s = tiny_session(3, 20, 77);
  fs::path path = fs::temp_directory_path() / "csiloc_counts.csis";
  save_session(s, path.string());
  Session back = load_session(path.string());
  REQUIRE(back.ap_count() == 3);
  for (int a = 0; a < 3; ++a) CHECK(back.packets[a].size() == 20);
  fs::remove(path);
}

TEST_CASE("csv export writes one row per packet") {
  Session s = tiny_session(2, 5, 3);
  fs::path path = fs::temp_directory_path() / "csiloc_export.csv";
  export_session_csv(s, path.string());
  std::ifstream is(path);
  std::string line;
  size_t rows = 0, header_cols = 0;
  while (std::getline(is, line)) {
    size_t cols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (rows == 0)
      header_cols = cols;
    else
      CHECK(cols == header_cols);
    ++rows;
  }
  CHECK(rows == 1 + 2 * 5);
  // timestamp, ap_id, re/im pairs for each grid cell, x, y
  size_t grid = static_cast<size_t>(s.packets[0][0].csi.size());
  CHECK(header_cols == 2 + 2 * grid + 2);
  fs::remove(path);
}

TEST_SUITE_END();
