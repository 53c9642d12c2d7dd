#include "csiloc/music.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <stdexcept>

namespace csiloc {

Eigen::MatrixXcd aoa_covariance(const std::vector<CsiPacket>& stream,
                                size_t start, int window) {
  if (window < 1) throw std::invalid_argument("window must be positive");
  if (start + static_cast<size_t>(window) > stream.size())
    throw std::runtime_error("short window");

  const ComplexGrid& first = stream[start].csi;
  int n_ant = first.n_rx();
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(n_ant, n_ant);
  Eigen::VectorXcd x(n_ant);
  long snapshots = 0;
  for (int w = 0; w < window; ++w) {
    const ComplexGrid& g = stream[start + static_cast<size_t>(w)].csi;
    if (g.n_rx() != n_ant || g.m_tx() != first.m_tx() ||
        g.k_sub() != first.k_sub())
      throw std::runtime_error("inconsistent CSI dimensions");
    for (int tx = 0; tx < g.m_tx(); ++tx) {
      for (int k = 0; k < g.k_sub(); ++k) {
        for (int n = 0; n < n_ant; ++n)
          x(n) = std::complex<double>(g.at(n, tx, k));
        r.noalias() += x * x.adjoint();
        ++snapshots;
      }
    }
  }
  r /= static_cast<double>(snapshots);
  // Kill rounding asymmetry so downstream solvers see an exact Hermitian.
  r = ((r + r.adjoint()) / 2.0).eval();
  return r;
}

SpatialSpectrum music_spectrum(const Eigen::MatrixXcd& r,
                               const ArrayGeometry& geom, int n_sources,
                               double grid_step_deg) {
  int n_ant = static_cast<int>(r.rows());
  if (r.cols() != n_ant || n_ant != geom.n_antennas)
    throw std::invalid_argument("covariance does not match array size");
  if (n_sources < 1 || n_sources >= n_ant)
    throw std::runtime_error("rank constraint violated");
  if (grid_step_deg <= 0.0)
    throw std::invalid_argument("grid step must be positive");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(r);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("covariance eigendecomposition failed");
  // Eigen sorts ascending, so the noise subspace is the leading columns.
  Eigen::MatrixXcd en = es.eigenvectors().leftCols(n_ant - n_sources);
  Eigen::MatrixXcd projector = en * en.adjoint();

  SpatialSpectrum s;
  double step = grid_step_deg * M_PI / 180.0;
  int n_bins = static_cast<int>(std::floor(M_PI / step + 1e-9)) + 1;
  s.grid.reserve(static_cast<size_t>(n_bins));
  s.power.reserve(static_cast<size_t>(n_bins));
  Eigen::VectorXcd a(n_ant);
  for (int b = 0; b < n_bins; ++b) {
    double theta = -M_PI / 2.0 + b * step;
    if (theta > M_PI / 2.0 + 1e-12) break;
    auto steer = steering_vector(theta, geom);
    for (int n = 0; n < n_ant; ++n) a(n) = steer[static_cast<size_t>(n)];
    double denom = std::real((a.adjoint() * projector * a)(0, 0));
    s.grid.push_back(theta);
    s.power.push_back(1.0 / std::max(denom, 1e-18));
  }
  return s;
}

AoaPair top2_peaks(const SpatialSpectrum& spectrum) {
  size_t n = spectrum.power.size();
  if (n == 0) throw std::invalid_argument("empty spectrum");

  std::vector<size_t> peaks;
  for (size_t i = 0; i < n; ++i) {
    bool left_ok = i == 0 || spectrum.power[i] > spectrum.power[i - 1];
    bool right_ok = i + 1 == n || spectrum.power[i] > spectrum.power[i + 1];
    if (left_ok && right_ok) peaks.push_back(i);
  }
  if (peaks.empty()) {
    // Flat or plateau spectrum: leftmost global maximum.
    peaks.push_back(static_cast<size_t>(
        std::max_element(spectrum.power.begin(), spectrum.power.end()) -
        spectrum.power.begin()));
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](size_t a, size_t b) {
    return spectrum.power[a] > spectrum.power[b];
  });

  AoaPair pair;
  pair.primary = spectrum.grid[peaks[0]];
  pair.secondary = peaks.size() > 1 ? spectrum.grid[peaks[1]] : pair.primary;
  return pair;
}

namespace {

double trailing_median(const std::deque<double>& window) {
  std::vector<double> v(window.begin(), window.end());
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  double hi = v[mid];
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return (lo + hi) / 2.0;
}

}  // namespace

std::vector<AoaPair> smooth_aoa(const std::vector<AoaPair>& stream,
                                int window_len) {
  if (window_len < 1) throw std::invalid_argument("window_len must be >= 1");
  std::vector<AoaPair> out;
  out.reserve(stream.size());
  std::deque<double> track_a, track_b;
  double prev_a = 0.0, prev_b = 0.0;
  for (size_t i = 0; i < stream.size(); ++i) {
    double p = stream[i].primary, s = stream[i].secondary;
    if (i > 0) {
      double keep = std::abs(p - prev_a) + std::abs(s - prev_b);
      double swap = std::abs(p - prev_b) + std::abs(s - prev_a);
      if (swap < keep) std::swap(p, s);
    }
    track_a.push_back(p);
    track_b.push_back(s);
    if (static_cast<int>(track_a.size()) > window_len) {
      track_a.pop_front();
      track_b.pop_front();
    }
    prev_a = trailing_median(track_a);
    prev_b = trailing_median(track_b);
    out.push_back({prev_a, prev_b, stream[i].timestamp});
  }
  return out;
}

std::vector<AoaPair> estimate_aoa_stream(const std::vector<CsiPacket>& stream,
                                         const ArrayGeometry& geom,
                                         double packet_rate_hz,
                                         const AoaOptions& opts) {
  if (stream.size() < static_cast<size_t>(opts.window_packets))
    throw std::runtime_error("short window");

  std::vector<AoaPair> raw;
  size_t n_windows = stream.size() / static_cast<size_t>(opts.window_packets);
  raw.reserve(n_windows);
  for (size_t w = 0; w < n_windows; ++w) {
    size_t start = w * static_cast<size_t>(opts.window_packets);
    auto r = aoa_covariance(stream, start, opts.window_packets);
    auto spectrum = music_spectrum(r, geom, opts.n_sources, opts.grid_step_deg);
    AoaPair pair = top2_peaks(spectrum);
    pair.timestamp = stream[start].timestamp;
    raw.push_back(pair);
  }

  int window_len = opts.smooth_len;
  if (window_len <= 0)
    window_len = std::max(1, static_cast<int>(std::lround(packet_rate_hz / 2.0)));
  return smooth_aoa(raw, window_len);
}

void export_aoa_csv(const std::string& path,
                    const std::vector<std::vector<AoaPair>>& per_ap) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fprintf(f, "timestamp,ap_id,primary_deg,secondary_deg\n");
  for (size_t ap = 0; ap < per_ap.size(); ++ap) {
    for (const auto& pair : per_ap[ap]) {
      std::fprintf(f, "%.17g,%zu,%.17g,%.17g\n", pair.timestamp, ap,
                   pair.primary * 180.0 / M_PI, pair.secondary * 180.0 / M_PI);
    }
  }
  std::fclose(f);
}

}  // namespace csiloc
