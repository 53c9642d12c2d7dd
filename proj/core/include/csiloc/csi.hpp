#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

namespace csiloc {

// Complex CSI grid over (rx antenna, tx antenna, subcarrier), row-major.
// Entries are stored as complex<float> to match the on-disk format exactly.
class ComplexGrid {
 public:
  ComplexGrid() = default;
  ComplexGrid(int n_rx, int m_tx, int k_sub);

  int n_rx() const { return n_rx_; }
  int m_tx() const { return m_tx_; }
  int k_sub() const { return k_sub_; }
  int size() const { return n_rx_ * m_tx_ * k_sub_; }

  std::complex<float>& at(int rx, int tx, int sub) {
    return data_[(rx * m_tx_ + tx) * k_sub_ + sub];
  }
  const std::complex<float>& at(int rx, int tx, int sub) const {
    return data_[(rx * m_tx_ + tx) * k_sub_ + sub];
  }

  std::vector<std::complex<float>>& data() { return data_; }
  const std::vector<std::complex<float>>& data() const { return data_; }

  // Throws if any entry is non-finite.
  void check_finite() const;

  bool operator==(const ComplexGrid&) const = default;

 private:
  int n_rx_ = 0, m_tx_ = 0, k_sub_ = 0;
  std::vector<std::complex<float>> data_;
};

// Real-valued companion grid with the same (rx, tx, sub) indexing.
struct RealGrid {
  int n_rx = 0, m_tx = 0, k_sub = 0;
  std::vector<double> v;

  RealGrid() = default;
  RealGrid(int rx, int tx, int sub)
      : n_rx(rx), m_tx(tx), k_sub(sub),
        v(static_cast<size_t>(rx) * tx * sub, 0.0) {}

  double& at(int rx, int tx, int sub) {
    return v[(rx * m_tx + tx) * k_sub + sub];
  }
  double at(int rx, int tx, int sub) const {
    return v[(rx * m_tx + tx) * k_sub + sub];
  }
};

struct CsiPacket {
  double timestamp = 0.0;  // seconds, monotone within a stream
  uint16_t ap_id = 0;
  ComplexGrid csi;
};

struct GroundTruthSample {
  double timestamp = 0.0;
  double x = 0.0;  // metres
  double y = 0.0;
};

struct SessionMeta {
  std::vector<std::array<double, 2>> ap_positions;  // metres
  std::vector<double> subcarrier_hz;                // centre frequencies
};

// One collection session: per-AP ordered packet streams plus the
// synchronised ground-truth trajectory (one sample per packet timestamp).
struct Session {
  std::vector<std::vector<CsiPacket>> packets;  // indexed by ap_id
  std::vector<GroundTruthSample> truth;
  double rate_hz = 0.0;
  SessionMeta meta;

  int ap_count() const { return static_cast<int>(packets.size()); }
};

// Splits a CSI grid into |H| and principal-value phase in (-pi, pi].
// Phase of an exact zero entry is defined as 0.
std::pair<RealGrid, RealGrid> amplitude_phase_split(const ComplexGrid& csi);

// Piecewise-linear resampling of ground truth onto query timestamps,
// clamped at the ends. Throws "insufficient ground truth" for fewer than
// two knots.
std::vector<GroundTruthSample> interpolate_truth(
    const std::vector<GroundTruthSample>& truth,
    const std::vector<double>& query_timestamps);

}  // namespace csiloc
