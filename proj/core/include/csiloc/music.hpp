#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "csiloc/csi.hpp"
#include "csiloc/sim.hpp"

namespace csiloc {

// MUSIC pseudo-spectrum sampled on an angle grid.
struct SpatialSpectrum {
  std::vector<double> grid;   // radians, strictly increasing over [-pi/2, pi/2]
  std::vector<double> power;  // finite, >= 0
};

struct AoaPair {
  double primary = 0.0;    // radians
  double secondary = 0.0;  // radians; spectrum power <= primary's
  double timestamp = 0.0;
};

// Spatial covariance of one AP window: every subcarrier of every packet is
// one snapshot over the receive antennas, R = (1/S) sum x x^H. Throws
// "short window" when fewer than `window` packets are available from `start`.
Eigen::MatrixXcd aoa_covariance(const std::vector<CsiPacket>& stream,
                                size_t start, int window = 4);

// P(theta) = 1 / (a^H En En^H a) with En spanning the n_antennas - n_sources
// smallest eigenvalue directions. Throws "rank constraint violated" when
// n_sources >= n_antennas.
SpatialSpectrum music_spectrum(const Eigen::MatrixXcd& r,
                               const ArrayGeometry& geom, int n_sources = 2,
                               double grid_step_deg = 0.5);

// Two highest strict local maxima; boundary bins compare against their single
// neighbour. A flat spectrum falls back to the leftmost global maximum, and a
// lone peak is returned as both primary and secondary.
AoaPair top2_peaks(const SpatialSpectrum& spectrum);

// Per-track trailing moving median. Each incoming pair is assigned to the
// track whose previous smoothed angle is nearest, preventing primary and
// secondary from swapping between steps.
std::vector<AoaPair> smooth_aoa(const std::vector<AoaPair>& stream,
                                int window_len);

struct AoaOptions {
  int window_packets = 4;
  int n_sources = 2;
  double grid_step_deg = 0.5;
  int smooth_len = 0;  // 0 -> round(packet_rate / 2) estimates (~2 s span)
};

// Full pipeline over one AP stream: non-overlapping windows -> covariance ->
// spectrum -> two peaks -> smoothing. Pair timestamps come from the first
// packet of each window.
std::vector<AoaPair> estimate_aoa_stream(const std::vector<CsiPacket>& stream,
                                         const ArrayGeometry& geom,
                                         double packet_rate_hz,
                                         const AoaOptions& opts = {});

// CSV rows: timestamp, ap_id, primary_deg, secondary_deg.
void export_aoa_csv(const std::string& path,
                    const std::vector<std::vector<AoaPair>>& per_ap);

}  // namespace csiloc
