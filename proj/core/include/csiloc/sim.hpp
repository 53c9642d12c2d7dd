#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "csiloc/csi.hpp"
#include "csiloc/kv_config.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

constexpr double kSpeedOfLight = 299792458.0;

// One propagation path: unitless amplitude attenuation and absolute delay.
struct PathComponent {
  double attenuation = 1.0;  // >= 0
  double delay = 0.0;        // seconds, >= 0
};

// Uniform linear receive array.
struct ArrayGeometry {
  int n_antennas = 3;
  double spacing = 0.0;     // metres
  double wavelength = 0.0;  // metres

  static ArrayGeometry half_wavelength(int n_antennas, double carrier_hz) {
    double lambda = kSpeedOfLight / carrier_hz;
    return {n_antennas, lambda / 2.0, lambda};
  }
};

// Receiver-side impairments applied uniformly to one packet: common phase
// offset, common timing lag, and per-component Gaussian noise level.
struct Impairments {
  double phase_offset = 0.0;  // radians
  double timing_lag = 0.0;    // seconds
  double noise_std = 0.0;     // std per re/im component
};

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

enum class TrajectoryKind { kCurvilinear, kPattern };

// Target motion description. Pattern mode produces three contiguous
// segments: linear-fast, stationary, linear-slow.
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kCurvilinear;
  double duration_s = 120.0;
  Rect area{0.0, 0.0, 5.0, 5.0};
  double speed_mps = 0.5;  // curvilinear constant speed
  double fast_mps = 1.2;
  double slow_mps = 0.3;
  double margin_m = 0.4;  // keep-out distance from area walls
};

struct ApSpec {
  double x = 0.0, y = 0.0;
  double orientation_rad = 0.0;  // array broadside direction
};

// Full synthetic scene description, loadable from key=value text.
struct Scene {
  Rect area{0.0, 0.0, 5.0, 5.0};
  std::vector<ApSpec> aps;
  ArrayGeometry geom = ArrayGeometry::half_wavelength(3, 5.32e9);
  double carrier_hz = 5.32e9;
  double bandwidth_hz = 40e6;
  int k_sub = 30;
  double rate_hz = 500.0;
  double truth_rate_hz = 120.0;
  double duration_s = 120.0;
  TrajectorySpec trajectory;
  int reflectors = 3;  // wall reflections via image method
  double reflection_coeff = 0.5;
  double snr_db = 25.0;
  double timing_jitter_s = 5e-9;
  bool random_phase_offset = true;

  // k_sub tones evenly spaced across bandwidth_hz centred on carrier_hz.
  std::vector<double> subcarrier_freqs() const;
};

Scene scene_from_config(const KvConfig& cfg);

// ULA steering vector: element n = exp(-j*2*pi*(spacing/wavelength)*n*sin(aoa)).
std::vector<std::complex<double>> steering_vector(double aoa_rad,
                                                  const ArrayGeometry& geom);

// Channel frequency response over (antenna, subcarrier) as a sum of delayed,
// attenuated path phasors with per-packet impairments and optional noise.
// Throws "no propagation paths" on an empty path list.
ComplexGrid synth_cfr(const std::vector<PathComponent>& paths,
                      const std::vector<double>& subcarrier_freqs,
                      const std::vector<double>& aoas,
                      const ArrayGeometry& geom, const Impairments& imp,
                      Rng& rng);

std::vector<GroundTruthSample> gen_trajectory(const TrajectorySpec& spec,
                                              double rate_hz, uint64_t seed);

// LOS plus image-method wall reflections from a target position to one AP.
// Fills paths and the matching per-path arrival angles (radians, relative to
// the AP array broadside). Throws "degenerate geometry" when the target is
// within 1 cm of the AP.
void propagation_paths(const Scene& scene, const ApSpec& ap, double tx,
                       double ty, std::vector<PathComponent>& paths,
                       std::vector<double>& aoas);

// Complete labelled session: one packet per (trajectory sample, AP), truth
// resampled onto packet timestamps, reproducible from the seed.
Session simulate_session(const Scene& scene, uint64_t seed);
Session simulate_session(const Scene& scene,
                         const std::vector<GroundTruthSample>& trajectory,
                         uint64_t seed);

}  // namespace csiloc
