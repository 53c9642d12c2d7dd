#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csiloc/csi.hpp"
#include "csiloc/music.hpp"

namespace csiloc {

// Sliding-window median/MAD outlier replacement over a time series. A sample
// is replaced by its window median iff |x - median| exceeds
// k_sigma * 1.4826 * MAD; edge windows are truncated. Throws "invalid sample"
// on non-finite input.
std::vector<double> hampel(const std::vector<double>& series,
                           int half_window = 5, double k_sigma = 3.0);

// Cumulative phase unwrap: consecutive differences folded into (-pi, pi].
std::vector<double> unwrap_phases(const std::vector<double>& wrapped);

// Linear detrend of an unwrapped per-antenna phase vector across the F
// subcarriers: out_f = x_f - ((x_F - x_1)/(2*pi*F))*f - mean(x), with f the
// 1-based subcarrier ordinal. Removes any common phase offset exactly.
// legacy_divisor switches the slope denominator from F to F-1.
std::vector<double> sanitize_phase(const std::vector<double>& raw,
                                   bool legacy_divisor = false);

// Principal components of mean-centred data, ordered by descending
// eigenvalue of the sample covariance (n-1 normalisation). Columns are
// orthonormal; each is signed so its largest-magnitude entry is positive.
struct Pca {
  Eigen::VectorXd mean;         // d
  Eigen::MatrixXd basis;        // d x k
  Eigen::VectorXd eigenvalues;  // all d, descending
  bool rank_deficient = false;  // fewer than k positive-variance directions

  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    return basis.transpose() * (x - mean);
  }
};

Pca pca_fit(const Eigen::MatrixXd& data /* n x d, rows are samples */, int k);

struct PreprocessOptions {
  int hampel_half_window = 5;
  double hampel_k = 3.0;
  bool legacy_divisor = false;
};

// One conditioned packet: Hampel-filtered amplitudes and sanitised phases,
// same grid shape as the source.
struct SanitisedPacket {
  RealGrid amplitudes;
  RealGrid phases;
  double timestamp = 0.0;
  uint16_t ap_id = 0;
};

// Conditions one AP stream: Hampel over time per (antenna, subcarrier)
// amplitude series, then per-packet unwrap + detrend of each antenna's
// phase vector.
std::vector<SanitisedPacket> sanitize_stream(
    const std::vector<CsiPacket>& packets, const PreprocessOptions& opts = {});

struct ConditionedSession {
  std::vector<std::vector<SanitisedPacket>> streams;  // per AP
  std::vector<GroundTruthSample> truth;               // per packet index
  double rate_hz = 0.0;

  int ap_count() const { return static_cast<int>(streams.size()); }
};

ConditionedSession condition_session(const Session& session,
                                     const PreprocessOptions& opts = {});

struct Scaler {
  double mean = 0.0;
  double std = 1.0;
};

// Everything fitted on the training split and reused verbatim elsewhere:
// per-AP PCA of amplitude and phase vectors plus per-(AP, antenna)
// amplitude standardisation for the tensor models.
struct PreprocessorState {
  PreprocessOptions opts;
  int pca_k = 5;
  std::vector<Pca> amp_pca;                  // per AP
  std::vector<Pca> phase_pca;                // per AP
  std::vector<std::vector<Scaler>> scalers;  // [ap][antenna]
};

PreprocessorState fit_preprocessor(
    const std::vector<const ConditionedSession*>& train, int pca_k = 5,
    const PreprocessOptions& opts = {});

void save_preprocessor(const PreprocessorState& state, const std::string& path);
PreprocessorState load_preprocessor(const std::string& path);

// Handcrafted per-packet input: for each AP, 5 amplitude PCA scores,
// 5 phase PCA scores and the 2 smoothed arrival angles (12 * ap_count).
struct FeatureVector {
  std::vector<double> values;
  double x = 0.0, y = 0.0;  // target, metres
  double timestamp = 0.0;
};

// One vector per packet timestamp. Packet i uses AoA estimate i/4 of its AP
// (the estimate covering that packet's window); a stream with too few
// estimates raises "unaligned AoA stream".
std::vector<FeatureVector> build_snn_features(
    const ConditionedSession& session,
    const std::vector<std::vector<AoaPair>>& aoa_per_ap,
    const PreprocessorState& state);

// Image-like window: rows are (ap, packet-in-window) time-ordered blocks,
// columns subcarriers, channels [amp ant0..2, phase ant0..2]. Amplitudes are
// standardised with the fitted training statistics, phases kept in radians.
struct CnnSample {
  std::vector<float> values;  // (rows * k_sub * channels), row-major
  int rows = 0, cols = 0, channels = 0;
  float x = 0.0f, y = 0.0f;
  double timestamp = 0.0;
};

// Sequence layout of the same window content: 25 timesteps of an
// (ap_count x subcarriers x channels) element.
struct LstmSample {
  std::vector<float> values;  // (steps * ap_count * k_sub * channels)
  int steps = 0, rows = 0, cols = 0, channels = 0;
  float x = 0.0f, y = 0.0f;
  double timestamp = 0.0;
};

// Non-overlapping windows of `window` packets; target is the ground truth at
// the window's centre packet. Mismatched grid shapes raise
// "inconsistent CSI dimensions".
std::vector<CnnSample> build_cnn_samples(const ConditionedSession& session,
                                         const PreprocessorState& state,
                                         int window = 25);
std::vector<LstmSample> build_lstm_samples(const ConditionedSession& session,
                                           const PreprocessorState& state,
                                           int window = 25);

}  // namespace csiloc
