#pragma once

// Experiment harness: error metrics, leave-one-session-out cross-validation,
// the access-point subset study, velocity generalisation with significance
// tests, and the data/feature ablation sweeps. All studies are deterministic
// given their seed and can fan independent runs out over worker threads.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csiloc/models.hpp"
#include "csiloc/music.hpp"
#include "csiloc/preprocess.hpp"
#include "csiloc/sim.hpp"

namespace csiloc {

double euclidean_error(double px, double py, double tx, double ty);

// Per-sample position errors; sizes must match.
std::vector<double> sample_errors(
    const std::vector<std::array<float, 2>>& pred,
    const std::vector<std::array<float, 2>>& truth);

struct ErrorReport {
  std::vector<double> errors;  // metres, input order
  double mean = 0.0;
  double median = 0.0;
  // (error, cumulative fraction) at 1%-of-data resolution, non-decreasing,
  // last fraction 1.0.
  std::vector<std::array<double, 2>> cdf;
};

// Throws "no samples" on an empty error list.
ErrorReport error_report(std::vector<double> errors);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;  // two-sided
};

// Unequal-variance two-sample t-test with an epsilon-floored standard error
// so zero-variance samples stay finite.
WelchResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b);

// Rank correlation on average ranks; 0 when either input has no rank spread.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Runs fn(0..n-1) across up to `jobs` threads. Each index runs exactly once;
// callers write results into per-index slots so aggregation stays
// deterministic. The first exception is rethrown after all workers finish.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

struct EvalOptions {
  PreprocessOptions pre;
  AoaOptions aoa;
  int pca_k = 5;
  int window = 25;          // packets per image/sequence sample
  int smooth_packets = 25;  // prediction smoothing for per-packet families
  int smooth_windows = 5;   // prediction smoothing for per-window families
  TrainConfig snn, cnn, lstm;
  int jobs = 1;
  uint64_t seed = 1;

  EvalOptions() {
    snn.epochs = 100;
    cnn.epochs = 12;
    lstm.epochs = 8;
  }
  const TrainConfig& config_for(Family family) const;
  int smoothing_for(Family family) const;
};

// Antenna-array description recovered from a recorded session (element count
// from the first packet, wavelength from the subcarrier band centre).
ArrayGeometry session_geometry(const Session& session);

// Outlier-filtered, phase-sanitised streams plus per-AP smoothed arrival
// angles. Both are unsupervised, so sessions are prepared once and shared by
// every fold/subset that uses them.
struct PreparedSession {
  ConditionedSession conditioned;
  std::vector<std::vector<AoaPair>> aoa;  // per AP
};

PreparedSession prepare_session(const Session& session,
                                const EvalOptions& opt);

// Restriction to the first n_aps access points.
PreparedSession subset_aps(const PreparedSession& ps, int n_aps);

// Model-ready samples for one prepared session under a fitted preprocessor.
Dataset make_dataset(const PreparedSession& ps, Family family,
                     const PreprocessorState& state, const EvalOptions& opt);

struct FoldResult {
  int fold = 0;  // held-out session index
  ErrorReport model;
  ErrorReport baseline;  // constant train-centroid predictor
  TrainHistory history;
};

// Fold k trains on every session but k (preprocessor refit on those sessions
// only) and evaluates on session k.
std::vector<FoldResult> loso_cv(const std::vector<Session>& sessions,
                                Family family, const EvalOptions& opt);

struct ApStudyRun {
  int n_aps = 0;
  Family family = Family::kSnn;
  int seed_index = 0;
  double mean_error = 0.0;
};

struct ApStudyResult {
  std::vector<ApStudyRun> runs;
  // mean[s-1][f]: mean error with s APs for family f over all seeds,
  // families ordered snn, cnn, lstm.
  std::array<std::array<double, 3>, 3> mean = {};
};

// Trains on sessions 1..n-1 and tests on session 0 with the first 1, 2 and 3
// access points, for each of SNN/CNN/LSTM, repeated over n_seeds seeds.
ApStudyResult ap_subset_study(const std::vector<Session>& sessions,
                              const EvalOptions& opt, int n_seeds = 3);

struct VelocityResult {
  std::array<ErrorReport, 3> reports;  // snn, cnn, lstm
  WelchResult snn_vs_cnn;
  WelchResult snn_vs_lstm;
};

// Models trained on the constant-speed sessions only, evaluated on the
// fast/stationary/slow pattern session.
VelocityResult velocity_generalisation(
    const std::vector<Session>& train_sessions, const Session& pattern_session,
    const EvalOptions& opt);

enum class AblationMode { kDropData, kDeactivateFeatures };
std::string ablation_mode_name(AblationMode mode);

struct AblationRun {
  double rate = 0.0;
  int repeat = 0;
  double mean_error = 0.0;
};

struct AblationResult {
  AblationMode mode = AblationMode::kDropData;
  std::vector<double> rates;          // 0, 0.1, ..., 0.5
  std::vector<AblationRun> runs;      // rates x repeats
  std::vector<double> mean_per_rate;  // over repeats
  double spearman = 0.0;              // mean error vs rate
  // rate, surviving input-column fraction, parameter fraction of an
  // image-model resized to the surviving width.
  std::vector<std::array<double, 3>> param_table;
};

// Handcrafted-feature model retrained `repeats` times per rate on a degraded
// copy of train_ds and scored on the fixed test_ds. Rate 0 with the same
// seed reproduces the baseline exactly. drop-data removes whole samples
// (keeping time order); deactivate-features zeroes random input entries.
AblationResult ablation_study(const Dataset& train_ds, const Dataset& test_ds,
                              AblationMode mode, const EvalOptions& opt,
                              int repeats = 20);

// Parameter count of the image model when its input width is cropped to the
// surviving columns, relative to the full model. Crops are pool-aligned
// (even widths) so the flattened size tracks the crop exactly.
std::vector<std::array<double, 3>> param_crop_table(
    int n_aps, int cols, const std::vector<double>& rates, int window = 25);

void save_error_cdf_csv(const std::string& path, const ErrorReport& report);
void save_fold_results_csv(const std::string& path,
                           const std::vector<FoldResult>& folds);
void save_ap_study_csv(const std::string& runs_path,
                       const std::string& summary_path,
                       const ApStudyResult& result);
void save_ablation_csv(const std::string& runs_path,
                       const std::string& summary_path,
                       const AblationResult& result);

}  // namespace csiloc
