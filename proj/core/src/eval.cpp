#include "csiloc/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "csiloc/rng.hpp"

namespace csiloc {

double euclidean_error(double px, double py, double tx, double ty) {
  return std::hypot(px - tx, py - ty);
}

std::vector<double> sample_errors(
    const std::vector<std::array<float, 2>>& pred,
    const std::vector<std::array<float, 2>>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("prediction/truth length mismatch");
  std::vector<double> out(pred.size());
  for (size_t i = 0; i < pred.size(); ++i)
    out[i] = euclidean_error(pred[i][0], pred[i][1], truth[i][0], truth[i][1]);
  return out;
}

ErrorReport error_report(std::vector<double> errors) {
  if (errors.empty()) throw std::runtime_error("no samples");
  ErrorReport r;
  r.errors = std::move(errors);
  r.mean = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) /
           static_cast<double>(r.errors.size());

  std::vector<double> sorted = r.errors;
  std::sort(sorted.begin(), sorted.end());
  size_t n = sorted.size();
  r.median = (n % 2 == 1) ? sorted[n / 2]
                          : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.cdf.reserve(100);
  for (size_t k = 1; k <= 100; ++k) {
    size_t idx = (k * n + 99) / 100;  // ceil(k*n/100)
    r.cdf.push_back({sorted[idx - 1], static_cast<double>(k) / 100.0});
  }
  return r;
}

namespace {

void mean_var(const std::vector<double>& v, double& mean, double& var) {
  mean = std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  var = v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

WelchResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("need at least two samples per group");
  double m1, v1, m2, v2;
  mean_var(a, m1, v1);
  mean_var(b, m2, v2);
  double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  double d1 = v1 / n1, d2 = v2 / n2;
  double se2 = d1 + d2;

  WelchResult r;
  r.t = (m1 - m2) / std::max(std::sqrt(se2), 1e-12);
  double denom = d1 * d1 / (n1 - 1.0) + d2 * d2 / (n2 - 1.0);
  r.dof = denom > 0.0 ? se2 * se2 / denom : n1 + n2 - 2.0;
  r.dof = std::max(r.dof, 1.0);
  boost::math::students_t dist(r.dof);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

double spearman_rho(const std::vector<double>& x,
                    const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("need two equal-length samples");
  std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  double mx, vx, my, vy;
  mean_var(rx, mx, vx);
  mean_var(ry, my, vy);
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  double cov = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) cov += (rx[i] - mx) * (ry[i] - my);
  cov /= static_cast<double>(rx.size() - 1);
  return cov / std::sqrt(vx * vy);
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  size_t workers = std::min<size_t>(std::max(jobs, 1), n);
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

const TrainConfig& EvalOptions::config_for(Family family) const {
  switch (family) {
    case Family::kSnn: return snn;
    case Family::kCnn:
    case Family::kDeeperCnn: return cnn;
    case Family::kLstm: return lstm;
  }
  throw std::logic_error("unreachable");
}

int EvalOptions::smoothing_for(Family family) const {
  return family == Family::kSnn ? smooth_packets : smooth_windows;
}

ArrayGeometry session_geometry(const Session& session) {
  if (session.packets.empty() || session.packets[0].empty())
    throw std::runtime_error("no samples");
  if (session.meta.subcarrier_hz.empty())
    throw std::runtime_error("corrupt session");
  double carrier = 0.5 * (session.meta.subcarrier_hz.front() +
                          session.meta.subcarrier_hz.back());
  return ArrayGeometry::half_wavelength(session.packets[0][0].csi.n_rx(),
                                        carrier);
}

PreparedSession prepare_session(const Session& session,
                                const EvalOptions& opt) {
  PreparedSession ps;
  ps.conditioned = condition_session(session, opt.pre);
  ArrayGeometry geom = session_geometry(session);
  ps.aoa.reserve(session.packets.size());
  for (const auto& stream : session.packets)
    ps.aoa.push_back(
        estimate_aoa_stream(stream, geom, session.rate_hz, opt.aoa));
  return ps;
}

PreparedSession subset_aps(const PreparedSession& ps, int n_aps) {
  if (n_aps < 1 || static_cast<size_t>(n_aps) > ps.conditioned.streams.size())
    throw std::invalid_argument("access-point subset out of range");
  PreparedSession out;
  out.conditioned.streams.assign(ps.conditioned.streams.begin(),
                                 ps.conditioned.streams.begin() + n_aps);
  out.conditioned.truth = ps.conditioned.truth;
  out.conditioned.rate_hz = ps.conditioned.rate_hz;
  out.aoa.assign(ps.aoa.begin(), ps.aoa.begin() + n_aps);
  return out;
}

Dataset make_dataset(const PreparedSession& ps, Family family,
                     const PreprocessorState& state, const EvalOptions& opt) {
  switch (family) {
    case Family::kSnn:
      return dataset_from_features(
          build_snn_features(ps.conditioned, ps.aoa, state));
    case Family::kCnn:
    case Family::kDeeperCnn:
      return dataset_from_cnn(
          build_cnn_samples(ps.conditioned, state, opt.window));
    case Family::kLstm:
      return dataset_from_lstm(
          build_lstm_samples(ps.conditioned, state, opt.window));
  }
  throw std::logic_error("unreachable");
}

namespace {

struct TrainedEval {
  ErrorReport model;
  ErrorReport baseline;
  TrainHistory history;
};

// Fits the preprocessor on the train sessions, trains one model and scores
// smoothed predictions (and the train-centroid baseline) on the test session.
TrainedEval run_eval(const std::vector<const PreparedSession*>& train_set,
                     const PreparedSession& test, Family family, int n_aps,
                     const EvalOptions& opt, uint64_t seed) {
  std::vector<const ConditionedSession*> cond;
  cond.reserve(train_set.size());
  for (const auto* ps : train_set) cond.push_back(&ps->conditioned);
  PreprocessorState state = fit_preprocessor(cond, opt.pca_k, opt.pre);

  std::vector<Dataset> parts;
  parts.reserve(train_set.size());
  for (const auto* ps : train_set)
    parts.push_back(make_dataset(*ps, family, state, opt));
  Dataset train_all = concat_datasets(parts);
  parts.clear();
  Dataset test_ds = make_dataset(test, family, state, opt);
  if (train_all.size() == 0 || test_ds.size() == 0)
    throw std::runtime_error("no samples");

  TrainConfig cfg = opt.config_for(family);
  cfg.seed = seed;
  auto split = split_train_val(train_all, cfg.val_fraction, cfg.seed);
  auto net = build_family<float>(family, n_aps, derive_seed(seed, 2));

  TrainedEval out;
  out.history = train(net, split.first, split.second, cfg);
  auto preds = predict_smoothed(net, test_ds, opt.smoothing_for(family));
  out.model = error_report(sample_errors(preds, test_ds.targets));

  double cx = 0.0, cy = 0.0;
  for (const auto& t : train_all.targets) {
    cx += t[0];
    cy += t[1];
  }
  cx /= static_cast<double>(train_all.size());
  cy /= static_cast<double>(train_all.size());
  std::vector<double> base(test_ds.size());
  for (size_t i = 0; i < test_ds.size(); ++i)
    base[i] = euclidean_error(cx, cy, test_ds.targets[i][0],
                              test_ds.targets[i][1]);
  out.baseline = error_report(std::move(base));
  return out;
}

std::vector<PreparedSession> prepare_all(const std::vector<Session>& sessions,
                                         const EvalOptions& opt) {
  std::vector<PreparedSession> prepared(sessions.size());
  parallel_for(sessions.size(), opt.jobs,
               [&](size_t i) { prepared[i] = prepare_session(sessions[i], opt); });
  return prepared;
}

}  // namespace

std::vector<FoldResult> loso_cv(const std::vector<Session>& sessions,
                                Family family, const EvalOptions& opt) {
  if (sessions.size() < 2)
    throw std::invalid_argument("need at least two sessions");
  int n_aps = sessions[0].ap_count();
  std::vector<PreparedSession> prepared = prepare_all(sessions, opt);

  std::vector<FoldResult> folds(sessions.size());
  parallel_for(sessions.size(), opt.jobs, [&](size_t k) {
    std::vector<const PreparedSession*> train;
    for (size_t i = 0; i < prepared.size(); ++i)
      if (i != k) train.push_back(&prepared[i]);
    TrainedEval ev = run_eval(train, prepared[k], family, n_aps, opt,
                              derive_seed(opt.seed, 0x70 + k));
    folds[k].fold = static_cast<int>(k);
    folds[k].model = std::move(ev.model);
    folds[k].baseline = std::move(ev.baseline);
    folds[k].history = std::move(ev.history);
  });
  return folds;
}

ApStudyResult ap_subset_study(const std::vector<Session>& sessions,
                              const EvalOptions& opt, int n_seeds) {
  if (sessions.size() < 2)
    throw std::invalid_argument("need at least two sessions");
  if (sessions[0].ap_count() < 3)
    throw std::invalid_argument("need sessions with three access points");
  if (n_seeds < 1) throw std::invalid_argument("need at least one seed");

  std::vector<PreparedSession> prepared = prepare_all(sessions, opt);
  std::array<std::vector<PreparedSession>, 3> sliced;
  for (int s = 1; s <= 3; ++s) {
    sliced[s - 1].reserve(prepared.size());
    for (const auto& ps : prepared) sliced[s - 1].push_back(subset_aps(ps, s));
  }
  prepared.clear();

  const std::array<Family, 3> families = {Family::kSnn, Family::kCnn,
                                          Family::kLstm};
  ApStudyResult res;
  size_t total = 3 * 3 * static_cast<size_t>(n_seeds);
  res.runs.resize(total);
  parallel_for(total, opt.jobs, [&](size_t id) {
    int s = 1 + static_cast<int>(id / (3 * static_cast<size_t>(n_seeds)));
    size_t rem = id % (3 * static_cast<size_t>(n_seeds));
    int f = static_cast<int>(rem / static_cast<size_t>(n_seeds));
    int j = static_cast<int>(rem % static_cast<size_t>(n_seeds));

    const auto& group = sliced[s - 1];
    std::vector<const PreparedSession*> train;
    for (size_t i = 1; i < group.size(); ++i) train.push_back(&group[i]);
    TrainedEval ev =
        run_eval(train, group[0], families[static_cast<size_t>(f)], s, opt,
                 derive_seed(opt.seed, 0xA50 + static_cast<uint64_t>(j)));
    res.runs[id] = {s, families[static_cast<size_t>(f)], j, ev.model.mean};
  });

  std::array<std::array<double, 3>, 3> sums = {};
  for (const auto& run : res.runs) {
    int f = run.family == Family::kSnn ? 0 : (run.family == Family::kCnn ? 1 : 2);
    sums[static_cast<size_t>(run.n_aps - 1)][static_cast<size_t>(f)] +=
        run.mean_error;
  }
  for (auto& row : sums)
    for (auto& v : row) v /= static_cast<double>(n_seeds);
  res.mean = sums;
  return res;
}

VelocityResult velocity_generalisation(
    const std::vector<Session>& train_sessions, const Session& pattern_session,
    const EvalOptions& opt) {
  if (train_sessions.empty())
    throw std::invalid_argument("need at least one training session");
  std::vector<PreparedSession> prepared = prepare_all(train_sessions, opt);
  PreparedSession pattern = prepare_session(pattern_session, opt);
  int n_aps = train_sessions[0].ap_count();

  const std::array<Family, 3> families = {Family::kSnn, Family::kCnn,
                                          Family::kLstm};
  VelocityResult res;
  parallel_for(families.size(), opt.jobs, [&](size_t f) {
    std::vector<const PreparedSession*> train;
    for (const auto& ps : prepared) train.push_back(&ps);
    TrainedEval ev = run_eval(train, pattern, families[f], n_aps, opt,
                              derive_seed(opt.seed, 0xE0 + f));
    res.reports[f] = std::move(ev.model);
  });
  res.snn_vs_cnn = welch_t_test(res.reports[0].errors, res.reports[1].errors);
  res.snn_vs_lstm = welch_t_test(res.reports[0].errors, res.reports[2].errors);
  return res;
}

std::string ablation_mode_name(AblationMode mode) {
  return mode == AblationMode::kDropData ? "drop-data" : "deactivate-features";
}

std::vector<std::array<double, 3>> param_crop_table(
    int n_aps, int cols, const std::vector<double>& rates, int window) {
  double full =
      static_cast<double>(build_cnn<float>(n_aps, 1, cols, window).param_count());
  int half = cols / 2;
  std::vector<std::array<double, 3>> table;
  table.reserve(rates.size());
  for (double rate : rates) {
    int half_keep = std::max<int>(
        1, static_cast<int>(std::llround(half * (1.0 - rate))));
    int cols_keep = std::min(cols, 2 * half_keep);
    double survival = static_cast<double>(cols_keep) / cols;
    double params = static_cast<double>(
        build_cnn<float>(n_aps, 1, cols_keep, window).param_count());
    table.push_back({rate, survival, params / full});
  }
  return table;
}

AblationResult ablation_study(const Dataset& train_ds, const Dataset& test_ds,
                              AblationMode mode, const EvalOptions& opt,
                              int repeats) {
  if (train_ds.size() == 0 || test_ds.size() == 0)
    throw std::runtime_error("no samples");
  if (train_ds.sample_shape().size() != 1 ||
      train_ds.sample_shape()[0] % 12 != 0)
    throw std::invalid_argument(
        "ablation expects the handcrafted-feature dataset");
  if (repeats < 1) throw std::invalid_argument("need at least one repeat");
  int n_aps = train_ds.sample_shape()[0] / 12;

  AblationResult res;
  res.mode = mode;
  res.rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  size_t total = res.rates.size() * static_cast<size_t>(repeats);
  res.runs.resize(total);
  uint64_t mode_tag = mode == AblationMode::kDropData ? 1 : 2;

  parallel_for(total, opt.jobs, [&](size_t id) {
    size_t r_idx = id / static_cast<size_t>(repeats);
    int j = static_cast<int>(id % static_cast<size_t>(repeats));
    double rate = res.rates[r_idx];
    uint64_t train_seed =
        derive_seed(opt.seed, 0xAB00 + static_cast<uint64_t>(j));
    uint64_t data_seed = derive_seed(
        opt.seed, (mode_tag << 16) | (r_idx << 8) | static_cast<uint64_t>(j));

    Dataset degraded;
    if (mode == AblationMode::kDropData) {
      size_t n = train_ds.size();
      size_t keep = static_cast<size_t>(std::max<long long>(
          1, std::llround(static_cast<double>(n) * (1.0 - rate))));
      std::vector<size_t> idx(n);
      std::iota(idx.begin(), idx.end(), size_t{0});
      Rng(data_seed).shuffle(idx);
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      degraded = subset_dataset(train_ds, idx);
    } else {
      degraded = train_ds;
      Rng rng(data_seed);
      for (auto& v : degraded.x.v)
        if (rng.uniform() < rate) v = 0.0f;
    }

    TrainConfig cfg = opt.snn;
    cfg.seed = train_seed;
    auto split = split_train_val(degraded, cfg.val_fraction, cfg.seed);
    auto net = build_snn<float>(n_aps, derive_seed(train_seed, 2));
    train(net, split.first, split.second, cfg);
    auto preds = predict_smoothed(net, test_ds, opt.smooth_packets);
    double mean_err = 0.0;
    for (double e : sample_errors(preds, test_ds.targets)) mean_err += e;
    mean_err /= static_cast<double>(test_ds.size());
    res.runs[id] = {rate, j, mean_err};
  });

  res.mean_per_rate.assign(res.rates.size(), 0.0);
  for (size_t r = 0; r < res.rates.size(); ++r) {
    for (int j = 0; j < repeats; ++j)
      res.mean_per_rate[r] +=
          res.runs[r * static_cast<size_t>(repeats) + static_cast<size_t>(j)]
              .mean_error;
    res.mean_per_rate[r] /= static_cast<double>(repeats);
  }
  res.spearman = spearman_rho(res.rates, res.mean_per_rate);
  res.param_table = param_crop_table(n_aps, 30, res.rates, opt.window);
  return res;
}

namespace {

std::FILE* open_csv(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

}  // namespace

void save_error_cdf_csv(const std::string& path, const ErrorReport& report) {
  std::FILE* f = open_csv(path);
  std::fprintf(f, "error_m,cumulative_fraction\n");
  for (const auto& row : report.cdf)
    std::fprintf(f, "%.17g,%.2f\n", row[0], row[1]);
  std::fclose(f);
}

void save_fold_results_csv(const std::string& path,
                           const std::vector<FoldResult>& folds) {
  std::FILE* f = open_csv(path);
  std::fprintf(f,
               "fold,samples,model_mean_m,model_median_m,baseline_mean_m,"
               "best_epoch,best_val\n");
  for (const auto& fr : folds)
    std::fprintf(f, "%d,%zu,%.17g,%.17g,%.17g,%d,%.17g\n", fr.fold,
                 fr.model.errors.size(), fr.model.mean, fr.model.median,
                 fr.baseline.mean, fr.history.best_epoch, fr.history.best_val);
  std::fclose(f);
}

void save_ap_study_csv(const std::string& runs_path,
                       const std::string& summary_path,
                       const ApStudyResult& result) {
  std::FILE* f = open_csv(runs_path);
  std::fprintf(f, "n_aps,family,seed_index,mean_error_m\n");
  for (const auto& run : result.runs)
    std::fprintf(f, "%d,%s,%d,%.17g\n", run.n_aps,
                 family_name(run.family).c_str(), run.seed_index,
                 run.mean_error);
  std::fclose(f);

  f = open_csv(summary_path);
  std::fprintf(f, "n_aps,snn_mean_m,cnn_mean_m,lstm_mean_m\n");
  for (int s = 1; s <= 3; ++s)
    std::fprintf(f, "%d,%.17g,%.17g,%.17g\n", s, result.mean[s - 1][0],
                 result.mean[s - 1][1], result.mean[s - 1][2]);
  std::fclose(f);
}

void save_ablation_csv(const std::string& runs_path,
                       const std::string& summary_path,
                       const AblationResult& result) {
  std::string mode = ablation_mode_name(result.mode);
  std::FILE* f = open_csv(runs_path);
  std::fprintf(f, "mode,rate,repeat,mean_error_m\n");
  for (const auto& run : result.runs)
    std::fprintf(f, "%s,%.2f,%d,%.17g\n", mode.c_str(), run.rate, run.repeat,
                 run.mean_error);
  std::fclose(f);

  f = open_csv(summary_path);
  std::fprintf(
      f, "mode,rate,mean_error_m,survival_fraction,param_fraction,spearman\n");
  for (size_t r = 0; r < result.rates.size(); ++r)
    std::fprintf(f, "%s,%.2f,%.17g,%.17g,%.17g,%.17g\n", mode.c_str(),
                 result.rates[r], result.mean_per_rate[r],
                 result.param_table[r][1], result.param_table[r][2],
                 result.spearman);
  std::fclose(f);
}

}  // namespace csiloc
