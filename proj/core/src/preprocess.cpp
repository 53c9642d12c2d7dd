#include "csiloc/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "binio.hpp"

namespace csiloc {

namespace {

double median_inplace(std::vector<double>& v) {
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  double hi = v[mid];
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return (lo + hi) / 2.0;
}

}  // namespace

std::vector<double> hampel(const std::vector<double>& series, int half_window,
                           double k_sigma) {
  if (half_window < 1) throw std::invalid_argument("half_window must be >= 1");
  long n = static_cast<long>(series.size());
  if (n <= 2 * half_window)
    throw std::invalid_argument("series length must exceed twice half_window");
  for (double x : series)
    if (!std::isfinite(x)) throw std::runtime_error("invalid sample");

  std::vector<double> out = series;
  std::vector<double> window, devs;
  for (long i = 0; i < n; ++i) {
    long lo = std::max<long>(0, i - half_window);
    long hi = std::min(n - 1, i + half_window);
    window.assign(series.begin() + lo, series.begin() + hi + 1);
    double med = median_inplace(window);
    devs.resize(window.size());
    for (size_t j = 0; j < window.size(); ++j)
      devs[j] = std::abs(window[j] - med);
    double mad = median_inplace(devs);
    if (std::abs(series[i] - med) > k_sigma * 1.4826 * mad) out[i] = med;
  }
  return out;
}

std::vector<double> unwrap_phases(const std::vector<double>& wrapped) {
  std::vector<double> out(wrapped.size());
  if (wrapped.empty()) return out;
  out[0] = wrapped[0];
  for (size_t i = 1; i < wrapped.size(); ++i)
    out[i] = out[i - 1] + std::remainder(wrapped[i] - wrapped[i - 1],
                                         2.0 * M_PI);
  return out;
}

std::vector<double> sanitize_phase(const std::vector<double>& raw,
                                   bool legacy_divisor) {
  size_t f_count = raw.size();
  if (f_count < 2)
    throw std::invalid_argument("need at least two subcarriers");

  std::vector<double> y = unwrap_phases(raw);
  double denom = legacy_divisor ? static_cast<double>(f_count - 1)
                                : static_cast<double>(f_count);
  double slope = (y.back() - y.front()) / (2.0 * M_PI * denom);
  double mean =
      std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(f_count);
  std::vector<double> out(f_count);
  for (size_t i = 0; i < f_count; ++i)
    out[i] = y[i] - slope * static_cast<double>(i + 1) - mean;
  return out;
}

Pca pca_fit(const Eigen::MatrixXd& data, int k) {
  long n = data.rows(), d = data.cols();
  if (k < 1 || k > d)
    throw std::invalid_argument("component count must be in [1, dim]");
  if (n <= k)
    throw std::invalid_argument("need more samples than components");

  Pca pca;
  pca.mean = data.colwise().mean();
  Eigen::MatrixXd centred = data.rowwise() - pca.mean.transpose();
  Eigen::MatrixXd cov =
      (centred.adjoint() * centred) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("covariance eigendecomposition failed");

  // Eigen returns ascending order; flip to descending.
  pca.eigenvalues.resize(d);
  for (long i = 0; i < d; ++i)
    pca.eigenvalues(i) = std::max(0.0, es.eigenvalues()(d - 1 - i));
  pca.basis.resize(d, k);
  for (int i = 0; i < k; ++i) {
    Eigen::VectorXd col = es.eigenvectors().col(d - 1 - i);
    long arg_max = 0;
    col.cwiseAbs().maxCoeff(&arg_max);
    if (col(arg_max) < 0.0) col = -col;
    pca.basis.col(i) = col;
  }

  double tol = pca.eigenvalues(0) * 1e-12;
  long positive = 0;
  for (long i = 0; i < d; ++i)
    if (pca.eigenvalues(i) > tol) ++positive;
  pca.rank_deficient = positive < k;
  return pca;
}

std::vector<SanitisedPacket> sanitize_stream(
    const std::vector<CsiPacket>& packets, const PreprocessOptions& opts) {
  std::vector<SanitisedPacket> out;
  if (packets.empty()) return out;

  const ComplexGrid& first = packets[0].csi;
  int n_rx = first.n_rx(), m_tx = first.m_tx(), k_sub = first.k_sub();
  out.reserve(packets.size());
  for (const auto& p : packets) {
    if (p.csi.n_rx() != n_rx || p.csi.m_tx() != m_tx || p.csi.k_sub() != k_sub)
      throw std::runtime_error("inconsistent CSI dimensions");
    auto [amp, phase] = amplitude_phase_split(p.csi);
    out.push_back({std::move(amp), std::move(phase), p.timestamp, p.ap_id});
  }

  // Outlier removal over time, independently per (antenna, tx, subcarrier).
  long n = static_cast<long>(out.size());
  if (n > 2 * opts.hampel_half_window) {
    std::vector<double> series(static_cast<size_t>(n));
    for (int rx = 0; rx < n_rx; ++rx) {
      for (int tx = 0; tx < m_tx; ++tx) {
        for (int k = 0; k < k_sub; ++k) {
          for (long i = 0; i < n; ++i)
            series[static_cast<size_t>(i)] = out[static_cast<size_t>(i)]
                                                 .amplitudes.at(rx, tx, k);
          auto filtered =
              hampel(series, opts.hampel_half_window, opts.hampel_k);
          for (long i = 0; i < n; ++i)
            out[static_cast<size_t>(i)].amplitudes.at(rx, tx, k) =
                filtered[static_cast<size_t>(i)];
        }
      }
    }
  }

  // Per-packet phase detrend along the subcarrier axis of each antenna.
  std::vector<double> phases(static_cast<size_t>(k_sub));
  for (auto& p : out) {
    for (int rx = 0; rx < n_rx; ++rx) {
      for (int tx = 0; tx < m_tx; ++tx) {
        for (int k = 0; k < k_sub; ++k)
          phases[static_cast<size_t>(k)] = p.phases.at(rx, tx, k);
        auto clean = sanitize_phase(phases, opts.legacy_divisor);
        for (int k = 0; k < k_sub; ++k)
          p.phases.at(rx, tx, k) = clean[static_cast<size_t>(k)];
      }
    }
  }
  return out;
}

ConditionedSession condition_session(const Session& session,
                                     const PreprocessOptions& opts) {
  ConditionedSession c;
  c.rate_hz = session.rate_hz;
  c.truth = session.truth;
  c.streams.reserve(session.packets.size());
  for (const auto& stream : session.packets)
    c.streams.push_back(sanitize_stream(stream, opts));
  return c;
}

namespace {

int grid_dim(const ConditionedSession& s) {
  const RealGrid& g = s.streams.at(0).at(0).amplitudes;
  return g.n_rx * g.m_tx * g.k_sub;
}

Eigen::Map<const Eigen::VectorXd> grid_vec(const RealGrid& g) {
  return {g.v.data(), static_cast<long>(g.v.size())};
}

}  // namespace

PreprocessorState fit_preprocessor(
    const std::vector<const ConditionedSession*>& train, int pca_k,
    const PreprocessOptions& opts) {
  if (train.empty()) throw std::invalid_argument("no training sessions");
  int n_aps = train[0]->ap_count();
  for (const auto* s : train)
    if (s->ap_count() != n_aps)
      throw std::runtime_error("inconsistent CSI dimensions");

  PreprocessorState state;
  state.opts = opts;
  state.pca_k = pca_k;
  state.amp_pca.reserve(static_cast<size_t>(n_aps));
  state.phase_pca.reserve(static_cast<size_t>(n_aps));
  state.scalers.resize(static_cast<size_t>(n_aps));

  int d = grid_dim(*train[0]);
  const RealGrid& g0 = train[0]->streams[0][0].amplitudes;
  int n_rx = g0.n_rx, m_tx = g0.m_tx, k_sub = g0.k_sub;

  for (int ap = 0; ap < n_aps; ++ap) {
    long total = 0;
    for (const auto* s : train)
      total += static_cast<long>(s->streams[static_cast<size_t>(ap)].size());
    Eigen::MatrixXd amp(total, d), phase(total, d);
    long row = 0;
    for (const auto* s : train) {
      for (const auto& pkt : s->streams[static_cast<size_t>(ap)]) {
        if (static_cast<int>(pkt.amplitudes.v.size()) != d)
          throw std::runtime_error("inconsistent CSI dimensions");
        amp.row(row) = grid_vec(pkt.amplitudes);
        phase.row(row) = grid_vec(pkt.phases);
        ++row;
      }
    }
    state.amp_pca.push_back(pca_fit(amp, pca_k));
    state.phase_pca.push_back(pca_fit(phase, pca_k));

    auto& scalers = state.scalers[static_cast<size_t>(ap)];
    scalers.resize(static_cast<size_t>(n_rx));
    for (int rx = 0; rx < n_rx; ++rx) {
      double sum = 0.0, sum_sq = 0.0;
      long count = 0;
      for (const auto* s : train) {
        for (const auto& pkt : s->streams[static_cast<size_t>(ap)]) {
          for (int tx = 0; tx < m_tx; ++tx) {
            for (int k = 0; k < k_sub; ++k) {
              double v = pkt.amplitudes.at(rx, tx, k);
              sum += v;
              sum_sq += v * v;
              ++count;
            }
          }
        }
      }
      double mean = sum / static_cast<double>(count);
      double var = sum_sq / static_cast<double>(count) - mean * mean;
      scalers[static_cast<size_t>(rx)] = {mean,
                                          std::sqrt(std::max(var, 1e-18))};
    }
  }
  return state;
}

void save_preprocessor(const PreprocessorState& state,
                       const std::string& path) {
  using binio::put;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os.write("CSPP", 4);
  put<uint32_t>(os, 1);
  put<uint32_t>(os, static_cast<uint32_t>(state.amp_pca.size()));
  put<uint32_t>(os, static_cast<uint32_t>(state.pca_k));
  uint32_t d =
      state.amp_pca.empty()
          ? 0
          : static_cast<uint32_t>(state.amp_pca[0].mean.size());
  put<uint32_t>(os, d);
  uint32_t n_rx = state.scalers.empty()
                      ? 0
                      : static_cast<uint32_t>(state.scalers[0].size());
  put<uint32_t>(os, n_rx);
  put<uint32_t>(os, static_cast<uint32_t>(state.opts.hampel_half_window));
  put<double>(os, state.opts.hampel_k);
  put<uint8_t>(os, state.opts.legacy_divisor ? 1 : 0);

  auto write_pca = [&](const Pca& p) {
    for (long i = 0; i < p.mean.size(); ++i) put<double>(os, p.mean(i));
    for (long i = 0; i < p.eigenvalues.size(); ++i)
      put<double>(os, p.eigenvalues(i));
    for (long c = 0; c < p.basis.cols(); ++c)
      for (long r = 0; r < p.basis.rows(); ++r)
        put<double>(os, p.basis(r, c));
    put<uint8_t>(os, p.rank_deficient ? 1 : 0);
  };
  for (size_t ap = 0; ap < state.amp_pca.size(); ++ap) {
    write_pca(state.amp_pca[ap]);
    write_pca(state.phase_pca[ap]);
    for (const auto& sc : state.scalers[ap]) {
      put<double>(os, sc.mean);
      put<double>(os, sc.std);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

PreprocessorState load_preprocessor(const std::string& path) {
  using binio::get;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "CSPP")
    throw std::runtime_error("unrecognised preprocessor file");
  if (get<uint32_t>(is) != 1)
    throw std::runtime_error("unrecognised preprocessor file");

  uint32_t n_aps = get<uint32_t>(is);
  uint32_t k = get<uint32_t>(is);
  uint32_t d = get<uint32_t>(is);
  uint32_t n_rx = get<uint32_t>(is);

  PreprocessorState state;
  state.pca_k = static_cast<int>(k);
  state.opts.hampel_half_window = static_cast<int>(get<uint32_t>(is));
  state.opts.hampel_k = get<double>(is);
  state.opts.legacy_divisor = get<uint8_t>(is) != 0;

  auto read_pca = [&]() {
    Pca p;
    p.mean.resize(d);
    for (uint32_t i = 0; i < d; ++i) p.mean(i) = get<double>(is);
    p.eigenvalues.resize(d);
    for (uint32_t i = 0; i < d; ++i) p.eigenvalues(i) = get<double>(is);
    p.basis.resize(d, k);
    for (uint32_t c = 0; c < k; ++c)
      for (uint32_t r = 0; r < d; ++r) p.basis(r, c) = get<double>(is);
    p.rank_deficient = get<uint8_t>(is) != 0;
    return p;
  };
  for (uint32_t ap = 0; ap < n_aps; ++ap) {
    state.amp_pca.push_back(read_pca());
    state.phase_pca.push_back(read_pca());
    std::vector<Scaler> scalers(n_rx);
    for (auto& sc : scalers) {
      sc.mean = get<double>(is);
      sc.std = get<double>(is);
    }
    state.scalers.push_back(std::move(scalers));
  }
  return state;
}

namespace {

void check_tensor_inputs(const ConditionedSession& session,
                         const PreprocessorState& state, int window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (session.streams.empty() || session.streams[0].empty())
    throw std::runtime_error("inconsistent CSI dimensions");
  size_t n = session.streams[0].size();
  const RealGrid& g = session.streams[0][0].amplitudes;
  for (const auto& stream : session.streams) {
    if (stream.size() != n) throw std::runtime_error("inconsistent CSI dimensions");
    for (const auto& p : stream)
      if (p.amplitudes.n_rx != g.n_rx || p.amplitudes.m_tx != g.m_tx ||
          p.amplitudes.k_sub != g.k_sub)
        throw std::runtime_error("inconsistent CSI dimensions");
  }
  if (g.m_tx != 1)
    throw std::invalid_argument("model tensors expect single-tx grids");
  if (session.truth.size() < n)
    throw std::runtime_error("insufficient ground truth");
  if (state.scalers.size() != session.streams.size() ||
      state.scalers[0].size() != static_cast<size_t>(g.n_rx))
    throw std::invalid_argument("preprocessor state does not match session");
}

}  // namespace

std::vector<FeatureVector> build_snn_features(
    const ConditionedSession& session,
    const std::vector<std::vector<AoaPair>>& aoa_per_ap,
    const PreprocessorState& state) {
  size_t n_aps = session.streams.size();
  if (n_aps == 0 || session.streams[0].empty())
    throw std::runtime_error("inconsistent CSI dimensions");
  if (state.amp_pca.size() != n_aps || state.phase_pca.size() != n_aps)
    throw std::invalid_argument("preprocessor state does not match session");
  if (aoa_per_ap.size() != n_aps)
    throw std::runtime_error("unaligned AoA stream");

  size_t n = session.streams[0].size();
  for (const auto& stream : session.streams)
    if (stream.size() != n) throw std::runtime_error("inconsistent CSI dimensions");
  if (session.truth.size() < n)
    throw std::runtime_error("insufficient ground truth");
  size_t needed = std::max<size_t>(n / 4, 1);
  for (const auto& est : aoa_per_ap)
    if (est.size() < needed) throw std::runtime_error("unaligned AoA stream");

  int k = state.pca_k;
  std::vector<FeatureVector> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    FeatureVector fv;
    fv.values.reserve(n_aps * (2 * static_cast<size_t>(k) + 2));
    for (size_t ap = 0; ap < n_aps; ++ap) {
      const auto& pkt = session.streams[ap][i];
      Eigen::VectorXd amp_scores =
          state.amp_pca[ap].project(grid_vec(pkt.amplitudes));
      Eigen::VectorXd phase_scores =
          state.phase_pca[ap].project(grid_vec(pkt.phases));
      for (int j = 0; j < k; ++j) fv.values.push_back(amp_scores(j));
      for (int j = 0; j < k; ++j) fv.values.push_back(phase_scores(j));
      size_t est_idx = std::min(i / 4, aoa_per_ap[ap].size() - 1);
      fv.values.push_back(aoa_per_ap[ap][est_idx].primary);
      fv.values.push_back(aoa_per_ap[ap][est_idx].secondary);
    }
    fv.x = session.truth[i].x;
    fv.y = session.truth[i].y;
    fv.timestamp = session.streams[0][i].timestamp;
    out.push_back(std::move(fv));
  }
  return out;
}

std::vector<CnnSample> build_cnn_samples(const ConditionedSession& session,
                                         const PreprocessorState& state,
                                         int window) {
  check_tensor_inputs(session, state, window);
  int n_aps = session.ap_count();
  const RealGrid& g = session.streams[0][0].amplitudes;
  int n_rx = g.n_rx, k_sub = g.k_sub;
  size_t n = session.streams[0].size();
  size_t n_windows = n / static_cast<size_t>(window);

  std::vector<CnnSample> out;
  out.reserve(n_windows);
  for (size_t w = 0; w < n_windows; ++w) {
    size_t base = w * static_cast<size_t>(window);
    size_t centre = base + static_cast<size_t>(window / 2);
    CnnSample s;
    s.rows = n_aps * window;
    s.cols = k_sub;
    s.channels = 2 * n_rx;
    s.values.resize(static_cast<size_t>(s.rows) * s.cols * s.channels);
    for (int ap = 0; ap < n_aps; ++ap) {
      const auto& scalers = state.scalers[static_cast<size_t>(ap)];
      for (int t = 0; t < window; ++t) {
        const auto& pkt =
            session.streams[static_cast<size_t>(ap)][base + static_cast<size_t>(t)];
        size_t row = static_cast<size_t>(ap * window + t);
        for (int sub = 0; sub < k_sub; ++sub) {
          size_t cell = (row * static_cast<size_t>(k_sub) +
                         static_cast<size_t>(sub)) *
                        static_cast<size_t>(s.channels);
          for (int ant = 0; ant < n_rx; ++ant) {
            const Scaler& sc = scalers[static_cast<size_t>(ant)];
            s.values[cell + static_cast<size_t>(ant)] = static_cast<float>(
                (pkt.amplitudes.at(ant, 0, sub) - sc.mean) / sc.std);
            s.values[cell + static_cast<size_t>(n_rx + ant)] =
                static_cast<float>(pkt.phases.at(ant, 0, sub));
          }
        }
      }
    }
    s.x = static_cast<float>(session.truth[centre].x);
    s.y = static_cast<float>(session.truth[centre].y);
    s.timestamp = session.streams[0][centre].timestamp;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<LstmSample> build_lstm_samples(const ConditionedSession& session,
                                           const PreprocessorState& state,
                                           int window) {
  check_tensor_inputs(session, state, window);
  int n_aps = session.ap_count();
  const RealGrid& g = session.streams[0][0].amplitudes;
  int n_rx = g.n_rx, k_sub = g.k_sub;
  size_t n = session.streams[0].size();
  size_t n_windows = n / static_cast<size_t>(window);

  std::vector<LstmSample> out;
  out.reserve(n_windows);
  for (size_t w = 0; w < n_windows; ++w) {
    size_t base = w * static_cast<size_t>(window);
    size_t centre = base + static_cast<size_t>(window / 2);
    LstmSample s;
    s.steps = window;
    s.rows = n_aps;
    s.cols = k_sub;
    s.channels = 2 * n_rx;
    s.values.resize(static_cast<size_t>(s.steps) * s.rows * s.cols *
                    s.channels);
    for (int t = 0; t < window; ++t) {
      for (int ap = 0; ap < n_aps; ++ap) {
        const auto& scalers = state.scalers[static_cast<size_t>(ap)];
        const auto& pkt =
            session.streams[static_cast<size_t>(ap)][base + static_cast<size_t>(t)];
        for (int sub = 0; sub < k_sub; ++sub) {
          size_t cell =
              ((static_cast<size_t>(t) * static_cast<size_t>(n_aps) +
                static_cast<size_t>(ap)) *
                   static_cast<size_t>(k_sub) +
               static_cast<size_t>(sub)) *
              static_cast<size_t>(s.channels);
          for (int ant = 0; ant < n_rx; ++ant) {
            const Scaler& sc = scalers[static_cast<size_t>(ant)];
            s.values[cell + static_cast<size_t>(ant)] = static_cast<float>(
                (pkt.amplitudes.at(ant, 0, sub) - sc.mean) / sc.std);
            s.values[cell + static_cast<size_t>(n_rx + ant)] =
                static_cast<float>(pkt.phases.at(ant, 0, sub));
          }
        }
      }
    }
    s.x = static_cast<float>(session.truth[centre].x);
    s.y = static_cast<float>(session.truth[centre].y);
    s.timestamp = session.streams[0][centre].timestamp;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace csiloc
