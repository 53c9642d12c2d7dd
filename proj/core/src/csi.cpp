#include "csiloc/csi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csiloc {

ComplexGrid::ComplexGrid(int n_rx, int m_tx, int k_sub)
    : n_rx_(n_rx), m_tx_(m_tx), k_sub_(k_sub) {
  if (n_rx < 1 || m_tx < 1 || k_sub < 1) {
    throw std::invalid_argument("ComplexGrid dimensions must be >= 1");
  }
  data_.assign(static_cast<size_t>(n_rx) * m_tx * k_sub, {0.0f, 0.0f});
}

void ComplexGrid::check_finite() const {
  for (const auto& c : data_) {
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
      throw std::runtime_error("ComplexGrid entry is not finite");
    }
  }
}

std::pair<RealGrid, RealGrid> amplitude_phase_split(const ComplexGrid& csi) {
  RealGrid amp(csi.n_rx(), csi.m_tx(), csi.k_sub());
  RealGrid phase(csi.n_rx(), csi.m_tx(), csi.k_sub());
  const auto& d = csi.data();
  for (size_t i = 0; i < d.size(); ++i) {
    double re = d[i].real();
    double im = d[i].imag();
    double mag = std::hypot(re, im);
    amp.v[i] = mag;
    if (mag == 0.0) {
      phase.v[i] = 0.0;  // phase of exact zero defined as 0
      continue;
    }
    double p = std::atan2(im, re);
    if (p <= -M_PI) p = M_PI;  // principal value in (-pi, pi]
    phase.v[i] = p;
  }
  return {std::move(amp), std::move(phase)};
}

std::vector<GroundTruthSample> interpolate_truth(
    const std::vector<GroundTruthSample>& truth,
    const std::vector<double>& query_timestamps) {
  if (truth.size() < 2) {
    throw std::runtime_error("insufficient ground truth");
  }
  std::vector<GroundTruthSample> out;
  out.reserve(query_timestamps.size());
  for (double t : query_timestamps) {
    GroundTruthSample s;
    s.timestamp = t;
    if (t <= truth.front().timestamp) {
      s.x = truth.front().x;
      s.y = truth.front().y;
    } else if (t >= truth.back().timestamp) {
      s.x = truth.back().x;
      s.y = truth.back().y;
    } else {
      auto it = std::upper_bound(
          truth.begin(), truth.end(), t,
          [](double q, const GroundTruthSample& g) { return q < g.timestamp; });
      const GroundTruthSample& hi = *it;
      const GroundTruthSample& lo = *(it - 1);
      double span = hi.timestamp - lo.timestamp;
      double w = span > 0.0 ? (t - lo.timestamp) / span : 0.0;
      s.x = lo.x + w * (hi.x - lo.x);
      s.y = lo.y + w * (hi.y - lo.y);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace csiloc
