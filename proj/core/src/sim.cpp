#include "csiloc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csiloc {

std::vector<double> Scene::subcarrier_freqs() const {
  std::vector<double> f(static_cast<size_t>(k_sub));
  if (k_sub == 1) {
    f[0] = carrier_hz;
    return f;
  }
  double step = bandwidth_hz / (k_sub - 1);
  for (int k = 0; k < k_sub; ++k)
    f[static_cast<size_t>(k)] = carrier_hz - bandwidth_hz / 2.0 + k * step;
  return f;
}

Scene scene_from_config(const KvConfig& cfg) {
  Scene s;
  std::vector<double> area =
      cfg.has("area") ? cfg.get_doubles("area") : std::vector<double>{5.0, 5.0};
  if (area.size() != 2) throw std::invalid_argument("area wants width,height");
  s.area = {0.0, 0.0, area[0], area[1]};
  if (s.area.width() <= 0.0 || s.area.height() <= 0.0)
    throw std::runtime_error("empty area");

  s.carrier_hz = cfg.get_double("carrier_hz", 5.32e9);
  s.bandwidth_hz = cfg.get_double("bandwidth_hz", 40e6);
  s.k_sub = static_cast<int>(cfg.get_int("subcarriers", 30));
  int antennas = static_cast<int>(cfg.get_int("antennas", 3));
  if (s.k_sub < 1 || antennas < 1)
    throw std::invalid_argument("subcarriers and antennas must be positive");
  s.geom = ArrayGeometry::half_wavelength(antennas, s.carrier_hz);

  s.rate_hz = cfg.get_double("rate_hz", 500.0);
  s.truth_rate_hz = cfg.get_double("truth_rate_hz", 120.0);
  s.duration_s = cfg.get_double("duration_s", 120.0);
  if (s.rate_hz <= 0.0 || s.truth_rate_hz <= 0.0 || s.duration_s <= 0.0)
    throw std::invalid_argument("rates and duration must be positive");

  double cx = (s.area.x0 + s.area.x1) / 2.0;
  double cy = (s.area.y0 + s.area.y1) / 2.0;
  for (int i = 0;; ++i) {
    std::string key = "ap" + std::to_string(i);
    if (!cfg.has(key)) break;
    auto v = cfg.get_doubles(key);
    if (v.size() != 2 && v.size() != 3)
      throw std::invalid_argument(key + " wants x,y[,orientation_deg]");
    ApSpec ap;
    ap.x = v[0];
    ap.y = v[1];
    ap.orientation_rad = v.size() == 3 ? v[2] * M_PI / 180.0
                                       : std::atan2(cy - ap.y, cx - ap.x);
    s.aps.push_back(ap);
  }
  if (s.aps.empty())
    throw std::invalid_argument("scene needs at least one access point (ap0 = x,y)");

  std::string kind = cfg.get_str("trajectory", "curvilinear");
  if (kind == "curvilinear")
    s.trajectory.kind = TrajectoryKind::kCurvilinear;
  else if (kind == "pattern")
    s.trajectory.kind = TrajectoryKind::kPattern;
  else
    throw std::invalid_argument("unknown trajectory kind: " + kind);
  s.trajectory.duration_s = s.duration_s;
  s.trajectory.area = s.area;
  s.trajectory.speed_mps = cfg.get_double("speed_mps", 0.5);
  s.trajectory.fast_mps = cfg.get_double("fast_mps", 1.2);
  s.trajectory.slow_mps = cfg.get_double("slow_mps", 0.3);
  s.trajectory.margin_m = cfg.get_double("margin_m", 0.4);

  s.reflectors = static_cast<int>(cfg.get_int("reflectors", 3));
  s.reflection_coeff = cfg.get_double("reflection_coeff", 0.5);
  s.snr_db = cfg.get_double("snr_db", 25.0);
  s.timing_jitter_s = cfg.get_double("timing_jitter_ns", 5.0) * 1e-9;
  s.random_phase_offset = cfg.get_int("random_phase_offset", 1) != 0;
  return s;
}

std::vector<std::complex<double>> steering_vector(double aoa_rad,
                                                  const ArrayGeometry& geom) {
  std::vector<std::complex<double>> a(static_cast<size_t>(geom.n_antennas));
  double phase_step =
      -2.0 * M_PI * (geom.spacing / geom.wavelength) * std::sin(aoa_rad);
  for (int n = 0; n < geom.n_antennas; ++n)
    a[static_cast<size_t>(n)] =
        std::polar(1.0, phase_step * static_cast<double>(n));
  return a;
}

ComplexGrid synth_cfr(const std::vector<PathComponent>& paths,
                      const std::vector<double>& subcarrier_freqs,
                      const std::vector<double>& aoas,
                      const ArrayGeometry& geom, const Impairments& imp,
                      Rng& rng) {
  if (paths.empty()) throw std::runtime_error("no propagation paths");
  if (paths.size() != aoas.size())
    throw std::invalid_argument("one arrival angle per path required");
  if (subcarrier_freqs.empty())
    throw std::invalid_argument("at least one subcarrier required");

  size_t n_ant = static_cast<size_t>(geom.n_antennas);
  size_t n_path = paths.size();
  size_t k_sub = subcarrier_freqs.size();

  std::vector<std::complex<double>> steer(n_path * n_ant);
  for (size_t i = 0; i < n_path; ++i) {
    auto a = steering_vector(aoas[i], geom);
    for (size_t n = 0; n < n_ant; ++n) steer[i * n_ant + n] = a[n];
  }

  std::complex<double> common = std::polar(1.0, imp.phase_offset);
  ComplexGrid grid(static_cast<int>(n_ant), 1, static_cast<int>(k_sub));
  for (size_t n = 0; n < n_ant; ++n) {
    for (size_t k = 0; k < k_sub; ++k) {
      std::complex<double> h(0.0, 0.0);
      for (size_t i = 0; i < n_path; ++i) {
        double phase =
            -2.0 * M_PI * subcarrier_freqs[k] * (paths[i].delay + imp.timing_lag);
        h += paths[i].attenuation * steer[i * n_ant + n] * std::polar(1.0, phase);
      }
      h *= common;
      if (imp.noise_std > 0.0) {
        h += std::complex<double>(rng.gaussian(0.0, imp.noise_std),
                                  rng.gaussian(0.0, imp.noise_std));
      }
      grid.at(static_cast<int>(n), 0, static_cast<int>(k)) =
          std::complex<float>(static_cast<float>(h.real()),
                              static_cast<float>(h.imag()));
    }
  }
  return grid;
}

namespace {

// Advance (x,y) by dist along heading, reflecting off the walls of box.
// The full step is retaken from the original point after each reflection so
// step length is preserved exactly.
void billiard_step(double& x, double& y, double& heading, double dist,
                   const Rect& box) {
  for (int guard = 0; guard < 8; ++guard) {
    double nx = x + dist * std::cos(heading);
    double ny = y + dist * std::sin(heading);
    bool ok_x = nx >= box.x0 && nx <= box.x1;
    bool ok_y = ny >= box.y0 && ny <= box.y1;
    if (ok_x && ok_y) {
      x = nx;
      y = ny;
      return;
    }
    if (!ok_x) heading = M_PI - heading;
    if (!ok_y) heading = -heading;
  }
  x = std::clamp(x + dist * std::cos(heading), box.x0, box.x1);
  y = std::clamp(y + dist * std::sin(heading), box.y0, box.y1);
}

}  // namespace

std::vector<GroundTruthSample> gen_trajectory(const TrajectorySpec& spec,
                                              double rate_hz, uint64_t seed) {
  if (spec.area.width() <= 0.0 || spec.area.height() <= 0.0)
    throw std::runtime_error("empty area");
  if (rate_hz <= 0.0 || spec.duration_s <= 0.0)
    throw std::invalid_argument("rate and duration must be positive");

  double m = std::max(
      0.0, std::min(spec.margin_m,
                    std::min(spec.area.width(), spec.area.height()) / 4.0));
  Rect box{spec.area.x0 + m, spec.area.y0 + m, spec.area.x1 - m,
           spec.area.y1 - m};

  long long n = std::llround(spec.duration_s * rate_hz);
  if (n < 1) n = 1;
  double dt = 1.0 / rate_hz;

  Rng rng(seed);
  double x = rng.uniform(box.x0, box.x1);
  double y = rng.uniform(box.y0, box.y1);
  double heading = rng.uniform(0.0, 2.0 * M_PI);

  std::vector<GroundTruthSample> out;
  out.reserve(static_cast<size_t>(n));
  out.push_back({0.0, x, y});

  if (spec.kind == TrajectoryKind::kCurvilinear) {
    double step = spec.speed_mps * dt;
    for (long long i = 1; i < n; ++i) {
      heading += 1.5 * std::sqrt(dt) * rng.gaussian();
      billiard_step(x, y, heading, step, box);
      out.push_back({static_cast<double>(i) * dt, x, y});
    }
  } else {
    // Three contiguous segments: fast straight line, stationary, slow
    // straight line with a fresh heading.
    long long n1 = n / 3, n2 = 2 * n / 3;
    for (long long i = 1; i < n; ++i) {
      if (i == n2) heading = rng.uniform(0.0, 2.0 * M_PI);
      double v = i <= n1 ? spec.fast_mps : (i <= n2 ? 0.0 : spec.slow_mps);
      if (v > 0.0) billiard_step(x, y, heading, v * dt, box);
      out.push_back({static_cast<double>(i) * dt, x, y});
    }
  }
  return out;
}

void propagation_paths(const Scene& scene, const ApSpec& ap, double tx,
                       double ty, std::vector<PathComponent>& paths,
                       std::vector<double>& aoas) {
  paths.clear();
  aoas.clear();
  double d_los = std::hypot(tx - ap.x, ty - ap.y);
  if (d_los < 0.01) throw std::runtime_error("degenerate geometry");

  auto add = [&](double px, double py, double gain) {
    double dist = std::hypot(px - ap.x, py - ap.y);
    if (dist < 0.01) return;
    double bearing = std::atan2(py - ap.y, px - ap.x);
    double rel = bearing - ap.orientation_rad;
    double aoa = std::asin(std::clamp(std::sin(rel), -1.0, 1.0));
    paths.push_back({gain / dist, dist / kSpeedOfLight});
    aoas.push_back(aoa);
  };

  add(tx, ty, 1.0);
  // Wall reflections via target images, fixed order: left, right, bottom, top.
  double g = scene.reflection_coeff;
  int r = std::clamp(scene.reflectors, 0, 4);
  if (r > 0) add(2.0 * scene.area.x0 - tx, ty, g);
  if (r > 1) add(2.0 * scene.area.x1 - tx, ty, g);
  if (r > 2) add(tx, 2.0 * scene.area.y0 - ty, g);
  if (r > 3) add(tx, 2.0 * scene.area.y1 - ty, g);
}

Session simulate_session(const Scene& scene, uint64_t seed) {
  auto traj =
      gen_trajectory(scene.trajectory, scene.truth_rate_hz, derive_seed(seed, 1));
  return simulate_session(scene, traj, seed);
}

Session simulate_session(const Scene& scene,
                         const std::vector<GroundTruthSample>& trajectory,
                         uint64_t seed) {
  if (scene.aps.empty())
    throw std::invalid_argument("scene needs at least one access point");

  long long n_packets = std::llround(scene.duration_s * scene.rate_hz);
  if (n_packets < 1) n_packets = 1;

  std::vector<double> timestamps(static_cast<size_t>(n_packets));
  for (long long i = 0; i < n_packets; ++i)
    timestamps[static_cast<size_t>(i)] =
        static_cast<double>(i) / scene.rate_hz;
  auto truth = interpolate_truth(trajectory, timestamps);

  Session session;
  session.rate_hz = scene.rate_hz;
  session.truth = truth;
  for (const auto& ap : scene.aps)
    session.meta.ap_positions.push_back({ap.x, ap.y});
  session.meta.subcarrier_hz = scene.subcarrier_freqs();
  session.packets.resize(scene.aps.size());

  double noise_fraction = std::pow(10.0, -scene.snr_db / 10.0);
  std::vector<PathComponent> paths;
  std::vector<double> aoas;
  for (size_t a = 0; a < scene.aps.size(); ++a) {
    uint64_t stream = derive_seed(seed, 1000 + static_cast<uint64_t>(a));
    auto& pkts = session.packets[a];
    pkts.reserve(static_cast<size_t>(n_packets));
    for (long long i = 0; i < n_packets; ++i) {
      Rng rng(derive_seed(stream, static_cast<uint64_t>(i)));
      const auto& pos = truth[static_cast<size_t>(i)];
      propagation_paths(scene, scene.aps[a], pos.x, pos.y, paths, aoas);

      Impairments imp;
      imp.phase_offset =
          scene.random_phase_offset ? rng.uniform(0.0, 2.0 * M_PI) : 0.0;
      imp.timing_lag = scene.timing_jitter_s > 0.0
                           ? rng.gaussian(0.0, scene.timing_jitter_s)
                           : 0.0;
      ComplexGrid grid =
          synth_cfr(paths, session.meta.subcarrier_hz, aoas, scene.geom, imp, rng);

      if (noise_fraction > 0.0) {
        double power = 0.0;
        size_t cells = grid.data().size();
        for (const auto& v : grid.data()) power += std::norm(std::complex<double>(v));
        power /= static_cast<double>(cells);
        double sigma = std::sqrt(power * noise_fraction / 2.0);
        if (sigma > 0.0) {
          for (auto& v : grid.data()) {
            v += std::complex<float>(
                static_cast<float>(rng.gaussian(0.0, sigma)),
                static_cast<float>(rng.gaussian(0.0, sigma)));
          }
        }
      }
      pkts.push_back({timestamps[static_cast<size_t>(i)],
                      static_cast<uint16_t>(a), std::move(grid)});
    }
  }
  return session;
}

}  // namespace csiloc
