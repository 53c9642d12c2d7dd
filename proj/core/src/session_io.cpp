#include "csiloc/session_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "session format is little-endian");

namespace csiloc {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'I', 'S'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("corrupt session");
  return v;
}

struct RecordRef {
  double timestamp;
  uint16_t ap_id;
  const CsiPacket* packet;
};

}  // namespace

void save_session(const Session& session, const std::string& path) {
  if (session.packets.empty()) {
    throw std::invalid_argument("session has no AP streams");
  }
  int n_rx = 0, m_tx = 0, k_sub = 0;
  for (const auto& stream : session.packets) {
    if (!stream.empty()) {
      n_rx = stream[0].csi.n_rx();
      m_tx = stream[0].csi.m_tx();
      k_sub = stream[0].csi.k_sub();
      break;
    }
  }

  std::vector<RecordRef> records;
  for (const auto& stream : session.packets) {
    for (const auto& p : stream) {
      records.push_back({p.timestamp, p.ap_id, &p});
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const RecordRef& a, const RecordRef& b) {
                     if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                     return a.ap_id < b.ap_id;
                   });

  // Truth lookup by exact timestamp; packets without a matching sample get
  // truth_flag 0.
  std::map<double, const GroundTruthSample*> truth_at;
  for (const auto& g : session.truth) truth_at[g.timestamp] = &g;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);

  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint16_t>(os, static_cast<uint16_t>(session.packets.size()));
  put<uint16_t>(os, static_cast<uint16_t>(n_rx));
  put<uint16_t>(os, static_cast<uint16_t>(m_tx));
  put<uint16_t>(os, static_cast<uint16_t>(k_sub));
  put<double>(os, session.rate_hz);
  put<uint64_t>(os, records.size());

  for (size_t a = 0; a < session.packets.size(); ++a) {
    double px = 0.0, py = 0.0;
    if (a < session.meta.ap_positions.size()) {
      px = session.meta.ap_positions[a][0];
      py = session.meta.ap_positions[a][1];
    }
    put<double>(os, px);
    put<double>(os, py);
  }
  for (int k = 0; k < k_sub; ++k) {
    double f = k < static_cast<int>(session.meta.subcarrier_hz.size())
                   ? session.meta.subcarrier_hz[k]
                   : 0.0;
    put<double>(os, f);
  }

  for (const auto& r : records) {
    put<double>(os, r.timestamp);
    put<uint16_t>(os, r.ap_id);
    const auto& data = r.packet->csi.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(std::complex<float>)));
    auto it = truth_at.find(r.timestamp);
    if (it != truth_at.end()) {
      put<uint8_t>(os, 1);
      put<double>(os, it->second->x);
      put<double>(os, it->second->y);
    } else {
      put<uint8_t>(os, 0);
      put<double>(os, 0.0);
      put<double>(os, 0.0);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

Session load_session(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("unrecognised session file");
  }
  uint32_t version = get<uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("unrecognised session file");
  }
  uint16_t ap_count = get<uint16_t>(is);
  uint16_t n_rx = get<uint16_t>(is);
  uint16_t m_tx = get<uint16_t>(is);
  uint16_t k_sub = get<uint16_t>(is);
  double rate_hz = get<double>(is);
  uint64_t record_count = get<uint64_t>(is);

  if (ap_count == 0 || n_rx == 0 || m_tx == 0 || k_sub == 0) {
    throw std::runtime_error("corrupt session");
  }

  Session s;
  s.rate_hz = rate_hz;
  s.packets.resize(ap_count);
  s.meta.ap_positions.resize(ap_count);
  for (int a = 0; a < ap_count; ++a) {
    s.meta.ap_positions[a][0] = get<double>(is);
    s.meta.ap_positions[a][1] = get<double>(is);
  }
  s.meta.subcarrier_hz.resize(k_sub);
  for (int k = 0; k < k_sub; ++k) s.meta.subcarrier_hz[k] = get<double>(is);

  const size_t grid_n = static_cast<size_t>(n_rx) * m_tx * k_sub;
  double last_truth_ts = -1.0;
  for (uint64_t i = 0; i < record_count; ++i) {
    CsiPacket p;
    p.timestamp = get<double>(is);
    p.ap_id = get<uint16_t>(is);
    if (p.ap_id >= ap_count) throw std::runtime_error("corrupt session");
    p.csi = ComplexGrid(n_rx, m_tx, k_sub);
    is.read(reinterpret_cast<char*>(p.csi.data().data()),
            static_cast<std::streamsize>(grid_n * sizeof(std::complex<float>)));
    if (!is) throw std::runtime_error("corrupt session");
    uint8_t truth_flag = get<uint8_t>(is);
    double x = get<double>(is);
    double y = get<double>(is);
    if (truth_flag && p.timestamp != last_truth_ts) {
      s.truth.push_back({p.timestamp, x, y});
      last_truth_ts = p.timestamp;
    }
    s.packets[p.ap_id].push_back(std::move(p));
  }
  return s;
}

void export_session_csv(const Session& session, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);

  std::vector<RecordRef> records;
  for (const auto& stream : session.packets) {
    for (const auto& p : stream) records.push_back({p.timestamp, p.ap_id, &p});
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const RecordRef& a, const RecordRef& b) {
                     if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                     return a.ap_id < b.ap_id;
                   });

  std::map<double, const GroundTruthSample*> truth_at;
  for (const auto& g : session.truth) truth_at[g.timestamp] = &g;

  for (const auto& r : records) {
    std::fprintf(f, "%.17g,%u", r.timestamp, r.ap_id);
    for (const auto& c : r.packet->csi.data()) {
      std::fprintf(f, ",%.9g,%.9g", c.real(), c.imag());
    }
    auto it = truth_at.find(r.timestamp);
    double x = it != truth_at.end() ? it->second->x : 0.0;
    double y = it != truth_at.end() ? it->second->y : 0.0;
    std::fprintf(f, ",%.17g,%.17g\n", x, y);
  }
  std::fclose(f);
}

}  // namespace csiloc
