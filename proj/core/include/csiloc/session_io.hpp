#pragma once

#include <string>

#include "csiloc/csi.hpp"

namespace csiloc {

// Binary session format, little-endian:
//   magic "CSIS", version u32 = 1,
//   ap_count u16, n_rx u16, m_tx u16, k_sub u16,
//   rate_hz f64, record_count u64,
//   meta block: ap_count x {x f64, y f64}, k_sub x {freq f64},
//   records: {timestamp f64, ap_id u16,
//             (re f32, im f32) x (n_rx*m_tx*k_sub) in (rx, tx, sub) order,
//             truth_flag u8, x f64, y f64}
// Records are written in (timestamp, ap_id) order so a re-save of a loaded
// session is byte-identical.
void save_session(const Session& session, const std::string& path);
Session load_session(const std::string& path);

// One row per packet: timestamp, ap_id, 2*N*M*K numeric columns, x, y.
void export_session_csv(const Session& session, const std::string& path);

}  // namespace csiloc
