#include "stitch/device.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stitch {

double CpiTable::cpi(const std::string& kind) const {
  auto it = cycles.find(kind);
  if (it == cycles.end())
    throw std::runtime_error("no CPI configured for instruction kind: " + kind);
  return it->second;
}

const char* transition_name(MemTransition t) {
  switch (t) {
    case MemTransition::GlobalToRegister: return "global_to_register";
    case MemTransition::GlobalToShared: return "global_to_shared";
    case MemTransition::SharedToRegister: return "shared_to_register";
  }
  return "?";
}

std::optional<double> occupancy(const LaunchDims& ld, int regs_per_thread,
                                int64_t shmem_per_block, const DeviceSpec& dev) {
  if (shmem_per_block > dev.shared_mem_per_block_limit) return std::nullopt;
  if (regs_per_thread < 1) regs_per_thread = 1;
  int64_t block = ld.block;
  int64_t by_shmem = dev.shared_mem_per_sm / std::max<int64_t>(shmem_per_block, 1);
  int64_t by_regs = dev.registers_per_sm / (static_cast<int64_t>(regs_per_thread) * block);
  int64_t by_warps = (static_cast<int64_t>(dev.max_warps_per_sm) * dev.warp_size) / block;
  int64_t blocks = std::min({static_cast<int64_t>(dev.max_blocks_per_sm), by_shmem, by_regs, by_warps});
  int64_t warps_per_block = (block + dev.warp_size - 1) / dev.warp_size;
  int64_t active_warps = blocks * warps_per_block;
  double occ = static_cast<double>(active_warps) / dev.max_warps_per_sm;
  // never zero: at least one warp is resident while the kernel runs
  double floor_occ = 1.0 / dev.max_warps_per_sm;
  return std::clamp(occ, floor_occ, 1.0);
}

double wave_count(double n_warps, double occ, const DeviceSpec& dev) {
  return n_warps / (occ * dev.sm_count * dev.max_warps_per_sm);
}

double warp_latency(const std::map<std::string, int64_t>& hist, const CpiTable& cpi) {
  double total = 0.0;
  for (const auto& [kind, count] : hist) total += static_cast<double>(count) * cpi.cpi(kind);
  return total;
}

double mem_transfer_saving(int64_t bytes, MemTransition t, const MemLatencyModel& m) {
  auto it = m.curves.find(t);
  if (it == m.curves.end() || it->second.empty())
    throw std::runtime_error(std::string("unsupported memory transition: ") + transition_name(t));
  const auto& pts = it->second;
  if (bytes <= 0) return 0.0;
  double px = 0.0, py = 0.0;  // implicit (0, 0)
  for (const auto& p : pts) {
    if (bytes <= p.bytes) {
      double frac = static_cast<double>(bytes - px) / (static_cast<double>(p.bytes) - px);
      return py + frac * (p.cycles - py);
    }
    px = static_cast<double>(p.bytes);
    py = p.cycles;
  }
  // extrapolate last segment slope
  double x0 = pts.size() > 1 ? static_cast<double>(pts[pts.size() - 2].bytes) : 0.0;
  double y0 = pts.size() > 1 ? pts[pts.size() - 2].cycles : 0.0;
  double slope = (pts.back().cycles - y0) / (static_cast<double>(pts.back().bytes) - x0);
  return pts.back().cycles + slope * (static_cast<double>(bytes) - static_cast<double>(pts.back().bytes));
}

}  // namespace stitch
