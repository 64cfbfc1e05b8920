#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stitch/graph.hpp"

namespace stitch {

struct DeviceSpec {
  int sm_count = 80;
  int max_warps_per_sm = 64;
  int max_threads_per_block = 1024;
  int warp_size = 32;
  int64_t shared_mem_per_sm = 96 * 1024;
  int64_t shared_mem_per_block_limit = 48 * 1024;
  int64_t registers_per_sm = 65536;
  int max_blocks_per_sm = 32;
  int64_t global_mem_bandwidth = 640;  // bytes/cycle, reporting only
};

// cycles-per-instruction per scheduled-op kind (op kind names plus the
// synthetic kinds "reduce_step", "shared_access", "shuffle", "index_calc")
struct CpiTable {
  std::map<std::string, double> cycles;
  // throws std::runtime_error for unknown kinds (configuration error)
  double cpi(const std::string& kind) const;
  bool has(const std::string& kind) const { return cycles.count(kind) != 0; }
};

enum class MemTransition { GlobalToRegister, GlobalToShared, SharedToRegister };
const char* transition_name(MemTransition t);

// piecewise-linear bytes -> cycles curves per tier transition; monotone,
// latency(0) = 0, last segment slope extrapolated
struct MemLatencyModel {
  struct Point {
    int64_t bytes;
    double cycles;
  };
  std::map<MemTransition, std::vector<Point>> curves;  // breakpoints strictly increasing
};

struct LaunchDims {
  int grid = 1;   // blocks
  int block = 1;  // threads per block, multiple of warp_size
  int total_threads() const { return grid * block; }
  bool operator==(const LaunchDims&) const = default;
};

// cost constants that are configuration, not hardware ground truth
struct CostConfig {
  double context_switch_cycles = 5000.0;
  int register_overhead = 8;
  int delta_fixed_registers = 16;
  double opaque_kernel_cycles = 20000.0;
  bool ceil_waves = false;  // plain quotient wave count by default
};

struct SearchConfig {
  int k = 3;
  int beam_width = 3;
  int max_pattern_size = 128;
  int grouping_cap = 64;
  int candidate_cap = 20000;  // per-pattern plan enumeration cap
  bool reverse_beam_order = false;
};

struct MachineModel {
  DeviceSpec dev;
  CpiTable cpi;
  MemLatencyModel memlat;
  CostConfig costs;
  SearchConfig search;
};

// built-in V100-like defaults
MachineModel default_machine_model();
// key = value file with [device] / [cpi] / [memlat] / [costs] / [search]
// sections layered over the defaults
MachineModel load_machine_model(const std::string& path);
// resolves path from STITCH_DEVICE_CONFIG when set, else defaults
MachineModel machine_model_from_env();

// ---- analytical latency model building blocks ----

// fraction of warp slots kept busy under the binding resource limit;
// nullopt when the shared memory request exceeds the per-block limit
std::optional<double> occupancy(const LaunchDims& ld, int regs_per_thread,
                                int64_t shmem_per_block, const DeviceSpec& dev);

double wave_count(double n_warps, double occ, const DeviceSpec& dev);

double warp_latency(const std::map<std::string, int64_t>& instr_histogram, const CpiTable& cpi);

double mem_transfer_saving(int64_t bytes, MemTransition t, const MemLatencyModel& m);

}  // namespace stitch
