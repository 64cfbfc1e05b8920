#pragma once

#include <functional>
#include <vector>

#include "stitch/device.hpp"
#include "stitch/graph.hpp"

namespace stitch {

enum class CompositionScheme { KernelPacking, ThreadComposition, WarpComposition, BlockComposition };
const char* scheme_name(CompositionScheme s);

enum class OutputPlacement { ThreadRegister, WarpLane0Register, SharedMemory, GlobalMemory };
const char* placement_name(OutputPlacement p);

enum class ReuseScope { None, Warp, Block };

// A schedule template maps a group root's output, viewed as rows x row_len,
// onto the launch grid:
//   thread scheme: linear element e -> thread e mod T (per-thread loop)
//   warp scheme:   row r -> warp r mod W, positions strided over lanes
//   block scheme:  row r -> block r mod G, positions strided over threads
struct ScheduleTemplate {
  std::string id;  // e.g. "reduce_warp"
  OpClass op_class;
  CompositionScheme scheme;
  OutputPlacement output_placement;
  ReuseScope reuse_scope;
  std::string parallel_mapping;  // human-readable rule, documented in docs
};

// minimal scope containing all producer elements a consumer thread needs
struct LocalityRequirement {
  enum Scope { Thread, Warp, Block, CrossBlock } scope;
  std::string description;
};

// pre-defined catalog per op class; throws std::invalid_argument for Opaque
const std::vector<ScheduleTemplate>& schedules_for(OpClass cls);
const ScheduleTemplate& template_by_id(const std::string& id);

// Read relation between adjacent groups. Read events are linearized over the
// consumer group's (rows x row_len) iteration space; `needed` gives the
// producer output element a read event touches (-1 = no read at that event).
struct ConsumerIteration {
  int64_t rows = 1;
  int64_t row_len = 1;
};
using NeededElemFn = std::function<int64_t(int64_t row, int64_t pos)>;

// global thread that performs a read event under the consumer template
int64_t reader_thread(const ScheduleTemplate& consumer, int64_t row, int64_t pos,
                      const LaunchDims& ld, const DeviceSpec& dev);
// owning thread / warp / block of a producer output element under its template
int64_t producer_owner_thread(int64_t elem, const LaunchDims& ld);
int64_t producer_owner_warp(int64_t elem, const LaunchDims& ld, const DeviceSpec& dev);
int64_t producer_owner_block(int64_t elem, const LaunchDims& ld);

// minimal scope containing all needed producer values under both mappings
LocalityRequirement required_locality(const ScheduleTemplate& producer,
                                      const ScheduleTemplate& consumer,
                                      const ConsumerIteration& it, const NeededElemFn& needed,
                                      const LaunchDims& ld, const DeviceSpec& dev,
                                      int64_t enumeration_cap = int64_t(1) << 17);

// true iff every producer element a consumer thread reads resides within the
// producer placement's reuse scope under both mappings. Light producers under
// a thread-scheme boundary fall back to re-computation and always pass.
bool locality_compatible(const ScheduleTemplate& producer, const ScheduleTemplate& consumer,
                         const ConsumerIteration& it, const NeededElemFn& needed,
                         const LaunchDims& ld, const DeviceSpec& dev,
                         int64_t enumeration_cap = int64_t(1) << 17);

// convenience: rows x row_len view of a shape (trailing axis = row)
ConsumerIteration row_view(const TensorShape& s);

}  // namespace stitch
